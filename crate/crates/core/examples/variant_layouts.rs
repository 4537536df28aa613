//! Compare the four convolution layouts: 2D/3D counts, parameters and FLOPs.
//!
//!     cargo run --release --example variant_layouts

use odvae::model::{conv_layout, ConvTag};
use odvae::{OdVae, OdVaeConfig, Result, Variant};

fn main() -> Result<()> {
    let input = [1, 3, 81, 64, 64];
    println!(
        "{:<4} {:>8} {:>8} {:>8} {:>8} {:>12} {:>16}",
        "", "enc 3d", "enc 2d", "dec 3d", "dec 2d", "params", "encoder MACs"
    );
    for v in Variant::ALL {
        let cfg = OdVaeConfig::default().with_variant(v);
        let layout = conv_layout(&cfg)?;
        let count = |entries: &[odvae::model::LayoutEntry], tag| {
            entries.iter().filter(|e| e.tag == tag).count()
        };
        let model = OdVae::build(&cfg)?;
        let flops = model.flops(&input)?;
        println!(
            "{:<4} {:>8} {:>8} {:>8} {:>8} {:>12} {:>16}",
            v.to_string(),
            count(layout.encoder(), ConvTag::CausalConv3d),
            count(layout.encoder(), ConvTag::Conv2dPerFrame),
            count(layout.decoder(), ConvTag::CausalConv3d),
            count(layout.decoder(), ConvTag::Conv2dPerFrame),
            model.num_parameters(),
            flops.encoder,
        );
    }

    println!("\nV2 encoder:");
    for e in conv_layout(&OdVaeConfig::default().with_variant(Variant::V2))?.encoder() {
        println!("  {:<40} {:?}", e.id, e.tag);
    }
    Ok(())
}
