//! Command-line interface of the `odvae` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bench::{run_bench, BenchConfig};
use crate::config_file::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{load_checkpoint, save_checkpoint, OdvtFile};
use crate::init::{initialize, InitMode, NamedTensorMap};
use crate::metrics::{psnr, ssim};
use crate::model::{
    arch_layout, Architecture, ConvTag, OdVae, OdVaeConfig, Variant, TEMPORAL_COMPRESSION,
};
use crate::tensor::Tensor;
use crate::tiling::{tiled_decode, tiled_encode, Execution, TilingPlan};
use crate::training::{save_outcome, train_loop, DataSource, Objective, SyntheticDataset};

/// Environment variable consulted when `--seed` is absent.
pub const SEED_ENV: &str = "ODVAE_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "odvae",
    version,
    about = "Causal video autoencoder: 4x temporal, 8x spatial compression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic moving-texture clips as ODVT files.
    GenData {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: usize,
        /// Frames per clip, 1 + 4k.
        #[arg(long)]
        frames: usize,
        /// Height and width in pixels.
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a directory of ODVT clips.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Live checkpoint path; `<out>.ema` and `<out>.log` are written too.
        #[arg(long)]
        out: PathBuf,
        /// Train the per-frame image twin of the configured model instead.
        #[arg(long)]
        twin: bool,
    },
    /// Encode a video to its latent mean.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Encode in groups of this many frames (1 + 4k).
        #[arg(long)]
        tile: Option<usize>,
        /// Use the EMA weights stored next to the checkpoint.
        #[arg(long)]
        ema: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Decode a latent back to a video clamped to [0, 1].
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Decode in groups of this many latent frames.
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long)]
        ema: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print PSNR and SSIM between two videos.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Time the encoder of each variant.
    Bench {
        #[arg(long, default_value = "v1,v2,v3,v4", value_delimiter = ',')]
        variants: Vec<Variant>,
        #[arg(long, default_value_t = 81)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 20)]
        repeat: usize,
        /// Overrides the base channel width of the architecture.
        #[arg(long)]
        base: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// GEMM threads (default 1).
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Materialize an initialized checkpoint.
    Init {
        #[arg(long)]
        mode: InitMode,
        /// Per-frame twin checkpoint (required for tail and average).
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write a randomly initialized per-frame twin instead.
        #[arg(long)]
        twin: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// `--seed` if given, else `ODVAE_SEED`, else `default`.
fn resolve_seed(flag: Option<u64>, default: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(default),
    }
}

const META_NORM_GROUPS: &str = "meta.norm_groups";
const META_TEMPORAL_DOWN: &str = "meta.temporal_down_stages";

/// Architecture facts that cannot be read off parameter shapes, stored as
/// `meta.*` checkpoint entries.
pub fn metadata(config: &OdVaeConfig) -> NamedTensorMap {
    let mut map = NamedTensorMap::new();
    map.insert(
        META_NORM_GROUPS.into(),
        Tensor::scalar(config.norm_groups as f32),
    );
    let stages: Vec<f32> = config
        .temporal_down_stages
        .iter()
        .map(|&s| s as f32)
        .collect();
    map.insert(
        META_TEMPORAL_DOWN.into(),
        Tensor::new(vec![stages.len()], stages).expect("non-empty stage list"),
    );
    map
}

/// Parameters plus [`metadata`].
pub fn checkpoint_with_meta(params: &NamedTensorMap, config: &OdVaeConfig) -> NamedTensorMap {
    let mut map = params.clone();
    map.extend(metadata(config));
    map
}

fn shape_of<'a>(map: &'a NamedTensorMap, name: &str) -> Result<&'a [usize]> {
    map.get(name)
        .map(|t| t.shape())
        .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))
}

/// Reconstructs the architecture of a checkpoint from its parameter names
/// and shapes, plus `meta.*` entries when present.
pub fn infer_config(map: &NamedTensorMap) -> Result<(OdVaeConfig, Architecture)> {
    let mut cfg = OdVaeConfig::default();
    cfg.base_channels = shape_of(map, "encoder.conv_in.weight")?[0];
    cfg.latent_channels = shape_of(map, "decoder.conv_in.weight")?[1];
    cfg.channel_multipliers = (0..4)
        .map(|i| {
            Ok(
                shape_of(map, &format!("encoder.stage{i}.block0.conv1.weight"))?[0]
                    / cfg.base_channels,
            )
        })
        .collect::<Result<_>>()?;
    cfg.res_blocks_per_stage = (0..)
        .take_while(|j| map.contains_key(&format!("encoder.stage0.block{j}.conv1.weight")))
        .count();
    cfg.mid_attention = map.contains_key("encoder.mid.attn.q.weight");
    if let Some(g) = map.get(META_NORM_GROUPS) {
        cfg.norm_groups = g.item() as usize;
    }
    if let Some(t) = map.get(META_TEMPORAL_DOWN) {
        cfg.temporal_down_stages = t.data().iter().map(|&s| s as usize).collect();
    }
    cfg.validate()?;

    let is_3d = |id: &str| map.get(&format!("{id}.weight")).map(|t| t.rank() == 5);
    let mut candidates: Vec<Architecture> = Variant::ALL
        .iter()
        .map(|&v| Architecture::Video(v))
        .collect();
    candidates.push(Architecture::Image);
    for arch in candidates {
        if let Architecture::Video(v) = arch {
            cfg.variant = v;
        }
        let matches = arch_layout(&cfg, arch)?
            .entries
            .iter()
            .all(|e| is_3d(&e.id) == Some(e.tag == ConvTag::CausalConv3d));
        if matches {
            if arch == Architecture::Image {
                cfg.variant = Variant::V1;
            }
            return Ok((cfg, arch));
        }
    }
    Err(Error::Format(
        "checkpoint conv layout matches no known variant".into(),
    ))
}

fn ema_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".ema");
    PathBuf::from(s)
}

fn load_model(ckpt: &Path, ema: bool, config: Option<&Path>) -> Result<OdVae> {
    let path = if ema {
        ema_path(ckpt)
    } else {
        ckpt.to_path_buf()
    };
    let map = load_checkpoint(&path)?;
    let (inferred, arch) = infer_config(&map)?;
    let cfg = match config {
        Some(p) => RunConfig::load(p)?.model,
        None => inferred,
    };
    OdVae::with_params(&cfg, arch, map)
}

fn check_frames(frames: usize) -> Result<()> {
    if frames % TEMPORAL_COMPRESSION != 1 {
        return Err(Error::Length {
            got: frames,
            detail: "frame count must have the form 1 + 4k (1, 5, 9, 13, ...)".into(),
        });
    }
    Ok(())
}

fn read_clips(dir: &Path) -> Result<Vec<Tensor>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "odvt"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| OdvtFile::read(p).map(|f| f.tensor))
        .collect()
}

/// Runs the CLI on explicit arguments, writing normal output to `out`.
pub fn run_with(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write) -> Result<()> {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                return Err(Error::Config(e.to_string()));
            }
            write!(out, "{e}").map_err(|e| Error::io("<stdout>", e))?;
            return Ok(());
        }
    };
    execute(cli.command, out)
}

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenData {
            seed,
            count,
            frames,
            size,
            out: dir,
        } => {
            check_frames(frames)?;
            if size == 0 {
                return Err(Error::Config("--size must be positive".into()));
            }
            let ds = SyntheticDataset::new(resolve_seed(seed, 0)?, count, frames, size, size)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for i in 0..count {
                OdvtFile::pixels(ds.clip(i)).write(dir.join(format!("clip_{i:05}.odvt")))?;
            }
            emit(out, &format!("wrote {count} clips to {}", dir.display()))
        }
        Command::Train {
            config,
            data,
            out: ckpt,
            twin,
        } => {
            let cfg = RunConfig::load(&config)?;
            let clips = read_clips(&data)?;
            if clips.is_empty() {
                return Err(Error::Config(format!(
                    "no .odvt clips in {}",
                    data.display()
                )));
            }
            let arch = if twin {
                Architecture::Image
            } else {
                Architecture::Video(cfg.model.variant)
            };
            let mut model = OdVae::build_arch(&cfg.model, arch)?;
            if !twin {
                let source = match (&cfg.init_from, cfg.train.init_mode) {
                    (_, InitMode::Random) => None,
                    (Some(p), _) => Some(load_checkpoint(p)?),
                    (None, mode) => {
                        return Err(Error::Config(format!(
                            "init_mode = {mode} needs init_from = <twin checkpoint>"
                        )))
                    }
                };
                initialize(
                    &mut model,
                    cfg.train.init_mode,
                    source.as_ref(),
                    cfg.train.seed,
                )?;
            }
            let validation: Vec<Tensor> = clips.iter().take(2).cloned().collect();
            let objective = Objective::new(cfg.train.kl_weight);
            let mut lines = Vec::new();
            let outcome = train_loop(
                model,
                &cfg.train,
                &DataSource::Clips(clips),
                &validation,
                &objective,
                |m| lines.push(m.log_line()),
            )?;
            for l in &lines {
                emit(out, l)?;
            }
            save_outcome(&outcome, &ckpt, &metadata(&cfg.model))?;
            for e in &outcome.evals {
                emit(out, &format!("eval step={} recon={}", e.step, e.recon))?;
            }
            Ok(())
        }
        Command::Encode {
            ckpt,
            input,
            out: dest,
            tile,
            ema,
            config,
        } => {
            let model = load_model(&ckpt, ema, config.as_deref())?;
            let video = OdvtFile::read(&input)?.tensor;
            model.check_video(video.shape())?;
            let dist = match tile {
                Some(g) => {
                    let plan = TilingPlan::new(video.shape()[2], g)?;
                    tiled_encode(&model, &video, &plan, Execution::Sequential)?
                }
                None => model.encode(&video)?,
            };
            OdvtFile::latent(dist.mean).write(&dest)?;
            Ok(())
        }
        Command::Decode {
            ckpt,
            input,
            out: dest,
            tile,
            ema,
            config,
        } => {
            let model = load_model(&ckpt, ema, config.as_deref())?;
            let z = OdvtFile::read(&input)?.tensor;
            let video = match tile {
                Some(g) => {
                    let plan = TilingPlan::for_latent(z.dims5("decode")?[2], g)?;
                    tiled_decode(&model, &z, &plan, Execution::Sequential)?
                }
                None => model.decode(&z)?,
            };
            OdvtFile::pixels(video).write(&dest)?;
            Ok(())
        }
        Command::Eval { reference, test } => {
            let a = OdvtFile::read(&reference)?.tensor;
            let b = OdvtFile::read(&test)?.tensor;
            let p = psnr(&a, &b)?;
            let s = ssim(&a, &b)?;
            emit(out, &format!("psnr={} ssim={}", p as f32, s as f32))
        }
        Command::Bench {
            variants,
            frames,
            size,
            repeat,
            base,
            config,
            threads: _,
            seed,
        } => {
            let mut model = match config {
                Some(p) => RunConfig::load(p)?.model,
                None => OdVaeConfig::default(),
            };
            if let Some(b) = base {
                model.base_channels = b;
            }
            model.seed = resolve_seed(seed, model.seed)?;
            let results = run_bench(&BenchConfig {
                variants,
                frames,
                size,
                repeat,
                model,
            })?;
            for r in &results {
                emit(out, &r.line())?;
            }
            Ok(())
        }
        Command::Init {
            mode,
            from,
            config,
            out: dest,
            twin,
            seed,
        } => {
            let cfg = match &config {
                Some(p) => RunConfig::load(p)?.model,
                None => match &from {
                    Some(src) => infer_config(&load_checkpoint(src)?)?.0,
                    None => {
                        return Err(Error::Config(
                            "init needs --config or a --from checkpoint".into(),
                        ))
                    }
                },
            };
            let arch = if twin {
                Architecture::Image
            } else {
                Architecture::Video(cfg.variant)
            };
            let mut model = OdVae::build_arch(&cfg, arch)?;
            let source = from.as_ref().map(load_checkpoint).transpose()?;
            let seed = resolve_seed(seed, cfg.seed)?;
            initialize(&mut model, mode, source.as_ref(), seed)?;
            save_checkpoint(&checkpoint_with_meta(model.params(), &cfg), &dest)?;
            emit(
                out,
                &format!(
                    "wrote {} parameters to {}",
                    model.num_parameters(),
                    dest.display()
                ),
            )
        }
    }
}

/// Entry point of the binary. Returns the process exit code.
pub fn run() -> i32 {
    let args: Vec<OsString> = std::env::args_os().collect();
    // GEMM threading is fixed on first use; default to one thread.
    let mut threads = 1usize;
    for (i, a) in args.iter().enumerate() {
        let a = a.to_string_lossy();
        let value = match a.strip_prefix("--threads") {
            Some("") => args.get(i + 1).map(|v| v.to_string_lossy().into_owned()),
            Some(rest) => rest.strip_prefix('=').map(str::to_string),
            None => None,
        };
        if let Some(n) = value.and_then(|v| v.parse().ok()) {
            threads = n;
        }
    }
    std::env::set_var("MATMUL_NUM_THREADS", threads.to_string());
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run_with(args, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
