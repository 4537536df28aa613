use odvae::formats::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, OdvtFile,
};
use odvae::{Error, NamedTensorMap, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference ODCK encoder written from the byte layout.
fn odck_reference(map: &NamedTensorMap) -> Vec<u8> {
    let mut out = b"ODCK".to_vec();
    out.extend(1u32.to_le_bytes());
    out.extend((map.len() as u64).to_le_bytes());
    for (name, t) in map {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

fn random_tensor(r: &mut ChaCha8Rng, rank: usize, pixels: bool) -> Tensor {
    let shape: Vec<usize> = (0..rank).map(|_| r.random_range(1..=4)).collect();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| match (pixels, r.random_range(0..8)) {
            (true, 0) => 0.0,
            (true, 1) => 1.0,
            (true, _) => r.random::<f32>(),
            (false, 0) => -0.0,
            (false, 1) => f32::MIN_POSITIVE / 3.0,
            (false, 2) => f32::MAX,
            (false, _) => f32::from_bits(r.random::<u32>() & 0xBFFF_FFFF),
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn same_bits(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn odvt_round_trips() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..100 {
        let latent = r.random_bool(0.5);
        let file = OdvtFile {
            tensor: random_tensor(&mut r, 5, !latent),
            latent,
        };
        let bytes = file.to_bytes().unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 40 + 4 * file.tensor.numel());
        let back = OdvtFile::from_bytes(&bytes).unwrap();
        assert!(same_bits(&back.tensor, &file.tensor) && back.latent == latent);
        if i % 10 == 0 {
            let path = dir.path().join(format!("{i}.odvt"));
            file.write(&path).unwrap();
            let back = OdvtFile::read(&path).unwrap();
            assert!(same_bits(&back.tensor, &file.tensor));
        }
    }
}

pub fn odck_round_trips() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let dir = tempfile::tempdir().unwrap();
    for i in 0..100 {
        let mut map = NamedTensorMap::new();
        for j in 0..r.random_range(0..6) {
            let name = format!("layer{j}.é{}", r.random_range(0..1000));
            let rank = r.random_range(0..=5);
            map.insert(name, random_tensor(&mut r, rank, false));
        }
        let bytes = checkpoint_to_bytes(&map);
        assert_eq!(bytes, odck_reference(&map));
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(
            back.keys().collect::<Vec<_>>(),
            map.keys().collect::<Vec<_>>()
        );
        for (k, v) in &map {
            assert!(same_bits(&back[k], v), "{k}");
        }
        if i % 10 == 0 {
            let path = dir.path().join(format!("{i}.odck"));
            save_checkpoint(&map, &path).unwrap();
            let back = load_checkpoint(&path).unwrap();
            assert_eq!(back.len(), map.len());
        }
    }
}

pub fn empty_checkpoint_is_valid() {
    let bytes = checkpoint_to_bytes(&NamedTensorMap::new());
    assert_eq!(bytes.len(), 16);
    assert!(checkpoint_from_bytes(&bytes).unwrap().is_empty());
}

pub fn corrupt_files_are_format_errors() {
    let mut map = NamedTensorMap::new();
    map.insert("a".into(), Tensor::ones(vec![2, 2]));
    let good = checkpoint_to_bytes(&map);

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint_from_bytes(&bad), Err(Error::Format(_))));
    let mut bad = good.clone();
    bad[4] = 9;
    assert!(matches!(checkpoint_from_bytes(&bad), Err(Error::Format(_))));
    for cut in [3, 10, good.len() - 1] {
        assert!(matches!(
            checkpoint_from_bytes(&good[..cut]),
            Err(Error::Format(_))
        ));
    }
    let mut long = good.clone();
    long.push(0);
    assert!(matches!(
        checkpoint_from_bytes(&long),
        Err(Error::Format(_))
    ));

    // same entry twice
    let mut dup = good.clone();
    dup[8..16].copy_from_slice(&2u64.to_le_bytes());
    dup.extend_from_slice(&good[16..]);
    assert!(matches!(checkpoint_from_bytes(&dup), Err(Error::Format(_))));

    let odvt = OdvtFile::pixels(Tensor::zeros(vec![1, 3, 1, 2, 2]))
        .to_bytes()
        .unwrap();
    assert!(matches!(
        checkpoint_from_bytes(&odvt),
        Err(Error::Format(_))
    ));
    assert!(matches!(OdvtFile::from_bytes(&good), Err(Error::Format(_))));
    assert!(matches!(
        OdvtFile::from_bytes(&odvt[..odvt.len() - 2]),
        Err(Error::Format(_))
    ));
}

pub fn pixel_files_hold_unit_range_values() {
    let out_of_range = Tensor::full(vec![1, 3, 1, 2, 2], 1.5);
    assert!(OdvtFile::pixels(out_of_range.clone()).to_bytes().is_err());
    let bytes = OdvtFile::latent(out_of_range).to_bytes().unwrap();
    assert_eq!(
        u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
        1 | (1 << 24)
    );
    let mut as_pixels = bytes.clone();
    as_pixels[7] = 0;
    assert!(matches!(
        OdvtFile::from_bytes(&as_pixels),
        Err(Error::Format(_))
    ));
    assert!(OdvtFile::pixels(Tensor::zeros(vec![3, 2, 2]))
        .to_bytes()
        .is_err());
}

pub const ALL: &[(&str, fn())] = &[
    ("odvt_round_trips", odvt_round_trips),
    ("odck_round_trips", odck_round_trips),
    ("empty_checkpoint_is_valid", empty_checkpoint_is_valid),
    (
        "corrupt_files_are_format_errors",
        corrupt_files_are_format_errors,
    ),
    (
        "pixel_files_hold_unit_range_values",
        pixel_files_hold_unit_range_values,
    ),
];
