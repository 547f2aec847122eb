use std::io::Write;
use std::path::PathBuf;

use proptest::prelude::*;

use crsn::data::{
    parse_idx_images, parse_idx_labels, read_maybe_gz, serialize_idx_images, serialize_idx_labels, sha256_hex,
    Dataset, RawImages, Split, MNIST_FILES,
};
use crsn::error::Error;
use crsn::spectral::SpectralConfig;

fn mnist_dir() -> PathBuf {
    std::env::var_os("CRSN_DATA_DIR")
        .map(Into::into)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn load(split: Split) -> Option<Dataset> {
    match Dataset::load(&mnist_dir(), split, true) {
        Ok(d) => Some(d),
        Err(e) => {
            eprintln!("MNIST unavailable ({e}); skipping");
            None
        }
    }
}

#[test]
fn official_train_split_goldens() {
    let Some(train) = load(Split::Train) else { return };
    assert_eq!(train.len(), 60_000);
    assert_eq!((train.raw().rows, train.raw().cols), (28, 28));
    assert_eq!(&train.labels()[..5], &[5, 0, 4, 1, 9]);
    assert_eq!(train.label_histogram(), [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949]);
    let first = train.raw().image(0);
    assert_eq!(sha256_hex(first), "23ceaef5eb61f0e70d64ac18fdf0f60df3d5971cf30bbadac7b6ebf07f782d2c");
    assert_eq!(first.iter().map(|&p| p as u64).sum::<u64>(), 27525);
    assert!(train.image(0).iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn official_test_split_goldens() {
    let Some(test) = load(Split::Test) else { return };
    assert_eq!(test.len(), 10_000);
    assert_eq!(test.label_histogram(), [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]);
}

#[test]
fn official_files_reserialize_bit_exactly() {
    let dir = mnist_dir();
    for f in &MNIST_FILES {
        let Ok(bytes) = read_maybe_gz(&dir, f.name) else {
            eprintln!("{} missing; skipping", f.name);
            return;
        };
        f.verify(&bytes).unwrap();
        let again = if f.name.contains("images") {
            serialize_idx_images(&parse_idx_images(&bytes).unwrap())
        } else {
            serialize_idx_labels(&parse_idx_labels(&bytes).unwrap())
        };
        assert!(again == bytes, "{}", f.name);
    }
}

#[test]
fn checksum_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = RawImages { count: 1, rows: 2, cols: 2, pixels: vec![1, 2, 3, 4] };
    for f in &MNIST_FILES {
        let bytes = if f.name.contains("images") { serialize_idx_images(&raw) } else { serialize_idx_labels(&[7]) };
        std::fs::File::create(tmp.path().join(f.name)).unwrap().write_all(&bytes).unwrap();
    }
    assert!(matches!(Dataset::load(tmp.path(), Split::Test, true), Err(Error::DataMissing(_))));
    let d = Dataset::load(tmp.path(), Split::Test, false).unwrap();
    assert_eq!(d.len(), 1);
    assert_eq!(d.label(0), 7);
}

#[test]
fn encoding_places_pixels_on_leading_nodes() {
    let cfg = SpectralConfig::default();
    let raw = RawImages { count: 2, rows: 28, cols: 28, pixels: (0..2 * 784).map(|i| (i % 256) as u8).collect() };
    let d = Dataset::new(Split::Test, raw, vec![1, 2]).unwrap();
    let x = d.encode::<f64>(&[1, 0], &cfg).unwrap();
    assert_eq!(x.shape(), (1000, 2));
    for i in 0..1000 {
        let want = if i < 784 { ((784 + i) % 256) as f64 / 255.0 } else { 0.0 };
        assert_eq!(x.get(i, 0).re, want);
        assert_eq!(x.get(i, 0).im, 0.0);
    }
    assert_eq!(x.get(5, 1).re, 5.0 / 255.0);
}

proptest! {
    #[test]
    fn fixtures_round_trip(count in 0usize..6, rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let pixels: Vec<u8> = (0..count * rows * cols).map(|i| (seed.rotate_left(i as u32 % 64) as u8) ^ i as u8).collect();
        let raw = RawImages { count, rows, cols, pixels };
        let bytes = serialize_idx_images(&raw);
        prop_assert_eq!(parse_idx_images(&bytes).unwrap(), raw);
        let labels: Vec<u8> = (0..count).map(|i| ((seed >> i) % 10) as u8).collect();
        let lb = serialize_idx_labels(&labels);
        prop_assert_eq!(parse_idx_labels(&lb).unwrap(), labels);
        prop_assert_eq!(serialize_idx_labels(&parse_idx_labels(&lb).unwrap()), lb);
    }

    #[test]
    fn any_truncation_is_rejected(cut in 1usize..20) {
        let raw = RawImages { count: 2, rows: 3, cols: 2, pixels: vec![9; 12] };
        let bytes = serialize_idx_images(&raw);
        let short = &bytes[..bytes.len() - cut.min(bytes.len())];
        prop_assert!(parse_idx_images(short).is_err());
    }
}
