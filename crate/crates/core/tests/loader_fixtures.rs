//! File-level loader checks against the committed binary fixtures.

use std::path::PathBuf;

use snncodec_core::data::{cifar10_bytes, load_cifar10, load_mnist, mnist_bytes};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn idx_fixture_parses_to_documented_shape() {
    let ds = load_mnist(
        fixture("digits-10.idx3-ubyte"),
        fixture("digits-10.idx1-ubyte"),
    )
    .unwrap();
    assert_eq!(ds.images().shape(), &[10, 1, 28, 28]);
    assert_eq!(ds.len(), 10);
    assert_eq!(ds.class_count(), 10);
    assert!(ds
        .images()
        .values()
        .iter()
        .all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn idx_fixture_round_trips_bit_exactly() {
    let image_bytes = std::fs::read(fixture("digits-10.idx3-ubyte")).unwrap();
    let label_bytes = std::fs::read(fixture("digits-10.idx1-ubyte")).unwrap();
    let ds = load_mnist(
        fixture("digits-10.idx3-ubyte"),
        fixture("digits-10.idx1-ubyte"),
    )
    .unwrap();
    let (images2, labels2) = mnist_bytes(&ds).unwrap();
    assert_eq!(image_bytes, images2);
    assert_eq!(label_bytes, labels2);
}

#[test]
fn cifar_fixture_parses_and_round_trips() {
    let ds = load_cifar10(&[fixture("cifar10-5.bin")]).unwrap();
    assert_eq!(ds.images().shape(), &[5, 3, 32, 32]);
    let bytes = std::fs::read(fixture("cifar10-5.bin")).unwrap();
    assert_eq!(cifar10_bytes(&ds).unwrap(), bytes);
}

#[test]
fn cifar_fixture_concatenates_across_files() {
    let p = fixture("cifar10-5.bin");
    let ds = load_cifar10(&[p.clone(), p]).unwrap();
    assert_eq!(ds.len(), 10);
}
