//! Regenerates the binary loader fixtures under `tests/fixtures/`.
//!
//! Run from the repository root:
//! `cargo run -p snncodec-core --example gen_fixtures`

use std::fs;
use std::path::PathBuf;

use snncodec_core::data::{mnist_bytes, synth_digits};

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    fs::create_dir_all(&dir).expect("create fixture dir");

    // Ten-image IDX pair in the MNIST layout.
    let digits = synth_digits(10, 42).expect("digit set");
    let (images, labels) = mnist_bytes(&digits).expect("idx bytes");
    fs::write(dir.join("digits-10.idx3-ubyte"), images).expect("write images");
    fs::write(dir.join("digits-10.idx1-ubyte"), labels).expect("write labels");

    // Five CIFAR-10 records with a deterministic pixel pattern.
    let mut cifar = Vec::new();
    for rec in 0..5u32 {
        cifar.push((rec % 10) as u8);
        for i in 0..3072u32 {
            cifar.push(((i * 7 + rec * 13) % 256) as u8);
        }
    }
    fs::write(dir.join("cifar10-5.bin"), cifar).expect("write cifar");

    println!("fixtures written to {}", dir.display());
}
