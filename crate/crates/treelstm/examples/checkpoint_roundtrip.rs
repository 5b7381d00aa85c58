//! Trains briefly, saves a checkpoint, loads it back, and verifies the
//! loaded model predicts exactly what the in-memory model predicts.
//! Checkpoints store 32-bit floats, so a 32-bit model survives the trip
//! bit for bit.
//!
//!     cargo run --example checkpoint_roundtrip

use treelstm::checkpoint::{load_model, save_model};
use treelstm::embeddings::{EmbeddingStore, OovPolicy};
use treelstm::treebank::{make_synthetic_treebank, serialize_treebank};
use treelstm::{cli::predict_treebank, train, TrainConfig};

fn main() {
    let treebank = make_synthetic_treebank(5, 12, 25, 8);
    let config = TrainConfig {
        hidden: 16,
        emb_dim: 16,
        emb_lr: 0.1,
        epochs: 8,
        ..TrainConfig::default()
    };
    let store = EmbeddingStore::empty(config.emb_dim, OovPolicy::Random, config.seed);

    // 32-bit end to end, to match the checkpoint's storage width.
    let (model, report) = train::<f32>(&config, &treebank, &store).unwrap();
    println!("trained: node accuracy {:.4}", report.node_accuracy);

    let mut blob = Vec::new();
    save_model(&model, &config, &mut blob).unwrap();
    println!("checkpoint size: {} bytes", blob.len());

    let (loaded, manifest) = load_model::<f32>(blob.as_slice()).unwrap();
    println!(
        "manifest: hidden {}, input dim {}, {} vocabulary entries",
        manifest.hidden,
        manifest.input_dim,
        manifest.vocab.len()
    );

    let before = predict_treebank(&model, &treebank).unwrap();
    let after = predict_treebank(&loaded, &treebank).unwrap();
    let mut buf_a = Vec::new();
    let mut buf_b = Vec::new();
    serialize_treebank(&before, &mut buf_a).unwrap();
    serialize_treebank(&after, &mut buf_b).unwrap();
    assert_eq!(buf_a, buf_b);
    println!("predictions before and after the round trip are byte-identical");
}
