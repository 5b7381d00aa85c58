//! Trains a small model on a synthetic planted-rule treebank and prints
//! the loss curve and final metrics.
//!
//!     cargo run --example train_synthetic

use treelstm::embeddings::{EmbeddingStore, OovPolicy};
use treelstm::treebank::make_synthetic_treebank;
use treelstm::{train, Sentiment, TrainConfig};

fn main() {
    let treebank = make_synthetic_treebank(7, 32, 50, 12);
    println!(
        "synthetic treebank: {} sentences, {} nodes, {} distinct forms",
        treebank.sentences().len(),
        treebank.total_nodes(),
        treebank.vocabulary().len()
    );

    let config = TrainConfig {
        hidden: 32,
        emb_dim: 32,
        emb_lr: 0.1,
        epochs: 50,
        seed: 7,
        ..TrainConfig::default()
    };
    let store = EmbeddingStore::empty(config.emb_dim, OovPolicy::Random, config.seed);

    let (model, report) = train::<f64>(&config, &treebank, &store).expect("training failed");

    for (i, loss) in report.epoch_losses.iter().enumerate() {
        if (i + 1) % 5 == 0 || i == 0 {
            println!("epoch {:>2}  mean node loss {loss:.5}", i + 1);
        }
    }
    println!("train node accuracy: {:.4}", report.node_accuracy);
    for (class, m) in report.per_class.iter().enumerate() {
        println!(
            "  label {:>2}: precision {:.3} recall {:.3} ({} nodes)",
            Sentiment::from_class(class).unwrap().value(),
            m.precision,
            m.recall,
            m.support
        );
    }
    println!("wall clock: {:.2?}", report.wall_clock);

    // The planted rule means a perfectly fitted model relabels its own
    // training data exactly.
    let mut correct = 0;
    let mut total = 0;
    for tree in treebank.sentences() {
        let preds = model.predict_sentence(tree).unwrap();
        for (t, &p) in tree.tokens().iter().zip(&preds) {
            total += 1;
            if t.sentiment.class() == p {
                correct += 1;
            }
        }
    }
    println!("re-labeled training nodes: {correct}/{total} correct");
}
