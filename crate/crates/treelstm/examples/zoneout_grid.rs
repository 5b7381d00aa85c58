//! Desk-scale zoneout grid search: mask scope x strategy x rates, each
//! cell trained with its own derived seed, results sorted by accuracy.
//!
//!     cargo run --release --example zoneout_grid

use treelstm::embeddings::{EmbeddingStore, OovPolicy};
use treelstm::training::GridAxes;
use treelstm::treebank::make_synthetic_treebank;
use treelstm::{grid_search, MaskScope, TrainConfig, ZoneoutStrategy};

fn main() {
    let train_tb = make_synthetic_treebank(1, 32, 40, 10);
    let eval_tb = make_synthetic_treebank(2, 12, 40, 10);
    let config = TrainConfig {
        hidden: 24,
        emb_dim: 24,
        emb_lr: 0.1,
        epochs: 12,
        ..TrainConfig::default()
    };
    let store = EmbeddingStore::empty(config.emb_dim, OovPolicy::Random, config.seed);
    let axes = GridAxes {
        mask_scopes: vec![MaskScope::Common, MaskScope::Distinct],
        strategies: vec![ZoneoutStrategy::SumChild, ZoneoutStrategy::ChooseChild],
        rates_cell: vec![0.0, 0.01, 0.25],
        rates_hidden: vec![0.0, 0.01, 0.25],
        ..GridAxes::default()
    };
    println!(
        "running {} cells on {} worker threads...",
        axes.cell_count(),
        4
    );
    let rows = grid_search::<f64>(&config, &axes, &train_tb, &eval_tb, &store, 4);

    println!("mask\tstrategy\trate_c\trate_h\taccuracy");
    for row in &rows {
        let accuracy = match &row.accuracy {
            Ok(a) => format!("{a:.4}"),
            Err(e) => format!("failed: {e}"),
        };
        println!(
            "{}\t{}\t{}\t{}\t{accuracy}",
            row.cell.mask_scope.label(),
            row.cell.strategy.label(),
            row.cell.rate_cell,
            row.cell.rate_hidden,
        );
    }
}
