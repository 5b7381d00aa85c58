//! On a single-child chain the Child-Sum tree cell is an ordinary LSTM:
//! every node has exactly one child, so the child-state sum is that
//! child's state. This example runs both implementations with shared
//! weights and prints the largest state difference per chain length.
//!
//!     cargo run --example chain_equivalence

use treelstm::embeddings::{EmbeddingStore, OovPolicy};
use treelstm::model::EmbeddingMode;
use treelstm::seqlstm::{seq_forward, SeqLstmWeights};
use treelstm::treebank::{SentenceTree, Sentiment, Token};
use treelstm::{rng_from_seed, Model, Tape, ZoneoutConfig};

fn chain(forms: &[String]) -> SentenceTree {
    let n = forms.len();
    let tokens = forms
        .iter()
        .enumerate()
        .map(|(i, f)| Token {
            index: i + 1,
            form: f.clone(),
            head: if i + 1 == n { 0 } else { i + 2 },
            relation: "dep".into(),
            sentiment: Sentiment::Neutral,
            lemma: None,
        })
        .collect();
    SentenceTree::from_tokens(tokens)
}

fn main() {
    let store = EmbeddingStore::empty(16, OovPolicy::Random, 3);
    for len in 1..=10usize {
        let forms: Vec<String> = (0..len).map(|i| format!("tok{i}")).collect();
        let mut rng = rng_from_seed(40 + len as u64);
        let model = Model::<f64>::new(24, &store, forms.clone(), false, &mut rng);
        let tree = chain(&forms);

        let tape = Tape::new();
        let mut fwd_rng = rng_from_seed(0);
        let pass = model
            .forward_sentence(
                &tape,
                &tree,
                &ZoneoutConfig::off(),
                EmbeddingMode::Frozen,
                &mut fwd_rng,
            )
            .unwrap();

        let inputs: Vec<Vec<f64>> = forms
            .iter()
            .map(|f| {
                let row = model.vocab_index[f];
                model.embedding.value().row(row).data().to_vec()
            })
            .collect();
        let seq = seq_forward(&SeqLstmWeights::from_cell(&model.cell), &inputs).unwrap();

        let mut max_diff = 0.0f64;
        for (t, state) in seq.iter().enumerate() {
            let tree_h = pass.states[t].hidden.value();
            for (a, b) in tree_h.data().iter().zip(&state.hidden) {
                max_diff = max_diff.max((a - b).abs());
            }
        }
        println!("chain length {len:>2}: max |tree - sequential| = {max_diff:.3e}");
    }
}
