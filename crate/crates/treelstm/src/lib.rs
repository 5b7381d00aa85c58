//! Child-Sum Tree-LSTM engine for labeling the nodes of dependency trees
//! with sentiment classes, built on a small tape-based autodiff core.
//!
//! The pieces, bottom to top:
//!
//! - [`tensor`] / [`autodiff`]: dense tensors and reverse-mode
//!   differentiation over exactly the operations the model needs.
//! - [`treebank`]: the TSV tree format, validation, traversal, and a
//!   synthetic planted-rule generator for desk-scale experiments.
//! - [`embeddings`]: text-format word vectors with character n-gram
//!   composition for out-of-vocabulary forms.
//! - [`model`] / [`zoneout`] / [`seqlstm`]: the tree cell, the node
//!   classifier, tree-adapted zoneout, and a plain sequential LSTM used
//!   as an equivalence oracle.
//! - [`optim`] / [`training`] / [`checkpoint`]: Adagrad/Adam, the
//!   training loop with snapshot averaging, evaluation, the zoneout
//!   grid-search harness, and the binary checkpoint format.
//! - [`cli`] / [`config`]: the `treelstm` command-line tool.
//!
//! See the crate examples for one runnable program per capability.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod model;
pub mod optim;
pub mod seqlstm;
pub mod tensor;
pub mod training;
pub mod treebank;
pub mod zoneout;

pub use autodiff::{finite_diff_grad, gradient_rel_error, Parameter, Tape, Val};
pub use embeddings::{extract_ngrams, load_text_vectors, EmbeddingStore, OovPolicy};
pub use error::{Error, Result};
pub use model::{predict_labels, EmbeddingMode, Model, NodeVal, TreeLstmCell};
pub use optim::{Optimizer, OptimizerKind};
pub use seqlstm::{seq_forward, SeqLstmWeights};
pub use tensor::{Scalar, Tensor};
pub use training::{
    evaluate, evaluate_with_zoneout, grid_search, snapshot_average, train, train_with_vocab,
    tree_loss, GridAxes, MetricsReport, TrainConfig,
};
pub use treebank::{
    make_synthetic_treebank, parse_treebank, serialize_treebank, SentenceTree, Sentiment, Token,
    Treebank,
};
pub use zoneout::{MaskScope, Mode, ZoneoutConfig, ZoneoutStrategy};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The one way seeds become generators in this crate, so that every run
/// is reproducible from a single integer.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
