//! The Child-Sum Tree-LSTM cell, the node classifier, and the model that
//! ties them to an embedding table.
//!
//! A node consumes its token's embedding and the states of all its
//! children. The gates see the *sum* of the child hidden states; the cell
//! update keeps one forget gate per child. With the default configuration
//! the per-child forget gate is driven by the child-state sum; the
//! `per_child_forget_input` switch drives it by each child's own hidden
//! state instead (the formulation of the original Child-Sum cell).

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Parameter, Tape, Val};
use crate::embeddings::{build_embedding_layer, EmbeddingStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::treebank::{SentenceTree, NUM_CLASSES};
use crate::zoneout::{TreeZoneout, ZoneoutConfig};

pub const EMBEDDING_PARAM: &str = "emb.table";

/// One gate's weights: input projection `w`, recurrent projection `u`,
/// bias `b`.
pub struct GateParams<T> {
    pub w: Parameter<T>,
    pub u: Parameter<T>,
    pub b: Parameter<T>,
}

impl<T: Scalar> GateParams<T> {
    fn init(
        name: &str,
        hidden: usize,
        input_dim: usize,
        bias_value: T,
        bound: f64,
        rng: &mut impl Rng,
    ) -> Self {
        GateParams {
            w: Parameter::new(
                format!("cell.{name}.w"),
                uniform_tensor(&[hidden, input_dim], bound, rng),
            ),
            u: Parameter::new(
                format!("cell.{name}.u"),
                uniform_tensor(&[hidden, hidden], bound, rng),
            ),
            b: Parameter::new(
                format!("cell.{name}.b"),
                Tensor::filled(&[hidden], bias_value),
            ),
        }
    }

    fn zeros(name: &str, hidden: usize, input_dim: usize) -> Self {
        GateParams {
            w: Parameter::new(format!("cell.{name}.w"), Tensor::zeros(&[hidden, input_dim])),
            u: Parameter::new(format!("cell.{name}.u"), Tensor::zeros(&[hidden, hidden])),
            b: Parameter::new(format!("cell.{name}.b"), Tensor::zeros(&[hidden])),
        }
    }
}

fn uniform_tensor<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sized above")
}

/// Hidden and cell state of one node on a tape.
#[derive(Clone)]
pub struct NodeVal<T> {
    pub hidden: Val<T>,
    pub cell: Val<T>,
}

/// All gate weights of the tree cell.
pub struct TreeLstmCell<T> {
    pub input: GateParams<T>,
    pub forget: GateParams<T>,
    pub output: GateParams<T>,
    pub update: GateParams<T>,
    pub hidden_size: usize,
    pub input_dim: usize,
    /// Drive the per-child forget gate by that child's own hidden state
    /// instead of the child sum.
    pub per_child_forget_input: bool,
}

impl<T: Scalar> TreeLstmCell<T> {
    /// Weights drawn uniformly from `(-1/sqrt(h), 1/sqrt(h))`; biases zero
    /// except the forget bias, which starts at one.
    pub fn init(
        hidden_size: usize,
        input_dim: usize,
        per_child_forget_input: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden_size as f64).sqrt();
        TreeLstmCell {
            input: GateParams::init("input", hidden_size, input_dim, T::zero(), bound, rng),
            forget: GateParams::init("forget", hidden_size, input_dim, T::one(), bound, rng),
            output: GateParams::init("output", hidden_size, input_dim, T::zero(), bound, rng),
            update: GateParams::init("update", hidden_size, input_dim, T::zero(), bound, rng),
            hidden_size,
            input_dim,
            per_child_forget_input,
        }
    }

    pub fn zeros(hidden_size: usize, input_dim: usize, per_child_forget_input: bool) -> Self {
        TreeLstmCell {
            input: GateParams::zeros("input", hidden_size, input_dim),
            forget: GateParams::zeros("forget", hidden_size, input_dim),
            output: GateParams::zeros("output", hidden_size, input_dim),
            update: GateParams::zeros("update", hidden_size, input_dim),
            hidden_size,
            input_dim,
            per_child_forget_input,
        }
    }

    pub fn params(&self) -> Vec<Parameter<T>> {
        let mut out = Vec::with_capacity(12);
        for gate in [&self.input, &self.forget, &self.output, &self.update] {
            out.push(gate.w.clone());
            out.push(gate.u.clone());
            out.push(gate.b.clone());
        }
        out
    }

    /// Registers every weight on the tape once; reuse the result for all
    /// nodes of a sentence.
    pub fn bind(&self, tape: &Tape<T>) -> BoundCell<T> {
        let bind_gate = |g: &GateParams<T>| BoundGate {
            w: tape.param(&g.w),
            u: tape.param(&g.u),
            b: tape.param(&g.b),
        };
        BoundCell {
            input: bind_gate(&self.input),
            forget: bind_gate(&self.forget),
            output: bind_gate(&self.output),
            update: bind_gate(&self.update),
            hidden_size: self.hidden_size,
            per_child_forget_input: self.per_child_forget_input,
        }
    }

    /// Single-node forward including zoneout; convenience for tests and
    /// small experiments. Sentence-level code should `bind` once instead.
    pub fn forward_node(
        &self,
        tape: &Tape<T>,
        x: &Val<T>,
        children: &[NodeVal<T>],
        zoneout: &ZoneoutConfig,
        rng: &mut impl Rng,
    ) -> Result<NodeVal<T>> {
        let zo = TreeZoneout::new(zoneout, self.hidden_size, rng);
        let fresh = self.bind(tape).forward_node(tape, x, children)?;
        zo.apply(tape, fresh, children, rng)
    }
}

struct BoundGate<T> {
    w: Val<T>,
    u: Val<T>,
    b: Val<T>,
}

/// Tape-bound cell weights for one sentence's forward pass.
pub struct BoundCell<T> {
    input: BoundGate<T>,
    forget: BoundGate<T>,
    output: BoundGate<T>,
    update: BoundGate<T>,
    hidden_size: usize,
    per_child_forget_input: bool,
}

impl<T: Scalar> BoundCell<T> {
    /// Computes one node's fresh state from its token embedding and child
    /// states. Zoneout is applied afterwards by the caller.
    pub fn forward_node(
        &self,
        tape: &Tape<T>,
        x: &Val<T>,
        children: &[NodeVal<T>],
    ) -> Result<NodeVal<T>> {
        for child in children {
            let shape = child.hidden.shape();
            if shape != [self.hidden_size] {
                return Err(Error::Shape {
                    context: "forward_node child state".into(),
                    left: vec![self.hidden_size],
                    right: shape,
                });
            }
        }

        // Child hidden-state sum; the zero vector at a leaf.
        let h_sum = match children.split_first() {
            None => tape.constant(Tensor::zeros(&[self.hidden_size])),
            Some((first, rest)) => {
                let mut acc = first.hidden.clone();
                for c in rest {
                    acc = tape.add(&acc, &c.hidden)?;
                }
                acc
            }
        };

        let i = tape.sigmoid(&gate_preact(tape, &self.input, x, &h_sum)?);
        let o = tape.sigmoid(&gate_preact(tape, &self.output, x, &h_sum)?);
        let u = tape.tanh(&gate_preact(tape, &self.update, x, &h_sum)?);

        // One forget gate per child; identical across children unless the
        // gate is driven by each child's own hidden state.
        let mut cell = tape.hadamard(&i, &u)?;
        if !children.is_empty() {
            let shared_forget = if self.per_child_forget_input {
                None
            } else {
                Some(tape.sigmoid(&gate_preact(tape, &self.forget, x, &h_sum)?))
            };
            for child in children {
                let f = match &shared_forget {
                    Some(f) => f.clone(),
                    None => {
                        tape.sigmoid(&gate_preact(tape, &self.forget, x, &child.hidden)?)
                    }
                };
                cell = tape.add(&cell, &tape.hadamard(&f, &child.cell)?)?;
            }
        }

        let hidden = tape.hadamard(&o, &tape.tanh(&cell))?;
        Ok(NodeVal { hidden, cell })
    }
}

/// `(W x + U h_ctx) + b`
fn gate_preact<T: Scalar>(
    tape: &Tape<T>,
    gate: &BoundGate<T>,
    x: &Val<T>,
    h_ctx: &Val<T>,
) -> Result<Val<T>> {
    let wx = tape.matvec(&gate.w, x)?;
    let uh = tape.matvec(&gate.u, h_ctx)?;
    tape.add(&tape.add(&wx, &uh)?, &gate.b)
}

/// Linear classifier mapping a node's hidden state to class scores.
pub struct OutputLayer<T> {
    pub w: Parameter<T>,
    pub b: Parameter<T>,
}

impl<T: Scalar> OutputLayer<T> {
    pub fn init(hidden_size: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden_size as f64).sqrt();
        OutputLayer {
            w: Parameter::new(
                "classifier.w",
                uniform_tensor(&[classes, hidden_size], bound, rng),
            ),
            b: Parameter::new("classifier.b", Tensor::zeros(&[classes])),
        }
    }

    pub fn zeros(hidden_size: usize, classes: usize) -> Self {
        OutputLayer {
            w: Parameter::new("classifier.w", Tensor::zeros(&[classes, hidden_size])),
            b: Parameter::new("classifier.b", Tensor::zeros(&[classes])),
        }
    }

    pub fn params(&self) -> Vec<Parameter<T>> {
        vec![self.w.clone(), self.b.clone()]
    }

    pub fn bind(&self, tape: &Tape<T>) -> BoundOutput<T> {
        BoundOutput {
            w: tape.param(&self.w),
            b: tape.param(&self.b),
        }
    }
}

pub struct BoundOutput<T> {
    w: Val<T>,
    b: Val<T>,
}

impl<T: Scalar> BoundOutput<T> {
    pub fn logits(&self, tape: &Tape<T>, hidden: &Val<T>) -> Result<Val<T>> {
        tape.add(&tape.matvec(&self.w, hidden)?, &self.b)
    }
}

/// Whether the sentence forward registers the embedding matrix for
/// gradients or reads rows as constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingMode {
    Trainable,
    Frozen,
}

/// Per-node logits plus the node states they came from, index-aligned to
/// the sentence tokens.
pub struct ForwardPass<T> {
    pub logits: Vec<Val<T>>,
    pub states: Vec<NodeVal<T>>,
}

/// A complete tree-labeling model.
pub struct Model<T> {
    pub cell: TreeLstmCell<T>,
    pub classifier: OutputLayer<T>,
    pub embedding: Parameter<T>,
    pub vocab: Vec<String>,
    pub vocab_index: HashMap<String, usize>,
}

impl<T: Scalar> Model<T> {
    /// Fresh model over a vocabulary: embedding rows come from the store,
    /// cell and classifier weights from the seeded generator.
    pub fn new(
        hidden_size: usize,
        store: &EmbeddingStore,
        vocab: Vec<String>,
        per_child_forget_input: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let (embedding, vocab_index) = build_embedding_layer(store, &vocab, EMBEDDING_PARAM);
        let cell = TreeLstmCell::init(hidden_size, store.dim(), per_child_forget_input, rng);
        let classifier = OutputLayer::init(hidden_size, NUM_CLASSES, rng);
        Model {
            cell,
            classifier,
            embedding,
            vocab,
            vocab_index,
        }
    }

    /// Reassembles a model from loaded parts (checkpoint path).
    pub fn from_parts(
        cell: TreeLstmCell<T>,
        classifier: OutputLayer<T>,
        embedding: Parameter<T>,
        vocab: Vec<String>,
    ) -> Self {
        let vocab_index = vocab
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        Model {
            cell,
            classifier,
            embedding,
            vocab,
            vocab_index,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.cell.hidden_size
    }

    pub fn input_dim(&self) -> usize {
        self.cell.input_dim
    }

    /// Every parameter in checkpoint order: embedding, cell gates,
    /// classifier.
    pub fn params(&self) -> Vec<Parameter<T>> {
        let mut out = vec![self.embedding.clone()];
        out.extend(self.cell.params());
        out.extend(self.classifier.params());
        out
    }

    /// The non-bias weight matrices that the squared-norm penalty covers:
    /// gate and classifier weights, not biases and not the embedding.
    pub fn weight_params(&self) -> Vec<Parameter<T>> {
        let mut out = Vec::with_capacity(9);
        for gate in [
            &self.cell.input,
            &self.cell.forget,
            &self.cell.output,
            &self.cell.update,
        ] {
            out.push(gate.w.clone());
            out.push(gate.u.clone());
        }
        out.push(self.classifier.w.clone());
        out
    }

    fn check_vocab(&self, tree: &SentenceTree) -> Result<()> {
        for t in tree.tokens() {
            if !self.vocab_index.contains_key(t.embedding_key()) {
                return Err(Error::Data(format!(
                    "token {:?} (sentence position {}) is not in the model vocabulary",
                    t.embedding_key(),
                    t.index
                )));
            }
        }
        Ok(())
    }

    /// Runs the cell bottom-up over a validated sentence and returns
    /// per-node logits (and states). Zoneout is applied at every non-leaf
    /// node according to `zoneout`; pass an eval-mode config for
    /// inference.
    pub fn forward_sentence(
        &self,
        tape: &Tape<T>,
        tree: &SentenceTree,
        zoneout: &ZoneoutConfig,
        emb_mode: EmbeddingMode,
        rng: &mut impl Rng,
    ) -> Result<ForwardPass<T>> {
        self.check_vocab(tree)?;
        let bound_cell = self.cell.bind(tape);
        let bound_out = self.classifier.bind(tape);
        let emb_node = match emb_mode {
            EmbeddingMode::Trainable => Some(tape.param(&self.embedding)),
            EmbeddingMode::Frozen => None,
        };
        let zo = TreeZoneout::new(zoneout, self.cell.hidden_size, rng);

        let n = tree.len();
        let mut states: Vec<Option<NodeVal<T>>> = vec![None; n];
        for idx in tree.bottom_up_order() {
            let token = &tree.tokens()[idx - 1];
            let row = self.vocab_index[token.embedding_key()];
            let x = match &emb_node {
                Some(e) => tape.row(e, row)?,
                None => tape.constant(self.embedding.map_value(|m| m.row(row))),
            };
            let children: Vec<NodeVal<T>> = tree
                .children(idx)
                .iter()
                .map(|&c| states[c - 1].clone().expect("children computed first"))
                .collect();
            let fresh = bound_cell.forward_node(tape, &x, &children)?;
            let state = zo.apply(tape, fresh, &children, rng)?;
            states[idx - 1] = Some(state);
        }

        let states: Vec<NodeVal<T>> = states
            .into_iter()
            .map(|s| s.expect("all nodes reached"))
            .collect();
        let logits = states
            .iter()
            .map(|s| bound_out.logits(tape, &s.hidden))
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardPass { logits, states })
    }

    /// Deterministic inference: zoneout disabled, embedding frozen.
    pub fn predict_sentence(&self, tree: &SentenceTree) -> Result<Vec<usize>> {
        let tape = Tape::new();
        let mut rng = crate::rng_from_seed(0); // eval path draws nothing
        let pass = self.forward_sentence(
            &tape,
            tree,
            &ZoneoutConfig::off().with_mode(crate::zoneout::Mode::Eval),
            EmbeddingMode::Frozen,
            &mut rng,
        )?;
        let rows: Vec<Tensor<T>> = pass.logits.iter().map(|l| l.value()).collect();
        let matrix = crate::tensor::stack_rows(&rows)?;
        Ok(predict_labels(&matrix))
    }
}

/// Argmax per row; ties go to the lowest class index.
pub fn predict_labels<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    assert!(logits.is_matrix(), "predict_labels expects [n, k] logits");
    let (n, k) = (logits.rows(), logits.cols());
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        let mut best = 0usize;
        let mut best_v = logits.at2(r, 0);
        for c in 1..k {
            let v = logits.at2(r, c);
            if v > best_v {
                best = c;
                best_v = v;
            }
        }
        out.push(best);
    }
    out
}
