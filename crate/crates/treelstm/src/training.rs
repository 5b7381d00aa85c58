//! Loss aggregation, the training loop, snapshot averaging, evaluation,
//! gradient checking, and the zoneout grid-search harness.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_diff_grad, gradient_rel_error, Parameter, Tape, Val};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::model::{EmbeddingMode, Model};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng_from_seed;
use crate::tensor::{stack_rows, Scalar, Tensor};
use crate::treebank::{random_tree, Treebank, NUM_CLASSES};
use crate::zoneout::{MaskScope, Mode, ZoneoutConfig, ZoneoutStrategy};

/// Everything a training run needs to be reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub hidden: usize,
    /// Input dimensionality used when no embedding file supplies one.
    pub emb_dim: usize,
    pub lr: f64,
    /// Learning rate of the embedding matrix; 0 keeps it frozen.
    pub emb_lr: f64,
    pub weight_decay: f64,
    pub l2: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub seed: u64,
    /// How many trailing per-epoch snapshots are averaged into the final
    /// model; 1 keeps the last epoch as-is.
    pub ensemble_epochs: usize,
    pub zoneout: ZoneoutConfig,
    pub per_child_forget_input: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 25,
            hidden: 300,
            emb_dim: 300,
            lr: 0.05,
            emb_lr: 0.0,
            weight_decay: 1e-4,
            l2: 1e-4,
            optimizer: OptimizerKind::Adagrad,
            epochs: 20,
            seed: 0,
            ensemble_epochs: 1,
            zoneout: ZoneoutConfig::off(),
            per_child_forget_input: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be positive".into()));
        }
        if self.hidden == 0 || self.emb_dim == 0 {
            return Err(Error::Usage("hidden and emb_dim must be positive".into()));
        }
        if self.ensemble_epochs == 0 {
            return Err(Error::Usage("ensemble_epochs must be at least 1".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("emb_lr", self.emb_lr),
            ("weight_decay", self.weight_decay),
            ("l2", self.l2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Usage(format!("{name} must be a non-negative number")));
            }
        }
        self.zoneout.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub node_accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub epoch_losses: Vec<f64>,
    pub wall_clock: Duration,
}

/// One sentence's loss on the tape plus its reported data term.
pub struct SentenceLoss<T> {
    pub total: Val<T>,
    /// Mean per-node cross-entropy, without the penalty term.
    pub mean_node_ce: f64,
}

/// Mean per-node softmax cross-entropy plus `l2` times the squared norm
/// of the given weight matrices.
pub fn tree_loss<T: Scalar>(
    tape: &Tape<T>,
    logits: &[Val<T>],
    gold: &[usize],
    l2: f64,
    weight_params: &[Parameter<T>],
) -> Result<SentenceLoss<T>> {
    if logits.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} logit rows for {} gold labels",
            logits.len(),
            gold.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::Data("tree_loss over an empty sentence".into()));
    }
    let mut acc: Option<Val<T>> = None;
    for (l, &g) in logits.iter().zip(gold) {
        let ce = tape.softmax_cross_entropy(l, g)?;
        acc = Some(match acc {
            None => ce,
            Some(a) => tape.add(&a, &ce)?,
        });
    }
    let mean = tape.scale(&acc.expect("non-empty"), T::from_f64(1.0 / gold.len() as f64));
    let mean_node_ce = mean.item().as_f64();

    let total = if l2 > 0.0 && !weight_params.is_empty() {
        let mut penalty: Option<Val<T>> = None;
        for w in weight_params {
            let wv = tape.param(w);
            let sq = tape.sum(&tape.hadamard(&wv, &wv)?);
            penalty = Some(match penalty {
                None => sq,
                Some(p) => tape.add(&p, &sq)?,
            });
        }
        let scaled = tape.scale(&penalty.expect("non-empty weights"), T::from_f64(l2));
        tape.add(&mean, &scaled)?
    } else {
        mean
    };
    Ok(SentenceLoss {
        total,
        mean_node_ce,
    })
}

/// Arithmetic mean of parameter sets, elementwise. A single checkpoint
/// comes back unchanged.
pub fn snapshot_average<T: Scalar>(checkpoints: &[Vec<Tensor<T>>]) -> Result<Vec<Tensor<T>>> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::Data("snapshot_average over no checkpoints".into()))?;
    let mut out = first.clone();
    for cp in &checkpoints[1..] {
        if cp.len() != out.len() {
            return Err(Error::Shape {
                context: "snapshot_average checkpoint count".into(),
                left: vec![out.len()],
                right: vec![cp.len()],
            });
        }
        for (acc, t) in out.iter_mut().zip(cp) {
            if acc.shape() != t.shape() {
                return Err(Error::Shape {
                    context: "snapshot_average tensor".into(),
                    left: acc.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            acc.add_assign(t);
        }
    }
    let inv = T::from_f64(1.0 / checkpoints.len() as f64);
    for t in &mut out {
        t.scale_assign(inv);
    }
    Ok(out)
}

/// Trains on the treebank's own vocabulary.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    treebank: &Treebank,
    store: &EmbeddingStore,
) -> Result<(Model<T>, MetricsReport)> {
    train_with_vocab(config, treebank, store, treebank.embedding_keys())
}

/// Trains with an explicit vocabulary (usually the union of the training
/// and evaluation forms, so a frozen model can score held-out data).
pub fn train_with_vocab<T: Scalar>(
    config: &TrainConfig,
    treebank: &Treebank,
    store: &EmbeddingStore,
    vocab: Vec<String>,
) -> Result<(Model<T>, MetricsReport)> {
    config.validate()?;
    if treebank.is_empty() {
        return Err(Error::Data("cannot train on an empty treebank".into()));
    }
    let start = Instant::now();
    let mut rng = rng_from_seed(config.seed);
    let model = Model::<T>::new(
        config.hidden,
        store,
        vocab,
        config.per_child_forget_input,
        &mut rng,
    );
    let params = model.params();
    let weights = model.weight_params();
    let mut optimizer =
        Optimizer::<T>::new(config.optimizer, config.lr, config.emb_lr, config.weight_decay);
    let emb_mode = if config.emb_lr != 0.0 {
        EmbeddingMode::Trainable
    } else {
        EmbeddingMode::Frozen
    };
    let zoneout_train = config.zoneout.with_mode(Mode::Train);

    let n = treebank.sentences().len();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut snapshots: Vec<Vec<Tensor<T>>> = Vec::new();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut ce_total = 0.0;
        let mut nodes_total = 0usize;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            for &si in batch {
                let tree = &treebank.sentences()[si];
                let tape = Tape::new();
                let pass =
                    model.forward_sentence(&tape, tree, &zoneout_train, emb_mode, &mut rng)?;
                let gold: Vec<usize> =
                    tree.tokens().iter().map(|t| t.sentiment.class()).collect();
                let loss = tree_loss(&tape, &pass.logits, &gold, config.l2, &weights)?;
                if !loss.total.item().as_f64().is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at epoch {epoch}, batch {batch_idx}, sentence {si}"
                    )));
                }
                ce_total += loss.mean_node_ce * tree.len() as f64;
                nodes_total += tree.len();
                tape.backward(&loss.total)?;
            }
            // Gradients summed over the batch become the batch mean.
            let inv = T::from_f64(1.0 / batch.len() as f64);
            for p in &params {
                p.scale_grad(inv);
            }
            optimizer.step(&params);
        }
        epoch_losses.push(ce_total / nodes_total as f64);

        snapshots.push(params.iter().map(|p| p.value()).collect());
        if snapshots.len() > config.ensemble_epochs {
            snapshots.remove(0);
        }
    }

    if !snapshots.is_empty() {
        let averaged = snapshot_average(&snapshots)?;
        for (p, v) in params.iter().zip(averaged) {
            p.set_value(v);
        }
    }

    let mut report = evaluate_with_zoneout(&model, treebank, &config.zoneout)?;
    report.epoch_losses = epoch_losses;
    report.wall_clock = start.elapsed();
    Ok((model, report))
}

/// Node accuracy and per-class precision/recall with zoneout disabled.
pub fn evaluate<T: Scalar>(model: &Model<T>, treebank: &Treebank) -> Result<MetricsReport> {
    evaluate_with_zoneout(model, treebank, &ZoneoutConfig::off())
}

/// Evaluation with an explicit zoneout configuration, forced into eval
/// mode (identity unless `eval_expectation` is set).
pub fn evaluate_with_zoneout<T: Scalar>(
    model: &Model<T>,
    treebank: &Treebank,
    zoneout: &ZoneoutConfig,
) -> Result<MetricsReport> {
    let start = Instant::now();
    let eval_cfg = zoneout.with_mode(Mode::Eval);
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for tree in treebank.sentences() {
        let tape = Tape::new();
        let mut rng = rng_from_seed(0); // eval consumes no randomness
        let pass =
            model.forward_sentence(&tape, tree, &eval_cfg, EmbeddingMode::Frozen, &mut rng)?;
        let rows: Vec<Tensor<T>> = pass.logits.iter().map(|l| l.value()).collect();
        let preds = crate::model::predict_labels(&stack_rows(&rows)?);
        for (t, &p) in tree.tokens().iter().zip(&preds) {
            confusion[t.sentiment.class()][p] += 1;
        }
    }
    let mut report = metrics_from_confusion(&confusion);
    report.wall_clock = start.elapsed();
    Ok(report)
}

fn metrics_from_confusion(confusion: &[[usize; NUM_CLASSES]; NUM_CLASSES]) -> MetricsReport {
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    let per_class = (0..NUM_CLASSES)
        .map(|c| {
            let predicted: usize = (0..NUM_CLASSES).map(|g| confusion[g][c]).sum();
            let support: usize = confusion[c].iter().sum();
            ClassMetrics {
                precision: ratio(confusion[c][c], predicted),
                recall: ratio(confusion[c][c], support),
                support,
            }
        })
        .collect();
    MetricsReport {
        node_accuracy: ratio(correct, total),
        per_class,
        epoch_losses: Vec::new(),
        wall_clock: Duration::ZERO,
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Splitmix-style derivation of one grid cell's seed from the base seed.
pub fn derive_seed(base: u64, ordinal: u64) -> u64 {
    let mut z = base ^ ordinal.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Value lists for the zoneout grid. An empty list keeps the base
/// config's value for that axis.
#[derive(Clone, Debug, Default)]
pub struct GridAxes {
    pub mask_scopes: Vec<MaskScope>,
    pub strategies: Vec<ZoneoutStrategy>,
    pub rates_cell: Vec<f64>,
    pub rates_hidden: Vec<f64>,
}

impl GridAxes {
    pub fn cell_count(&self) -> usize {
        self.mask_scopes.len().max(1)
            * self.strategies.len().max(1)
            * self.rates_cell.len().max(1)
            * self.rates_hidden.len().max(1)
    }
}

/// One grid cell's resolved coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridCell {
    pub mask_scope: MaskScope,
    pub strategy: ZoneoutStrategy,
    pub rate_cell: f64,
    pub rate_hidden: f64,
}

/// Outcome of one grid cell; failures carry the error text so the run
/// can continue.
#[derive(Clone, Debug)]
pub struct GridRow {
    pub ordinal: usize,
    pub cell: GridCell,
    pub accuracy: std::result::Result<f64, String>,
}

/// Cartesian product over the zoneout axes. Every cell trains with its
/// own derived seed; cells run on up to `workers` threads and share only
/// the immutable inputs. Rows come back sorted by accuracy (failures
/// last), ties broken by cell order.
pub fn grid_search<T: Scalar>(
    base: &TrainConfig,
    axes: &GridAxes,
    train_tb: &Treebank,
    eval_tb: &Treebank,
    store: &EmbeddingStore,
    workers: usize,
) -> Vec<GridRow> {
    let one = |v: &Vec<f64>, base_v: f64| -> Vec<f64> {
        if v.is_empty() {
            vec![base_v]
        } else {
            v.clone()
        }
    };
    let scopes = if axes.mask_scopes.is_empty() {
        vec![base.zoneout.mask_scope]
    } else {
        axes.mask_scopes.clone()
    };
    let strategies = if axes.strategies.is_empty() {
        vec![base.zoneout.strategy]
    } else {
        axes.strategies.clone()
    };
    let rates_c = one(&axes.rates_cell, base.zoneout.rate_cell);
    let rates_h = one(&axes.rates_hidden, base.zoneout.rate_hidden);

    // Vocabulary union so trained cells can score the evaluation split.
    let mut vocab = train_tb.embedding_keys();
    let mut seen: std::collections::HashSet<String> = vocab.iter().cloned().collect();
    for f in eval_tb.embedding_keys() {
        if seen.insert(f.clone()) {
            vocab.push(f);
        }
    }

    let mut cells = Vec::new();
    for &mask_scope in &scopes {
        for &strategy in &strategies {
            for &rate_cell in &rates_c {
                for &rate_hidden in &rates_h {
                    cells.push(GridCell {
                        mask_scope,
                        strategy,
                        rate_cell,
                        rate_hidden,
                    });
                }
            }
        }
    }

    let jobs: Mutex<Vec<(usize, GridCell)>> =
        Mutex::new(cells.iter().copied().enumerate().rev().collect());
    let results: Mutex<Vec<Option<GridRow>>> = Mutex::new(vec![None; cells.len()]);
    let workers = workers.clamp(1, cells.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = jobs.lock().unwrap().pop();
                let Some((ordinal, cell)) = job else { break };
                let mut config = base.clone();
                config.zoneout.mask_scope = cell.mask_scope;
                config.zoneout.strategy = cell.strategy;
                config.zoneout.rate_cell = cell.rate_cell;
                config.zoneout.rate_hidden = cell.rate_hidden;
                config.seed = derive_seed(base.seed, ordinal as u64);
                let accuracy =
                    train_with_vocab::<T>(&config, train_tb, store, vocab.clone())
                        .and_then(|(model, _)| {
                            evaluate_with_zoneout(&model, eval_tb, &config.zoneout)
                        })
                        .map(|m| m.node_accuracy)
                        .map_err(|e| e.to_string());
                results.lock().unwrap()[ordinal] = Some(GridRow {
                    ordinal,
                    cell,
                    accuracy,
                });
            });
        }
    });

    let mut rows: Vec<GridRow> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();
    rows.sort_by(|a, b| match (&a.accuracy, &b.accuracy) {
        (Ok(x), Ok(y)) => x.total_cmp(y).then(a.ordinal.cmp(&b.ordinal)),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.ordinal.cmp(&b.ordinal),
    });
    rows
}

/// Per-parameter relative error between backpropagated and
/// finite-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

/// Full-model gradient check in 64-bit: a random seven-node tree, hidden
/// size eight, every parameter compared against central differences with
/// step 1e-5.
pub fn gradient_check(seed: u64) -> Result<GradCheckReport> {
    gradient_check_sized(seed, 7, 8)
}

pub fn gradient_check_sized(seed: u64, nodes: usize, hidden: usize) -> Result<GradCheckReport> {
    let mut rng = rng_from_seed(seed);
    let tree = random_tree(&mut rng, nodes, nodes);
    let treebank = Treebank::from_sentences(vec![tree]);
    let store = EmbeddingStore::empty(5, crate::embeddings::OovPolicy::Random, seed);
    let model = Model::<f64>::new(hidden, &store, treebank.embedding_keys(), false, &mut rng);
    let params = model.params();
    let weights = model.weight_params();
    let tree = &treebank.sentences()[0];
    let gold: Vec<usize> = tree.tokens().iter().map(|t| t.sentiment.class()).collect();
    let l2 = 1e-4;

    let loss_value = || -> Result<f64> {
        let tape = Tape::new();
        let mut dummy = rng_from_seed(0);
        let pass = model.forward_sentence(
            &tape,
            tree,
            &ZoneoutConfig::off(),
            EmbeddingMode::Trainable,
            &mut dummy,
        )?;
        let loss = tree_loss(&tape, &pass.logits, &gold, l2, &weights)?;
        Ok(loss.total.item())
    };

    // One backward pass for the analytic gradients.
    crate::autodiff::zero_grads(&params);
    {
        let tape = Tape::new();
        let mut dummy = rng_from_seed(0);
        let pass = model.forward_sentence(
            &tape,
            tree,
            &ZoneoutConfig::off(),
            EmbeddingMode::Trainable,
            &mut dummy,
        )?;
        let loss = tree_loss(&tape, &pass.logits, &gold, l2, &weights)?;
        tape.backward(&loss.total)?;
    }

    let mut per_param = Vec::with_capacity(params.len());
    let mut max_rel_error = 0.0f64;
    for p in &params {
        let analytic = p.grad();
        let base = p.value();
        let fd = finite_diff_grad(
            |t| {
                p.set_value(t.clone());
                loss_value()
            },
            &base,
            1e-5,
        )?;
        p.set_value(base);
        let rel = gradient_rel_error(&analytic, &fd);
        max_rel_error = max_rel_error.max(rel);
        per_param.push((p.name(), rel));
    }
    crate::autodiff::zero_grads(&params);
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
    })
}
