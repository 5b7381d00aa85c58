//! Command-line wiring: train, eval, predict, gridsearch, gradcheck, and
//! synth subcommands over the library. Exit codes: 0 success, 1 usage
//! error, 2 data/format error, 3 numeric failure.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::checkpoint::{load_model, save_model};
use crate::config::{apply_config_text, apply_overrides, parse_mask_scope, parse_strategy};
use crate::embeddings::{load_subword_table, load_text_vectors, EmbeddingStore, OovPolicy};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Scalar;
use crate::training::{
    evaluate_with_zoneout, gradient_check, grid_search, train_with_vocab, GridAxes, GridRow,
    MetricsReport, TrainConfig,
};
use crate::treebank::{
    make_synthetic_treebank, parse_treebank, serialize_treebank, SentenceTree, Sentiment, Token,
    Treebank,
};

#[derive(Parser)]
#[command(
    name = "treelstm",
    version,
    about = "Tree-LSTM sentiment labeling over dependency treebanks"
)]
struct Cli {
    /// Master random seed; all randomness in a run derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Floating-point width for model arithmetic.
    #[arg(long, global = true, default_value = "64", value_parser = ["32", "64"])]
    precision: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and optionally write a checkpoint.
    Train {
        /// Training treebank (TSV).
        #[arg(long)]
        data: PathBuf,
        /// Held-out treebank scored after training.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Pre-trained word vectors (text format).
        #[arg(long)]
        emb: Option<PathBuf>,
        /// Character n-gram vectors for OOV composition.
        #[arg(long)]
        subword_emb: Option<PathBuf>,
        /// Where to write the trained checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config file with `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Score a checkpoint on a treebank and print node accuracy.
    Eval {
        /// Checkpoint file.
        #[arg(long)]
        model: PathBuf,
        /// Treebank to score (TSV).
        #[arg(long)]
        data: PathBuf,
    },
    /// Relabel a treebank with model predictions.
    Predict {
        /// Checkpoint file.
        #[arg(long)]
        model: PathBuf,
        /// Treebank to label (TSV).
        #[arg(long)]
        data: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score the Cartesian product of zoneout settings.
    Gridsearch {
        /// Training treebank (TSV).
        #[arg(long)]
        data: PathBuf,
        /// Held-out treebank each cell is scored on; training data when
        /// omitted.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Pre-trained word vectors (text format).
        #[arg(long)]
        emb: Option<PathBuf>,
        /// Character n-gram vectors for OOV composition.
        #[arg(long)]
        subword_emb: Option<PathBuf>,
        /// Config file with `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Axis values, e.g. `rate_c=0,0.01` or `mask=common,distinct`
        /// (repeatable; axes: mask, strategy, rate_c, rate_h).
        #[arg(long = "axis", value_name = "NAME=V1,V2,...")]
        axes: Vec<String>,
        /// Parallel training cells.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Also write the result table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare backpropagated gradients against central finite
    /// differences on a small random tree (always 64-bit).
    Gradcheck {},
    /// Generate a synthetic planted-rule treebank.
    Synth {
        /// Number of sentences.
        #[arg(long, default_value_t = 32)]
        sentences: usize,
        /// Vocabulary size.
        #[arg(long, default_value_t = 50)]
        vocab: usize,
        /// Maximum sentence length.
        #[arg(long, default_value_t = 12)]
        max_len: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let use_f32 = cli.precision == "32";
    let outcome = if use_f32 {
        dispatch::<f32>(cli)
    } else {
        dispatch::<f64>(cli)
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch<T: Scalar>(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Train {
            data,
            eval_data,
            emb,
            subword_emb,
            out,
            config,
            sets,
        } => cmd_train::<T>(seed, data, eval_data, emb, subword_emb, out, config, sets),
        Command::Eval { model, data } => cmd_eval::<T>(model, data),
        Command::Predict { model, data, out } => cmd_predict::<T>(model, data, out),
        Command::Gridsearch {
            data,
            eval_data,
            emb,
            subword_emb,
            config,
            sets,
            axes,
            workers,
            out,
        } => cmd_gridsearch::<T>(
            seed, data, eval_data, emb, subword_emb, config, sets, axes, workers, out,
        ),
        Command::Gradcheck {} => cmd_gradcheck(seed),
        Command::Synth {
            sentences,
            vocab,
            max_len,
            out,
        } => cmd_synth(seed, sentences, vocab, max_len, out),
    }
}

/// Prefixes file-related errors with the offending path.
fn named(e: Error, path: &Path) -> Error {
    let p = path.display();
    match e {
        Error::Usage(m) => Error::Usage(format!("{p}: {m}")),
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{p}: {message}"),
        },
        Error::InvalidTree { sentence, report } => Error::InvalidTree {
            sentence,
            report: format!("{p}: {report}"),
        },
        Error::EmbeddingFormat { line, message } => Error::EmbeddingFormat {
            line,
            message: format!("{p}: {message}"),
        },
        Error::Data(m) => Error::Data(format!("{p}: {m}")),
        Error::Checkpoint(m) => Error::Checkpoint(format!("{p}: {m}")),
        Error::Io(io) => Error::Data(format!("{p}: {io}")),
        other => other,
    }
}

fn read_treebank(path: &Path) -> Result<Treebank> {
    let file = File::open(path).map_err(|e| named(e.into(), path))?;
    parse_treebank(BufReader::new(file)).map_err(|e| named(e, path))
}

fn layered_config(
    seed: u64,
    config_path: &Option<PathBuf>,
    sets: &[String],
) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path).map_err(|e| named(e.into(), path))?;
        apply_config_text(&mut config, &text).map_err(|e| named(e, path))?;
    }
    apply_overrides(&mut config, sets)?;
    config.seed = seed;
    Ok(config)
}

fn build_store(
    emb: &Option<PathBuf>,
    subword_emb: &Option<PathBuf>,
    config: &mut TrainConfig,
    seed: u64,
) -> Result<EmbeddingStore> {
    let mut store = match emb {
        Some(path) => {
            let file = File::open(path).map_err(|e| named(e.into(), path))?;
            let store = load_text_vectors(BufReader::new(file)).map_err(|e| named(e, path))?;
            if store.duplicate_count() > 0 {
                eprintln!(
                    "warning: {} duplicate forms in {} (last occurrence kept)",
                    store.duplicate_count(),
                    path.display()
                );
            }
            config.emb_dim = store.dim();
            store
        }
        None => EmbeddingStore::empty(config.emb_dim, OovPolicy::Random, seed),
    };
    store.set_oov_seed(seed);
    if let Some(path) = subword_emb {
        let file = File::open(path).map_err(|e| named(e.into(), path))?;
        let table = load_subword_table(BufReader::new(file)).map_err(|e| named(e, path))?;
        store.attach_subword(table).map_err(|e| named(e, path))?;
    }
    Ok(store)
}

fn union_vocab(train_tb: &Treebank, eval_tb: Option<&Treebank>) -> Vec<String> {
    let mut vocab = train_tb.embedding_keys();
    if let Some(eval_tb) = eval_tb {
        let mut seen: std::collections::HashSet<String> = vocab.iter().cloned().collect();
        for f in eval_tb.embedding_keys() {
            if seen.insert(f.clone()) {
                vocab.push(f);
            }
        }
    }
    vocab
}

fn format_mmss(d: Duration) -> String {
    let secs = d.as_secs();
    format!("{:02}:{:02}", secs / 60, secs % 60)
}

fn print_metrics(report: &MetricsReport) {
    println!("node_accuracy {}", report.node_accuracy);
    for (class, m) in report.per_class.iter().enumerate() {
        let label = Sentiment::from_class(class).expect("three classes").value();
        println!(
            "class {label} precision {:.4} recall {:.4} support {}",
            m.precision, m.recall, m.support
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train<T: Scalar>(
    seed: u64,
    data: PathBuf,
    eval_data: Option<PathBuf>,
    emb: Option<PathBuf>,
    subword_emb: Option<PathBuf>,
    out: Option<PathBuf>,
    config_path: Option<PathBuf>,
    sets: Vec<String>,
) -> Result<()> {
    let treebank = read_treebank(&data)?;
    let eval_tb = eval_data.as_deref().map(read_treebank).transpose()?;
    let mut config = layered_config(seed, &config_path, &sets)?;
    let store = build_store(&emb, &subword_emb, &mut config, seed)?;
    let vocab = union_vocab(&treebank, eval_tb.as_ref());

    let (model, report) = train_with_vocab::<T>(&config, &treebank, &store, vocab)?;
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {} loss {loss:.6}", i + 1);
    }
    let scored = match &eval_tb {
        Some(eval_tb) => evaluate_with_zoneout(&model, eval_tb, &config.zoneout)?,
        None => report.clone(),
    };
    print_metrics(&scored);
    println!("time {}", format_mmss(report.wall_clock));

    if let Some(out) = out {
        let file = File::create(&out).map_err(|e| named(e.into(), &out))?;
        save_model(&model, &config, BufWriter::new(file)).map_err(|e| named(e, &out))?;
        eprintln!("checkpoint written to {}", out.display());
    }
    Ok(())
}

fn cmd_eval<T: Scalar>(model_path: PathBuf, data: PathBuf) -> Result<()> {
    let file = File::open(&model_path).map_err(|e| named(e.into(), &model_path))?;
    let (model, manifest) =
        load_model::<T>(BufReader::new(file)).map_err(|e| named(e, &model_path))?;
    let treebank = read_treebank(&data)?;
    let report = evaluate_with_zoneout(&model, &treebank, &manifest.config.zoneout)
        .map_err(|e| named(e, &data))?;
    print_metrics(&report);
    Ok(())
}

fn cmd_predict<T: Scalar>(
    model_path: PathBuf,
    data: PathBuf,
    out: Option<PathBuf>,
) -> Result<()> {
    let file = File::open(&model_path).map_err(|e| named(e.into(), &model_path))?;
    let (model, _) = load_model::<T>(BufReader::new(file)).map_err(|e| named(e, &model_path))?;
    let treebank = read_treebank(&data)?;
    let labeled = predict_treebank(&model, &treebank).map_err(|e| named(e, &data))?;
    match out {
        Some(path) => {
            let file = File::create(&path).map_err(|e| named(e.into(), &path))?;
            serialize_treebank(&labeled, BufWriter::new(file)).map_err(|e| named(e, &path))?;
        }
        None => {
            let stdout = std::io::stdout();
            serialize_treebank(&labeled, stdout.lock())?;
        }
    }
    Ok(())
}

/// Copies the treebank with every sentiment column replaced by the
/// model's prediction.
pub fn predict_treebank<T: Scalar>(model: &Model<T>, treebank: &Treebank) -> Result<Treebank> {
    let mut sentences = Vec::with_capacity(treebank.sentences().len());
    for tree in treebank.sentences() {
        let classes = model.predict_sentence(tree)?;
        let tokens: Vec<Token> = tree
            .tokens()
            .iter()
            .zip(&classes)
            .map(|(t, &c)| Token {
                sentiment: Sentiment::from_class(c).expect("three classes"),
                ..t.clone()
            })
            .collect();
        sentences.push(SentenceTree::from_tokens(tokens));
    }
    Ok(Treebank::from_sentences(sentences))
}

fn parse_axes(flags: &[String]) -> Result<GridAxes> {
    let mut axes = GridAxes::default();
    for flag in flags {
        let (name, values) = flag.split_once('=').ok_or_else(|| {
            Error::Usage(format!("--axis {flag:?}: expected NAME=V1,V2,..."))
        })?;
        let values: Vec<&str> = values.split(',').map(str::trim).collect();
        match name.trim() {
            "mask" => {
                axes.mask_scopes = values
                    .iter()
                    .map(|v| parse_mask_scope(v))
                    .collect::<Result<_>>()?
            }
            "strategy" => {
                axes.strategies = values
                    .iter()
                    .map(|v| parse_strategy(v))
                    .collect::<Result<_>>()?
            }
            "rate_c" => axes.rates_cell = parse_rates(&values)?,
            "rate_h" => axes.rates_hidden = parse_rates(&values)?,
            other => {
                return Err(Error::Usage(format!(
                    "unknown axis {other:?}; axes: mask, strategy, rate_c, rate_h"
                )))
            }
        }
    }
    Ok(axes)
}

fn parse_rates(values: &[&str]) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|v| {
            let rate: f64 = v
                .parse()
                .map_err(|_| Error::Usage(format!("bad rate {v:?}")))?;
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Usage(format!("rate {rate} outside [0, 1]")));
            }
            Ok(rate)
        })
        .collect()
}

fn grid_table(rows: &[GridRow]) -> String {
    let mut out = String::from("mask\tstrategy\trate_c\trate_h\taccuracy\n");
    for row in rows {
        let mask = match row.cell.strategy {
            crate::zoneout::ZoneoutStrategy::None => "n/a".to_string(),
            _ => row.cell.mask_scope.label().to_string(),
        };
        let accuracy = match &row.accuracy {
            Ok(a) => format!("{a:.4}"),
            Err(e) => format!("failed: {e}"),
        };
        out.push_str(&format!(
            "{mask}\t{}\t{}\t{}\t{accuracy}\n",
            row.cell.strategy.label(),
            row.cell.rate_cell,
            row.cell.rate_hidden,
        ));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cmd_gridsearch<T: Scalar>(
    seed: u64,
    data: PathBuf,
    eval_data: Option<PathBuf>,
    emb: Option<PathBuf>,
    subword_emb: Option<PathBuf>,
    config_path: Option<PathBuf>,
    sets: Vec<String>,
    axis_flags: Vec<String>,
    workers: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let treebank = read_treebank(&data)?;
    let eval_tb = eval_data.as_deref().map(read_treebank).transpose()?;
    let mut config = layered_config(seed, &config_path, &sets)?;
    let store = build_store(&emb, &subword_emb, &mut config, seed)?;
    let axes = parse_axes(&axis_flags)?;
    if workers == 0 {
        return Err(Error::Usage("--workers must be at least 1".into()));
    }
    match &eval_tb {
        Some(_) => eprintln!(
            "note: cells are scored on the evaluation file after training; \
             this is a post-hoc protocol, not a blind one"
        ),
        None => eprintln!("note: no --eval-data given; cells are scored on the training data"),
    }
    let eval_ref = eval_tb.as_ref().unwrap_or(&treebank);
    let rows = grid_search::<T>(&config, &axes, &treebank, eval_ref, &store, workers);
    let table = grid_table(&rows);
    print!("{table}");
    if let Some(path) = out {
        let mut file = File::create(&path).map_err(|e| named(e.into(), &path))?;
        file.write_all(table.as_bytes())
            .map_err(|e| named(Error::Io(e), &path))?;
    }
    if rows.iter().any(|r| r.accuracy.is_err()) {
        eprintln!("warning: some cells failed; see the accuracy column");
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let report = gradient_check(seed)?;
    for (name, rel) in &report.per_param {
        println!("param {name} rel_error {rel:.3e}");
    }
    println!("max_rel_error {:.3e}", report.max_rel_error);
    if report.max_rel_error < 1e-4 {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed: max relative error {:.3e} >= 1e-4",
            report.max_rel_error
        )))
    }
}

fn cmd_synth(
    seed: u64,
    sentences: usize,
    vocab: usize,
    max_len: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    if sentences == 0 || vocab == 0 || max_len == 0 {
        return Err(Error::Usage(
            "--sentences, --vocab, and --max-len must be positive".into(),
        ));
    }
    let treebank = make_synthetic_treebank(seed, sentences, vocab, max_len);
    match out {
        Some(path) => {
            let file = File::create(&path).map_err(|e| named(e.into(), &path))?;
            serialize_treebank(&treebank, BufWriter::new(file)).map_err(|e| named(e, &path))?;
        }
        None => {
            let stdout = std::io::stdout();
            serialize_treebank(&treebank, stdout.lock())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        let axes = parse_axes(&[
            "mask=common,distinct".to_string(),
            "strategy=sum_child".to_string(),
            "rate_c=0,0.01".to_string(),
        ])
        .unwrap();
        assert_eq!(axes.mask_scopes.len(), 2);
        assert_eq!(axes.strategies.len(), 1);
        assert_eq!(axes.rates_cell, vec![0.0, 0.01]);
        assert_eq!(axes.cell_count(), 4);
    }

    #[test]
    fn unknown_axis_rejected() {
        let err = parse_axes(&["lr=0.1".to_string()]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn out_of_range_rate_rejected() {
        assert!(parse_axes(&["rate_c=1.5".to_string()]).is_err());
    }

    #[test]
    fn mmss_formatting() {
        assert_eq!(format_mmss(Duration::from_secs(0)), "00:00");
        assert_eq!(format_mmss(Duration::from_secs(61)), "01:01");
        assert_eq!(format_mmss(Duration::from_secs(1254)), "20:54");
    }
}
