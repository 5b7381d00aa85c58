//! Layered run configuration: built-in defaults, then a `key = value`
//! config file, then repeatable `--set key=value` flags. Unknown keys are
//! rejected, never ignored.

use crate::error::{Error, Result};
use crate::optim::OptimizerKind;
use crate::training::TrainConfig;
use crate::zoneout::{MaskScope, ZoneoutStrategy};

/// Every key `set_key` accepts, for error messages and `--help`.
pub const CONFIG_KEYS: &[&str] = &[
    "batch_size",
    "hidden",
    "emb_dim",
    "lr",
    "emb_lr",
    "weight_decay",
    "l2",
    "optimizer",
    "epochs",
    "ensemble_epochs",
    "zoneout_strategy",
    "zoneout_mask",
    "zoneout_rate_c",
    "zoneout_rate_h",
    "eval_expectation",
    "per_child_forget_input",
];

/// Applies one `key = value` assignment.
pub fn set_key(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let bad = |what: &str| Error::Usage(format!("bad value {value:?} for {key} ({what})"));
    match key {
        "batch_size" => config.batch_size = value.parse().map_err(|_| bad("integer"))?,
        "hidden" => config.hidden = value.parse().map_err(|_| bad("integer"))?,
        "emb_dim" => config.emb_dim = value.parse().map_err(|_| bad("integer"))?,
        "lr" => config.lr = value.parse().map_err(|_| bad("number"))?,
        "emb_lr" => config.emb_lr = value.parse().map_err(|_| bad("number"))?,
        "weight_decay" => config.weight_decay = value.parse().map_err(|_| bad("number"))?,
        "l2" => config.l2 = value.parse().map_err(|_| bad("number"))?,
        "optimizer" => {
            config.optimizer = match value {
                "adagrad" => OptimizerKind::Adagrad,
                "adam" => OptimizerKind::Adam,
                _ => return Err(bad("adagrad or adam")),
            }
        }
        "epochs" => config.epochs = value.parse().map_err(|_| bad("integer"))?,
        "ensemble_epochs" => {
            config.ensemble_epochs = value.parse().map_err(|_| bad("integer"))?
        }
        "zoneout_strategy" => config.zoneout.strategy = parse_strategy(value)?,
        "zoneout_mask" => config.zoneout.mask_scope = parse_mask_scope(value)?,
        "zoneout_rate_c" => config.zoneout.rate_cell = value.parse().map_err(|_| bad("number"))?,
        "zoneout_rate_h" => {
            config.zoneout.rate_hidden = value.parse().map_err(|_| bad("number"))?
        }
        "eval_expectation" => {
            config.zoneout.eval_expectation = parse_bool(value).ok_or_else(|| bad("boolean"))?
        }
        "per_child_forget_input" => {
            config.per_child_forget_input = parse_bool(value).ok_or_else(|| bad("boolean"))?
        }
        _ => {
            return Err(Error::Usage(format!(
                "unknown config key {key:?}; known keys: {}",
                CONFIG_KEYS.join(", ")
            )))
        }
    }
    Ok(())
}

pub fn parse_strategy(value: &str) -> Result<ZoneoutStrategy> {
    match value {
        "none" => Ok(ZoneoutStrategy::None),
        "sum_child" => Ok(ZoneoutStrategy::SumChild),
        "choose_child" => Ok(ZoneoutStrategy::ChooseChild),
        _ => Err(Error::Usage(format!(
            "bad zoneout strategy {value:?} (none, sum_child, choose_child)"
        ))),
    }
}

pub fn parse_mask_scope(value: &str) -> Result<MaskScope> {
    match value {
        "common" => Ok(MaskScope::Common),
        "distinct" => Ok(MaskScope::Distinct),
        _ => Err(Error::Usage(format!(
            "bad mask scope {value:?} (common, distinct)"
        ))),
    }
}

fn parse_bool(value: &str) -> Option<bool> {
    match value {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

/// Parses a config file: one `key = value` per line, `#` comments, blank
/// lines ignored.
pub fn apply_config_text(config: &mut TrainConfig, text: &str) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Usage(format!("config line {}: expected key = value", i + 1))
        })?;
        set_key(config, key.trim(), value.trim())
            .map_err(|e| Error::Usage(format!("config line {}: {e}", i + 1)))?;
    }
    Ok(())
}

/// Applies repeatable `--set key=value` overrides, after any config file.
pub fn apply_overrides(config: &mut TrainConfig, sets: &[String]) -> Result<()> {
    for s in sets {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set {s:?}: expected key=value")))?;
        set_key(config, key.trim(), value.trim())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags_layering() {
        let mut config = TrainConfig::default();
        apply_config_text(
            &mut config,
            "# comment\nhidden = 64\nlr = 0.1\n\nzoneout_strategy = sum_child\n",
        )
        .unwrap();
        assert_eq!(config.hidden, 64);
        assert_eq!(config.lr, 0.1);
        apply_overrides(&mut config, &["hidden=32".to_string()]).unwrap();
        assert_eq!(config.hidden, 32);
        assert_eq!(config.lr, 0.1);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut config = TrainConfig::default();
        let err = set_key(&mut config, "hiden", "64").unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn bad_value_is_rejected() {
        let mut config = TrainConfig::default();
        assert!(set_key(&mut config, "epochs", "many").is_err());
        assert!(set_key(&mut config, "optimizer", "sgd").is_err());
        assert!(set_key(&mut config, "zoneout_mask", "both").is_err());
    }

    #[test]
    fn every_documented_key_is_settable() {
        let mut config = TrainConfig::default();
        let sample = |k: &str| match k {
            "optimizer" => "adam",
            "zoneout_strategy" => "choose_child",
            "zoneout_mask" => "distinct",
            "eval_expectation" | "per_child_forget_input" => "true",
            "lr" | "emb_lr" | "weight_decay" | "l2" | "zoneout_rate_c" | "zoneout_rate_h" => {
                "0.25"
            }
            _ => "7",
        };
        for key in CONFIG_KEYS {
            set_key(&mut config, key, sample(key)).unwrap();
        }
        assert_eq!(config.batch_size, 7);
        assert!(config.zoneout.eval_expectation);
    }

    #[test]
    fn malformed_config_line_reports_line_number() {
        let mut config = TrainConfig::default();
        let err = apply_config_text(&mut config, "hidden = 8\nbogus line\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
