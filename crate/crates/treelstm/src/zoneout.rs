//! Zoneout adapted to tree-structured states.
//!
//! Instead of zeroing activations, zoneout stochastically replaces
//! coordinates of a node's fresh hidden/cell state with a substitute
//! built from its children: either the sum of all child states
//! (`sum_child`) or the state of one uniformly chosen child
//! (`choose_child`). Masks are sampled per tree (`common`) or per node
//! (`distinct`); the backward pass sees the masks as constants. Leaves
//! have no substitute and pass through unchanged, as does evaluation
//! mode.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Val};
use crate::error::{Error, Result};
use crate::model::NodeVal;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneoutStrategy {
    /// No zoneout; forward is exactly the plain cell.
    None,
    SumChild,
    ChooseChild,
}

impl ZoneoutStrategy {
    /// Column value used in grid-search tables.
    pub fn label(self) -> &'static str {
        match self {
            ZoneoutStrategy::None => "n/a",
            ZoneoutStrategy::SumChild => "sum-child",
            ZoneoutStrategy::ChooseChild => "choose-child",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScope {
    /// One mask sampled per tree and shared by every node.
    Common,
    /// A fresh mask sampled at every node.
    Distinct,
}

impl MaskScope {
    pub fn label(self) -> &'static str {
        match self {
            MaskScope::Common => "common",
            MaskScope::Distinct => "distinct",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Full zoneout configuration. A coordinate is *zoned out* (replaced by
/// the substitute) with probability `rate_*`, kept with probability
/// `1 - rate_*`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneoutConfig {
    pub strategy: ZoneoutStrategy,
    pub mask_scope: MaskScope,
    pub rate_cell: f64,
    pub rate_hidden: f64,
    pub mode: Mode,
    /// At evaluation replace the identity rule with the expectation of the
    /// training mix: `(1 - rate) * fresh + rate * substitute`.
    pub eval_expectation: bool,
}

impl ZoneoutConfig {
    pub fn off() -> Self {
        ZoneoutConfig {
            strategy: ZoneoutStrategy::None,
            mask_scope: MaskScope::Common,
            rate_cell: 0.0,
            rate_hidden: 0.0,
            mode: Mode::Train,
            eval_expectation: false,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [("rate_c", self.rate_cell), ("rate_h", self.rate_hidden)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Usage(format!(
                    "zoneout {name} must lie in [0, 1], got {rate}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for ZoneoutConfig {
    fn default() -> Self {
        Self::off()
    }
}

/// Samples zone flags: `true` marks a coordinate to be replaced.
pub fn sample_zone_flags(rate: f64, len: usize, rng: &mut impl Rng) -> Vec<bool> {
    (0..len).map(|_| rng.gen_bool(rate)).collect()
}

/// Per-tree zoneout context. Holds the tree-shared masks when the scope
/// is `common`; `apply` consumes no randomness at all when the strategy
/// is off, the rates are zero, or the mode is eval.
pub struct TreeZoneout {
    config: ZoneoutConfig,
    common_cell: Option<Vec<bool>>,
    common_hidden: Option<Vec<bool>>,
}

impl TreeZoneout {
    pub fn new(config: &ZoneoutConfig, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let sample_common = config.mode == Mode::Train
            && config.strategy != ZoneoutStrategy::None
            && config.mask_scope == MaskScope::Common;
        let common_cell = (sample_common && config.rate_cell > 0.0)
            .then(|| sample_zone_flags(config.rate_cell, hidden_size, rng));
        let common_hidden = (sample_common && config.rate_hidden > 0.0)
            .then(|| sample_zone_flags(config.rate_hidden, hidden_size, rng));
        TreeZoneout {
            config: *config,
            common_cell,
            common_hidden,
        }
    }

    /// Applies zoneout to a freshly computed node state.
    pub fn apply<T: Scalar>(
        &self,
        tape: &Tape<T>,
        fresh: NodeVal<T>,
        children: &[NodeVal<T>],
        rng: &mut impl Rng,
    ) -> Result<NodeVal<T>> {
        let cfg = &self.config;
        if cfg.strategy == ZoneoutStrategy::None || children.is_empty() {
            return Ok(fresh);
        }
        if cfg.mode == Mode::Eval {
            if !cfg.eval_expectation {
                return Ok(fresh);
            }
            return self.apply_expectation(tape, fresh, children);
        }
        if cfg.rate_cell == 0.0 && cfg.rate_hidden == 0.0 {
            return Ok(fresh);
        }

        let (sub_hidden, sub_cell) = match cfg.strategy {
            ZoneoutStrategy::SumChild => (
                sum_vals(tape, children.iter().map(|c| &c.hidden))?,
                sum_vals(tape, children.iter().map(|c| &c.cell))?,
            ),
            ZoneoutStrategy::ChooseChild => {
                let pick = rng.gen_range(0..children.len());
                (children[pick].hidden.clone(), children[pick].cell.clone())
            }
            ZoneoutStrategy::None => unreachable!(),
        };

        let cell = if cfg.rate_cell > 0.0 {
            let flags = match (&self.common_cell, cfg.mask_scope) {
                (Some(f), MaskScope::Common) => f.clone(),
                _ => sample_zone_flags(cfg.rate_cell, fresh.cell.shape()[0], rng),
            };
            mix(tape, &fresh.cell, &sub_cell, &flags)?
        } else {
            fresh.cell
        };
        let hidden = if cfg.rate_hidden > 0.0 {
            let flags = match (&self.common_hidden, cfg.mask_scope) {
                (Some(f), MaskScope::Common) => f.clone(),
                _ => sample_zone_flags(cfg.rate_hidden, fresh.hidden.shape()[0], rng),
            };
            mix(tape, &fresh.hidden, &sub_hidden, &flags)?
        } else {
            fresh.hidden
        };
        Ok(NodeVal { hidden, cell })
    }

    /// Deterministic eval-time mixing with the expected mask. The
    /// choose-child substitute becomes the average child state.
    fn apply_expectation<T: Scalar>(
        &self,
        tape: &Tape<T>,
        fresh: NodeVal<T>,
        children: &[NodeVal<T>],
    ) -> Result<NodeVal<T>> {
        let cfg = &self.config;
        if cfg.rate_cell == 0.0 && cfg.rate_hidden == 0.0 {
            return Ok(fresh);
        }
        let inv = T::from_f64(1.0 / children.len() as f64);
        let (sub_hidden, sub_cell) = {
            let h = sum_vals(tape, children.iter().map(|c| &c.hidden))?;
            let c = sum_vals(tape, children.iter().map(|c| &c.cell))?;
            match cfg.strategy {
                ZoneoutStrategy::SumChild => (h, c),
                ZoneoutStrategy::ChooseChild => (tape.scale(&h, inv), tape.scale(&c, inv)),
                ZoneoutStrategy::None => unreachable!(),
            }
        };
        let blend = |fresh: &Val<T>, sub: &Val<T>, rate: f64| -> Result<Val<T>> {
            if rate == 0.0 {
                return Ok(fresh.clone());
            }
            tape.add(
                &tape.scale(fresh, T::from_f64(1.0 - rate)),
                &tape.scale(sub, T::from_f64(rate)),
            )
        };
        Ok(NodeVal {
            hidden: blend(&fresh.hidden, &sub_hidden, cfg.rate_hidden)?,
            cell: blend(&fresh.cell, &sub_cell, cfg.rate_cell)?,
        })
    }
}

fn sum_vals<'a, T: Scalar>(
    tape: &Tape<T>,
    mut vals: impl Iterator<Item = &'a Val<T>>,
) -> Result<Val<T>> {
    let first = vals.next().expect("sum over at least one value").clone();
    vals.try_fold(first, |acc, v| tape.add(&acc, v))
}

/// Keeps coordinates where `zoned` is false, substitutes where true. The
/// masks are constants for the backward pass.
fn mix<T: Scalar>(
    tape: &Tape<T>,
    fresh: &Val<T>,
    substitute: &Val<T>,
    zoned: &[bool],
) -> Result<Val<T>> {
    let keep: Vec<T> = zoned
        .iter()
        .map(|&z| if z { T::zero() } else { T::one() })
        .collect();
    let zone: Vec<T> = zoned
        .iter()
        .map(|&z| if z { T::one() } else { T::zero() })
        .collect();
    tape.add(
        &tape.mul_const(fresh, Tensor::vector(keep))?,
        &tape.mul_const(substitute, Tensor::vector(zone))?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node<T: Scalar>(tape: &Tape<T>, h: Vec<T>, c: Vec<T>) -> NodeVal<T> {
        NodeVal {
            hidden: tape.constant(Tensor::vector(h)),
            cell: tape.constant(Tensor::vector(c)),
        }
    }

    fn cfg(strategy: ZoneoutStrategy, scope: MaskScope, rc: f64, rh: f64) -> ZoneoutConfig {
        ZoneoutConfig {
            strategy,
            mask_scope: scope,
            rate_cell: rc,
            rate_hidden: rh,
            mode: Mode::Train,
            eval_expectation: false,
        }
    }

    #[test]
    fn zero_rates_pass_state_through_bit_exactly() {
        let tape = Tape::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let config = cfg(ZoneoutStrategy::SumChild, MaskScope::Distinct, 0.0, 0.0);
        let zo = TreeZoneout::new(&config, 2, &mut rng);
        let fresh = node(&tape, vec![0.25, -0.5], vec![1.0, 2.0]);
        let child = node(&tape, vec![9.0, 9.0], vec![9.0, 9.0]);
        let out = zo
            .apply(&tape, fresh.clone(), &[child], &mut rng)
            .unwrap();
        assert!(out.hidden.value().bits_eq(&fresh.hidden.value()));
        assert!(out.cell.value().bits_eq(&fresh.cell.value()));
    }

    #[test]
    fn rate_one_sum_child_takes_exact_child_sum() {
        let tape = Tape::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let config = cfg(ZoneoutStrategy::SumChild, MaskScope::Distinct, 0.0, 1.0);
        let zo = TreeZoneout::new(&config, 2, &mut rng);
        let fresh = node(&tape, vec![0.3, 0.7], vec![0.0, 0.0]);
        let children = [
            node(&tape, vec![1.0, 0.0], vec![0.0, 0.0]),
            node(&tape, vec![0.0, 1.0], vec![0.0, 0.0]),
        ];
        let out = zo.apply(&tape, fresh, &children, &mut rng).unwrap();
        assert_eq!(out.hidden.value().data(), &[1.0, 1.0]);
    }

    #[test]
    fn rate_one_choose_child_with_single_child_takes_that_child() {
        let tape = Tape::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = cfg(ZoneoutStrategy::ChooseChild, MaskScope::Common, 1.0, 1.0);
        let zo = TreeZoneout::new(&config, 2, &mut rng);
        let fresh = node(&tape, vec![0.3, 0.7], vec![0.1, 0.2]);
        let child = node(&tape, vec![-4.0, 5.0], vec![6.0, -7.0]);
        let out = zo.apply(&tape, fresh, &[child], &mut rng).unwrap();
        assert_eq!(out.hidden.value().data(), &[-4.0, 5.0]);
        assert_eq!(out.cell.value().data(), &[6.0, -7.0]);
    }

    #[test]
    fn leaves_are_unchanged_and_consume_no_randomness() {
        let tape = Tape::<f64>::new();
        let config = cfg(ZoneoutStrategy::SumChild, MaskScope::Distinct, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zo = TreeZoneout::new(&config, 2, &mut rng);
        let before = rng.clone().gen_range(0..u64::MAX);
        let fresh = node(&tape, vec![0.5, 0.5], vec![0.5, 0.5]);
        let out = zo.apply(&tape, fresh.clone(), &[], &mut rng).unwrap();
        assert!(out.hidden.value().bits_eq(&fresh.hidden.value()));
        assert_eq!(rng.gen_range(0..u64::MAX), before);
    }

    #[test]
    fn eval_mode_is_identity_and_rng_independent() {
        let tape = Tape::<f64>::new();
        let config = cfg(ZoneoutStrategy::ChooseChild, MaskScope::Distinct, 0.9, 0.9)
            .with_mode(Mode::Eval);
        let mut rng_a = ChaCha8Rng::seed_from_u64(5);
        let mut rng_b = ChaCha8Rng::seed_from_u64(999);
        let fresh = node(&tape, vec![0.1, 0.2], vec![0.3, 0.4]);
        let child = node(&tape, vec![1.0, 1.0], vec![1.0, 1.0]);
        let zo_a = TreeZoneout::new(&config, 2, &mut rng_a);
        let zo_b = TreeZoneout::new(&config, 2, &mut rng_b);
        let out_a = zo_a
            .apply(&tape, fresh.clone(), &[child.clone()], &mut rng_a)
            .unwrap();
        let out_b = zo_b.apply(&tape, fresh, &[child], &mut rng_b).unwrap();
        assert!(out_a.hidden.value().bits_eq(&out_b.hidden.value()));
    }

    #[test]
    fn eval_expectation_blends_with_rates() {
        let tape = Tape::<f64>::new();
        let mut config = cfg(ZoneoutStrategy::SumChild, MaskScope::Common, 0.0, 0.25)
            .with_mode(Mode::Eval);
        config.eval_expectation = true;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let zo = TreeZoneout::new(&config, 1, &mut rng);
        let fresh = node(&tape, vec![1.0], vec![0.0]);
        let child = node(&tape, vec![3.0], vec![0.0]);
        let out = zo.apply(&tape, fresh, &[child], &mut rng).unwrap();
        // 0.75 * 1.0 + 0.25 * 3.0
        assert!((out.hidden.value().data()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn common_scope_reuses_one_mask_across_nodes() {
        let config = cfg(ZoneoutStrategy::SumChild, MaskScope::Common, 0.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let zo = TreeZoneout::new(&config, 64, &mut rng);
        let tape = Tape::<f64>::new();
        let child = node(&tape, vec![1.0; 64], vec![1.0; 64]);
        let fresh = node(&tape, vec![0.0; 64], vec![0.0; 64]);
        let a = zo
            .apply(&tape, fresh.clone(), &[child.clone()], &mut rng)
            .unwrap();
        let b = zo.apply(&tape, fresh, &[child], &mut rng).unwrap();
        // Zoned coordinates read 1.0 (the child), kept read 0.0; the same
        // pattern must appear at both nodes.
        assert_eq!(a.hidden.value().data(), b.hidden.value().data());
    }

    #[test]
    fn distinct_scope_resamples_per_node() {
        let config = cfg(ZoneoutStrategy::SumChild, MaskScope::Distinct, 0.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let zo = TreeZoneout::new(&config, 256, &mut rng);
        let tape = Tape::<f64>::new();
        let child = node(&tape, vec![1.0; 256], vec![1.0; 256]);
        let fresh = node(&tape, vec![0.0; 256], vec![0.0; 256]);
        let a = zo
            .apply(&tape, fresh.clone(), &[child.clone()], &mut rng)
            .unwrap();
        let b = zo.apply(&tape, fresh, &[child], &mut rng).unwrap();
        assert_ne!(a.hidden.value().data(), b.hidden.value().data());
    }

    #[test]
    fn empirical_zone_frequency_within_three_sigma() {
        let n = 10_000usize;
        for rate in [0.1, 0.3, 0.5] {
            let sigma = (rate * (1.0 - rate) / n as f64).sqrt();
            // Distinct scope: one large per-node mask.
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let flags = sample_zone_flags(rate, n, &mut rng);
            let freq = flags.iter().filter(|&&z| z).count() as f64 / n as f64;
            assert!(
                (freq - rate).abs() < 3.0 * sigma,
                "distinct: rate {rate}, freq {freq}"
            );

            // Common scope: the per-tree mask, one draw per tree.
            let mut rng = ChaCha8Rng::seed_from_u64(43);
            let config = cfg(ZoneoutStrategy::SumChild, MaskScope::Common, 0.0, rate);
            let mut zoned = 0usize;
            for _ in 0..n {
                let zo = TreeZoneout::new(&config, 1, &mut rng);
                if zo.common_hidden.as_ref().map_or(false, |f| f[0]) {
                    zoned += 1;
                }
            }
            let freq = zoned as f64 / n as f64;
            assert!(
                (freq - rate).abs() < 3.0 * sigma,
                "common: rate {rate}, freq {freq}"
            );
        }
    }

    #[test]
    fn rate_validation() {
        let mut config = ZoneoutConfig::off();
        config.rate_cell = 1.5;
        assert!(config.validate().is_err());
        config.rate_cell = 0.5;
        assert!(config.validate().is_ok());
    }
}
