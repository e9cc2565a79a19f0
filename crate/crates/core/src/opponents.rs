//! Reality's side of the protocol: data generators (Reality I) and outcome
//! strategies (Reality II).
//!
//! The interesting opponent is [`reality2_adversary_move`], the worst-case
//! outcome strategy: it picks whichever outcome grows the forecaster's
//! drift norm more, which forces a per-round growth of at least
//! `p(1-p) K(z,z)` against any forecaster.
//!
//! Stochastic opponents run on a counter-based generator seeded from the
//! run configuration, so every run is reproducible from its log header.

use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::{ForecasterState, Round};
use crate::kernel::KernelSpec;

/// Data generator choices for Reality I.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reality1Spec {
    /// `k` coordinates drawn uniformly from `[0,1)` each round.
    IidUniform {
        k: usize,
        #[serde(default)]
        seed: u64,
    },
    /// The one-dimensional datum `[n mod 2]`.
    ParityFeature {
        #[serde(default)]
        seed: u64,
    },
    /// Data columns replayed from a CSV file.
    Replay {
        path: String,
        #[serde(default)]
        header: bool,
    },
}

/// Outcome strategy choices for Reality II.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reality2Spec {
    /// Outcome 1 with fixed probability `theta`.
    Bernoulli {
        theta: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Outcome 1 with probability `sigmoid(w_0 + w_1 x_1 + ... + w_k x_k)`.
    Logistic {
        weights: Vec<f64>,
        #[serde(default)]
        seed: u64,
    },
    /// Outcome column replayed from a CSV file.
    Replay {
        path: String,
        #[serde(default)]
        header: bool,
    },
    /// Worst-case drift-maximizing strategy; shares the forecaster's kernel.
    Adversary,
}

/// Full opponent description, serialized inside the run-log header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpponentSpec {
    pub reality1: Reality1Spec,
    pub reality2: Reality2Spec,
}

impl OpponentSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.reality2 {
            Reality2Spec::Bernoulli { theta, .. } => {
                if !(0.0..=1.0).contains(theta) {
                    return Err(Error::Config(format!("bernoulli theta = {theta} outside [0,1]")));
                }
            }
            Reality2Spec::Logistic { weights, .. } if weights.is_empty() => {
                return Err(Error::Config("logistic needs at least a bias weight".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Builds runnable sources for both halves of Reality.
    pub fn instantiate(&self) -> Result<(Box<dyn DatumSource>, Box<dyn OutcomeSource>)> {
        self.validate()?;
        let r1: Box<dyn DatumSource> = match &self.reality1 {
            Reality1Spec::IidUniform { k, seed } => Box::new(IidUniformSource {
                k: *k,
                rng: ChaCha8Rng::seed_from_u64(*seed),
            }),
            Reality1Spec::ParityFeature { .. } => Box::new(ParitySource),
            Reality1Spec::Replay { path, header } => {
                let rows = replay_source(path, *header)?;
                Box::new(ReplayDatumSource { rows })
            }
        };
        let r2: Box<dyn OutcomeSource> = match &self.reality2 {
            Reality2Spec::Bernoulli { theta, seed } => Box::new(BernoulliSource {
                theta: *theta,
                rng: ChaCha8Rng::seed_from_u64(*seed),
            }),
            Reality2Spec::Logistic { weights, seed } => Box::new(LogisticSource {
                weights: weights.clone(),
                rng: ChaCha8Rng::seed_from_u64(*seed),
            }),
            Reality2Spec::Replay { path, header } => {
                let rows = replay_source(path, *header)?;
                Box::new(ReplayOutcomeSource { rows })
            }
            Reality2Spec::Adversary => Box::new(AdversarySource),
        };
        Ok((r1, r2))
    }
}

/// Reality I: produces the datum for round `n` (1-based).
pub trait DatumSource {
    fn datum(&mut self, n: usize) -> Result<Vec<f64>>;
}

/// Reality II: produces the outcome after seeing the forecast.
pub trait OutcomeSource {
    fn outcome(&mut self, state: &ForecasterState, p: f64, x: &[f64]) -> Result<u8>;
}

struct IidUniformSource {
    k: usize,
    rng: ChaCha8Rng,
}

impl DatumSource for IidUniformSource {
    fn datum(&mut self, _n: usize) -> Result<Vec<f64>> {
        Ok((0..self.k).map(|_| self.rng.random::<f64>()).collect())
    }
}

struct ParitySource;

impl DatumSource for ParitySource {
    fn datum(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(parity_feature_move(n))
    }
}

struct ReplayDatumSource {
    rows: Vec<(Vec<f64>, u8)>,
}

impl DatumSource for ReplayDatumSource {
    fn datum(&mut self, n: usize) -> Result<Vec<f64>> {
        self.rows
            .get(n - 1)
            .map(|(x, _)| x.clone())
            .ok_or_else(|| Error::Input {
                location: format!("round {n}"),
                message: format!("replay file exhausted after {} rows", self.rows.len()),
            })
    }
}

struct BernoulliSource {
    theta: f64,
    rng: ChaCha8Rng,
}

impl OutcomeSource for BernoulliSource {
    fn outcome(&mut self, _state: &ForecasterState, _p: f64, _x: &[f64]) -> Result<u8> {
        Ok(bernoulli_move(self.theta, &mut self.rng))
    }
}

struct LogisticSource {
    weights: Vec<f64>,
    rng: ChaCha8Rng,
}

impl OutcomeSource for LogisticSource {
    fn outcome(&mut self, _state: &ForecasterState, _p: f64, x: &[f64]) -> Result<u8> {
        if self.weights.len() != x.len() + 1 {
            return Err(Error::Config(format!(
                "logistic weights ({} incl. bias) do not match datum dimension {}",
                self.weights.len(),
                x.len()
            )));
        }
        let z: f64 = self.weights[0]
            + self.weights[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        let theta = 1.0 / (1.0 + (-z).exp());
        Ok(bernoulli_move(theta, &mut self.rng))
    }
}

struct ReplayOutcomeSource {
    rows: Vec<(Vec<f64>, u8)>,
}

impl OutcomeSource for ReplayOutcomeSource {
    fn outcome(&mut self, state: &ForecasterState, _p: f64, _x: &[f64]) -> Result<u8> {
        let n = state.len() + 1;
        self.rows.get(n - 1).map(|&(_, y)| y).ok_or_else(|| Error::Input {
            location: format!("round {n}"),
            message: format!("replay file exhausted after {} rows", self.rows.len()),
        })
    }
}

struct AdversarySource;

impl OutcomeSource for AdversarySource {
    fn outcome(&mut self, state: &ForecasterState, p: f64, x: &[f64]) -> Result<u8> {
        reality2_adversary_move(state.history(), p, x, state.kernel())
    }
}

/// Drift-norm increment contributed by error `e = y - p` given the history
/// correlation `t` and diagonal `kd`.
pub(crate) fn drift_increment(t: f64, kd: f64, e: f64) -> f64 {
    2.0 * e * t + e * e * kd
}

/// Worst-case move for Reality II: picks the outcome whose drift-norm
/// increment is larger (ties go to 1).
///
/// The chosen increment is at least `p(1-p) K(z,z)`, because it dominates
/// the convex combination `p * incr(y=1) + (1-p) * incr(y=0)`, which equals
/// exactly that.
pub fn reality2_adversary_move(
    history: &[Round],
    p_new: f64,
    x_new: &[f64],
    kernel: &KernelSpec,
) -> Result<u8> {
    let mut t = 0.0;
    for r in history {
        t += kernel.eval(p_new, x_new, r.p, &r.x)? * r.err();
    }
    let kd = kernel.eval(p_new, x_new, p_new, x_new)?;
    let up = drift_increment(t, kd, 1.0 - p_new);
    let down = drift_increment(t, kd, -p_new);
    Ok(u8::from(up >= down))
}

/// Returns 1 with probability `theta`, deterministically for a given
/// generator state.
pub fn bernoulli_move(theta: f64, rng: &mut ChaCha8Rng) -> u8 {
    u8::from(rng.random::<f64>() < theta)
}

/// The parity datum `[n mod 2]`.
pub fn parity_feature_move(n: usize) -> Vec<f64> {
    vec![(n % 2) as f64]
}

/// Reads a replay CSV: `k` feature columns followed by one outcome column.
///
/// No header line by default; pass `skip_header` to drop the first line.
/// Every row must have the same number of columns and an outcome of 0 or 1;
/// violations are reported with their line number.
pub fn replay_source(path: impl AsRef<Path>, skip_header: bool) -> Result<Vec<(Vec<f64>, u8)>> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut rows = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if skip_header && i == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::Input {
                    location: format!("line {lineno}"),
                    message: format!("expected {w} columns, got {}", fields.len()),
                });
            }
            _ => {}
        }
        let (xs, y_field) = fields.split_at(fields.len() - 1);
        let mut x = Vec::with_capacity(xs.len());
        for f in xs {
            x.push(f.trim().parse::<f64>().map_err(|e| Error::Input {
                location: format!("line {lineno}"),
                message: format!("bad feature value {f:?}: {e}"),
            })?);
        }
        let y: i64 = y_field[0].trim().parse().map_err(|e| Error::Input {
            location: format!("line {lineno}"),
            message: format!("bad outcome value {:?}: {e}", y_field[0]),
        })?;
        if y != 0 && y != 1 {
            return Err(Error::Input {
                location: format!("line {lineno}"),
                message: format!("outcome must be 0 or 1, got {y}"),
            });
        }
        rows.push((x, y as u8));
    }
    Ok(rows)
}
