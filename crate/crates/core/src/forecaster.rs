//! The K29* and K29 forecasters.
//!
//! Both algorithms keep the full round history and, given a fresh datum
//! `x`, look at the function
//!
//! ```text
//! S(p) = sum_i K((p, x), (p_i, x_i)) (y_i - p_i)   [ + K((p,x),(p,x)) (1 - 2p) / 2  for K29* ]
//! ```
//!
//! The forecast is an endpoint when `S` keeps one sign on `[0,1]`, and a
//! root of `S` otherwise. `S` is continuous in `p` for every
//! forecast-continuous kernel, so a root always exists in the second case.
//!
//! [`ForecasterState`] also carries two running Gram accumulators:
//! `drift_sq`, the squared norm of the kernel-weighted forecast errors, and
//! `variance_budget`, the sum of `p(1-p) K(z,z)` over rounds. The defensive
//! guarantee keeps the first below the second (plus root slack), whatever
//! the data and outcomes do.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;

/// Which root function the forecaster uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    /// Regularized variant: includes the `K(z,z)(1-2p)/2` term in `S`.
    #[serde(rename = "K29STAR")]
    K29Star,
    /// Plain variant: history sum only.
    #[serde(rename = "K29")]
    K29,
}

/// One completed protocol round.
///
/// `residual` is `|S(p)|` at the emitted forecast when a root was claimed,
/// and exactly `0` when the forecast came from the endpoint sign rule (no
/// root claim is made there).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    #[serde(rename = "n")]
    pub index: usize,
    pub x: Vec<f64>,
    pub p: f64,
    pub y: u8,
    pub residual: f64,
}

impl Round {
    /// Forecast error `y - p` as a float.
    pub fn err(&self) -> f64 {
        f64::from(self.y) - self.p
    }
}

/// Round history plus incremental Gram accumulators.
#[derive(Clone, Debug)]
pub struct ForecasterState {
    kernel: KernelSpec,
    algorithm: Algorithm,
    history: Vec<Round>,
    drift_sq: f64,
    variance_budget: f64,
}

impl ForecasterState {
    pub fn new(kernel: KernelSpec, algorithm: Algorithm) -> Result<Self> {
        kernel.validate()?;
        Ok(Self {
            kernel,
            algorithm,
            history: Vec::new(),
            drift_sq: 0.0,
            variance_budget: 0.0,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn history(&self) -> &[Round] {
        &self.history
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Squared norm of the kernel-weighted error sum, maintained incrementally.
    pub fn drift_sq(&self) -> f64 {
        self.drift_sq
    }

    /// Running sum of `p(1-p) K(z,z)`.
    pub fn variance_budget(&self) -> f64 {
        self.variance_budget
    }

    pub fn into_history(self) -> Vec<Round> {
        self.history
    }

    /// History part of `S`: `sum_i K((p, x_new), (p_i, x_i)) (y_i - p_i)`.
    fn history_sum(&self, x_new: &[f64], p: f64) -> Result<f64> {
        let mut t = 0.0;
        for r in &self.history {
            t += self.kernel.eval(p, x_new, r.p, &r.x)? * r.err();
        }
        Ok(t)
    }

    /// Evaluates `S(p)` for the configured algorithm.
    pub fn s_value(&self, x_new: &[f64], p: f64) -> Result<f64> {
        let t = self.history_sum(x_new, p)?;
        match self.algorithm {
            Algorithm::K29 => Ok(t),
            Algorithm::K29Star => {
                let diag = self.kernel.eval(p, x_new, p, x_new)?;
                Ok(t + 0.5 * diag * (1.0 - 2.0 * p))
            }
        }
    }

    /// Absolute tolerance for declaring `S(p)` zero, scaled to the worst-case
    /// magnitude of `S` on this history.
    pub fn root_tolerance(&self) -> f64 {
        let sup = self.kernel.diag_sup_sq();
        let err_mass: f64 = self.history.iter().map(|r| r.err().abs()).sum();
        1e-12 * (1.0 + err_mass * sup + sup)
    }

    /// Produces the next forecast and the root residual `|S(p)|`.
    pub fn next_forecast(&self, x_new: &[f64]) -> Result<(f64, f64)> {
        // For K29 on an empty history S is identically zero and every p is a
        // root; return the neutral value.
        if self.algorithm == Algorithm::K29 && self.history.is_empty() {
            return Ok((0.5, 0.0));
        }
        select_forecast(|p| self.s_value(x_new, p), self.root_tolerance())
    }

    /// Appends a round and updates both accumulators in O(n) kernel calls.
    pub fn update(&mut self, round: Round) -> Result<()> {
        if round.index != self.history.len() + 1 {
            return Err(Error::Contract(format!(
                "round index {} does not follow history of length {}",
                round.index,
                self.history.len()
            )));
        }
        if round.y > 1 {
            return Err(Error::Contract(format!("outcome must be 0 or 1, got {}", round.y)));
        }
        let t = self.history_sum(&round.x, round.p)?;
        let diag = self.kernel.eval(round.p, &round.x, round.p, &round.x)?;
        let e = round.err();
        self.drift_sq += 2.0 * e * t + e * e * diag;
        self.variance_budget += round.p * (1.0 - round.p) * diag;
        self.history.push(round);
        Ok(())
    }
}

/// Endpoint sign rule plus bracketed bisection on `[0,1]`.
///
/// Rules, in order:
/// 1. `S(0) = 0` or `S(1) = 0`: that endpoint is a root; residual 0.
/// 2. `S(0)` and `S(1)` strictly same sign: endpoint `(1 + sign)/2`,
///    residual 0 (no root claim).
/// 3. Otherwise bisect the sign change, at most 80 halvings, stopping early
///    once `|S(m)| <= abs_tol`; returns the achieved `|S|` as the residual.
///
/// Deterministic: plain midpoint arithmetic, no randomization.
pub(crate) fn select_forecast<F>(mut s: F, abs_tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let s0 = s(0.0)?;
    if s0 == 0.0 {
        return Ok((0.0, 0.0));
    }
    let s1 = s(1.0)?;
    if s1 == 0.0 {
        return Ok((1.0, 0.0));
    }
    if s0 > 0.0 && s1 > 0.0 {
        return Ok((1.0, 0.0));
    }
    if s0 < 0.0 && s1 < 0.0 {
        return Ok((0.0, 0.0));
    }

    let lo_positive = s0 > 0.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut mid = 0.5 * (lo + hi);
    let mut s_mid = s(mid)?;
    for _ in 0..80 {
        if s_mid == 0.0 || s_mid.abs() <= abs_tol {
            break;
        }
        if (s_mid > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        s_mid = s(mid)?;
    }
    Ok((mid, s_mid.abs()))
}

/// Runs the forecaster over a pre-committed stream of `(x, y)` pairs.
///
/// The stream fixes Reality's moves in advance, so outcomes here cannot
/// depend on the forecast; for opponents that react to `p` (the adversary),
/// use the game loop instead.
pub fn forecast_stream<I>(kernel: KernelSpec, algorithm: Algorithm, stream: I) -> Result<crate::runlog::RunLog>
where
    I: IntoIterator<Item = (Vec<f64>, u8)>,
{
    let mut state = ForecasterState::new(kernel.clone(), algorithm)?;
    for (i, (x, y)) in stream.into_iter().enumerate() {
        let n = i + 1;
        if y > 1 {
            return Err(Error::Input {
                location: format!("round {n}"),
                message: format!("outcome must be 0 or 1, got {y}"),
            });
        }
        let (p, residual) = state.next_forecast(&x).map_err(|e| Error::Input {
            location: format!("round {n}"),
            message: e.to_string(),
        })?;
        state.update(Round { index: n, x, p, y, residual })?;
    }
    Ok(crate::runlog::RunLog {
        header: crate::runlog::RunHeader {
            kernel,
            algorithm: match algorithm {
                Algorithm::K29Star => crate::game::Strategy::K29Star,
                Algorithm::K29 => crate::game::Strategy::K29,
            },
            opponent: None,
            skeptic: None,
        },
        rounds: state.into_history(),
        capital: None,
    })
}
