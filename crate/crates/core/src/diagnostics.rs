//! Verifiers for the inequalities a finished run guarantees, plus
//! calibration and resolution reports.
//!
//! Every checker recomputes its quantities from the log's rounds and never
//! trusts the forecaster's accumulators, so a log file is portable
//! evidence. The checks:
//!
//! - `t1`: squared drift norm ≤ variance budget (plus root slack); for K29
//!   logs the budget is the plain diagonal sum.
//! - `eq4`: drift norm ≤ `c_K/2 * sqrt(N)` (`c_K * sqrt(N)` for K29).
//! - `t2`: `|sum (y-p) f(p,x)| ≤ ||f|| * sqrt(variance budget)` for a test
//!   function with known norm.
//! - `t3`: against the adversary the drift norm grows by at least
//!   `p(1-p) K(z,z)` every round, so it dominates the budget.
//! - `t4`: the witness function built from the log realizes tightness of
//!   the `t2` bound.
//! - `lemma1`: the capital trace is consistent with the announced Skeptic
//!   and never rises by more than the round's root residual.
//!
//! Root slack: a claimed root `p_n` only satisfies `|S_n(p_n)| <= residual_n`,
//! which lets the capital rise by at most `residual_n` per round, so the
//! drift-vs-budget comparisons carry a budget of `2 * sum residuals`, plus
//! an `1e-9 * N` rounding allowance. Exact roots contribute nothing to the
//! residual part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::{Algorithm, ForecasterState, Round};
use crate::game::{PiecewiseLinear, SkepticSpec, Strategy};
use crate::kernel::{KernelSpec, Point};
use crate::opponents::drift_increment;
use crate::runlog::RunLog;

/// Soft indicator of a forecast interval `[p_minus, p_plus]`: 1 on the
/// plateau, 0 outside, linear ramps of half-width `eps` at both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapezoidFn {
    pub p_minus: f64,
    pub p_plus: f64,
    pub eps: f64,
}

impl TrapezoidFn {
    /// Requires `0 < p_minus - eps < p_minus + eps < p_plus - eps < p_plus + eps < 1`.
    pub fn new(p_minus: f64, p_plus: f64, eps: f64) -> Result<Self> {
        let ok = eps > 0.0
            && 0.0 < p_minus - eps
            && p_minus + eps < p_plus - eps
            && p_plus + eps < 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "trapezoid ({p_minus}, {p_plus}, {eps}) violates 0 < p- - e < p- + e < p+ - e < p+ + e < 1"
            )));
        }
        Ok(Self { p_minus, p_plus, eps })
    }

    pub fn eval(&self, p: f64) -> f64 {
        let (lo, hi, e) = (self.p_minus, self.p_plus, self.eps);
        if p >= lo + e && p <= hi - e {
            1.0
        } else if p <= lo - e || p >= hi + e {
            0.0
        } else if p < lo + e {
            0.5 + (p - lo) / (2.0 * e)
        } else {
            0.5 + (hi - p) / (2.0 * e)
        }
    }

    /// Exact squared norm in the spline space on `[0,1]`:
    /// `(integral of f)^2 + integral of f'^2 = (p_plus - p_minus)^2 + 1/eps`.
    pub fn norm_sq(&self) -> f64 {
        let width = self.p_plus - self.p_minus;
        width * width + 1.0 / self.eps
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Product neighborhood over the coordinates `(p, x_1, .., x_k)`.
///
/// `factors[0]` applies to the forecast coordinate, `factors[i]` to
/// `x_i`; a `None` factor is the constant function 1, whose norm
/// contribution is 1 (its mean is 1 and its derivative vanishes). Trailing
/// coordinates without a factor are treated the same way, so a
/// forecast-only neighborhood works on logs of any data dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub factors: Vec<Option<TrapezoidFn>>,
}

impl Neighborhood {
    pub fn forecast_only(t: TrapezoidFn) -> Self {
        Self { factors: vec![Some(t)] }
    }

    pub fn eval(&self, p: f64, x: &[f64]) -> Result<f64> {
        if self.factors.len() > 1 + x.len() {
            return Err(Error::DimensionMismatch {
                context: "neighborhood factors",
                expected: self.factors.len(),
                got: 1 + x.len(),
            });
        }
        let mut prod = 1.0;
        for (i, factor) in self.factors.iter().enumerate() {
            if let Some(t) = factor {
                let coord = if i == 0 { p } else { x[i - 1] };
                prod *= t.eval(coord);
            }
        }
        Ok(prod)
    }

    /// Product of the factors' 1-D norms.
    pub fn norm_sq(&self) -> f64 {
        self.factors
            .iter()
            .map(|f| f.as_ref().map(TrapezoidFn::norm_sq).unwrap_or(1.0))
            .product()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Kernel expansion `f = sum_n e_n K_{z_n}` with `e_n = y_n - p_n`: the
/// function that realizes tightness of the test-function bound.
#[derive(Clone, Debug)]
pub struct WitnessFn {
    pub coefficients: Vec<f64>,
    pub anchors: Vec<Point>,
    pub kernel: KernelSpec,
}

impl WitnessFn {
    pub fn from_log(log: &RunLog) -> Result<Self> {
        if log.is_empty() {
            return Err(Error::Contract("witness needs a nonempty log".into()));
        }
        let coefficients = log.rounds.iter().map(Round::err).collect();
        let anchors = log
            .rounds
            .iter()
            .map(|r| Point::new(r.p, r.x.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { coefficients, anchors, kernel: log.header.kernel.clone() })
    }

    /// Point evaluation by coefficient expansion. By the reproducing
    /// property this is also the inner product with the representer of
    /// evaluation at `(p, x)`: the same sum, term by term.
    pub fn eval(&self, p: f64, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (c, a) in self.coefficients.iter().zip(&self.anchors) {
            total += c * self.kernel.eval(p, x, a.p, &a.x)?;
        }
        Ok(total)
    }

    /// Squared norm via the Gram quadratic form.
    pub fn norm_sq(&self) -> Result<f64> {
        let mut total = 0.0;
        for (ci, ai) in self.coefficients.iter().zip(&self.anchors) {
            for (cj, aj) in self.coefficients.iter().zip(&self.anchors) {
                total += ci * cj * self.kernel.eval(ai.p, &ai.x, aj.p, &aj.x)?;
            }
        }
        Ok(total)
    }
}

/// Outcome of one inequality check.
///
/// `satisfied` means `lhs <= rhs + slack_budget` for the upper-bound
/// theorems (`t1`, `eq4`, `t2`, `lemma1`) and `lhs >= rhs - slack_budget`
/// for the lower-bound ones (`t3`, `t4`); the `t4` fallback on a
/// zero-drift log is vacuously satisfied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub theorem_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack_budget: f64,
    pub satisfied: bool,
    pub per_round_margins: Vec<f64>,
}

/// Squared drift norm recomputed from the log by the symmetric Gram sum.
pub fn gram_drift_sq(log: &RunLog) -> Result<f64> {
    let k = &log.header.kernel;
    let mut diag = 0.0;
    let mut off = 0.0;
    for (i, a) in log.rounds.iter().enumerate() {
        for b in &log.rounds[..i] {
            off += k.eval(a.p, &a.x, b.p, &b.x)? * a.err() * b.err();
        }
        diag += k.eval(a.p, &a.x, a.p, &a.x)? * a.err() * a.err();
    }
    Ok(2.0 * off + diag)
}

/// Variance budget `sum p(1-p) K(z,z)` recomputed from the log.
pub fn gram_variance_budget(log: &RunLog) -> Result<f64> {
    let k = &log.header.kernel;
    let mut total = 0.0;
    for r in &log.rounds {
        total += r.p * (1.0 - r.p) * k.eval(r.p, &r.x, r.p, &r.x)?;
    }
    Ok(total)
}

fn rounding_allowance(log: &RunLog) -> f64 {
    1e-9 * log.len() as f64
}

/// Drift norm vs variance budget, with root slack.
///
/// For K29 logs the right side is the plain diagonal sum (the `p(1-p)`
/// factor is dropped).
pub fn check_theorem1(log: &RunLog) -> Result<TheoremReport> {
    let k = &log.header.kernel;
    let k29 = log.header.algorithm == Strategy::K29;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut res_slack = 0.0;
    let mut margins = Vec::with_capacity(log.len());
    for (n, r) in log.rounds.iter().enumerate() {
        let mut t = 0.0;
        for prev in &log.rounds[..n] {
            t += k.eval(r.p, &r.x, prev.p, &prev.x)? * prev.err();
        }
        let kd = k.eval(r.p, &r.x, r.p, &r.x)?;
        lhs += drift_increment(t, kd, r.err());
        rhs += if k29 { kd } else { r.p * (1.0 - r.p) * kd };
        res_slack += 2.0 * r.residual;
        margins.push(rhs + res_slack + 1e-9 * (n + 1) as f64 - lhs);
    }
    let slack_budget = res_slack + rounding_allowance(log);
    Ok(TheoremReport {
        theorem_id: "t1".into(),
        lhs,
        rhs,
        slack_budget,
        satisfied: lhs <= rhs + slack_budget,
        per_round_margins: margins,
    })
}

/// Drift norm vs the `sqrt(N)` envelope from the kernel's diagonal bound.
pub fn check_eq4(log: &RunLog) -> Result<TheoremReport> {
    let n = log.len() as f64;
    let ck = log.header.kernel.diag_sup();
    let factor = if log.header.algorithm == Strategy::K29 { 1.0 } else { 0.5 };
    let lhs = gram_drift_sq(log)?.max(0.0).sqrt();
    let rhs = factor * ck * n.sqrt();
    let slack_budget = (2.0 * log.residual_sum() + rounding_allowance(log)).sqrt();
    Ok(TheoremReport {
        theorem_id: "eq4".into(),
        lhs,
        rhs,
        slack_budget,
        satisfied: lhs <= rhs + slack_budget,
        per_round_margins: Vec::new(),
    })
}

/// Signed sum `sum_n (y_n - p_n) f(p_n, x_n)`.
pub fn test_function_sum<F>(log: &RunLog, mut f: F) -> Result<f64>
where
    F: FnMut(f64, &[f64]) -> Result<f64>,
{
    let mut total = 0.0;
    for r in &log.rounds {
        total += r.err() * f(r.p, &r.x)?;
    }
    Ok(total)
}

/// Test-function inequality: `|sum (y-p) f| <= f_norm * sqrt(budget)`, with
/// slack `f_norm * sqrt(2 * sum residuals)` inherited from the root slack
/// through the Cauchy-Schwarz step.
pub fn check_theorem2<F>(log: &RunLog, f: F, f_norm: f64) -> Result<TheoremReport>
where
    F: FnMut(f64, &[f64]) -> Result<f64>,
{
    let lhs = test_function_sum(log, f)?.abs();
    let rhs = f_norm * gram_variance_budget(log)?.max(0.0).sqrt();
    let slack_budget = f_norm * (2.0 * log.residual_sum()).max(0.0).sqrt();
    Ok(TheoremReport {
        theorem_id: "t2".into(),
        lhs,
        rhs,
        slack_budget,
        satisfied: lhs <= rhs + slack_budget,
        per_round_margins: Vec::new(),
    })
}

/// [`check_theorem2`] for a forecast-coordinate trapezoid with its exact
/// closed-form norm.
pub fn check_theorem2_trapezoid(log: &RunLog, t: &TrapezoidFn) -> Result<TheoremReport> {
    check_theorem2(log, |p, _| Ok(t.eval(p)), t.norm())
}

/// [`check_theorem2`] for a product neighborhood.
pub fn check_theorem2_neighborhood(log: &RunLog, nb: &Neighborhood) -> Result<TheoremReport> {
    check_theorem2(log, |p, x| nb.eval(p, x), nb.norm())
}

/// [`check_theorem2`] for a witness expansion, norm from the Gram form.
pub fn check_theorem2_witness(log: &RunLog, w: &WitnessFn) -> Result<TheoremReport> {
    let norm = w.norm_sq()?.max(0.0).sqrt();
    check_theorem2(log, |p, x| w.eval(p, x), norm)
}

/// The looser closed-form ceiling `(c_K/2) * f_norm * sqrt(N)` (plus root
/// slack) that the test-function bound implies; reported alongside `t2`.
pub fn test_function_envelope(log: &RunLog, f_norm: f64) -> f64 {
    let ck = log.header.kernel.diag_sup();
    0.5 * ck * f_norm * (log.len() as f64).sqrt()
        + f_norm * (2.0 * log.residual_sum()).max(0.0).sqrt()
}

/// Adversary guarantee: the drift increment of every round dominates its
/// variance term, hence the drift norm dominates the budget.
///
/// `per_round_margins[n] = increment_n - p_n(1-p_n) K(z_n,z_n)`; each must
/// be at least `-1e-12`, and cumulatively `lhs >= rhs - 1e-9 N`.
pub fn check_theorem3(log: &RunLog) -> Result<TheoremReport> {
    let k = &log.header.kernel;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut margins = Vec::with_capacity(log.len());
    let mut per_round_ok = true;
    for (n, r) in log.rounds.iter().enumerate() {
        let mut t = 0.0;
        for prev in &log.rounds[..n] {
            t += k.eval(r.p, &r.x, prev.p, &prev.x)? * prev.err();
        }
        let kd = k.eval(r.p, &r.x, r.p, &r.x)?;
        let increment = drift_increment(t, kd, r.err());
        let variance_term = r.p * (1.0 - r.p) * kd;
        let margin = increment - variance_term;
        per_round_ok &= margin >= -1e-12;
        margins.push(margin);
        lhs += increment;
        rhs += variance_term;
    }
    let slack_budget = rounding_allowance(log);
    Ok(TheoremReport {
        theorem_id: "t3".into(),
        lhs,
        rhs,
        slack_budget,
        satisfied: per_round_ok && lhs >= rhs - slack_budget,
        per_round_margins: margins,
    })
}

/// Builds the witness `f = sum (y_n - p_n) K_{z_n}` and checks that it
/// realizes the lower bound `sum (y-p) f >= ||f|| sqrt(budget)`.
///
/// Both sides reduce to the Gram form: the left side is exactly the
/// squared drift norm, computed here by its own double loop (the `t2`
/// checker reaches the same numbers through pointwise evaluation instead).
/// On a zero-drift log the witness degenerates; any nonzero function
/// works, so `K_{z_1}` is returned and the report is vacuously satisfied.
pub fn theorem4_witness(log: &RunLog) -> Result<(WitnessFn, TheoremReport)> {
    if log.is_empty() {
        return Err(Error::Contract("theorem4_witness needs a nonempty log".into()));
    }
    let k = &log.header.kernel;
    let budget = gram_variance_budget(log)?;
    let slack_budget = 2.0 * log.residual_sum() + rounding_allowance(log);

    // lhs = sum_n e_n f(z_n) expanded into the double sum.
    let mut lhs = 0.0;
    for a in &log.rounds {
        for b in &log.rounds {
            lhs += a.err() * b.err() * k.eval(a.p, &a.x, b.p, &b.x)?;
        }
    }

    let zero_tol = 1e-12 * (1.0 + log.len() as f64 * k.diag_sup_sq());
    if lhs.abs() <= zero_tol {
        let first = &log.rounds[0];
        let fallback = WitnessFn {
            coefficients: vec![1.0],
            anchors: vec![Point::new(first.p, first.x.clone())?],
            kernel: k.clone(),
        };
        let lhs_fb = test_function_sum(log, |p, x| fallback.eval(p, x))?;
        let rhs_fb = fallback.norm_sq()?.max(0.0).sqrt() * budget.max(0.0).sqrt();
        let report = TheoremReport {
            theorem_id: "t4".into(),
            lhs: lhs_fb,
            rhs: rhs_fb,
            slack_budget,
            satisfied: true,
            per_round_margins: Vec::new(),
        };
        return Ok((fallback, report));
    }

    let witness = WitnessFn::from_log(log)?;
    let rhs = lhs.max(0.0).sqrt() * budget.max(0.0).sqrt();
    let report = TheoremReport {
        theorem_id: "t4".into(),
        lhs,
        rhs,
        slack_budget,
        satisfied: lhs >= rhs - slack_budget,
        per_round_margins: Vec::new(),
    };
    Ok((witness, report))
}

/// Capital-trace check: the trace must match the announced Skeptic's
/// stakes, and for the defensive forecaster it must never rise by more
/// than the round's residual.
///
/// Logs without a capital trace pass vacuously. For forecasters other than
/// the defensive one the non-increase claim does not apply; only
/// consistency is enforced.
pub fn check_lemma1(log: &RunLog) -> Result<TheoremReport> {
    let trace = match &log.capital {
        None => {
            return Ok(TheoremReport {
                theorem_id: "lemma1".into(),
                lhs: 0.0,
                rhs: 0.0,
                slack_budget: 0.0,
                satisfied: true,
                per_round_margins: Vec::new(),
            })
        }
        Some(t) => t,
    };
    if trace.values.len() != log.len() + 1 {
        return Err(Error::Config(format!(
            "capital trace has {} entries for {} rounds",
            trace.values.len(),
            log.len()
        )));
    }
    let skeptic = log.header.skeptic.as_ref().ok_or_else(|| {
        Error::Config("log has a capital trace but no skeptic in the header".into())
    })?;
    let piecewise = match skeptic {
        SkepticSpec::PiecewiseLinear { breakpoints } => Some(PiecewiseLinear::new(breakpoints.clone())?),
        SkepticSpec::K29StarEq25 => None,
    };

    // Replay the skeptic's stakes from the rounds.
    let mut state = ForecasterState::new(log.header.kernel.clone(), Algorithm::K29Star)?;
    let defensive = log.header.algorithm == Strategy::K29Star;
    let mut margins = Vec::with_capacity(log.len());
    let mut worst = 0.0f64;
    let mut consistent = true;
    for (n, r) in log.rounds.iter().enumerate() {
        let stake = match &piecewise {
            Some(pl) => pl.eval(r.p),
            None => state.s_value(&r.x, r.p)?,
        };
        let step = trace.values[n + 1] - trace.values[n];
        let expected = stake * r.err();
        consistent &= (step - expected).abs() <= 1e-9 * (1.0 + stake.abs());
        margins.push(r.residual - step);
        if defensive {
            worst = worst.max(step - r.residual);
        }
        state.update(r.clone())?;
    }
    let slack_budget = rounding_allowance(log);
    Ok(TheoremReport {
        theorem_id: "lemma1".into(),
        lhs: worst,
        rhs: 0.0,
        slack_budget,
        satisfied: consistent && worst <= slack_budget,
        per_round_margins: margins,
    })
}

/// One row of the hard-binned calibration table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin: usize,
    pub count: usize,
    pub mean_p: f64,
    pub mean_y: f64,
    pub deviation: f64,
}

/// Hard-bins `[0,1]` into `bins` equal intervals and reports the mean
/// forecast, outcome frequency, and mean error per nonempty bin.
///
/// Forecasts exactly on an interior bin edge go to the lower bin; `p = 0`
/// stays in the bottom bin and `p = 1` in the top one.
pub fn binned_calibration(log: &RunLog, bins: usize) -> Result<Vec<BinRow>> {
    if bins == 0 {
        return Err(Error::Contract("bins must be >= 1".into()));
    }
    let mut count = vec![0usize; bins];
    let mut sum_p = vec![0.0; bins];
    let mut sum_y = vec![0.0; bins];
    let mut sum_e = vec![0.0; bins];
    for r in &log.rounds {
        let scaled = (r.p * bins as f64).ceil() as isize - 1;
        let idx = scaled.clamp(0, bins as isize - 1) as usize;
        count[idx] += 1;
        sum_p[idx] += r.p;
        sum_y[idx] += f64::from(r.y);
        sum_e[idx] += r.err();
    }
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| BinRow {
            bin: b,
            count: count[b],
            mean_p: sum_p[b] / count[b] as f64,
            mean_y: sum_y[b] / count[b] as f64,
            deviation: sum_e[b] / count[b] as f64,
        })
        .collect())
}

/// One row of the soft-neighborhood calibration/resolution table.
///
/// `ratio` is `None` when no forecast mass fell in the neighborhood.
/// `bound` is the closed-form ceiling on `|numerator|`; `flagged` marks
/// neighborhoods whose denominator exceeds `sqrt(N)`, i.e. where the ratio
/// is actually constrained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftRow {
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: Option<f64>,
    pub bound: f64,
    pub flagged: bool,
}

/// Soft-neighborhood report: for each neighborhood `f`, the signed error
/// mass `sum f(p,x)(y-p)`, the occupancy `sum f(p,x)`, their ratio, and
/// the test-function bound.
pub fn soft_calibration_report(log: &RunLog, neighborhoods: &[Neighborhood]) -> Result<Vec<SoftRow>> {
    let sqrt_n = (log.len() as f64).sqrt();
    let mut rows = Vec::with_capacity(neighborhoods.len());
    for nb in neighborhoods {
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        for r in &log.rounds {
            let v = nb.eval(r.p, &r.x)?;
            numerator += v * r.err();
            denominator += v;
        }
        rows.push(SoftRow {
            numerator,
            denominator,
            ratio: (denominator != 0.0).then(|| numerator / denominator),
            bound: test_function_envelope(log, nb.norm()),
            flagged: denominator > sqrt_n,
        });
    }
    Ok(rows)
}

/// Iterated-logarithm ratio `|sum (y-p)| / sqrt(2 A ln ln A)` with
/// `A = sum p(1-p)`; `None` until `A > e`.
///
/// Descriptive only: under genuine randomness this hovers near 1, while
/// the defensive forecaster drives it far below. That gap is the point.
pub fn lil_ratio(log: &RunLog) -> Option<f64> {
    let a: f64 = log.rounds.iter().map(|r| r.p * (1.0 - r.p)).sum();
    if a <= std::f64::consts::E {
        return None;
    }
    let numerator: f64 = log.rounds.iter().map(Round::err).sum();
    Some(numerator.abs() / (2.0 * a * a.ln().ln()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{play_game, GameConfig};
    use crate::opponents::{OpponentSpec, Reality1Spec, Reality2Spec};
    use crate::runlog::RunHeader;
    use approx::assert_abs_diff_eq;

    fn empty_log(kernel: KernelSpec, algorithm: Strategy) -> RunLog {
        RunLog {
            header: RunHeader { kernel, algorithm, opponent: None, skeptic: None },
            rounds: Vec::new(),
            capital: None,
        }
    }

    fn hand_log(rounds: &[(f64, u8)]) -> RunLog {
        let mut log = empty_log(KernelSpec::Constant { c: 1.0 }, Strategy::K29Star);
        log.rounds = rounds
            .iter()
            .enumerate()
            .map(|(i, &(p, y))| Round { index: i + 1, x: vec![], p, y, residual: 0.0 })
            .collect();
        log
    }

    #[test]
    fn trapezoid_shape_and_norm() {
        let t = TrapezoidFn::new(0.4, 0.6, 0.05).unwrap();
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(0.45), 1.0);
        assert_eq!(t.eval(0.3), 0.0);
        assert_eq!(t.eval(0.65), 0.0);
        assert_abs_diff_eq!(t.eval(0.4), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t.eval(0.62), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(t.norm_sq(), 20.04, epsilon = 1e-12);
    }

    #[test]
    fn trapezoid_rejects_bad_geometry() {
        assert!(TrapezoidFn::new(0.05, 0.6, 0.06).is_err()); // p- - e < 0
        assert!(TrapezoidFn::new(0.4, 0.45, 0.05).is_err()); // ramps overlap
        assert!(TrapezoidFn::new(0.4, 0.98, 0.05).is_err()); // p+ + e > 1
        assert!(TrapezoidFn::new(0.4, 0.6, 0.0).is_err());
    }

    #[test]
    fn trapezoid_norm_matches_quadrature() {
        // Numeric evaluation of (int f)^2 + int f'^2 by the midpoint rule,
        // using the analytic piecewise derivative as the oracle.
        let t = TrapezoidFn::new(0.4, 0.6, 0.05).unwrap();
        let df = |p: f64| {
            if p > t.p_minus - t.eps && p < t.p_minus + t.eps {
                1.0 / (2.0 * t.eps)
            } else if p > t.p_plus - t.eps && p < t.p_plus + t.eps {
                -1.0 / (2.0 * t.eps)
            } else {
                0.0
            }
        };
        let panels = 100_000;
        let h = 1.0 / panels as f64;
        let mut int_f = 0.0;
        let mut int_df2 = 0.0;
        for i in 0..panels {
            let m = (i as f64 + 0.5) * h;
            int_f += t.eval(m) * h;
            int_df2 += df(m) * df(m) * h;
        }
        let quadrature = int_f * int_f + int_df2;
        let rel = (quadrature - t.norm_sq()).abs() / t.norm_sq();
        assert!(rel <= 1e-6, "quadrature off by {rel}");
    }

    #[test]
    fn neighborhood_products() {
        let t = TrapezoidFn::new(0.4, 0.6, 0.05).unwrap();
        let nb = Neighborhood {
            factors: vec![Some(t.clone()), None, Some(TrapezoidFn::new(0.2, 0.8, 0.1).unwrap())],
        };
        let v = nb.eval(0.5, &[0.9, 0.5]).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            nb.norm_sq(),
            t.norm_sq() * (0.6f64 * 0.6 + 1.0 / 0.1),
            epsilon = 1e-12
        );
        // Constant-in-p neighborhood: pure resolution.
        let res = Neighborhood { factors: vec![None, Some(TrapezoidFn::new(0.3, 0.7, 0.1).unwrap())] };
        assert_abs_diff_eq!(res.eval(0.123, &[0.5]).unwrap(), 1.0, epsilon = 1e-15);
        // Too many factors for the datum dimension.
        assert!(nb.eval(0.5, &[0.9]).is_err());
    }

    #[test]
    fn theorem1_empty_log() {
        let report = check_theorem1(&empty_log(KernelSpec::Constant { c: 1.0 }, Strategy::K29Star)).unwrap();
        assert!(report.satisfied);
        assert_eq!(report.lhs, 0.0);
        assert_eq!(report.rhs, 0.0);
        assert_eq!(report.slack_budget, 0.0);
    }

    #[test]
    fn theorem1_baseline_log_is_quarter() {
        // p_1 = 1/2 then p_n = y_{n-1}: drift telescopes to y_N - 1/2.
        let ys = [1u8, 0, 0, 1, 1, 1, 0, 1];
        let mut rounds = Vec::new();
        let mut prev = 0.5;
        for &y in &ys {
            rounds.push((prev, y));
            prev = f64::from(y);
        }
        for n in 1..=ys.len() {
            let log = hand_log(&rounds[..n]);
            let report = check_theorem1(&log).unwrap();
            assert_abs_diff_eq!(report.lhs, 0.25, epsilon = 1e-12);
            assert!(report.satisfied);
        }
    }

    #[test]
    fn theorem1_k29_variant_uses_diagonal_budget() {
        let mut log = hand_log(&[(0.5, 1), (0.5, 1)]);
        log.header.algorithm = Strategy::K29;
        let report = check_theorem1(&log).unwrap();
        // lhs = (1/2 + 1/2)^2 = 1, rhs = 2 (diagonal sum), satisfied.
        assert_abs_diff_eq!(report.lhs, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.rhs, 2.0, epsilon = 1e-12);
        assert!(report.satisfied);
        // The K29* budget 2 * 1/4 = 1/2 would reject the same rounds:
        // forged-algorithm logs must not inherit the laxer budget.
        log.header.algorithm = Strategy::K29Star;
        let report = check_theorem1(&log).unwrap();
        assert!(!report.satisfied);
    }

    #[test]
    fn eq4_scales_with_ck() {
        let log = empty_log(KernelSpec::FermiSobolev { dims: 1 }, Strategy::K29Star);
        let report = check_eq4(&log).unwrap();
        assert_eq!(report.lhs, 0.0);
        assert_eq!(report.rhs, 0.0);
        assert!(report.satisfied);

        let mut log300 = empty_log(KernelSpec::FermiSobolev { dims: 1 }, Strategy::K29Star);
        log300.rounds = (0..300)
            .map(|i| Round { index: i + 1, x: vec![], p: 0.5, y: (i % 2) as u8, residual: 0.0 })
            .collect();
        let report = check_eq4(&log300).unwrap();
        assert_abs_diff_eq!(
            report.rhs,
            0.5 * (4.0f64 / 3.0).sqrt() * 300.0f64.sqrt(),
            epsilon = 1e-12
        );
        let mut k29 = log300.clone();
        k29.header.algorithm = Strategy::K29;
        let r29 = check_eq4(&k29).unwrap();
        assert_abs_diff_eq!(r29.rhs, 2.0 * report.rhs, epsilon = 1e-12);
    }

    #[test]
    fn test_function_sums() {
        let log = hand_log(&[(0.3, 1), (0.8, 0), (0.5, 1)]);
        let drift: f64 = log.rounds.iter().map(Round::err).sum();
        assert_abs_diff_eq!(
            test_function_sum(&log, |_, _| Ok(1.0)).unwrap(),
            drift,
            epsilon = 1e-15
        );
        assert_eq!(test_function_sum(&log, |_, _| Ok(0.0)).unwrap(), 0.0);
        // Perfect hindsight: every term vanishes.
        let hind = hand_log(&[(1.0, 1), (0.0, 0), (1.0, 1)]);
        assert_eq!(test_function_sum(&hind, |p, _| Ok(p * 3.0 - 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn theorem4_single_round_equality() {
        let log = hand_log(&[(0.5, 1)]);
        let (witness, report) = theorem4_witness(&log).unwrap();
        assert_abs_diff_eq!(report.lhs, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(report.rhs, 0.25, epsilon = 1e-12);
        assert!(report.satisfied);
        assert_eq!(witness.coefficients, vec![0.5]);
    }

    #[test]
    fn theorem4_perfect_hindsight_falls_back() {
        let log = hand_log(&[(1.0, 1), (0.0, 0)]);
        let (witness, report) = theorem4_witness(&log).unwrap();
        assert_eq!(witness.coefficients, vec![1.0]);
        assert!(report.satisfied);
        assert_eq!(report.lhs, 0.0);
        assert_eq!(report.rhs, 0.0);
    }

    #[test]
    fn theorem2_and_theorem4_agree_on_witness() {
        // Two derivations of the same numbers through different code paths.
        let config = GameConfig {
            kernel: KernelSpec::FermiSobolev { dims: 2 },
            algorithm: Strategy::ConstantHalf,
            skeptic: SkepticSpec::K29StarEq25,
            opponent: OpponentSpec {
                reality1: Reality1Spec::IidUniform { k: 1, seed: 31 },
                reality2: Reality2Spec::Adversary,
            },
            rounds: 80,
            initial_capital: 0.0,
        };
        let (log, _) = play_game(&config).unwrap();
        let (witness, t4) = theorem4_witness(&log).unwrap();
        let t2 = check_theorem2_witness(&log, &witness).unwrap();
        let rel_lhs = (t2.lhs - t4.lhs.abs()).abs() / t4.lhs.abs().max(1e-30);
        let rel_rhs = (t2.rhs - t4.rhs).abs() / t4.rhs.abs().max(1e-30);
        assert!(rel_lhs <= 1e-9, "lhs disagree: {rel_lhs}");
        assert!(rel_rhs <= 1e-9, "rhs disagree: {rel_rhs}");
        // Eq. 22 direction on an adversary log.
        assert!(t2.lhs >= t2.rhs - t4.slack_budget);
    }

    #[test]
    fn witness_reproducing_property_is_bit_exact() {
        let config = GameConfig {
            kernel: KernelSpec::Gaussian { sigma: 0.3 },
            algorithm: Strategy::K29Star,
            skeptic: SkepticSpec::K29StarEq25,
            opponent: OpponentSpec {
                reality1: Reality1Spec::IidUniform { k: 2, seed: 8 },
                reality2: Reality2Spec::Bernoulli { theta: 0.5, seed: 9 },
            },
            rounds: 40,
            initial_capital: 0.0,
        };
        let (log, _) = play_game(&config).unwrap();
        let witness = WitnessFn::from_log(&log).unwrap();
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let p: f64 = rng.random();
            let x = vec![rng.random::<f64>(), rng.random::<f64>()];
            // Coefficient expansion and the inner product with the
            // representer of evaluation are the same sum, term by term.
            let by_eval = witness.eval(p, &x).unwrap();
            let mut by_inner = 0.0;
            for (c, a) in witness.coefficients.iter().zip(&witness.anchors) {
                by_inner += c * witness.kernel.eval(p, &x, a.p, &a.x).unwrap();
            }
            assert_eq!(by_eval.to_bits(), by_inner.to_bits());
        }
    }

    #[test]
    fn binned_calibration_rows() {
        // Perfect hindsight: all deviations vanish.
        let hind = hand_log(&[(1.0, 1), (0.0, 0), (1.0, 1)]);
        for row in binned_calibration(&hind, 10).unwrap() {
            assert_eq!(row.deviation, 0.0);
        }

        // Constant 1/2 vs alternating outcomes: single bin, tiny deviation.
        let alternating: Vec<(f64, u8)> = (0..1000).map(|i| (0.5, (i % 2) as u8)).collect();
        let log = hand_log(&alternating);
        let rows = binned_calibration(&log, 10).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].count, 1000);
        assert!(rows[0].deviation.abs() <= 1e-12);

        // bins = 1 reduces to the global mean drift.
        let log = hand_log(&[(0.2, 1), (0.9, 0), (0.5, 1)]);
        let rows = binned_calibration(&log, 1).unwrap();
        let drift: f64 = log.rounds.iter().map(Round::err).sum();
        assert_abs_diff_eq!(rows[0].deviation, drift / 3.0, epsilon = 1e-15);

        // Edge rule: a forecast exactly on an interior edge goes down.
        let log = hand_log(&[(0.5, 1), (0.0, 0), (1.0, 1)]);
        let rows = binned_calibration(&log, 10).unwrap();
        let bins: Vec<usize> = rows.iter().map(|r| r.bin).collect();
        assert_eq!(bins, vec![0, 4, 9]);

        assert!(binned_calibration(&log, 0).is_err());
    }

    #[test]
    fn soft_report_rows() {
        let empty = empty_log(KernelSpec::FermiSobolev { dims: 1 }, Strategy::K29Star);
        let t = TrapezoidFn::new(0.4, 0.6, 0.05).unwrap();
        let rows =
            soft_calibration_report(&empty, &[Neighborhood::forecast_only(t.clone())]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].denominator, 0.0);
        assert!(rows[0].ratio.is_none());

        // Neighborhood disjoint from every forecast.
        let log = hand_log(&[(0.9, 1), (0.95, 0)]);
        let rows = soft_calibration_report(&log, &[Neighborhood::forecast_only(t)]).unwrap();
        assert_eq!(rows[0].denominator, 0.0);
        assert!(rows[0].ratio.is_none());
        assert!(!rows[0].flagged);
    }

    #[test]
    fn lil_ratio_gates_and_values() {
        // A_N below the gate: undefined.
        assert!(lil_ratio(&hand_log(&[(0.5, 1), (0.5, 0)])).is_none());

        // Baseline follow-the-outcome log: A_N stays at 1/4 forever, so the
        // ratio is undefined even though the drift is exactly 1/2.
        let ys = [1u8, 0, 1, 1, 0];
        let mut rounds = Vec::new();
        let mut prev = 0.5;
        for &y in &ys {
            rounds.push((prev, y));
            prev = f64::from(y);
        }
        let log = hand_log(&rounds);
        assert!(lil_ratio(&log).is_none());
        let drift: f64 = log.rounds.iter().map(Round::err).sum();
        assert_eq!(drift.abs(), 0.5);

        // Constant 1/2 forecasts against fair-coin outcomes: the ratio is
        // defined and lands in a plausible iterated-logarithm band.
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let rounds: Vec<(f64, u8)> =
            (0..10_000).map(|_| (0.5, u8::from(rng.random::<f64>() < 0.5))).collect();
        let ratio = lil_ratio(&hand_log(&rounds)).unwrap();
        assert!(
            (0.02..1.5).contains(&ratio),
            "lil ratio {ratio} wildly outside the expected band"
        );
    }

    #[test]
    fn lemma1_check_on_game_logs() {
        let config = GameConfig {
            kernel: KernelSpec::FermiSobolev { dims: 1 },
            algorithm: Strategy::K29Star,
            skeptic: SkepticSpec::K29StarEq25,
            opponent: OpponentSpec {
                reality1: Reality1Spec::IidUniform { k: 0, seed: 3 },
                reality2: Reality2Spec::Bernoulli { theta: 0.35, seed: 4 },
            },
            rounds: 150,
            initial_capital: 0.0,
        };
        let (log, _) = play_game(&config).unwrap();
        let report = check_lemma1(&log).unwrap();
        assert!(report.satisfied);

        // Tampered capital is caught.
        let mut forged = log.clone();
        if let Some(trace) = &mut forged.capital {
            trace.values[40] += 0.5;
        }
        assert!(!check_lemma1(&forged).unwrap().satisfied);

        // No capital trace: vacuous pass.
        let mut no_capital = log;
        no_capital.capital = None;
        assert!(check_lemma1(&no_capital).unwrap().satisfied);
    }

    #[test]
    fn slack_is_zero_on_exact_root_logs() {
        // All reports built from a residual-free log carry only the
        // rounding allowance.
        let log = hand_log(&[(0.5, 1), (1.0, 0), (0.25, 1)]);
        let n = log.len() as f64;
        assert_eq!(check_theorem1(&log).unwrap().slack_budget, 1e-9 * n);
        assert_eq!(check_eq4(&log).unwrap().slack_budget, (1e-9 * n).sqrt());
        let t = TrapezoidFn::new(0.4, 0.6, 0.05).unwrap();
        assert_eq!(check_theorem2_trapezoid(&log, &t).unwrap().slack_budget, 0.0);
        assert!(check_theorem3(&log).unwrap().slack_budget >= 0.0);
    }
}
