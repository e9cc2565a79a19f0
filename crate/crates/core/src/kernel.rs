//! Kernels on the joint space `[0,1] x X` of forecasts and data.
//!
//! A kernel here is a symmetric positive-definite similarity function on
//! pairs of [`Point`]s. Every Hilbert-space quantity elsewhere in the crate
//! (drift norms, variance budgets, witness norms) is computed through
//! [`KernelSpec::eval`] alone; feature vectors are never materialized.
//!
//! Shipped variants:
//!
//! - `constant(c)`: the constant kernel `K == c`, `c > 0`.
//! - `gaussian(sigma)`: `exp(-||a - b||^2 / (2 sigma^2))` over the
//!   concatenated `(p, x)` coordinates; data coordinates are unrestricted.
//! - `fermi_sobolev(dims)`: the product over `dims` total coordinates
//!   (forecast coordinate first) of the 1-D spline kernel [`fs1d`]; all
//!   coordinates must lie in `[0,1]`.
//! - `product(factors)`: tensor product of factors over disjoint coordinate
//!   ranges, assigned left to right.
//!
//! All variants are forecast-continuous: jointly continuous in the two
//! forecast coordinates for fixed data. That property is a documented
//! contract on any variant added here; the root-finding forecaster relies
//! on it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the joint space: forecast coordinate `p` plus a datum `x`.
///
/// `x` may be empty (pure-calibration setting with no data).
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub p: f64,
    pub x: Vec<f64>,
}

impl Point {
    /// Builds a point, rejecting forecast coordinates outside `[0,1]`.
    pub fn new(p: f64, x: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfDomain { index: 0, value: p });
        }
        Ok(Self { p, x })
    }
}

/// Declarative kernel description.
///
/// Serializes as a tagged JSON object, e.g. `{"variant":"gaussian","sigma":0.25}`
/// or `{"variant":"fermi_sobolev","dims":3}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum KernelSpec {
    Constant { c: f64 },
    Gaussian { sigma: f64 },
    FermiSobolev { dims: usize },
    Product { factors: Vec<KernelSpec> },
}

/// Zero-copy view of the concatenated coordinates `(p, x_1, .., x_k)`.
#[derive(Clone, Copy)]
struct Coords<'a> {
    p: f64,
    x: &'a [f64],
}

impl Coords<'_> {
    fn len(&self) -> usize {
        1 + self.x.len()
    }

    fn get(&self, i: usize) -> f64 {
        if i == 0 {
            self.p
        } else {
            self.x[i - 1]
        }
    }
}

impl KernelSpec {
    /// Checks the spec's own parameter invariants (recursively for products).
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Constant { c } => {
                if *c > 0.0 && c.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidKernel(format!("constant c = {c} must be positive")))
                }
            }
            KernelSpec::Gaussian { sigma } => {
                if *sigma > 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidKernel(format!("gaussian sigma = {sigma} must be positive")))
                }
            }
            KernelSpec::FermiSobolev { dims } => {
                if *dims >= 1 {
                    Ok(())
                } else {
                    Err(Error::InvalidKernel("fermi_sobolev dims must be >= 1".into()))
                }
            }
            KernelSpec::Product { factors } => {
                if factors.is_empty() {
                    return Err(Error::InvalidKernel("product needs at least one factor".into()));
                }
                for f in factors {
                    f.validate()?;
                }
                // Coordinate ranges are assigned left to right, so only the
                // last factor may have variable arity.
                for f in &factors[..factors.len() - 1] {
                    if f.arity().is_none() {
                        return Err(Error::InvalidKernel(
                            "variable-arity factor (gaussian) must come last in a product".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    /// Number of coordinates the kernel consumes, or `None` when it accepts
    /// any number (gaussian).
    pub fn arity(&self) -> Option<usize> {
        match self {
            KernelSpec::Constant { .. } => Some(0),
            KernelSpec::Gaussian { .. } => None,
            KernelSpec::FermiSobolev { dims } => Some(*dims),
            KernelSpec::Product { factors } => {
                let mut total = 0;
                for f in factors {
                    total += f.arity()?;
                }
                Some(total)
            }
        }
    }

    /// Evaluates `K(a, b)` on two points given as `(p, x)` pairs.
    pub fn eval(&self, pa: f64, xa: &[f64], pb: f64, xb: &[f64]) -> Result<f64> {
        if xa.len() != xb.len() {
            return Err(Error::DimensionMismatch {
                context: "kernel arguments",
                expected: xa.len(),
                got: xb.len(),
            });
        }
        for (i, p) in [(0usize, pa), (0, pb)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::OutOfDomain { index: i, value: p });
            }
        }
        let a = Coords { p: pa, x: xa };
        let b = Coords { p: pb, x: xb };
        // A standalone constant kernel lives on any domain; its arity of 0
        // only matters for coordinate assignment inside a product.
        if !matches!(self, KernelSpec::Constant { .. }) {
            if let Some(n) = self.arity() {
                if n != a.len() {
                    return Err(Error::DimensionMismatch {
                        context: "kernel domain",
                        expected: n,
                        got: a.len(),
                    });
                }
            }
        }
        self.eval_range(a, b, 0, a.len())
    }

    /// [`KernelSpec::eval`] on two [`Point`]s.
    pub fn eval_points(&self, a: &Point, b: &Point) -> Result<f64> {
        self.eval(a.p, &a.x, b.p, &b.x)
    }

    fn eval_range(&self, a: Coords<'_>, b: Coords<'_>, start: usize, len: usize) -> Result<f64> {
        match self {
            KernelSpec::Constant { c } => Ok(*c),
            KernelSpec::Gaussian { sigma } => {
                let mut d2 = 0.0;
                for i in start..start + len {
                    let d = a.get(i) - b.get(i);
                    d2 += d * d;
                }
                Ok((-d2 / (2.0 * sigma * sigma)).exp())
            }
            KernelSpec::FermiSobolev { dims } => {
                if len != *dims {
                    return Err(Error::DimensionMismatch {
                        context: "fermi_sobolev coordinates",
                        expected: *dims,
                        got: len,
                    });
                }
                let mut prod = 1.0;
                for i in start..start + len {
                    let (t, u) = (a.get(i), b.get(i));
                    for v in [t, u] {
                        if !(0.0..=1.0).contains(&v) {
                            return Err(Error::OutOfDomain { index: i, value: v });
                        }
                    }
                    prod *= fs1d_unchecked(t, u);
                }
                Ok(prod)
            }
            KernelSpec::Product { factors } => {
                let mut prod = 1.0;
                let mut offset = start;
                let end = start + len;
                for f in factors {
                    let flen = f.arity().unwrap_or(end - offset);
                    if offset + flen > end {
                        return Err(Error::DimensionMismatch {
                            context: "product factor coordinates",
                            expected: flen,
                            got: end - offset,
                        });
                    }
                    prod *= f.eval_range(a, b, offset, flen)?;
                    offset += flen;
                }
                if offset != end {
                    return Err(Error::DimensionMismatch {
                        context: "product coordinates",
                        expected: offset - start,
                        got: len,
                    });
                }
                Ok(prod)
            }
        }
    }

    /// Supremum of `K(z, z)` over the domain.
    ///
    /// Also a bound on `|K(a, b)|` everywhere, by Cauchy-Schwarz.
    pub fn diag_sup_sq(&self) -> f64 {
        match self {
            KernelSpec::Constant { c } => *c,
            KernelSpec::Gaussian { .. } => 1.0,
            // The 1-D diagonal t^2/2 + (1-t)^2/2 + 5/6 is maximized at the
            // endpoints of [0,1], where it equals 4/3.
            KernelSpec::FermiSobolev { dims } => (4.0 / 3.0f64).powi(*dims as i32),
            KernelSpec::Product { factors } => factors.iter().map(|f| f.diag_sup_sq()).product(),
        }
    }

    /// Supremum of `sqrt(K(z, z))` over the domain (the norm bound `c_K`).
    pub fn diag_sup(&self) -> f64 {
        self.diag_sup_sq().sqrt()
    }
}

/// The 1-D spline kernel on `[0,1]`:
/// `min(t,u)^2 / 2 + min(1-t, 1-u)^2 / 2 + 5/6`.
///
/// This min-based form is the canonical evaluation path; it is free of
/// cancellation. Equivalent closed forms are pinned against it in tests.
pub fn fs1d(t: f64, u: f64) -> Result<f64> {
    for (i, v) in [(0usize, t), (1, u)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfDomain { index: i, value: v });
        }
    }
    Ok(fs1d_unchecked(t, u))
}

#[inline]
fn fs1d_unchecked(t: f64, u: f64) -> f64 {
    let lo = t.min(u);
    let hi = (1.0 - t).min(1.0 - u);
    0.5 * lo * lo + 0.5 * hi * hi + 5.0 / 6.0
}

/// Builds the Gram matrix of `points` under `spec` and reports whether its
/// minimum eigenvalue is at least `-tol`.
pub fn psd_check(spec: &KernelSpec, points: &[Point], tol: f64) -> Result<bool> {
    psd_check_fn(|a, b| spec.eval_points(a, b), points, tol)
}

/// [`psd_check`] on `samples` seeded uniform domain points with tolerance
/// `1e-9`; the quick sanity check behind `kernel-info`.
pub fn psd_spot_check(spec: &KernelSpec, samples: usize, seed: u64) -> Result<bool> {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let k = match spec.arity() {
        Some(0) | None => 1,
        Some(n) => n - 1,
    };
    let points: Vec<Point> = (0..samples.max(1))
        .map(|_| {
            Point::new(rng.random::<f64>(), (0..k).map(|_| rng.random::<f64>()).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    psd_check(spec, &points, 1e-9)
}

/// [`psd_check`] for an arbitrary symmetric function, so test suites can
/// pass negative controls that are not genuine kernels.
pub fn psd_check_fn<F>(mut k: F, points: &[Point], tol: f64) -> Result<bool>
where
    F: FnMut(&Point, &Point) -> Result<f64>,
{
    if points.is_empty() {
        return Err(Error::Contract("psd_check needs at least one point".into()));
    }
    if tol < 0.0 {
        return Err(Error::Contract(format!("psd_check tol = {tol} must be >= 0")));
    }
    let m = points.len();
    let mut gram = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = k(&points[i], &points[j])?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let min_eig = gram
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(min_eig >= -tol)
}
