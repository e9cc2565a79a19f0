//! Defensive forecasting for binary outcomes.
//!
//! An online forecaster emits a probability `p_n` for each outcome
//! `y_n in {0,1}` after seeing a datum `x_n`, with no assumptions on how
//! Reality generates either. The K29* algorithm chooses each forecast as a
//! root of a kernel-weighted sum of past errors, which keeps the squared
//! drift norm `||sum (y_n - p_n) Phi(p_n, x_n)||^2` below the variance
//! budget `sum p_n(1-p_n) K(z_n, z_n)` for every horizon. That is what good
//! calibration and resolution mean here, made quantitative.
//!
//! The crate provides:
//!
//! - [`kernel`]: kernel specs (constant, gaussian, the `[0,1]` spline
//!   kernel, tensor products), evaluation, and positive-definiteness checks;
//! - [`forecaster`]: the K29* / K29 algorithms and their round state;
//! - [`opponents`]: Reality's data generators and outcome strategies,
//!   including the worst-case adversary that makes the bound tight;
//! - [`game`]: the Skeptic betting game, capital traces, and the Lemma-1
//!   forecaster;
//! - [`diagnostics`]: verifiers for every inequality the run guarantees,
//!   plus calibration and resolution reports;
//! - [`runlog`]: JSONL persistence with bit-exact round trips.
//!
//! ```
//! use k29::{forecast_stream, Algorithm, KernelSpec};
//! use k29::diagnostics::check_theorem1;
//!
//! // Outcomes alternate with the parity carried by the datum; a narrow
//! // gaussian lets the forecaster resolve the two classes.
//! let stream = (1..=200).map(|n| (vec![(n % 2) as f64], (n % 2) as u8));
//! let log = forecast_stream(KernelSpec::Gaussian { sigma: 0.05 }, Algorithm::K29Star, stream)?;
//! assert!(check_theorem1(&log)?.satisfied);
//! # Ok::<(), k29::Error>(())
//! ```

pub mod diagnostics;
pub mod error;
pub mod forecaster;
pub mod game;
pub mod kernel;
pub mod opponents;
pub mod runlog;

pub use error::{Error, Result};
pub use forecaster::{forecast_stream, Algorithm, ForecasterState, Round};
pub use game::{identity24_check, lemma1_move, play_game, CapitalTrace, GameConfig, SkepticSpec, Strategy};
pub use kernel::{fs1d, psd_check, KernelSpec, Point};
pub use opponents::{
    bernoulli_move, parity_feature_move, reality2_adversary_move, replay_source, OpponentSpec,
    Reality1Spec, Reality2Spec,
};
pub use runlog::{RunHeader, RunLog};
