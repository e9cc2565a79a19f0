//! JSONL persistence for runs.
//!
//! A run log is one header line followed by one line per round, e.g.
//!
//! ```text
//! {"kernel":{"variant":"constant","c":1.0},"algorithm":"K29STAR","opponent":{...}}
//! {"n":1,"x":[0.2,0.7],"p":0.5,"y":1,"residual":0.0}
//! ```
//!
//! When the run was a game with capital tracking, the capital trace is
//! appended to the same file as a parallel stream of
//! `{"n":0,"capital":0.0}` lines, starting at `n = 0` with the initial
//! capital.
//!
//! Floats are serialized in shortest round-trip form, so reading a log back
//! reproduces every `f64` bit for bit; logs are portable evidence for the
//! verification commands, which recompute everything from the rounds and
//! never trust accumulators.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::Round;
use crate::game::{CapitalTrace, SkepticSpec, Strategy};
use crate::kernel::KernelSpec;
use crate::opponents::OpponentSpec;

/// First line of every log: enough to replay and verify the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub kernel: KernelSpec,
    pub algorithm: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opponent: Option<OpponentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeptic: Option<SkepticSpec>,
}

/// A full run: header, rounds, and (for games) the capital trace.
#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub rounds: Vec<Round>,
    pub capital: Option<CapitalTrace>,
}

#[derive(Serialize, Deserialize)]
struct CapitalLine {
    n: usize,
    capital: f64,
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Sum of stored root residuals.
    pub fn residual_sum(&self) -> f64 {
        self.rounds.iter().map(|r| r.residual).sum()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line = serde_json::to_string(&self.header)?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
        for r in &self.rounds {
            let mut line = serde_json::to_string(r)?;
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        if let Some(trace) = &self.capital {
            for (n, &capital) in trace.values.iter().enumerate() {
                let mut line = serde_json::to_string(&CapitalLine { n, capital })?;
                line.push('\n');
                w.write_all(line.as_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("jsonl is utf-8"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        self.write_jsonl(BufWriter::new(file))
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines.next().ok_or_else(|| Error::Input {
            location: "line 1".into(),
            message: "empty file, expected a header line".into(),
        })??;
        let header: RunHeader = serde_json::from_str(&header_line).map_err(|e| Error::Input {
            location: "line 1".into(),
            message: format!("bad header: {e}"),
        })?;

        let mut rounds: Vec<Round> = Vec::new();
        let mut capital: Vec<f64> = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Input {
                location: format!("line {lineno}"),
                message: e.to_string(),
            })?;
            let bad = |message: String| Error::Input { location: format!("line {lineno}"), message };
            if value.get("capital").is_some() {
                let cl: CapitalLine =
                    serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
                if cl.n != capital.len() {
                    return Err(bad(format!("capital index {} out of order", cl.n)));
                }
                capital.push(cl.capital);
            } else {
                let round: Round = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
                if round.index != rounds.len() + 1 {
                    return Err(bad(format!("round index {} out of order", round.index)));
                }
                if round.y > 1 {
                    return Err(bad(format!("outcome must be 0 or 1, got {}", round.y)));
                }
                if !(0.0..=1.0).contains(&round.p) {
                    return Err(bad(format!("forecast {} outside [0,1]", round.p)));
                }
                rounds.push(round);
            }
        }
        let capital = if capital.is_empty() {
            None
        } else {
            if capital.len() != rounds.len() + 1 {
                return Err(Error::Input {
                    location: "capital trace".into(),
                    message: format!(
                        "expected {} capital entries for {} rounds, got {}",
                        rounds.len() + 1,
                        rounds.len(),
                        capital.len()
                    ),
                });
            }
            Some(CapitalTrace { initial: capital[0], values: capital })
        };
        Ok(RunLog { header, rounds, capital })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        Self::read_jsonl(BufReader::new(file))
    }
}
