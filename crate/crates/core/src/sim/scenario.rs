//! Spawn configurations and their text format.
//!
//! One spawn per line: `<approach> <intention> <spawn_time>`, whitespace or
//! comma separated, `#` starts a comment. Example:
//!
//! ```text
//! # four simultaneous vehicles
//! N left 0
//! E straight 0
//! S right 0
//! W straight 0.0
//! ```

use std::fmt::Write as _;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::geometry::{Approach, Intention, Route};
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spawn {
    pub approach: Approach,
    pub intention: Intention,
    /// Seconds from the start of the episode.
    pub time: f64,
}

impl Spawn {
    pub fn route(&self) -> Route {
        Route::new(self.approach, self.intention)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub spawns: Vec<Spawn>,
}

impl ScenarioSpec {
    pub fn new(spawns: Vec<Spawn>) -> Self {
        Self { spawns }
    }

    /// One vehicle per approach at time zero; `intentions` indexed by [`Approach::index`].
    pub fn four_way(intentions: [Intention; 4]) -> Self {
        Self {
            spawns: Approach::ALL
                .iter()
                .map(|&a| Spawn { approach: a, intention: intentions[a.index()], time: 0.0 })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (i, sp) in self.spawns.iter().enumerate() {
            if !sp.time.is_finite() || sp.time < 0.0 {
                return Err(SimError::InvalidScenario(format!("spawn {i}: time {} must be finite and >= 0", sp.time)));
            }
            if self.spawns[..i].iter().any(|o| o.approach == sp.approach && o.time == sp.time) {
                return Err(SimError::InvalidScenario(format!(
                    "spawn {i}: two vehicles on approach {} at t = {}",
                    sp.approach, sp.time
                )));
            }
        }
        Ok(())
    }

    /// True for the training shape: exactly one vehicle per approach, all at t = 0.
    pub fn is_four_way(&self) -> bool {
        self.spawns.len() == 4
            && self.spawns.iter().all(|s| s.time == 0.0)
            && Approach::ALL.iter().all(|a| self.spawns.iter().any(|s| s.approach == *a))
    }

    pub fn rotated_cw(&self) -> ScenarioSpec {
        ScenarioSpec {
            spawns: self.spawns.iter().map(|s| Spawn { approach: s.approach.rotated_cw(), ..*s }).collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut spawns = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
            let err = |msg: String| SimError::Parse { line: n + 1, message: msg };
            if fields.len() != 3 {
                return Err(err(format!("expected `approach intention time`, got `{line}`")));
            }
            let approach = fields[0].parse::<Approach>().map_err(err)?;
            let intention = fields[1].parse::<Intention>().map_err(err)?;
            let time = fields[2].parse::<f64>().map_err(|e| err(format!("bad spawn time `{}`: {e}", fields[2])))?;
            spawns.push(Spawn { approach, intention, time });
        }
        let spec = ScenarioSpec { spawns };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.spawns {
            let _ = writeln!(out, "{} {} {}", s.approach, s.intention, s.time);
        }
        out
    }

    pub fn load(path: &FsPath) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}
