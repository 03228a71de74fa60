//! Run configuration shared by the experiment runners, the CLI and the
//! Python bindings. Unknown keys are rejected at every level.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evolution::{EvolutionConfig, Sponge};
use crate::grid::Grid;
use crate::nonlinearity::Nonlinearity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { l: 160.0, n: 6401 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpSpec {
    pub q: f64,
}

impl Default for OpSpec {
    fn default() -> Self {
        Self { q: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvoSpec {
    /// Defaults to `h/4`.
    pub dt: Option<f64>,
    #[serde(rename = "T")]
    pub t: f64,
    pub sponge: bool,
    /// Defaults to `L/8`.
    pub sponge_width: Option<f64>,
    pub sponge_strength: f64,
    /// Time between snapshots.
    pub sample_every: f64,
}

impl Default for EvoSpec {
    fn default() -> Self {
        Self {
            dt: None,
            t: 200.0,
            sponge: true,
            sponge_width: None,
            sponge_strength: 1.0,
            sample_every: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VirialSpec {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "A_ladder")]
    pub a_ladder: Vec<f64>,
    pub gamma: f64,
    pub samples: usize,
}

impl Default for VirialSpec {
    fn default() -> Self {
        Self {
            a: 16.0,
            a_ladder: vec![8.0, 16.0, 32.0, 64.0],
            gamma: 0.2,
            samples: 100,
        }
    }
}

/// Initial-data shapes for the small-data runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// `Q[z₀] + P_c(bump)` scaled to `‖u₀‖_{H¹} = ε`
    BoundPlusBump,
    /// `ε φ / ‖φ‖_{H¹}`
    GroundState,
    /// off-centre gaussian packet with `‖u₀‖_{H¹} = ε`
    OffCenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpSpec {
    pub eps_ladder: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Exponents for the small-data ladder; empty means `nl.p` alone.
    pub p_values: Vec<f64>,
    pub shape: Shape,
    /// Share of `ε` carried by the bound-state part of `BoundPlusBump`.
    pub z_fraction: f64,
    /// Snapshots for the modulation residual check.
    pub residual_snapshots: usize,
}

impl Default for ExpSpec {
    fn default() -> Self {
        Self {
            eps_ladder: vec![0.0125, 0.025, 0.05, 0.1],
            amplitudes: vec![0.5, 1.0, 2.0],
            p_values: Vec::new(),
            shape: Shape::BoundPlusBump,
            z_fraction: 0.6,
            residual_snapshots: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub op: OpSpec,
    pub nl: Nonlinearity,
    pub evo: EvoSpec,
    pub virial: VirialSpec,
    pub exp: ExpSpec,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            op: OpSpec::default(),
            nl: Nonlinearity::power(1.0, -1.0).expect("valid default"),
            evo: EvoSpec::default(),
            virial: VirialSpec::default(),
            exp: ExpSpec::default(),
            seed: 7,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.l, self.grid.n)
    }

    pub fn dt(&self) -> Result<f64> {
        Ok(self.evo.dt.unwrap_or(self.grid()?.spacing() / 4.0))
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if self.op.q == 0.0 || !self.op.q.is_finite() {
            return Err(Error::ZeroCoupling);
        }
        self.nl.validate()?;
        for &p in &self.exp.p_values {
            Nonlinearity::new(self.nl.family, p, self.nl.lambda)?;
        }
        self.evolution(self.op.q, self.nl)?.validate(&grid)?;
        if !(self.evo.sample_every > 0.0) {
            return Err(Error::InvalidConfig("evo.sample_every must be positive".into()));
        }
        if self.virial.a < 4.0 || self.virial.a_ladder.iter().any(|&a| a < 4.0) {
            return Err(Error::ATooSmall(self.virial.a.min(
                self.virial.a_ladder.iter().cloned().fold(f64::INFINITY, f64::min),
            )));
        }
        if !(self.virial.gamma > 0.0) {
            return Err(Error::InvalidConfig("virial.gamma must be positive".into()));
        }
        if self.exp.eps_ladder.iter().chain(&self.exp.amplitudes).any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidConfig("ladders must be positive".into()));
        }
        if !(self.exp.z_fraction >= 0.0 && self.exp.z_fraction <= 1.0) {
            return Err(Error::InvalidConfig("exp.z_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Evolution settings for a given coupling and nonlinearity.
    pub fn evolution(&self, q: f64, nl: Nonlinearity) -> Result<EvolutionConfig> {
        let dt = self.dt()?;
        let sponge = self.evo.sponge.then(|| Sponge {
            width: self.evo.sponge_width.unwrap_or(self.grid.l / 8.0),
            strength: self.evo.sponge_strength,
        });
        Ok(EvolutionConfig {
            coupling: q,
            nonlinearity: nl,
            dt,
            t_final: self.evo.t,
            sponge,
            cadence: ((self.evo.sample_every / dt).round() as usize).max(1),
        })
    }

    /// Exponents of the small-data ladder.
    pub fn p_values(&self) -> Vec<f64> {
        if self.exp.p_values.is_empty() {
            vec![self.nl.p]
        } else {
            self.exp.p_values.clone()
        }
    }

    /// JSON of everything that affects results (the output directory does not).
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        serde_json::to_string(&c).expect("config serializes")
    }

    /// Short content hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_text(&self.canonical())
    }
}

/// First 12 hex digits of the SHA-256 of `text`.
pub fn hash_text(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = RunConfig::default();
        cfg.exp.p_values = vec![0.3, 1.0];
        cfg.evo.dt = Some(0.01);
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_configs_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"grid": {"L": 20}, "nl": {"p": 2, "lambda": 1}}"#).unwrap();
        assert_eq!(cfg.grid.l, 20.0);
        assert_eq!(cfg.grid.n, 6401);
        assert_eq!(cfg.nl.p, 2.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(
            RunConfig::from_json(r#"{"grid": {"L": 20, "M": 3}}"#),
            Err(Error::Serialization(_))
        ));
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(matches!(
            RunConfig::from_json(r#"{"grid": {"N": 100}}"#),
            Err(Error::EvenN(100))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"nl": {"lambda": 0.5}}"#),
            Err(Error::InvalidNonlinearity(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"virial": {"A": 2}}"#),
            Err(Error::ATooSmall(_))
        ));
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 12);
    }
}
