//! Flat `key = value` run configuration shared by every command.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::calibration::SaemConfig;
use crate::error::{Error, Result};
use crate::geometry::{build_basis_grid, BoundingBox, FieldLayout, Location};
use crate::model::{LocationNoiseModel, ModelParams};
use crate::scenario::{Sampling, ScenarioConfig};

/// Every tunable of a run. Missing keys keep the [`Default`] values.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    /// Basis radius used for calibration and prediction.
    pub tau: f64,
    /// Location-error standard deviation assumed by the uncertainty-aware methods.
    pub sigma_g: f64,
    pub saem: SaemConfig,
    pub folds: usize,
    /// BS-distance ring edges for the zone breakdown.
    pub ring_edges: Vec<f64>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scenario = ScenarioConfig::default();
        Self {
            tau: 50.0,
            sigma_g: scenario.sigma_g,
            saem: SaemConfig {
                seed: scenario.seed,
                ..SaemConfig::default()
            },
            folds: 5,
            ring_edges: vec![300.0, 600.0],
            seed: scenario.seed,
            scenario,
        }
    }
}

const KEYS: &[&str] = &[
    "area_x0",
    "area_y0",
    "area_x1",
    "area_y1",
    "bs_x",
    "bs_y",
    "p0",
    "kappa",
    "sigma_eps2",
    "beta",
    "phi",
    "tau_truth",
    "n",
    "sampling",
    "sigma_g",
    "tau",
    "burn_in",
    "max_iter",
    "gamma_exponent",
    "m_start",
    "m_end",
    "sigma_q2",
    "moment_samples",
    "stop_window",
    "stop_tolerance",
    "folds",
    "ring_edges",
    "seed",
];

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Parse {
        line,
        message: format!("bad value '{value}' for '{key}': {e}"),
    })
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<f64>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(line, key, v.trim())).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let (mut min, mut max) = (cfg.scenario.area.min, cfg.scenario.area.max);
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected 'key = value', got '{body}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key '{key}'"),
                });
            }
            if seen.contains(&key) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key '{key}'"),
                });
            }
            seen.push(key);
            let truth = &mut cfg.scenario.truth;
            match key {
                "area_x0" => min.x = parse_value(line, key, value)?,
                "area_y0" => min.y = parse_value(line, key, value)?,
                "area_x1" => max.x = parse_value(line, key, value)?,
                "area_y1" => max.y = parse_value(line, key, value)?,
                "bs_x" => cfg.scenario.bs.x = parse_value(line, key, value)?,
                "bs_y" => cfg.scenario.bs.y = parse_value(line, key, value)?,
                "p0" => truth.p0 = parse_value(line, key, value)?,
                "kappa" => truth.kappa = parse_value(line, key, value)?,
                "sigma_eps2" => truth.sigma_eps2 = parse_value(line, key, value)?,
                "beta" => truth.beta = parse_value(line, key, value)?,
                "phi" => truth.phi = parse_value(line, key, value)?,
                "tau_truth" => cfg.scenario.tau_truth = parse_value(line, key, value)?,
                "n" => cfg.scenario.n = parse_value(line, key, value)?,
                "sampling" => {
                    cfg.scenario.sampling = match value {
                        "uniform" => Sampling::UniformRandom,
                        "grid" => Sampling::Grid,
                        other => {
                            return Err(Error::Parse {
                                line,
                                message: format!("sampling must be 'uniform' or 'grid', got '{other}'"),
                            })
                        }
                    }
                }
                "sigma_g" => cfg.sigma_g = parse_value(line, key, value)?,
                "tau" => cfg.tau = parse_value(line, key, value)?,
                "burn_in" => cfg.saem.burn_in = parse_value(line, key, value)?,
                "max_iter" => cfg.saem.max_iter = parse_value(line, key, value)?,
                "gamma_exponent" => cfg.saem.gamma_exponent = parse_value(line, key, value)?,
                "m_start" => cfg.saem.m_start = parse_value(line, key, value)?,
                "m_end" => cfg.saem.m_end = parse_value(line, key, value)?,
                "sigma_q2" => cfg.saem.sigma_q2 = parse_value(line, key, value)?,
                "moment_samples" => cfg.saem.moment_mc_samples = parse_value(line, key, value)?,
                "stop_window" => cfg.saem.stop_window = parse_value(line, key, value)?,
                "stop_tolerance" => cfg.saem.stop_tolerance = parse_value(line, key, value)?,
                "folds" => cfg.folds = parse_value(line, key, value)?,
                "ring_edges" => cfg.ring_edges = parse_list(line, key, value)?,
                "seed" => cfg.set_seed(parse_value(line, key, value)?),
                _ => unreachable!("key list and match arms disagree"),
            }
        }
        cfg.scenario.area = BoundingBox::new(min, max)?;
        cfg.scenario.sigma_g = cfg.sigma_g;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// One seed drives generation, splitting, chains and Monte Carlo moments.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.scenario.seed = seed;
        self.saem.seed = seed;
    }

    pub fn set_sigma_g(&mut self, sigma_g: f64) {
        self.sigma_g = sigma_g;
        self.scenario.sigma_g = sigma_g;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        self.scenario.truth.validate()?;
        self.saem.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.scenario.tau_truth > 0.0) {
            return bad(format!("tau_truth must be positive, got {}", self.scenario.tau_truth));
        }
        LocationNoiseModel::new(self.sigma_g)?;
        if self.scenario.n < 1 {
            return bad("n must be at least 1".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.ring_edges.windows(2).any(|w| w[1] <= w[0]) || self.ring_edges.iter().any(|e| !(*e > 0.0)) {
            return bad("ring_edges must be positive and increasing".into());
        }
        Ok(())
    }

    pub fn noise(&self) -> LocationNoiseModel {
        LocationNoiseModel { sigma_g: self.sigma_g }
    }

    /// Calibration basis on the scenario area with radius `tau`.
    pub fn layout(&self) -> Result<FieldLayout> {
        self.layout_with_tau(self.tau)
    }

    pub fn layout_with_tau(&self, tau: f64) -> Result<FieldLayout> {
        Ok(FieldLayout::new(build_basis_grid(&self.scenario.area, tau)?, self.scenario.bs))
    }

    /// Every key with its current value; parses back to the same config.
    pub fn to_text(&self) -> String {
        let s = &self.scenario;
        let t: &ModelParams = &s.truth;
        let (min, max): (Location, Location) = (s.area.min, s.area.max);
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("area_x0", min.x.to_string());
        kv("area_y0", min.y.to_string());
        kv("area_x1", max.x.to_string());
        kv("area_y1", max.y.to_string());
        kv("bs_x", s.bs.x.to_string());
        kv("bs_y", s.bs.y.to_string());
        kv("p0", t.p0.to_string());
        kv("kappa", t.kappa.to_string());
        kv("sigma_eps2", t.sigma_eps2.to_string());
        kv("beta", t.beta.to_string());
        kv("phi", t.phi.to_string());
        kv("tau_truth", s.tau_truth.to_string());
        kv("n", s.n.to_string());
        kv(
            "sampling",
            match s.sampling {
                Sampling::UniformRandom => "uniform",
                Sampling::Grid => "grid",
            }
            .into(),
        );
        kv("sigma_g", self.sigma_g.to_string());
        kv("tau", self.tau.to_string());
        kv("burn_in", self.saem.burn_in.to_string());
        kv("max_iter", self.saem.max_iter.to_string());
        kv("gamma_exponent", self.saem.gamma_exponent.to_string());
        kv("m_start", self.saem.m_start.to_string());
        kv("m_end", self.saem.m_end.to_string());
        kv("sigma_q2", self.saem.sigma_q2.to_string());
        kv("moment_samples", self.saem.moment_mc_samples.to_string());
        kv("stop_window", self.saem.stop_window.to_string());
        kv("stop_tolerance", self.saem.stop_tolerance.to_string());
        kv("folds", self.folds.to_string());
        kv(
            "ring_edges",
            self.ring_edges.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("seed", self.seed.to_string());
        out
    }
}
