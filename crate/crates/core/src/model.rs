//! Model parameters, the exponential low-rank kernel and the location-noise law.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dense::SpdFactor;
use crate::error::{Error, Result};
use crate::geometry::BasisSet;

/// Floor applied to `sigma_eps2`, `beta` and `phi` after every M-step.
pub const PARAM_FLOOR: f64 = 1e-8;

/// Diagonal jitter added to the correlation matrix, relative to its unit diagonal.
pub const KERNEL_JITTER: f64 = 1e-10;

/// Unknown parameters of the observation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Trend intercept (dBm).
    pub p0: f64,
    /// Coefficient of the `10·log10 dist` regressor.
    pub kappa: f64,
    /// Nugget variance (dB²).
    pub sigma_eps2: f64,
    /// Precision of each basis weight (1/dB²).
    pub beta: f64,
    /// Correlation range of the basis weights (m).
    pub phi: f64,
}

impl ModelParams {
    pub fn alpha(&self) -> [f64; 2] {
        [self.p0, self.kappa]
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.p0, self.kappa, self.sigma_eps2, self.beta, self.phi]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || self.sigma_eps2 <= 0.0 || self.beta <= 0.0 || self.phi <= 0.0 {
            return Err(Error::InvalidInput(format!("invalid model parameters {self:?}")));
        }
        Ok(())
    }

    pub(crate) fn floored(mut self) -> Self {
        self.sigma_eps2 = self.sigma_eps2.max(PARAM_FLOOR);
        self.beta = self.beta.max(PARAM_FLOOR);
        self.phi = self.phi.max(PARAM_FLOOR);
        self
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.p0, self.kappa, self.sigma_eps2, self.beta, self.phi]
    }
}

/// `K = beta^-1 (K~(phi) + jitter I)` with its inverse and log-determinant.
#[derive(Debug, Clone)]
pub struct KernelMatrices {
    pub beta: f64,
    pub phi: f64,
    /// Correlation matrix `K~(phi)` without jitter.
    pub k_tilde: DMatrix<f64>,
    /// Inverse of the jittered correlation matrix.
    pub k_tilde_inv: DMatrix<f64>,
    pub logdet_k_tilde: f64,
    pub k: DMatrix<f64>,
    pub k_inv: DMatrix<f64>,
    pub logdet_k: f64,
    /// Lower Cholesky factor of `k`.
    pub k_chol: DMatrix<f64>,
}

impl KernelMatrices {
    pub fn new(basis: &BasisSet, beta: f64, phi: f64) -> Result<Self> {
        Self::from_distances(&basis.center_distances(), beta, phi)
    }

    /// Same as [`KernelMatrices::new`] from a precomputed center distance matrix.
    pub fn from_distances(dist: &DMatrix<f64>, beta: f64, phi: f64) -> Result<Self> {
        if !(beta > 0.0 && phi > 0.0 && beta.is_finite() && phi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "kernel needs beta > 0 and phi > 0, got beta={beta}, phi={phi}"
            )));
        }
        let r = dist.nrows();
        let k_tilde = correlation(dist, phi);
        let mut jittered = k_tilde.clone();
        for i in 0..r {
            jittered[(i, i)] += KERNEL_JITTER;
        }
        let chol = SpdFactor::new(&jittered).ok_or(Error::NotPositiveDefinite {
            what: "basis correlation matrix",
        })?;
        let logdet_k_tilde = chol.logdet();
        let k_tilde_inv = chol.inverse();
        let k_chol = chol.lower() / beta.sqrt();
        let k = k_tilde.map(|v| v / beta) + DMatrix::identity(r, r) * (KERNEL_JITTER / beta);
        let k_inv = &k_tilde_inv * beta;
        let logdet_k = logdet_k_tilde - r as f64 * beta.ln();
        Ok(Self {
            beta,
            phi,
            k_tilde,
            k_tilde_inv,
            logdet_k_tilde,
            k,
            k_inv,
            logdet_k,
            k_chol,
        })
    }

    pub fn rank(&self) -> usize {
        self.k.nrows()
    }

    /// Draw `eta ~ N(0, K)`.
    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.rank(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.k_chol * z
    }
}

/// `exp(-D / phi)` elementwise.
pub fn correlation(dist: &DMatrix<f64>, phi: f64) -> DMatrix<f64> {
    dist.map(|d| (-d / phi).exp())
}

/// Isotropic Gaussian location error `N(0, sigma_g^2 I_2)`; `sigma_g = 0` is the Dirac mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationNoiseModel {
    pub sigma_g: f64,
}

impl LocationNoiseModel {
    pub fn new(sigma_g: f64) -> Result<Self> {
        if !(sigma_g >= 0.0 && sigma_g.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma_g must be >= 0, got {sigma_g}")));
        }
        Ok(Self { sigma_g })
    }

    pub fn exact() -> Self {
        Self { sigma_g: 0.0 }
    }

    pub fn is_exact(&self) -> bool {
        self.sigma_g == 0.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        if self.is_exact() {
            return [0.0, 0.0];
        }
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        [self.sigma_g * a, self.sigma_g * b]
    }
}

pub fn noise_logdensity(noise: &LocationNoiseModel, u: [f64; 2]) -> Result<f64> {
    if noise.is_exact() {
        return Err(Error::InvalidInput(
            "the Dirac location law has no density; use the exact-location path".into(),
        ));
    }
    let s2 = noise.sigma_g * noise.sigma_g;
    Ok(-(2.0 * std::f64::consts::PI * s2).ln() - (u[0] * u[0] + u[1] * u[1]) / (2.0 * s2))
}

pub fn sample_location_noise<R: Rng + ?Sized>(
    noise: &LocationNoiseModel,
    count: usize,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    (0..count).map(|_| noise.sample(rng)).collect()
}

/// Contents of a parameter file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub params: ModelParams,
    /// Posterior mean of the basis weights, present after calibration.
    pub mu_eta: Option<Vec<f64>>,
    /// Header comment lines, without the leading `#`.
    pub header: Vec<String>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl ParamFile {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for line in &self.header {
            let _ = writeln!(out, "# {line}");
        }
        let p = &self.params;
        for (key, v) in [
            ("p0", p.p0),
            ("kappa", p.kappa),
            ("sigma_eps2", p.sigma_eps2),
            ("beta", p.beta),
            ("phi", p.phi),
        ] {
            let _ = writeln!(out, "{key} = {}", fmt_f64(v));
        }
        if let Some(mu) = &self.mu_eta {
            let joined: Vec<String> = mu.iter().map(|v| fmt_f64(*v)).collect();
            let _ = writeln!(out, "mu_eta = {}", joined.join(","));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = Vec::new();
        let mut vals: [Option<f64>; 5] = [None; 5];
        let mut mu_eta = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                header.push(rest.trim_start().to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("bad number `{s}` for `{key}`: {e}"),
                })
            };
            let slot = match key {
                "p0" => 0,
                "kappa" => 1,
                "sigma_eps2" => 2,
                "beta" => 3,
                "phi" => 4,
                "mu_eta" => {
                    let v = if value.is_empty() {
                        Vec::new()
                    } else {
                        value.split(',').map(parse).collect::<Result<Vec<_>>>()?
                    };
                    mu_eta = Some(v);
                    continue;
                }
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("unknown parameter `{other}`"),
                    })
                }
            };
            vals[slot] = Some(parse(value)?);
        }
        let names = ["p0", "kappa", "sigma_eps2", "beta", "phi"];
        let mut got = [0.0; 5];
        for (i, v) in vals.iter().enumerate() {
            got[i] = v.ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing parameter `{}`", names[i]),
            })?;
        }
        let params = ModelParams {
            p0: got[0],
            kappa: got[1],
            sigma_eps2: got[2],
            beta: got[3],
            phi: got[4],
        };
        params.validate()?;
        Ok(Self {
            params,
            mu_eta,
            header,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
