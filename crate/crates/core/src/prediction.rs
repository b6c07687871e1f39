//! BLUP and conditional-expectation predictors at exactly known targets.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, FieldLayout, Location};
use crate::model::{KernelMatrices, LocationNoiseModel, ModelParams};
use crate::moments::{assemble_sigma_factors, estimate_smeared_moments, SigmaFactors, SmearedMoments};
use crate::rng::{self, tag};
use crate::scenario::Dataset;

/// Everything needed to predict at arbitrary targets, computed once per
/// training set.
#[derive(Debug, Clone)]
pub struct PredictionContext {
    pub theta: ModelParams,
    pub layout: FieldLayout,
    pub kernel: KernelMatrices,
    pub moments: SmearedMoments,
    pub sigma_factors: SigmaFactors,
    /// `Σ⁻¹(y − T̄α)`.
    pub weights: Vec<f64>,
    /// `K S̄ weights`, the basis-space coefficients of the BLUP.
    pub blup_coefficients: DVector<f64>,
    pub mu_eta: Option<DVector<f64>>,
}

/// Estimate the smeared moments of `train` with `samples` draws, factor `Σ`
/// and solve for the BLUP weights.
pub fn build_context(
    train: &Dataset,
    theta: &ModelParams,
    layout: &FieldLayout,
    noise: &LocationNoiseModel,
    mu_eta: Option<DVector<f64>>,
    samples: usize,
    seed: u64,
) -> Result<PredictionContext> {
    theta.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("cannot build a predictor from an empty training set".into()));
    }
    if let Some(mu) = &mu_eta {
        if mu.len() != layout.rank() {
            return Err(Error::InvalidInput(format!(
                "mu_eta has length {} but the basis has {} functions",
                mu.len(),
                layout.rank()
            )));
        }
    }
    let kernel = KernelMatrices::new(&layout.basis, theta.beta, theta.phi)?;
    let mut rng = rng::stream(seed, &[tag::MOMENTS]);
    let moments = estimate_smeared_moments(&train.reported, layout, &kernel, noise, samples, &mut rng)?;
    let sigma_factors = assemble_sigma_factors(&moments, &kernel, theta.alpha(), theta.sigma_eps2)?;
    let resid: Vec<f64> = train
        .y
        .iter()
        .zip(moments.trend_mean(theta.alpha()))
        .map(|(y, m)| y - m)
        .collect();
    let weights = sigma_factors.solve(&resid);
    let blup_coefficients = &kernel.k * moments.s_bar.mul_vec(&weights);
    Ok(PredictionContext {
        theta: *theta,
        layout: layout.clone(),
        kernel,
        moments,
        sigma_factors,
        weights,
        blup_coefficients,
        mu_eta,
    })
}

fn affine(ctx: &PredictionContext, x0: Location, coef: &DVector<f64>) -> f64 {
    let t = ctx.layout.trend(x0);
    let alpha = ctx.theta.alpha();
    let mut z = t[0] * alpha[0] + t[1] * alpha[1];
    for (i, s) in ctx.layout.basis_sparse(x0) {
        z += s * coef[i];
    }
    z
}

/// `t(x₀)ᵀα + s(x₀)ᵀ K S̄ Σ⁻¹(y − T̄α)`.
pub fn predict_blup(x0: Location, ctx: &PredictionContext) -> f64 {
    affine(ctx, x0, &ctx.blup_coefficients)
}

/// `t(x₀)ᵀα + s(x₀)ᵀ μ_η`.
pub fn predict_cep(x0: Location, ctx: &PredictionContext) -> Result<f64> {
    let mu = ctx
        .mu_eta
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("conditional expectation predictor needs mu_eta".into()))?;
    Ok(affine(ctx, x0, mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predictor {
    Blup,
    Cep,
    Both,
}

impl std::str::FromStr for Predictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blup" => Ok(Self::Blup),
            "cep" => Ok(Self::Cep),
            "both" => Ok(Self::Both),
            other => Err(Error::InvalidInput(format!("unknown predictor '{other}' (blup, cep or both)"))),
        }
    }
}

/// Evaluate `which` at every target, in order.
pub fn predict_many(targets: &[Location], ctx: &PredictionContext, which: Predictor) -> Result<Vec<Vec<f64>>> {
    if which != Predictor::Blup && ctx.mu_eta.is_none() {
        return Err(Error::InvalidInput("conditional expectation predictor needs mu_eta".into()));
    }
    Ok(targets
        .par_iter()
        .map(|&x| match which {
            Predictor::Blup => vec![predict_blup(x, ctx)],
            Predictor::Cep => vec![affine(ctx, x, ctx.mu_eta.as_ref().unwrap())],
            Predictor::Both => vec![predict_blup(x, ctx), affine(ctx, x, ctx.mu_eta.as_ref().unwrap())],
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub min: Location,
    pub max: Location,
    pub spacing: f64,
}

impl GridSpec {
    /// A degenerate box (`min == max`) is a single cell.
    pub fn new(min: Location, max: Location, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidInput(format!("grid spacing must be positive, got {spacing}")));
        }
        if !(min.is_finite() && max.is_finite() && max.x >= min.x && max.y >= min.y) {
            return Err(Error::InvalidInput(format!(
                "grid corners ({}, {}) and ({}, {}) are not ordered",
                min.x, min.y, max.x, max.y
            )));
        }
        Ok(Self { min, max, spacing })
    }

    pub fn from_area(area: &BoundingBox, spacing: f64) -> Result<Self> {
        Self::new(area.min, area.max, spacing)
    }

    /// Parse `"x0,y0,x1,y1,step"`.
    pub fn parse(text: &str) -> Result<Self> {
        let v: Vec<f64> = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("bad grid spec '{text}': {e}")))?;
        let [x0, y0, x1, y1, step] = v[..] else {
            return Err(Error::InvalidInput(format!("grid spec '{text}' needs x0,y0,x1,y1,step")));
        };
        Self::new(Location::new(x0, y0), Location::new(x1, y1), step)
    }

    /// Row-major cells `min + (i, j) * spacing` inside the box.
    pub fn points(&self) -> Vec<Location> {
        let count = |extent: f64| (extent / self.spacing + 1e-9).floor() as usize + 1;
        let (nx, ny) = (count(self.max.x - self.min.x), count(self.max.y - self.min.y));
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                out.push(Location::new(
                    self.min.x + i as f64 * self.spacing,
                    self.min.y + j as f64 * self.spacing,
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPrediction {
    pub which: Predictor,
    pub points: Vec<Location>,
    pub values: Vec<Vec<f64>>,
}

impl GridPrediction {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(match self.which {
            Predictor::Blup => "x,y,blup_dbm\n",
            Predictor::Cep => "x,y,cep_dbm\n",
            Predictor::Both => "x,y,blup_dbm,cep_dbm\n",
        });
        for (p, v) in self.points.iter().zip(&self.values) {
            let _ = write!(out, "{},{}", p.x, p.y);
            for z in v {
                let _ = write!(out, ",{z}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn predict_grid(grid: &GridSpec, ctx: &PredictionContext, which: Predictor) -> Result<GridPrediction> {
    let points = grid.points();
    let values = predict_many(&points, ctx, which)?;
    Ok(GridPrediction { which, points, values })
}
