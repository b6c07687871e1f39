//! Location-smeared moments `T̄`, `S̄`, `Δ` and the low-rank factorization of
//! the observation covariance
//!
//! ```text
//! Σ = S̄ᵀ K S̄ + V,   V = Δ + diag(αᵀ C_k α) + σ_ε² I
//! Σ⁻¹ = V⁻¹ − V⁻¹ S̄ᵀ (K⁻¹ + S̄ V⁻¹ S̄ᵀ)⁻¹ S̄ V⁻¹
//! ```
//!
//! The expectations over the location error are Monte Carlo averages over one
//! shared set of draws `U¹..Uᴹ`, reused for every observation and for both
//! terms of `Δ`.
//!
//! `C_k` is the covariance of the trend features `t(x_k − U)`. Without it the
//! diagonal of `Σ` misses the spread the location error induces in the trend
//! itself, and `Σ` is no longer the covariance of `Y`.

use nalgebra::{DMatrix, DVector};

use crate::dense::SpdFactor;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{FieldLayout, Location};
use crate::model::{sample_location_noise, KernelMatrices, LocationNoiseModel};

/// Default number of location draws behind `T̄`, `S̄` and `Δ`.
pub const DEFAULT_MOMENT_SAMPLES: usize = 1000;

/// `r x n` matrix stored as sparse columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseColumns {
    pub nrows: usize,
    pub cols: Vec<Vec<(usize, f64)>>,
}

impl SparseColumns {
    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols());
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, v) in col {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// `self · x` for an `n`-vector `x`.
    pub fn mul_vec(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows);
        for (col, &xj) in self.cols.iter().zip(x) {
            for &(i, v) in col {
                out[i] += v * xj;
            }
        }
        out
    }

    /// `selfᵀ · z` for an `r`-vector `z`.
    pub fn tr_mul_vec(&self, z: &DVector<f64>) -> Vec<f64> {
        self.cols
            .iter()
            .map(|col| col.iter().map(|&(i, v)| v * z[i]).sum())
            .collect()
    }

    /// `Σ_j w_j c_j c_jᵀ` over columns `c_j`.
    pub fn weighted_gram(&self, w: &[f64]) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.nrows, self.nrows);
        for (col, &wj) in self.cols.iter().zip(w) {
            for &(a, va) in col {
                let s = wj * va;
                for &(b, vb) in col {
                    g[(a, b)] += s * vb;
                }
            }
        }
        g
    }
}

/// Monte Carlo estimates of the smeared trend, basis and variance terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SmearedMoments {
    /// Rows of `T̄`.
    pub t_bar: Vec<[f64; 2]>,
    /// `S̄`, `r x n`.
    pub s_bar: SparseColumns,
    /// Diagonal of `Δ`.
    pub delta: Vec<f64>,
    /// Covariance of `t(x_k − U)` for each observation.
    pub t_cov: Vec<[[f64; 2]; 2]>,
    pub mc_samples: usize,
}

impl SmearedMoments {
    /// Moments at exactly known locations: `T̄ = T`, `S̄ = S`, `Δ = 0`.
    pub fn exact(locations: &[Location], layout: &FieldLayout) -> Self {
        Self {
            t_bar: locations.iter().map(|&x| layout.trend(x)).collect(),
            s_bar: SparseColumns {
                nrows: layout.rank(),
                cols: locations
                    .iter()
                    .map(|&x| layout.basis_sparse(x).into_vec())
                    .collect(),
            },
            delta: vec![0.0; locations.len()],
            t_cov: vec![[[0.0; 2]; 2]; locations.len()],
            mc_samples: 0,
        }
    }

    pub fn trend_mean(&self, alpha: [f64; 2]) -> Vec<f64> {
        self.t_bar
            .iter()
            .map(|t| t[0] * alpha[0] + t[1] * alpha[1])
            .collect()
    }

    /// `αᵀ C_k α` for every observation.
    pub fn trend_variance(&self, alpha: [f64; 2]) -> Vec<f64> {
        self.t_cov
            .iter()
            .map(|c| {
                alpha[0] * alpha[0] * c[0][0] + 2.0 * alpha[0] * alpha[1] * c[0][1] + alpha[1] * alpha[1] * c[1][1]
            })
            .collect()
    }
}

fn quad_form_sparse(k: &DMatrix<f64>, s: &[(usize, f64)]) -> f64 {
    let mut acc = 0.0;
    for &(a, va) in s {
        for &(b, vb) in s {
            acc += va * k[(a, b)] * vb;
        }
    }
    acc
}

struct Smeared {
    t_bar: [f64; 2],
    t_cov: [[f64; 2]; 2],
    s_bar: Vec<(usize, f64)>,
    delta: f64,
}

/// Smeared moments of one reported location over the draw set.
fn smear_one(x: Location, draws: &[[f64; 2]], layout: &FieldLayout, kernel: &KernelMatrices) -> Smeared {
    let r = layout.rank();
    let m = draws.len() as f64;
    let trends: Vec<[f64; 2]> = draws.iter().map(|u| layout.trend(x.shifted(*u))).collect();
    let mut t_sum = [0.0; 2];
    for t in &trends {
        t_sum[0] += t[0];
        t_sum[1] += t[1];
    }
    let t_bar = [t_sum[0] / m, t_sum[1] / m];
    let mut t_cov = [[0.0; 2]; 2];
    for t in &trends {
        let d = [t[0] - t_bar[0], t[1] - t_bar[1]];
        for a in 0..2 {
            for b in 0..2 {
                t_cov[a][b] += d[a] * d[b] / m;
            }
        }
    }
    let mut s_sum = vec![0.0; r];
    let mut touched = Vec::new();
    let mut second = 0.0;
    for u in draws {
        let xs = x.shifted(*u);
        let s = layout.basis_sparse(xs);
        for &(i, v) in &s {
            if s_sum[i] == 0.0 {
                touched.push(i);
            }
            s_sum[i] += v;
        }
        second += quad_form_sparse(&kernel.k, &s);
    }
    touched.sort_unstable();
    let s_bar: Vec<(usize, f64)> = touched.into_iter().map(|i| (i, s_sum[i] / m)).collect();
    let delta = (second / m - quad_form_sparse(&kernel.k, &s_bar)).max(0.0);
    Smeared {
        t_bar,
        t_cov,
        s_bar,
        delta,
    }
}

/// Monte Carlo `T̄`, `S̄`, `Δ` for the reported locations using `samples` draws
/// of the location error shared across observations.
pub fn estimate_smeared_moments<R: Rng + ?Sized>(
    locations: &[Location],
    layout: &FieldLayout,
    kernel: &KernelMatrices,
    noise: &LocationNoiseModel,
    samples: usize,
    rng: &mut R,
) -> Result<SmearedMoments> {
    if samples == 0 {
        return Err(Error::InvalidInput("moment estimation needs at least one draw".into()));
    }
    if noise.is_exact() {
        return Ok(SmearedMoments::exact(locations, layout));
    }
    let draws = sample_location_noise(noise, samples, rng);
    Ok(smeared_moments_from_draws(locations, layout, kernel, &draws))
}

/// Same as [`estimate_smeared_moments`] with an explicit draw set.
pub fn smeared_moments_from_draws(
    locations: &[Location],
    layout: &FieldLayout,
    kernel: &KernelMatrices,
    draws: &[[f64; 2]],
) -> SmearedMoments {
    let per_obs: Vec<_> = locations
        .par_iter()
        .map(|&x| smear_one(x, draws, layout, kernel))
        .collect();
    let mut t_bar = Vec::with_capacity(per_obs.len());
    let mut t_cov = Vec::with_capacity(per_obs.len());
    let mut cols = Vec::with_capacity(per_obs.len());
    let mut delta = Vec::with_capacity(per_obs.len());
    for o in per_obs {
        t_bar.push(o.t_bar);
        t_cov.push(o.t_cov);
        cols.push(o.s_bar);
        delta.push(o.delta);
    }
    SmearedMoments {
        t_bar,
        s_bar: SparseColumns {
            nrows: layout.rank(),
            cols,
        },
        delta,
        t_cov,
        mc_samples: draws.len(),
    }
}

/// Woodbury factors of `Σ`; never forms an `n x n` matrix.
#[derive(Debug, Clone)]
pub struct SigmaFactors {
    pub v_diag: Vec<f64>,
    pub s_bar: SparseColumns,
    middle: SpdFactor,
}

impl SigmaFactors {
    /// `(K⁻¹ + S̄ V⁻¹ S̄ᵀ)⁻¹`.
    pub fn middle_inv(&self) -> DMatrix<f64> {
        self.middle.inverse()
    }

    pub fn len(&self) -> usize {
        self.v_diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_diag.is_empty()
    }

    /// `Σ⁻¹ rhs` in `O(n r + r²)`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.len(), "right-hand side has the wrong length");
        let w: Vec<f64> = rhs.iter().zip(&self.v_diag).map(|(b, v)| b / v).collect();
        let z = self.s_bar.mul_vec(&w);
        let q = self.middle.solve(&z);
        let back = self.s_bar.tr_mul_vec(&q);
        w.iter()
            .zip(&back)
            .zip(&self.v_diag)
            .map(|((wi, bi), v)| wi - bi / v)
            .collect()
    }

    /// Dense `Σ`, for checks on small instances.
    pub fn dense_sigma(&self, kernel: &KernelMatrices) -> DMatrix<f64> {
        let s = self.s_bar.to_dense();
        let mut sigma = s.transpose() * &kernel.k * s;
        for (i, v) in self.v_diag.iter().enumerate() {
            sigma[(i, i)] += v;
        }
        sigma
    }
}

pub fn assemble_sigma_factors(
    moments: &SmearedMoments,
    kernel: &KernelMatrices,
    alpha: [f64; 2],
    sigma_eps2: f64,
) -> Result<SigmaFactors> {
    if !(sigma_eps2 > 0.0) {
        return Err(Error::InvalidInput(format!("sigma_eps2 must be positive, got {sigma_eps2}")));
    }
    let v_diag: Vec<f64> = moments
        .delta
        .iter()
        .zip(moments.trend_variance(alpha))
        .map(|(d, t)| d + t + sigma_eps2)
        .collect();
    let inv_v: Vec<f64> = v_diag.iter().map(|v| 1.0 / v).collect();
    let middle = &kernel.k_inv + moments.s_bar.weighted_gram(&inv_v);
    let middle = SpdFactor::new(&middle).ok_or(Error::Singular("Woodbury middle matrix"))?;
    Ok(SigmaFactors {
        v_diag,
        s_bar: moments.s_bar.clone(),
        middle,
    })
}

pub fn sigma_solve(factors: &SigmaFactors, rhs: &[f64]) -> Vec<f64> {
    factors.solve(rhs)
}
