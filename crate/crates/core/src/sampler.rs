//! Metropolis-within-Gibbs chain on the posterior of `(U, η)` given `Y`.
//!
//! One sweep moves every location error `u_k` by a single random-walk
//! Metropolis step against `π(u_k | η)`, then redraws `η` exactly from its
//! Gaussian conditional `N(μ(U), Γ(U))`. The location updates depend only on
//! the previous `η` and on disjoint `u_k`, so they run in parallel; each one
//! draws from its own substream keyed by `(seed, iteration, sweep, k)`.

use nalgebra::{DMatrix, DVector};

use crate::dense::SpdFactor;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{FieldLayout, Location, SparseBasis};
use crate::model::{noise_logdensity, KernelMatrices, LocationNoiseModel, ModelParams};
use crate::rng::{self, tag};

/// Default proposal variance of the location random walk (m²).
pub const DEFAULT_PROPOSAL_VARIANCE: f64 = 10.0;

/// Missing data of the complete-data model.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// Location error of each observation, `reported - true`.
    pub u: Vec<[f64; 2]>,
    pub eta: DVector<f64>,
}

impl LatentState {
    /// `U = 0`, `η = 0`.
    pub fn zeros(n: usize, r: usize) -> Self {
        Self {
            u: vec![[0.0; 2]; n],
            eta: DVector::zeros(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainStats {
    pub accepted: Vec<u64>,
    pub proposed: Vec<u64>,
    pub sweeps: u64,
}

impl ChainStats {
    pub fn new(n: usize) -> Self {
        Self {
            accepted: vec![0; n],
            proposed: vec![0; n],
            sweeps: 0,
        }
    }

    pub fn absorb(&mut self, other: &ChainStats) {
        if self.accepted.is_empty() {
            self.accepted = vec![0; other.accepted.len()];
            self.proposed = vec![0; other.proposed.len()];
        }
        for (a, b) in self.accepted.iter_mut().zip(&other.accepted) {
            *a += b;
        }
        for (a, b) in self.proposed.iter_mut().zip(&other.proposed) {
            *a += b;
        }
        self.sweeps += other.sweeps;
    }

    /// Fraction of accepted location moves; `None` when nothing was proposed.
    pub fn acceptance_rate(&self) -> Option<f64> {
        let p: u64 = self.proposed.iter().sum();
        (p > 0).then(|| self.accepted.iter().sum::<u64>() as f64 / p as f64)
    }
}

/// Gaussian conditional of `η` given `U`, kept in precision form.
pub struct EtaConditional {
    pub mean: DVector<f64>,
    precision: SpdFactor,
}

impl EtaConditional {
    /// `Γ = (σ⁻² S Sᵀ + K⁻¹)⁻¹`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision.inverse()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let r = self.mean.len();
        let z = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
        // Precision = L Lᵀ, so L⁻ᵀ z has covariance Γ.
        &self.mean + self.precision.solve_lower_transpose(&z)
    }
}

/// The posterior `π_θ(u, η)` for fixed data and parameters.
#[derive(Clone, Copy)]
pub struct Posterior<'a> {
    pub y: &'a [f64],
    pub reported: &'a [Location],
    pub layout: &'a FieldLayout,
    pub theta: &'a ModelParams,
    pub kernel: &'a KernelMatrices,
    pub noise: &'a LocationNoiseModel,
}

impl<'a> Posterior<'a> {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn mean_at(&self, x: Location, eta: &DVector<f64>) -> f64 {
        let t = self.layout.trend(x);
        let alpha = self.theta.alpha();
        let mut m = t[0] * alpha[0] + t[1] * alpha[1];
        for (i, s) in self.layout.basis_sparse(x) {
            m += s * eta[i];
        }
        m
    }

    /// Unnormalized `ln π̃_k(u | η)`, in residual form:
    /// `-(y_k - αᵀt(x_k-u) - ηᵀs(x_k-u))² / (2σ_ε²) + ln g(u)`.
    pub fn log_cond_location(&self, k: usize, u: [f64; 2], eta: &DVector<f64>) -> Result<f64> {
        let resid = self.y[k] - self.mean_at(self.reported[k].shifted(u), eta);
        Ok(-resid * resid / (2.0 * self.theta.sigma_eps2) + noise_logdensity(self.noise, u)?)
    }

    /// Trend rows and basis columns at the shifted locations `x_k - u_k`.
    pub fn shifted_design(&self, u: &[[f64; 2]]) -> (Vec<[f64; 2]>, Vec<SparseBasis>) {
        self.reported
            .iter()
            .zip(u)
            .map(|(x, uk)| {
                let xs = x.shifted(*uk);
                (self.layout.trend(xs), self.layout.basis_sparse(xs))
            })
            .unzip()
    }

    /// `μ(u)` and the Cholesky factor of `Γ(u)⁻¹`.
    pub fn eta_conditional(&self, u: &[[f64; 2]]) -> Result<EtaConditional> {
        let (t, s) = self.shifted_design(u);
        let inv_s2 = 1.0 / self.theta.sigma_eps2;
        let alpha = self.theta.alpha();
        let r = self.layout.rank();
        let mut precision = self.kernel.k_inv.clone();
        let mut rhs = DVector::zeros(r);
        for ((tk, sk), yk) in t.iter().zip(&s).zip(self.y) {
            let e = yk - (tk[0] * alpha[0] + tk[1] * alpha[1]);
            for &(a, va) in sk {
                rhs[a] += inv_s2 * va * e;
                for &(b, vb) in sk {
                    precision[(a, b)] += inv_s2 * va * vb;
                }
            }
        }
        let precision = SpdFactor::new(&precision).ok_or(Error::NotPositiveDefinite {
            what: "conditional precision of the basis weights",
        })?;
        let mean = precision.solve(&rhs);
        Ok(EtaConditional { mean, precision })
    }

    /// One Gibbs sweep from `state`. `sweep` indexes the substreams together
    /// with `(seed, iteration)`.
    pub fn gibbs_sweep(
        &self,
        state: &LatentState,
        sigma_q2: f64,
        seed: u64,
        iteration: u64,
        sweep: u64,
    ) -> Result<(LatentState, ChainStats)> {
        let n = self.n();
        let mut stats = ChainStats::new(n);
        stats.sweeps = 1;
        let u = if self.noise.is_exact() {
            vec![[0.0; 2]; n]
        } else {
            let sigma_q = sigma_q2.sqrt();
            let moves: Vec<([f64; 2], bool)> = (0..n)
                .into_par_iter()
                .map(|k| {
                    let mut rng = rng::stream(seed, &[tag::CHAIN_LOCATION, iteration, sweep, k as u64]);
                    let current = state.u[k];
                    let z0: f64 = rng.sample(StandardNormal);
                    let z1: f64 = rng.sample(StandardNormal);
                    let proposal = [current[0] + sigma_q * z0, current[1] + sigma_q * z1];
                    let log_ratio = self.log_cond_location(k, proposal, &state.eta)?
                        - self.log_cond_location(k, current, &state.eta)?;
                    let accept = metropolis_accepts(log_ratio, rng.random::<f64>());
                    Ok(if accept { (proposal, true) } else { (current, false) })
                })
                .collect::<Result<_>>()?;
            let mut u = Vec::with_capacity(n);
            for (k, (uk, acc)) in moves.into_iter().enumerate() {
                u.push(uk);
                stats.proposed[k] = 1;
                stats.accepted[k] = u64::from(acc);
            }
            u
        };
        let cond = self.eta_conditional(&u)?;
        let mut eta_rng = rng::stream(seed, &[tag::CHAIN_ETA, iteration, sweep]);
        let eta = cond.sample(&mut eta_rng);
        Ok((LatentState { u, eta }, stats))
    }

    /// Run `sweeps` sweeps from `init`, handing every state to `visit`.
    /// Returns the final state for warm-starting the next chain.
    pub fn run_chain_with<F>(
        &self,
        init: LatentState,
        sweeps: usize,
        sigma_q2: f64,
        seed: u64,
        iteration: u64,
        mut visit: F,
    ) -> Result<(LatentState, ChainStats)>
    where
        F: FnMut(&LatentState),
    {
        if sweeps == 0 {
            return Err(Error::InvalidInput("a chain needs at least one sweep".into()));
        }
        let mut stats = ChainStats::new(self.n());
        let mut state = init;
        for t in 0..sweeps {
            let (next, s) = self.gibbs_sweep(&state, sigma_q2, seed, iteration, t as u64)?;
            stats.absorb(&s);
            visit(&next);
            state = next;
        }
        Ok((state, stats))
    }

    /// Collect `sweeps` successive states.
    pub fn run_chain(
        &self,
        init: LatentState,
        sweeps: usize,
        sigma_q2: f64,
        seed: u64,
        iteration: u64,
    ) -> Result<(Vec<LatentState>, ChainStats)> {
        let mut samples = Vec::with_capacity(sweeps);
        let (_, stats) =
            self.run_chain_with(init, sweeps, sigma_q2, seed, iteration, |s| samples.push(s.clone()))?;
        Ok((samples, stats))
    }
}

/// Accept when `uniform < exp(min(0, log_ratio))`.
pub fn metropolis_accepts(log_ratio: f64, uniform: f64) -> bool {
    log_ratio >= 0.0 || uniform < log_ratio.exp()
}

/// Acceptance probability `min(1, exp(log_ratio))`.
pub fn acceptance_probability(log_ratio: f64) -> f64 {
    log_ratio.min(0.0).exp()
}
