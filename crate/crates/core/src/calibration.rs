//! Stochastic approximation EM for the model parameters.
//!
//! The complete-data log-likelihood of `(Y, U, η)` is linear in the
//! statistics `Ψ₁ = ηηᵀ`, `Ψ₂ = TᵀT`, `Ψ₃ = Tᵀ(y − Sᵀη)` and
//! `Ψ₄ = ηᵀSSᵀη − 2yᵀSᵀη` (with `T`, `S` at the shifted locations
//! `x_k − u_k`):
//!
//! ```text
//! Q(θ) = −(n/2) ln σ² − ½ ln det K − yᵀy/(2σ²)
//!        − ½⟨ψ₁, K⁻¹⟩ − αᵀψ₂α/(2σ²) + αᵀψ₃/σ² − ψ₄/(2σ²)
//! ```
//!
//! Each iteration runs a short Gibbs chain at the current parameters, blends
//! the chain averages into the running statistics with step `γ_ℓ`, then
//! maximizes `Q`: closed forms for `α`, `σ²`, `β` and one damped Newton step
//! on `φ`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::dense::SpdFactor;
use crate::error::{Error, Result};
use crate::geometry::FieldLayout;
use crate::model::{correlation, KernelMatrices, LocationNoiseModel, ModelParams, KERNEL_JITTER, PARAM_FLOOR};
use crate::moments::DEFAULT_MOMENT_SAMPLES;
use crate::sampler::{LatentState, Posterior, DEFAULT_PROPOSAL_VARIANCE};
use crate::scenario::Dataset;

/// Posterior expectations (or chain averages) of the sufficient statistics,
/// plus the running mean of `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub psi1: DMatrix<f64>,
    pub psi2: Matrix2<f64>,
    pub psi3: Vector2<f64>,
    pub psi4: f64,
    pub mu_eta: DVector<f64>,
}

impl SufficientStats {
    pub fn zeros(r: usize) -> Self {
        Self {
            psi1: DMatrix::zeros(r, r),
            psi2: Matrix2::zeros(),
            psi3: Vector2::zeros(),
            psi4: 0.0,
            mu_eta: DVector::zeros(r),
        }
    }

    fn add_scaled(&mut self, other: &SufficientStats, w: f64) {
        self.psi1 += &other.psi1 * w;
        self.psi2 += other.psi2 * w;
        self.psi3 += other.psi3 * w;
        self.psi4 += other.psi4 * w;
        self.mu_eta += &other.mu_eta * w;
    }
}

/// `Ψ₁..Ψ₄` of one latent state (`mu_eta` holds `η`).
pub fn sufficient_stats(state: &LatentState, post: &Posterior) -> SufficientStats {
    let r = post.layout.rank();
    let eta = &state.eta;
    let mut out = SufficientStats::zeros(r);
    out.psi1.ger(1.0, eta, eta, 0.0);
    for ((x, u), y) in post.reported.iter().zip(&state.u).zip(post.y) {
        let xs = x.shifted(*u);
        let t = Vector2::from(post.layout.trend(xs));
        let s_eta: f64 = post.layout.basis_sparse(xs).iter().map(|&(i, v)| v * eta[i]).sum();
        out.psi2 += t * t.transpose();
        out.psi3 += t * (y - s_eta);
        out.psi4 += s_eta * s_eta - 2.0 * y * s_eta;
    }
    out.mu_eta.copy_from(eta);
    out
}

/// Exact posterior expectations when locations are known (`U = 0`):
/// `E[ηηᵀ] = Γ + μμᵀ`.
pub fn exact_expected_stats(post: &Posterior) -> Result<SufficientStats> {
    let n = post.n();
    let zeros = vec![[0.0; 2]; n];
    let cond = post.eta_conditional(&zeros)?;
    let mu = &cond.mean;
    let mut second = cond.covariance();
    second.ger(1.0, mu, mu, 1.0);
    let (t, s) = post.shifted_design(&zeros);
    let mut out = SufficientStats::zeros(post.layout.rank());
    for ((tk, sk), y) in t.iter().zip(&s).zip(post.y) {
        let tk = Vector2::from(*tk);
        let s_mu: f64 = sk.iter().map(|&(i, v)| v * mu[i]).sum();
        let mut quad = 0.0;
        for &(a, va) in sk {
            for &(b, vb) in sk {
                quad += va * second[(a, b)] * vb;
            }
        }
        out.psi2 += tk * tk.transpose();
        out.psi3 += tk * (y - s_mu);
        out.psi4 += quad - 2.0 * y * s_mu;
    }
    out.psi1 = second;
    out.mu_eta.copy_from(mu);
    Ok(out)
}

/// `(1 − γ) prev + γ avg`, with `ψ₁` re-symmetrized.
pub fn saem_update_stats(prev: &SufficientStats, avg: &SufficientStats, gamma: f64) -> SufficientStats {
    let mut next = prev.clone();
    next.psi1 *= 1.0 - gamma;
    next.psi2 *= 1.0 - gamma;
    next.psi3 *= 1.0 - gamma;
    next.psi4 *= 1.0 - gamma;
    next.mu_eta *= 1.0 - gamma;
    next.add_scaled(avg, gamma);
    let sym = (&next.psi1 + next.psi1.transpose()) * 0.5;
    next.psi1 = sym;
    next
}

/// Closed-form maximizers `α = ψ₂⁻¹ψ₃` and
/// `σ² = (yᵀy + ⟨ψ₂, ααᵀ⟩ − 2⟨ψ₃, α⟩ + ψ₄) / n`.
pub fn update_alpha_sigma(stats: &SufficientStats, y: &[f64]) -> Result<([f64; 2], f64)> {
    let psi2 = stats.psi2;
    let det = psi2.determinant();
    let scale = psi2.abs().max();
    if !(det.abs() > 1e-12 * scale * scale) {
        return Err(Error::Singular("trend Gram matrix (collinear trend features)"));
    }
    let alpha = psi2.try_inverse().ok_or(Error::Singular("trend Gram matrix"))? * stats.psi3;
    let yty: f64 = y.iter().map(|v| v * v).sum();
    let quad = (alpha.transpose() * psi2 * alpha)[0];
    let sigma2 = (yty + quad - 2.0 * stats.psi3.dot(&alpha) + stats.psi4) / y.len() as f64;
    Ok(([alpha[0], alpha[1]], sigma2.max(PARAM_FLOOR)))
}

/// `β = r / ⟨ψ₁, K̃⁻¹⟩`.
pub fn update_beta(psi1: &DMatrix<f64>, k_tilde_inv: &DMatrix<f64>, r: usize) -> Result<f64> {
    let inner = psi1.dot(k_tilde_inv);
    if !(inner > 0.0) {
        return Err(Error::InvalidInput(format!(
            "⟨ψ₁, K̃⁻¹⟩ = {inner} is not positive; ψ₁ is not positive semi-definite"
        )));
    }
    Ok((r as f64 / inner).max(PARAM_FLOOR))
}

/// The `φ`-dependent part of `Q` at fixed `β` and `ψ₁`:
/// `−½ ln det K(β, φ) − ½⟨ψ₁, K(β, φ)⁻¹⟩`.
pub struct PhiObjective<'a> {
    pub dist: &'a DMatrix<f64>,
    pub psi1: &'a DMatrix<f64>,
    pub beta: f64,
}

impl PhiObjective<'_> {
    fn jittered(&self, phi: f64) -> DMatrix<f64> {
        let mut k = correlation(self.dist, phi);
        for i in 0..k.nrows() {
            k[(i, i)] += KERNEL_JITTER;
        }
        k
    }

    pub fn value(&self, phi: f64) -> Option<f64> {
        if !(phi > 0.0) {
            return None;
        }
        let r = self.dist.nrows() as f64;
        let chol = SpdFactor::new(&self.jittered(phi))?;
        let inner = chol.inverse().dot(self.psi1);
        Some(-0.5 * (chol.logdet() - r * self.beta.ln()) - 0.5 * self.beta * inner)
    }

    /// [`PhiObjective::value`] from a precomputed jittered inverse and log-determinant.
    pub fn value_from(&self, k_tilde_inv: &DMatrix<f64>, logdet_k_tilde: f64) -> f64 {
        let r = self.dist.nrows() as f64;
        -0.5 * (logdet_k_tilde - r * self.beta.ln()) - 0.5 * self.beta * k_tilde_inv.dot(self.psi1)
    }

    /// `dQ/dφ = Tr((β K̃⁻¹ ψ₁ − I) K̃⁻¹ (D ∘ K̃)) / (2φ²)`.
    pub fn gradient(&self, phi: f64) -> Option<f64> {
        let k_inv = SpdFactor::new(&self.jittered(phi))?.inverse();
        Some(self.gradient_from(phi, &k_inv))
    }

    /// [`PhiObjective::gradient`] given the jittered inverse at `phi`.
    pub fn gradient_from(&self, phi: f64, k_tilde_inv: &DMatrix<f64>) -> f64 {
        let dk = self.dist.component_mul(&correlation(self.dist, phi));
        // Tr(K̃⁻¹ψ₁K̃⁻¹E) = ⟨K̃⁻¹ψ₁K̃⁻¹, E⟩ and Tr(K̃⁻¹E) = ⟨K̃⁻¹, E⟩ for symmetric E.
        let sandwich = k_tilde_inv * self.psi1 * k_tilde_inv;
        (self.beta * sandwich.dot(&dk) - k_tilde_inv.dot(&dk)) / (2.0 * phi * phi)
    }
    /// Central second difference of [`PhiObjective::value`] with step `1e-4 φ`.
    pub fn hessian(&self, phi: f64, at: f64) -> Option<f64> {
        let h = 1e-4 * phi;
        Some((self.value(phi + h)? - 2.0 * at + self.value(phi - h)?) / (h * h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiUpdate {
    pub phi: f64,
    pub gradient: f64,
    pub hessian: f64,
    /// Accepted damping factor; `None` when `φ` was left unchanged.
    pub step_scale: Option<f64>,
}

/// Largest number of halvings of the `φ` step before giving up.
pub const MAX_PHI_HALVINGS: u32 = 20;

/// One damped Newton step on `φ` from the kernel at the previous parameters.
/// Falls back to a gradient step of length `φ/2` when the curvature is not
/// negative, halves the step until `Q` does not decrease, and keeps `φ` when
/// no step qualifies.
pub fn update_phi(psi1: &DMatrix<f64>, beta_new: f64, prev: &KernelMatrices, dist: &DMatrix<f64>) -> PhiUpdate {
    let phi_prev = prev.phi;
    let obj = PhiObjective { dist, psi1, beta: beta_new };
    let q0 = obj.value_from(&prev.k_tilde_inv, prev.logdet_k_tilde);
    let g = obj.gradient_from(phi_prev, &prev.k_tilde_inv);
    let h = obj.hessian(phi_prev, q0).unwrap_or(f64::NAN);
    let unchanged = PhiUpdate {
        phi: phi_prev,
        gradient: g,
        hessian: h,
        step_scale: None,
    };
    if g == 0.0 || !g.is_finite() || !q0.is_finite() {
        return unchanged;
    }
    let direction = if h < 0.0 { -g / h } else { 0.5 * phi_prev * g.signum() };
    let mut a = 1.0;
    for _ in 0..=MAX_PHI_HALVINGS {
        let cand = phi_prev + a * direction;
        if cand >= PARAM_FLOOR {
            if let Some(q) = obj.value(cand) {
                if q >= q0 {
                    return PhiUpdate {
                        phi: cand,
                        gradient: g,
                        hessian: h,
                        step_scale: Some(a),
                    };
                }
            }
        }
        a *= 0.5;
    }
    unchanged
}

/// `Q(θ)` at the statistics `stats`; `kernel` must be built from `θ`.
pub fn em_q_value(theta: &ModelParams, kernel: &KernelMatrices, stats: &SufficientStats, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let s2 = theta.sigma_eps2;
    let alpha = Vector2::new(theta.p0, theta.kappa);
    let yty: f64 = y.iter().map(|v| v * v).sum();
    let phi1 = -0.5 * n * s2.ln() - 0.5 * kernel.logdet_k - yty / (2.0 * s2);
    let quad = (alpha.transpose() * stats.psi2 * alpha)[0];
    phi1 - 0.5 * stats.psi1.dot(&kernel.k_inv) - quad / (2.0 * s2) + stats.psi3.dot(&alpha) / s2
        - stats.psi4 / (2.0 * s2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaemConfig {
    pub burn_in: usize,
    pub max_iter: usize,
    pub gamma_exponent: f64,
    pub m_start: usize,
    pub m_end: usize,
    pub sigma_q2: f64,
    pub moment_mc_samples: usize,
    pub seed: u64,
    /// Iterations compared by the early-stop rule.
    pub stop_window: usize,
    /// Early stop when every parameter moved less than this, relatively, over the window.
    pub stop_tolerance: f64,
}

impl Default for SaemConfig {
    fn default() -> Self {
        Self {
            burn_in: 400,
            max_iter: 900,
            gamma_exponent: 0.75,
            m_start: 1000,
            m_end: 10,
            sigma_q2: DEFAULT_PROPOSAL_VARIANCE,
            moment_mc_samples: DEFAULT_MOMENT_SAMPLES,
            seed: 0,
            stop_window: 50,
            stop_tolerance: 1e-4,
        }
    }
}

impl SaemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.burn_in >= self.max_iter {
            return bad(format!("burn_in {} must be below max_iter {}", self.burn_in, self.max_iter));
        }
        if self.m_end < 1 || self.m_start < 1 {
            return bad("chain lengths must be at least 1".into());
        }
        if !(self.gamma_exponent > 0.5 && self.gamma_exponent <= 1.0) {
            return bad(format!("gamma_exponent {} must lie in (1/2, 1]", self.gamma_exponent));
        }
        if !(self.sigma_q2 > 0.0) {
            return bad(format!("sigma_q2 must be positive, got {}", self.sigma_q2));
        }
        if self.moment_mc_samples < 1 {
            return bad("moment_mc_samples must be at least 1".into());
        }
        Ok(())
    }

    /// Step size `γ_ℓ` and chain length `M_ℓ` of iteration `iter` (1-based).
    pub fn schedule(&self, iter: usize) -> (f64, usize) {
        if iter <= self.burn_in {
            return (1.0, self.m_start);
        }
        let k = iter - self.burn_in;
        let gamma = (k as f64).powf(-self.gamma_exponent);
        let span = self.max_iter - self.burn_in;
        let frac = if span <= 1 { 1.0 } else { (k - 1) as f64 / (span - 1) as f64 };
        let m = self.m_start as f64 + (self.m_end as f64 - self.m_start as f64) * frac;
        (gamma, (m.round() as usize).max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub theta: ModelParams,
    pub gamma: f64,
    pub sweeps: usize,
    /// `Q` at the updated parameters and the current statistics.
    pub q_value: f64,
    /// `Q` at the previous parameters and the current statistics.
    pub q_previous: f64,
    pub accept_rate: Option<f64>,
    pub phi_step_scale: Option<f64>,
}

/// Relative slack allowed on the surrogate ascent check, for rounding in `Q`.
pub const ASCENT_TOLERANCE: f64 = 1e-9;

impl TraceRow {
    pub fn ascent_holds(&self) -> bool {
        self.q_value >= self.q_previous - ASCENT_TOLERANCE * self.q_previous.abs().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SaemTrace {
    pub rows: Vec<TraceRow>,
}

impl SaemTrace {
    pub fn ascent_violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.ascent_holds()).count()
    }

    /// Mean acceptance rate over iterations that ran a Metropolis step.
    pub fn mean_acceptance(&self) -> Option<f64> {
        let rates: Vec<f64> = self.rows.iter().filter_map(|r| r.accept_rate).collect();
        (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,p0,kappa,sigma_eps2,beta,phi,q_value,accept_rate\n");
        for r in &self.rows {
            let t = &r.theta;
            let acc = r.accept_rate.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iter, t.p0, t.kappa, t.sigma_eps2, t.beta, t.phi, r.q_value, acc
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub theta: ModelParams,
    pub mu_eta: DVector<f64>,
    pub trace: SaemTrace,
    pub stats: SufficientStats,
}

/// Starting point: OLS trend on the reported locations, the residual
/// variance split evenly between nugget and field, `φ = τ`.
pub fn initial_params(data: &Dataset, layout: &FieldLayout) -> Result<ModelParams> {
    let n = data.len();
    let mut gram = Matrix2::zeros();
    let mut rhs = Vector2::zeros();
    for (x, y) in data.reported.iter().zip(&data.y) {
        let t = Vector2::from(layout.trend(*x));
        gram += t * t.transpose();
        rhs += t * *y;
    }
    let alpha = gram
        .try_inverse()
        .filter(|_| gram.determinant().abs() > 1e-12 * gram.abs().max().powi(2))
        .ok_or(Error::Singular("trend Gram matrix (collinear trend features)"))?
        * rhs;
    let rss: f64 = data
        .reported
        .iter()
        .zip(&data.y)
        .map(|(x, y)| {
            let t = layout.trend(*x);
            (y - t[0] * alpha[0] - t[1] * alpha[1]).powi(2)
        })
        .sum();
    let var = (rss / (n.saturating_sub(2).max(1)) as f64).max(1e-6);
    Ok(ModelParams {
        p0: alpha[0],
        kappa: alpha[1],
        sigma_eps2: 0.5 * var,
        beta: 2.0 / var,
        phi: layout.basis.tau(),
    })
}

fn max_relative_change(a: &ModelParams, b: &ModelParams) -> f64 {
    a.as_array()
        .iter()
        .zip(b.as_array())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-12))
        .fold(0.0, f64::max)
}

/// Run SAEM on `data` (reported locations) for the location-error law `noise`.
///
/// With `noise` a Dirac mass the chain is degenerate in `U` and the E-step
/// uses the exact Gaussian posterior of `η`; this is the classical fixed rank
/// kriging EM.
pub fn calibrate(
    data: &Dataset,
    layout: &FieldLayout,
    noise: &LocationNoiseModel,
    config: &SaemConfig,
) -> Result<Calibration> {
    calibrate_from(data, layout, noise, config, initial_params(data, layout)?, None)
}

/// [`calibrate`] from explicit starting parameters and, optionally, an
/// initial latent state for the chain (zero offsets and weights otherwise).
pub fn calibrate_from(
    data: &Dataset,
    layout: &FieldLayout,
    noise: &LocationNoiseModel,
    config: &SaemConfig,
    theta0: ModelParams,
    state0: Option<LatentState>,
) -> Result<Calibration> {
    config.validate()?;
    theta0.validate()?;
    if data.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "calibration needs at least 3 observations, got {}",
            data.len()
        )));
    }
    let n = data.len();
    let r = layout.rank();
    let dist = layout.basis.center_distances();
    let mut theta = theta0;
    let mut kernel = KernelMatrices::from_distances(&dist, theta.beta, theta.phi)?;
    let mut stats = SufficientStats::zeros(r);
    let mut state = state0.unwrap_or_else(|| LatentState::zeros(n, r));
    if state.u.len() != n || state.eta.len() != r {
        return Err(Error::InvalidInput(format!(
            "initial state has {} offsets and {} weights, expected {n} and {r}",
            state.u.len(),
            state.eta.len()
        )));
    }
    let mut trace = SaemTrace::default();

    for iter in 1..=config.max_iter {
        let (gamma, sweeps) = config.schedule(iter);
        let post = Posterior {
            y: &data.y,
            reported: &data.reported,
            layout,
            theta: &theta,
            kernel: &kernel,
            noise,
        };
        let (avg, accept_rate, used) = if noise.is_exact() {
            (exact_expected_stats(&post)?, None, 0)
        } else {
            let mut sum = SufficientStats::zeros(r);
            let (last, chain) = post.run_chain_with(
                state.clone(),
                sweeps,
                config.sigma_q2,
                config.seed,
                iter as u64,
                |s| sum.add_scaled(&sufficient_stats(s, &post), 1.0),
            )?;
            state = last;
            let mut avg = SufficientStats::zeros(r);
            avg.add_scaled(&sum, 1.0 / sweeps as f64);
            (avg, chain.acceptance_rate(), sweeps)
        };
        stats = saem_update_stats(&stats, &avg, gamma);

        let q_previous = em_q_value(&theta, &kernel, &stats, &data.y);
        let (alpha, sigma_eps2) = update_alpha_sigma(&stats, &data.y)?;
        let beta = update_beta(&stats.psi1, &kernel.k_tilde_inv, r)?;
        let phi_step = update_phi(&stats.psi1, beta, &kernel, &dist);
        let next = ModelParams {
            p0: alpha[0],
            kappa: alpha[1],
            sigma_eps2,
            beta,
            phi: phi_step.phi,
        }
        .floored();
        kernel = KernelMatrices::from_distances(&dist, next.beta, next.phi)?;
        let q_value = em_q_value(&next, &kernel, &stats, &data.y);
        theta = next;
        trace.rows.push(TraceRow {
            iter,
            theta,
            gamma,
            sweeps: used,
            q_value,
            q_previous,
            accept_rate,
            phi_step_scale: phi_step.step_scale,
        });

        if config.stop_window > 0 && iter > config.stop_window {
            let before = &trace.rows[iter - 1 - config.stop_window].theta;
            if max_relative_change(&theta, before) < config.stop_tolerance {
                break;
            }
        }
    }

    Ok(Calibration {
        theta,
        mu_eta: stats.mu_eta.clone(),
        trace,
        stats,
    })
}
