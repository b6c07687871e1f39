//! Oracles shared by integration tests: brute-force quadrature of a tiny
//! posterior and Monte Carlo ensembles computed without the library's
//! moment and solver code.
#![allow(dead_code)]

use frkloc::geometry::BasisSet;
use frkloc::{FieldLayout, KernelMatrices, Location, LocationNoiseModel, ModelParams};

/// Two observations, one basis function.
pub struct Toy {
    pub layout: FieldLayout,
    pub theta: ModelParams,
    pub kernel: KernelMatrices,
    pub noise: LocationNoiseModel,
    pub reported: Vec<Location>,
    pub y: Vec<f64>,
}

pub fn toy() -> Toy {
    let bs = Location::new(0.0, 0.0);
    let basis = BasisSet::from_centers(vec![Location::new(30.0, 30.0)], 120.0).unwrap();
    let layout = FieldLayout::new(basis, bs);
    let theta = ModelParams {
        p0: -30.0,
        kappa: 3.5,
        sigma_eps2: 1.0,
        beta: 0.1,
        phi: 50.0,
    };
    let kernel = KernelMatrices::new(&layout.basis, theta.beta, theta.phi).unwrap();
    let noise = LocationNoiseModel::new(10.0).unwrap();
    let reported = vec![Location::new(40.0, 5.0), Location::new(-10.0, 55.0)];
    // Data generated from true locations offset from the reported ones and a
    // nonzero basis weight, so both posterior means are well away from zero.
    let truth = [Location::new(25.0, 0.0), Location::new(-4.0, 40.0)];
    let eta = -6.0;
    let y = truth
        .iter()
        .map(|&x| {
            let t = layout.trend(x);
            let s = layout.basis.basis_vector(x)[0];
            t[0] * theta.p0 + t[1] * theta.kappa + s * eta
        })
        .collect();
    Toy {
        layout,
        theta,
        kernel,
        noise,
        reported,
        y,
    }
}

/// Posterior moments of the toy by a tensor trapezoid rule over the four
/// location-error coordinates, with `η` integrated analytically.
#[derive(Debug, Clone, Copy)]
pub struct ToyMoments {
    pub eta: f64,
    pub u: [[f64; 2]; 2],
}

pub fn toy_quadrature(toy: &Toy, nodes: usize, half_width: f64) -> ToyMoments {
    let sg = toy.noise.sigma_g;
    let s2 = toy.theta.sigma_eps2;
    let k = toy.kernel.k[(0, 0)];
    let alpha = toy.theta.alpha();
    let grid: Vec<f64> = (0..nodes)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (nodes - 1) as f64)
        .collect();
    // Per-observation quantities on the 2-D grid of its own offset.
    let per_obs: Vec<Vec<(f64, f64, f64, [f64; 2])>> = (0..2)
        .map(|j| {
            let mut out = Vec::with_capacity(nodes * nodes);
            for &a in &grid {
                for &b in &grid {
                    let x = Location::new(toy.reported[j].x - a, toy.reported[j].y - b);
                    let t = toy.layout.trend(x);
                    let s = toy.layout.basis.basis_vector(x)[0];
                    let e = toy.y[j] - (t[0] * alpha[0] + t[1] * alpha[1]);
                    let log_g = -(a * a + b * b) / (2.0 * sg * sg);
                    out.push((s, e, log_g, [a, b]));
                }
            }
            out
        })
        .collect();
    let mut logs = Vec::with_capacity(per_obs[0].len() * per_obs[1].len());
    for p in &per_obs[0] {
        for q in &per_obs[1] {
            let (s1, e1, g1, _) = *p;
            let (s2b, e2, g2, _) = *q;
            let ss = s1 * s1 + s2b * s2b;
            let se = s1 * e1 + s2b * e2;
            let ee = e1 * e1 + e2 * e2;
            // y | u ~ N(Tα, σ²I + k s sᵀ), written through its rank-one form.
            let denom = s2 + k * ss;
            let quad = (ee - k * se * se / denom) / s2;
            let log_det = s2.ln() + denom.ln();
            logs.push(g1 + g2 - 0.5 * quad - 0.5 * log_det);
        }
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut eta = 0.0;
    let mut u = [[0.0; 2]; 2];
    let m = per_obs[1].len();
    for (idx, l) in logs.iter().enumerate() {
        let w = (l - max).exp();
        let (s1, e1, _, u1) = per_obs[0][idx / m];
        let (s2b, e2, _, u2) = per_obs[1][idx % m];
        let gamma = 1.0 / ((s1 * s1 + s2b * s2b) / s2 + 1.0 / k);
        let mu = gamma * (s1 * e1 + s2b * e2) / s2;
        total += w;
        eta += w * mu;
        for c in 0..2 {
            u[0][c] += w * u1[c];
            u[1][c] += w * u2[c];
        }
    }
    for row in &mut u {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    ToyMoments { eta: eta / total, u }
}

pub fn relative_error(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs() / exact.abs()
}

/// `‖a − b‖ / ‖b‖` over all coordinates of the location means.
pub fn location_relative_error(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..2 {
        for c in 0..2 {
            num += (a[j][c] - b[j][c]).powi(2);
            den += b[j][c].powi(2);
        }
    }
    (num / den).sqrt()
}
