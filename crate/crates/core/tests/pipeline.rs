use frkloc::harness::{evaluate_methods, rmse, zone_breakdown, ExperimentReport, Method};
use frkloc::moments::{assemble_sigma_factors, estimate_smeared_moments};
use frkloc::rng;
use frkloc::scenario::generate_dataset;
use frkloc::{BoundingBox, KernelMatrices, Location, LocationNoiseModel, RunConfig};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn small_config(sigma_g: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scenario.area = BoundingBox::new(Location::new(0.0, 0.0), Location::new(300.0, 300.0)).unwrap();
    cfg.scenario.bs = Location::new(150.0, 150.0);
    cfg.scenario.n = 250;
    cfg.tau = 75.0;
    cfg.saem.burn_in = 5;
    cfg.saem.max_iter = 15;
    cfg.saem.m_start = 4;
    cfg.saem.m_end = 2;
    cfg.saem.moment_mc_samples = 100;
    cfg.set_sigma_g(sigma_g);
    cfg.set_seed(9);
    cfg
}

#[test]
fn without_location_noise_ignoring_it_is_the_exact_method() {
    let cfg = small_config(0.0);
    let data = generate_dataset(&cfg.scenario).unwrap();
    assert_eq!(data.reported, data.true_loc.clone().unwrap());
    let eval = evaluate_methods(&data, &Method::ALL, &cfg, &cfg.layout().unwrap()).unwrap();
    assert_eq!(eval.folds.len(), 5);
    for m in Method::ALL {
        assert_eq!(eval.fold_rmse(m).len(), 5);
    }
    for f in &eval.folds {
        let exact = &f.predictions[&Method::FrkExact];
        assert_eq!(exact, &f.predictions[&Method::FrkIgnore]);
        assert_eq!(exact, &f.predictions[&Method::Blup]);
    }
}

#[test]
fn evaluation_is_reproducible() {
    let cfg = small_config(20.0);
    let data = generate_dataset(&cfg.scenario).unwrap();
    let layout = cfg.layout().unwrap();
    let a = evaluate_methods(&data, &[Method::Blup, Method::Cep], &cfg, &layout).unwrap();
    let b = evaluate_methods(&data, &[Method::Cep, Method::Blup], &cfg, &layout).unwrap();
    for m in [Method::Blup, Method::Cep] {
        assert_eq!(a.fold_rmse(m), b.fold_rmse(m));
    }
}

/// Perturbing the BLUP weights away from `Σ⁻¹ S̄ᵀ K s(x₀)` raises the mean
/// squared error over an ensemble simulated directly from the model.
#[test]
fn blup_weights_minimize_the_ensemble_error() {
    let cfg = small_config(15.0);
    let layout = cfg.layout().unwrap();
    let theta = cfg.scenario.truth;
    let kernel = KernelMatrices::new(&layout.basis, theta.beta, theta.phi).unwrap();
    let noise = LocationNoiseModel::new(15.0).unwrap();
    let xs = [
        Location::new(100.0, 110.0),
        Location::new(130.0, 90.0),
        Location::new(120.0, 140.0),
        Location::new(90.0, 150.0),
        Location::new(160.0, 120.0),
    ];
    let x0 = Location::new(120.0, 120.0);
    let mut rng = rng::stream(4, &[0]);
    let moments = estimate_smeared_moments(&xs, &layout, &kernel, &noise, 50_000, &mut rng).unwrap();
    let factors = assemble_sigma_factors(&moments, &kernel, theta.alpha(), theta.sigma_eps2).unwrap();
    let s0 = DVector::from_vec(layout.basis.basis_vector(x0));
    let gamma: Vec<f64> = moments.s_bar.tr_mul_vec(&(&kernel.k * &s0));
    let lambda = DVector::from_vec(factors.solve(&gamma));
    let mean: Vec<f64> = moments.trend_mean(theta.alpha());

    let draws = 20_000;
    let mut sim = rng::stream(4, &[1]);
    let mut residuals = Vec::with_capacity(draws);
    let mut errors = Vec::with_capacity(draws);
    for _ in 0..draws {
        let eta = kernel.sample_weights(&mut sim);
        let z0 = s0.dot(&eta);
        let r = DVector::from_fn(xs.len(), |k, _| {
            let u = noise.sample(&mut sim);
            let x = xs[k].shifted(u);
            let t = layout.trend(x);
            let s = DVector::from_vec(layout.basis.basis_vector(x));
            let e: f64 = sim.sample(StandardNormal);
            t[0] * theta.p0 + t[1] * theta.kappa + s.dot(&eta) + theta.sigma_eps2.sqrt() * e - mean[k]
        });
        errors.push(z0 - lambda.dot(&r));
        residuals.push(r);
    }
    let mse = |w: &DVector<f64>| {
        residuals
            .iter()
            .zip(&errors)
            .map(|(r, e)| (e + lambda.dot(r) - w.dot(r)).powi(2))
            .sum::<f64>()
            / draws as f64
    };
    let best = mse(&lambda);
    let scale = lambda.norm().max(0.05);
    for k in 0..xs.len() {
        for sign in [-1.0, 1.0] {
            let mut w = lambda.clone();
            w[k] += sign * 0.2 * scale;
            assert!(mse(&w) > best, "perturbing weight {k} lowered the error");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn a_single_ring_reproduces_the_global_rmse(
        pts in prop::collection::vec((0.0f64..500.0, 0.0f64..500.0, -50.0f64..50.0, -50.0f64..50.0), 1..40),
    ) {
        let locs: Vec<Location> = pts.iter().map(|p| Location::new(p.0, p.1)).collect();
        let preds: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let actual: Vec<f64> = pts.iter().map(|p| p.3).collect();
        let zones = zone_breakdown(&locs, &preds, &actual, Location::new(250.0, 250.0), &[]).unwrap();
        prop_assert_eq!(zones.len(), 1);
        prop_assert_eq!(zones[0].count, pts.len());
        let global = rmse(&preds, &actual).unwrap();
        prop_assert!((zones[0].rmse.unwrap() - global).abs() <= 1e-12 * (1.0 + global));
        let split = zone_breakdown(&locs, &preds, &actual, Location::new(250.0, 250.0), &[100.0, 200.0]).unwrap();
        prop_assert_eq!(split.iter().map(|z| z.count).sum::<usize>(), pts.len());
    }

    #[test]
    fn rmse_is_nonnegative_and_shift_equivariant(
        a in prop::collection::vec(-100.0f64..100.0, 1..30),
        c in -20.0f64..20.0,
    ) {
        let shifted: Vec<f64> = a.iter().map(|v| v + c).collect();
        let e = rmse(&shifted, &a).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!((e - c.abs()).abs() <= 1e-9 * (1.0 + c.abs()));
    }

    #[test]
    fn every_report_cell_has_one_row_per_fold(
        folds in 2usize..8,
        values in prop::collection::vec(0.0f64..10.0, 1..4),
    ) {
        let mut report = ExperimentReport::new("tau");
        for (i, _) in values.iter().enumerate() {
            for m in [Method::FrkExact, Method::Cep] {
                let rmse: Vec<f64> = (0..folds).map(|f| (i + f) as f64).collect();
                report.push(&values[i].to_string(), m, &rmse);
            }
        }
        let csv = report.to_csv();
        for (v, m) in report.cells() {
            prop_assert_eq!(report.fold_values(&v, m).len(), folds);
            let prefix = format!("{v},{m},");
            let lines = csv.lines().filter(|l| l.starts_with(&prefix)).count();
            prop_assert_eq!(lines, folds + 2);
        }
    }
}
