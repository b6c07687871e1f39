//! k-fold evaluation of the four compared methods and the experiment sweeps.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::calibration::{calibrate, Calibration, SaemConfig};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{distance, FieldLayout, Location};
use crate::model::LocationNoiseModel;
use crate::prediction::{build_context, predict_many, Predictor};
use crate::rng::{derive_seed, tag};
use crate::scenario::{fold_indices, generate_dataset, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Classical fixed rank kriging on the true locations.
    FrkExact,
    /// Classical fixed rank kriging on the reported locations taken as exact.
    FrkIgnore,
    Blup,
    Cep,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FrkExact, Method::FrkIgnore, Method::Blup, Method::Cep];

    pub fn name(self) -> &'static str {
        match self {
            Method::FrkExact => "frk-exact",
            Method::FrkIgnore => "frk-ignore",
            Method::Blup => "blup",
            Method::Cep => "cep",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}' (frk-exact, frk-ignore, blup, cep)")))
    }
}

/// Parse a comma separated method list.
pub fn parse_methods(text: &str) -> Result<Vec<Method>> {
    let mut out: Vec<Method> = text.split(',').map(|m| m.trim().parse()).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn rmse(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    if predictions.len() != actuals.len() || predictions.is_empty() {
        return Err(Error::InvalidInput(format!(
            "rmse needs equal nonzero lengths, got {} and {}",
            predictions.len(),
            actuals.len()
        )));
    }
    let sse: f64 = predictions.iter().zip(actuals).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub test: Dataset,
    pub predictions: BTreeMap<Method, Vec<f64>>,
    pub rmse: BTreeMap<Method, f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub methods: Vec<Method>,
    pub folds: Vec<FoldResult>,
}

impl Evaluation {
    pub fn fold_rmse(&self, method: Method) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.rmse.get(&method).copied()).collect()
    }

    /// Test locations, predictions and observations pooled over folds.
    pub fn pooled(&self, method: Method) -> (Vec<Location>, Vec<f64>, Vec<f64>) {
        let mut locs = Vec::new();
        let mut preds = Vec::new();
        let mut actual = Vec::new();
        for f in &self.folds {
            if let Some(p) = f.predictions.get(&method) {
                locs.extend_from_slice(f.test.evaluation_locations());
                preds.extend_from_slice(p);
                actual.extend_from_slice(&f.test.y);
            }
        }
        (locs, preds, actual)
    }
}

fn saem_for_fold(cfg: &RunConfig, fold: usize) -> SaemConfig {
    SaemConfig {
        seed: derive_seed(cfg.seed, &[tag::CALIBRATION, fold as u64]),
        ..cfg.saem.clone()
    }
}

fn fit_and_predict(
    learn: &Dataset,
    targets: &[Location],
    layout: &FieldLayout,
    noise: &LocationNoiseModel,
    cfg: &RunConfig,
    fold: usize,
    which: Predictor,
) -> Result<Vec<Vec<f64>>> {
    let saem = saem_for_fold(cfg, fold);
    let Calibration { theta, mu_eta, .. } = calibrate(learn, layout, noise, &saem)?;
    let mu = (which != Predictor::Blup).then_some(mu_eta);
    let seed = derive_seed(cfg.seed, &[tag::PREDICTION, fold as u64]);
    let ctx = build_context(learn, &theta, layout, noise, mu, saem.moment_mc_samples, seed)?;
    predict_many(targets, &ctx, which)
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

fn evaluate_fold(data: &Dataset, methods: &[Method], cfg: &RunConfig, layout: &FieldLayout, fold: usize) -> Result<FoldResult> {
    let (learn_idx, test_idx) = fold_indices(data.len(), cfg.folds, fold, derive_seed(cfg.seed, &[tag::SPLIT]))?;
    let mut seen = vec![false; data.len()];
    for &i in &learn_idx {
        seen[i] = true;
    }
    if test_idx.iter().any(|&i| seen[i]) {
        return Err(Error::InvalidInput("learning and test rows overlap".into()));
    }
    let learn = data.subset(&learn_idx);
    let test = data.subset(&test_idx);
    let targets = test.evaluation_locations();
    let exact = LocationNoiseModel::exact();
    let mut predictions = BTreeMap::new();
    if methods.contains(&Method::FrkExact) {
        let truth = learn.with_true_locations()?;
        let p = fit_and_predict(&truth, targets, layout, &exact, cfg, fold, Predictor::Blup)?;
        predictions.insert(Method::FrkExact, column(&p, 0));
    }
    if methods.contains(&Method::FrkIgnore) {
        let p = fit_and_predict(&learn, targets, layout, &exact, cfg, fold, Predictor::Blup)?;
        predictions.insert(Method::FrkIgnore, column(&p, 0));
    }
    let want_blup = methods.contains(&Method::Blup);
    let want_cep = methods.contains(&Method::Cep);
    if want_blup || want_cep {
        let which = match (want_blup, want_cep) {
            (true, true) => Predictor::Both,
            (true, false) => Predictor::Blup,
            _ => Predictor::Cep,
        };
        let p = fit_and_predict(&learn, targets, layout, &cfg.noise(), cfg, fold, which)?;
        let mut j = 0;
        if want_blup {
            predictions.insert(Method::Blup, column(&p, 0));
            j = 1;
        }
        if want_cep {
            predictions.insert(Method::Cep, column(&p, j));
        }
    }
    let rmse = predictions
        .iter()
        .map(|(m, p)| Ok((*m, rmse(p, &test.y)?)))
        .collect::<Result<_>>()?;
    Ok(FoldResult {
        fold,
        test,
        predictions,
        rmse,
    })
}

/// Cross-validate `methods` on `data`: calibrate on each learning split and
/// predict at the test rows' true locations. `blup` and `cep` share one
/// calibration per fold.
pub fn evaluate_methods(data: &Dataset, methods: &[Method], cfg: &RunConfig, layout: &FieldLayout) -> Result<Evaluation> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidInput("no methods to evaluate".into()));
    }
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let folds = (0..cfg.folds)
        .into_par_iter()
        .map(|fold| {
            evaluate_fold(data, &methods, cfg, layout, fold).map_err(|e| Error::Fold {
                fold,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { methods, folds })
}

/// Per-fold RMSE of a single method.
pub fn evaluate_method(data: &Dataset, method: Method, cfg: &RunConfig) -> Result<Vec<f64>> {
    Ok(evaluate_methods(data, &[method], cfg, &cfg.layout()?)?.fold_rmse(method))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub sweep_value: String,
    pub method: Method,
    pub fold: usize,
    pub rmse_db: f64,
}

/// Per-fold RMSE rows; mean and standard deviation rows are derived.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub variable: String,
    pub rows: Vec<ReportRow>,
    /// Basis size `r` per sweep value, when the sweep changes the basis.
    pub basis_sizes: Vec<(String, usize)>,
}

pub const REPORT_HEADER: &str = "sweep_var,method,fold,rmse_db";

pub fn format_value(v: f64) -> String {
    v.to_string()
}

impl ExperimentReport {
    pub fn new(variable: &str) -> Self {
        Self {
            variable: variable.to_string(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, sweep_value: &str, method: Method, fold_rmse: &[f64]) {
        for (fold, &rmse_db) in fold_rmse.iter().enumerate() {
            self.rows.push(ReportRow {
                sweep_value: sweep_value.to_string(),
                method,
                fold,
                rmse_db,
            });
        }
    }

    /// `(sweep value, method)` cells in first-seen order.
    pub fn cells(&self) -> Vec<(String, Method)> {
        let mut out: Vec<(String, Method)> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|(v, m)| *v == r.sweep_value && *m == r.method) {
                out.push((r.sweep_value.clone(), r.method));
            }
        }
        out
    }

    pub fn fold_values(&self, sweep_value: &str, method: Method) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.sweep_value == sweep_value && r.method == method)
            .map(|r| r.rmse_db)
            .collect()
    }

    pub fn summary(&self, sweep_value: &str, method: Method) -> Option<(f64, f64)> {
        let v = self.fold_values(sweep_value, method);
        (!v.is_empty()).then(|| mean_std(&v))
    }

    /// Fold rows of each cell followed by its `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for (value, method) in self.cells() {
            let folds = self.fold_values(&value, method);
            for (fold, r) in folds.iter().enumerate() {
                let _ = writeln!(out, "{value},{method},{fold},{r}");
            }
            let (mean, std) = mean_std(&folds);
            let _ = writeln!(out, "{value},{method},mean,{mean}");
            let _ = writeln!(out, "{value},{method},std,{std}");
        }
        out
    }
}

/// All four methods at each `σ_g`, regenerating the dataset with the same
/// seed so only the reported locations change. `frk-exact` does not depend
/// on `σ_g` and is evaluated once.
pub fn sweep_sigma_g(cfg: &RunConfig, sigmas: &[f64]) -> Result<ExperimentReport> {
    if sigmas.is_empty() {
        return Err(Error::InvalidInput("sigma_g sweep needs at least one value".into()));
    }
    let layout = cfg.layout()?;
    let mut report = ExperimentReport::new("sigma_g");
    let mut exact_rmse: Option<Vec<f64>> = None;
    for &sigma in sigmas {
        let mut cell = cfg.clone();
        cell.set_sigma_g(sigma);
        cell.validate()?;
        let data = generate_dataset(&cell.scenario)?;
        let methods: &[Method] = if exact_rmse.is_some() {
            &[Method::FrkIgnore, Method::Blup, Method::Cep]
        } else {
            &Method::ALL
        };
        let eval = evaluate_methods(&data, methods, &cell, &layout)?;
        let exact = exact_rmse.get_or_insert_with(|| eval.fold_rmse(Method::FrkExact));
        let value = format_value(sigma);
        report.push(&value, Method::FrkExact, exact);
        for m in [Method::FrkIgnore, Method::Blup, Method::Cep] {
            report.push(&value, m, &eval.fold_rmse(m));
        }
    }
    Ok(report)
}

/// `frk-exact`, `blup` and `cep` at each basis radius with `σ_g` fixed.
pub fn sweep_tau(cfg: &RunConfig, taus: &[f64], sigma_g: f64) -> Result<ExperimentReport> {
    if taus.is_empty() {
        return Err(Error::InvalidInput("tau sweep needs at least one value".into()));
    }
    let mut cell = cfg.clone();
    cell.set_sigma_g(sigma_g);
    cell.validate()?;
    let data = generate_dataset(&cell.scenario)?;
    let mut report = ExperimentReport::new("tau");
    let methods = [Method::FrkExact, Method::Blup, Method::Cep];
    for &tau in taus {
        let layout = cell.layout_with_tau(tau)?;
        let value = format_value(tau);
        report.basis_sizes.push((value.clone(), layout.rank()));
        let eval = evaluate_methods(&data, &methods, &cell, &layout)?;
        for m in methods {
            report.push(&value, m, &eval.fold_rmse(m));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneRmse {
    pub lower: f64,
    /// `None` for the outermost ring.
    pub upper: Option<f64>,
    pub count: usize,
    /// `None` when no test point falls in the ring.
    pub rmse: Option<f64>,
}

/// RMSE restricted to BS-distance rings `[0, e₁), [e₁, e₂), …, [e_last, ∞)`.
pub fn zone_breakdown(
    locations: &[Location],
    predictions: &[f64],
    actuals: &[f64],
    bs: Location,
    ring_edges: &[f64],
) -> Result<Vec<ZoneRmse>> {
    if locations.len() != predictions.len() || predictions.len() != actuals.len() {
        return Err(Error::InvalidInput("zone breakdown needs equal-length inputs".into()));
    }
    if ring_edges.windows(2).any(|w| w[1] <= w[0]) || ring_edges.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput("ring edges must be positive and increasing".into()));
    }
    let mut bounds = vec![0.0];
    bounds.extend_from_slice(ring_edges);
    let mut zones = Vec::with_capacity(bounds.len());
    for (i, &lower) in bounds.iter().enumerate() {
        let upper = bounds.get(i + 1).copied();
        let (p, a): (Vec<f64>, Vec<f64>) = locations
            .iter()
            .zip(predictions.iter().zip(actuals))
            .filter(|(x, _)| {
                let d = distance(**x, bs);
                d >= lower && upper.is_none_or(|u| d < u)
            })
            .map(|(_, (p, a))| (*p, *a))
            .unzip();
        zones.push(ZoneRmse {
            lower,
            upper,
            count: p.len(),
            rmse: if p.is_empty() { None } else { Some(rmse(&p, &a)?) },
        });
    }
    Ok(zones)
}
