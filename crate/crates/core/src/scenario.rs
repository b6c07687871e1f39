//! Synthetic measurement campaigns drawn from the model itself, the dataset
//! CSV format, and learning/test splits.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{build_basis_grid, BoundingBox, FieldLayout, Location};
use crate::model::{KernelMatrices, LocationNoiseModel, ModelParams};
use crate::rng::{self, tag};

/// Measured powers with reported (and possibly true) locations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub reported: Vec<Location>,
    pub true_loc: Option<Vec<Location>>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, reported: Vec<Location>, true_loc: Option<Vec<Location>>) -> Result<Self> {
        if y.len() != reported.len() || true_loc.as_ref().is_some_and(|t| t.len() != y.len()) {
            return Err(Error::InvalidInput("dataset columns have different lengths".into()));
        }
        Ok(Self {
            y,
            reported,
            true_loc,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Rows `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            y: indices.iter().map(|&i| self.y[i]).collect(),
            reported: indices.iter().map(|&i| self.reported[i]).collect(),
            true_loc: self
                .true_loc
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
        }
    }

    /// The same measurements with the true locations reported.
    pub fn with_true_locations(&self) -> Result<Self> {
        let t = self.true_loc.clone().ok_or_else(|| {
            Error::InvalidInput("dataset has no true locations".into())
        })?;
        Ok(Self {
            y: self.y.clone(),
            reported: t.clone(),
            true_loc: Some(t),
        })
    }

    /// Locations at which a test row is evaluated: true when known, reported otherwise.
    pub fn evaluation_locations(&self) -> &[Location] {
        self.true_loc.as_deref().unwrap_or(&self.reported)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match &self.true_loc {
            Some(t) => {
                out.push_str("y_dbm,rep_x,rep_y,true_x,true_y\n");
                for ((y, r), t) in self.y.iter().zip(&self.reported).zip(t) {
                    let _ = writeln!(out, "{y},{},{},{},{}", r.x, r.y, t.x, t.y);
                }
            }
            None => {
                out.push_str("y_dbm,rep_x,rep_y\n");
                for (y, r) in self.y.iter().zip(&self.reported) {
                    let _ = writeln!(out, "{y},{},{}", r.x, r.y);
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty dataset file".into(),
        })?;
        let columns: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        let with_truth = match columns.as_slice() {
            ["y_dbm", "rep_x", "rep_y"] => false,
            ["y_dbm", "rep_x", "rep_y", "true_x", "true_y"] => true,
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unexpected header `{}`", header.trim()),
                })
            }
        };
        let width = columns.len();
        let mut data = Dataset {
            true_loc: with_truth.then(Vec::new),
            ..Default::default()
        };
        for (i, raw) in lines {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != width || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {width} non-empty fields, got `{line}`"),
                });
            }
            let mut vals = [0.0; 5];
            for (slot, f) in vals.iter_mut().zip(&fields) {
                *slot = f.parse().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("bad number `{f}`: {e}"),
                })?;
            }
            data.y.push(vals[0]);
            data.reported.push(Location::new(vals[1], vals[2]));
            if let Some(t) = data.true_loc.as_mut() {
                t.push(Location::new(vals[3], vals[4]));
            }
        }
        Ok(data)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    UniformRandom,
    Grid,
}

/// Everything needed to synthesize one campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub area: BoundingBox,
    pub bs: Location,
    pub truth: ModelParams,
    /// Basis radius of the generating field.
    pub tau_truth: f64,
    pub n: usize,
    pub sigma_g: f64,
    pub sampling: Sampling,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// 1 km square cell with the BS at its center.
    fn default() -> Self {
        Self {
            area: BoundingBox {
                min: Location::new(0.0, 0.0),
                max: Location::new(1000.0, 1000.0),
            },
            bs: Location::new(500.0, 500.0),
            truth: ModelParams {
                p0: -30.0,
                kappa: 3.5,
                sigma_eps2: 4.0,
                beta: 0.25,
                phi: 150.0,
            },
            tau_truth: 50.0,
            n: 2000,
            sigma_g: 20.0,
            sampling: Sampling::UniformRandom,
            seed: 1,
        }
    }
}

/// A generated campaign together with the realized field.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dataset: Dataset,
    pub layout: FieldLayout,
    pub eta: Vec<f64>,
}

impl Scenario {
    /// Noise-free field `t(x)'alpha* + s(x)'eta*` at `x`.
    pub fn field(&self, truth: &ModelParams, x: Location) -> f64 {
        let t = self.layout.trend(x);
        let mut z = t[0] * truth.p0 + t[1] * truth.kappa;
        for (i, s) in self.layout.basis_sparse(x) {
            z += s * self.eta[i];
        }
        z
    }
}

fn true_locations<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<Location> {
    let a = &cfg.area;
    match cfg.sampling {
        Sampling::UniformRandom => (0..cfg.n)
            .map(|_| {
                Location::new(
                    a.min.x + a.width() * rng.random::<f64>(),
                    a.min.y + a.height() * rng.random::<f64>(),
                )
            })
            .collect(),
        Sampling::Grid => {
            let nx = ((cfg.n as f64 * a.width() / a.height()).sqrt().ceil() as usize).max(1);
            let ny = cfg.n.div_ceil(nx);
            let (dx, dy) = (a.width() / nx as f64, a.height() / ny as f64);
            (0..cfg.n)
                .map(|k| {
                    let (ix, iy) = (k % nx, k / nx);
                    Location::new(
                        a.min.x + (ix as f64 + 0.5) * dx,
                        a.min.y + (iy as f64 + 0.5) * dy,
                    )
                })
                .collect()
        }
    }
}

/// Synthesize a campaign: `y_k = t(x*_k)'alpha* + s(x*_k)'eta* + eps_k` and
/// reported `x_k = x*_k + U_k`, so that `x_k - U_k` is the true location.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.truth.validate()?;
    if cfg.n == 0 {
        return Err(Error::InvalidInput("scenario needs n >= 1".into()));
    }
    let noise = LocationNoiseModel::new(cfg.sigma_g)?;
    let basis = build_basis_grid(&cfg.area, cfg.tau_truth)?;
    let kernel = KernelMatrices::new(&basis, cfg.truth.beta, cfg.truth.phi)?;
    let layout = FieldLayout::new(basis, cfg.bs);

    // Independent streams so that changing sigma_g leaves locations, field and
    // nugget draws untouched.
    let mut loc_rng = rng::stream(cfg.seed, &[tag::SCENARIO, 0]);
    let mut eta_rng = rng::stream(cfg.seed, &[tag::SCENARIO, 1]);
    let mut eps_rng = rng::stream(cfg.seed, &[tag::SCENARIO, 2]);
    let mut u_rng = rng::stream(cfg.seed, &[tag::SCENARIO, 3]);

    let truth_locs = true_locations(cfg, &mut loc_rng);
    let eta: Vec<f64> = kernel.sample_weights(&mut eta_rng).iter().copied().collect();
    let scenario = Scenario {
        dataset: Dataset::default(),
        layout,
        eta,
    };
    let sd = cfg.truth.sigma_eps2.sqrt();
    let y = truth_locs
        .iter()
        .map(|&x| {
            let e: f64 = eps_rng.sample(StandardNormal);
            scenario.field(&cfg.truth, x) + sd * e
        })
        .collect();
    let reported = truth_locs
        .iter()
        .map(|&x| {
            let u = noise.sample(&mut u_rng);
            Location::new(x.x + u[0], x.y + u[1])
        })
        .collect();
    Ok(Scenario {
        dataset: Dataset::new(y, reported, Some(truth_locs))?,
        ..scenario
    })
}

pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<Dataset> {
    Ok(generate(cfg)?.dataset)
}

/// Row indices of `n` rows shuffled by `seed`.
fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    idx
}

/// Test rows of fold `fold` out of `k` under a seeded uniform shuffle.
pub fn fold_indices(n: usize, k: usize, fold: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if k == 0 || fold >= k || n < k {
        return Err(Error::InvalidInput(format!(
            "fold {fold} of {k} is not valid for {n} rows"
        )));
    }
    let idx = shuffled(n, seed);
    let (lo, hi) = (fold * n / k, (fold + 1) * n / k);
    let test = idx[lo..hi].to_vec();
    let learn = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
    Ok((learn, test))
}

/// Learning and test sets for fold `fold` of a `k`-fold partition.
pub fn split_kfold(data: &Dataset, k: usize, fold: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let (learn, test) = fold_indices(data.len(), k, fold, seed)?;
    Ok((data.subset(&learn), data.subset(&test)))
}

/// Random split with `round(test_fraction * n)` test rows.
pub fn split_fraction(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if data.is_empty() || !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::InvalidInput("split needs rows and a fraction in [0, 1]".into()));
    }
    let idx = shuffled(data.len(), seed);
    let n_test = (test_fraction * data.len() as f64).round() as usize;
    Ok((data.subset(&idx[n_test..]), data.subset(&idx[..n_test])))
}
