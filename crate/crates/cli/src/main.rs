use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use frkloc::calibration::calibrate;
use frkloc::harness::{evaluate_methods, format_value, parse_methods, sweep_sigma_g, sweep_tau, zone_breakdown, ExperimentReport};
use frkloc::prediction::{build_context, predict_grid, GridSpec, Predictor};
use frkloc::rng::{derive_seed, tag};
use frkloc::scenario::generate_dataset;
use frkloc::{Dataset, ParamFile, RunConfig};

#[derive(Parser)]
#[command(name = "frkloc", version, about = "Fixed rank kriging under location uncertainty")]
struct Cli {
    /// Run configuration (`key = value` lines); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed everywhere.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a measurement campaign.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model parameters with SAEM.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Predict the field on a regular grid.
    Predict {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `x0,y0,x1,y1,step`
        #[arg(long)]
        grid: String,
        #[arg(long, default_value = "blup")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated RMSE of one or more methods.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Comma separated: frk-exact, frk-ignore, blup, cep.
        #[arg(long, default_value = "frk-exact,frk-ignore,blup,cep")]
        methods: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// RMSE over a range of location-noise levels or basis radii.
    Sweep {
        #[arg(long, value_enum)]
        variable: SweepVariable,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Location-noise level held fixed in a `tau` sweep.
        #[arg(long, default_value_t = 50.0)]
        sigma_g: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepVariable {
    #[value(name = "sigma_g")]
    SigmaG,
    Tau,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::read(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_data(path: &Path) -> Result<Dataset> {
    Dataset::read_csv(path).with_context(|| format!("reading data {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn init_threads() -> Result<()> {
    let threads = match std::env::var("KRIG_THREADS") {
        Ok(v) => v.trim().parse::<usize>().with_context(|| format!("KRIG_THREADS must be a count, got '{v}'"))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn print_report(report: &ExperimentReport) {
    for (value, method) in report.cells() {
        if let Some((mean, std)) = report.summary(&value, method) {
            println!("{}={value} {method}: {mean:.3} ± {std:.3} dB", report.variable);
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate { out } => {
            let data = generate_dataset(&cfg.scenario)?;
            write(&out, &data.to_csv())?;
        }
        Command::Calibrate { data, out, trace } => {
            let data = read_data(&data)?;
            let layout = cfg.layout()?;
            let fit = calibrate(&data, &layout, &cfg.noise(), &cfg.saem)?;
            let file = ParamFile {
                params: fit.theta,
                mu_eta: Some(fit.mu_eta.iter().copied().collect()),
                header: vec![
                    format!("tau {}", cfg.tau),
                    format!("sigma_g {}", cfg.sigma_g),
                    format!("iterations {}", fit.trace.rows.len()),
                ],
            };
            write(&out, &file.to_text())?;
            if let Some(path) = trace {
                write(&path, &fit.trace.to_csv())?;
            }
            let p = &fit.theta;
            println!(
                "p0 {:.3} kappa {:.3} sigma_eps2 {:.3} beta {:.4} phi {:.2}",
                p.p0, p.kappa, p.sigma_eps2, p.beta, p.phi
            );
        }
        Command::Predict {
            params,
            data,
            grid,
            method,
            out,
        } => {
            let which: Predictor = method.parse()?;
            let params = ParamFile::read(&params).with_context(|| format!("reading params {}", params.display()))?;
            let data = read_data(&data)?;
            let grid = GridSpec::parse(&grid)?;
            let layout = cfg.layout()?;
            let mu = params.mu_eta.map(nalgebra_vector);
            if which != Predictor::Blup && mu.is_none() {
                bail!("the cep predictor needs a parameter file with a mu_eta line");
            }
            let seed = derive_seed(cfg.seed, &[tag::PREDICTION]);
            let ctx = build_context(
                &data,
                &params.params,
                &layout,
                &cfg.noise(),
                mu,
                cfg.saem.moment_mc_samples,
                seed,
            )?;
            write(&out, &predict_grid(&grid, &ctx, which)?.to_csv())?;
        }
        Command::Evaluate { data, methods, out } => {
            let methods = parse_methods(&methods)?;
            let data = read_data(&data)?;
            let eval = evaluate_methods(&data, &methods, &cfg, &cfg.layout()?)?;
            let mut report = ExperimentReport::new("sigma_g");
            let value = format_value(cfg.sigma_g);
            for &m in &eval.methods {
                report.push(&value, m, &eval.fold_rmse(m));
            }
            write(&out, &report.to_csv())?;
            print_report(&report);
            for &m in &eval.methods {
                let (locs, preds, actual) = eval.pooled(m);
                let zones = zone_breakdown(&locs, &preds, &actual, cfg.scenario.bs, &cfg.ring_edges)?;
                let cells: Vec<String> = zones
                    .iter()
                    .map(|z| {
                        let upper = z.upper.map_or("inf".to_string(), |u| u.to_string());
                        let rmse = z.rmse.map_or("-".to_string(), |r| format!("{r:.3}"));
                        format!("[{}, {upper}) n={} {rmse}", z.lower, z.count)
                    })
                    .collect();
                println!("{m} zones: {}", cells.join("; "));
            }
        }
        Command::Sweep {
            variable,
            values,
            sigma_g,
            out,
        } => {
            let report = match variable {
                SweepVariable::SigmaG => sweep_sigma_g(&cfg, &values)?,
                SweepVariable::Tau => sweep_tau(&cfg, &values, sigma_g)?,
            };
            write(&out, &report.to_csv())?;
            for (value, r) in &report.basis_sizes {
                println!("tau={value} r={r}");
            }
            print_report(&report);
        }
    }
    Ok(())
}

fn nalgebra_vector(v: Vec<f64>) -> frkloc::nalgebra::DVector<f64> {
    frkloc::nalgebra::DVector::from_vec(v)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("frkloc: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
