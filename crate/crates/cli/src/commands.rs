use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use sidarthe::data::{build_initial_condition, split, ObservedSeries, SplitSpec, Target};
use sidarthe::evaluation::{
    forecast, grid_search, AblationSummary, ForecastReport, GridSpec, SweepBase,
    SweepOptions,
};
use sidarthe::integrator::{integrate_heun, ParamTrajectory, TimeGrid};
use sidarthe::model::{InitialCondition, Rate, RateVector};
use sidarthe::objective::{LossWeights, TARGET_STATE};
use sidarthe::optimizer::{fit, random_init, BoundaryDiagnostic, FitConfig, MomentumSchedule, TyingMap};

use crate::config::{AblationKind, RatesSource, RunConfig};
use crate::io::{self, Sidecar, EXTRAPOLATION};
use crate::Failure;

/// Settings shared by every command after flag overrides.
pub struct Session {
    pub config: RunConfig,
    pub out: PathBuf,
    pub workers: Option<usize>,
}

impl Session {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes the resolved configuration so the command can be re-run from it.
    fn snapshot(&self, command: &str) -> anyhow::Result<(PathBuf, String)> {
        let path = self.path(&format!("{command}.config.toml"));
        std::fs::write(&path, self.config.to_toml()?)?;
        Ok((path, self.config.hash()?))
    }

    fn data(&self) -> Result<(ObservedSeries, Option<sidarthe::data::DataQuality>), Failure> {
        let cfg = self.config.data.as_ref().ok_or_else(|| Failure::config(anyhow!("this command needs a [data] section")))?;
        io::load_observations(cfg).map_err(Failure::from)
    }

    fn split_spec(&self, len: usize) -> SplitSpec {
        self.config.split.unwrap_or(SplitSpec { train: len, validation: 0, test: 0 })
    }

    fn initial(&self, obs: Option<&ObservedSeries>) -> Result<InitialCondition<f64>, Failure> {
        if let Some(i) = &self.config.initial {
            return InitialCondition::with_complement([i.i, i.d, i.a, i.r, i.t, i.h, i.e], i.h_d, i.population).map_err(Failure::from);
        }
        match obs {
            Some(o) => build_initial_condition(o, o.population).map_err(Failure::from),
            None => Err(Failure::config(anyhow!("give an [initial] section or a [data] section"))),
        }
    }

    fn tying(&self) -> Result<TyingMap, Failure> {
        match &self.config.fit.tying {
            Some(groups) => {
                let mut all = groups.clone();
                for rate in Rate::ALL {
                    if !groups.iter().flatten().any(|r| *r == rate) {
                        all.push(vec![rate]);
                    }
                }
                TyingMap::new(all).map_err(Failure::from)
            }
            None => Ok(TyingMap::default()),
        }
    }

    /// Rates on `grid`, from the configured source.
    fn rates(&self, grid: TimeGrid<f64>, tying: &TyingMap) -> Result<ParamTrajectory<f64>, Failure> {
        let r = &self.config.rates;
        Ok(match r.source {
            RatesSource::Giordano => ParamTrajectory::constant(grid, RateVector::giordano()),
            RatesSource::Random => random_init(grid, tying, self.config.fit.seed, r.init_range),
            RatesSource::Constant => {
                let named = r.constant.ok_or_else(|| Failure::config(anyhow!("rates.source = \"constant\" needs rates.constant")))?;
                ParamTrajectory::constant(grid, named.into())
            }
            RatesSource::File => {
                let path = r.file.as_ref().ok_or_else(|| Failure::config(anyhow!("rates.source = \"file\" needs rates.file")))?;
                let loaded = io::read_params(path, &self.config.integrator)?;
                if loaded.values.len() != grid.node_count() {
                    return Err(Failure::data(anyhow!(
                        "{} has {} nodes, the grid needs {}",
                        path.display(),
                        loaded.values.len(),
                        grid.node_count()
                    )));
                }
                ParamTrajectory::new(grid, loaded.values)?
            }
        })
    }

    fn grid(&self, intervals: usize) -> Result<TimeGrid<f64>, Failure> {
        Ok(TimeGrid::daily(intervals)?
            .with_substeps(self.config.integrator.substeps)?
            .with_interpolation(self.config.integrator.interpolation))
    }

    /// Fidelity weights, divided by the squared training means when relative.
    fn scale_weights(&self, w: [f64; 5], obs: &ObservedSeries, train: usize) -> Result<[f64; 5], Failure> {
        if !self.config.fit.relative_weights {
            return Ok(w);
        }
        let mut out = w;
        for (j, t) in Target::ALL.into_iter().enumerate() {
            let values: Vec<f64> = obs.series(t)[..train.min(obs.len())].iter().flatten().copied().collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            if !(mean.is_finite() && mean != 0.0) {
                return Err(Failure::data(anyhow!("relative weights need a non-zero training mean for {t}")));
            }
            out[j] /= mean * mean;
        }
        Ok(out)
    }

    fn schedule(&self) -> MomentumSchedule {
        let f = &self.config.fit;
        if f.momentum {
            MomentumSchedule::new(f.pi0, f.a, f.b)
        } else {
            MomentumSchedule::without_momentum(f.pi0, f.a)
        }
    }
}

pub fn simulate(ctx: &Session) -> Result<(), Failure> {
    let obs = match &ctx.config.data {
        Some(_) => Some(ctx.data()?.0),
        None => None,
    };
    let ic = ctx.initial(obs.as_ref())?;
    let tying = ctx.tying()?;
    let days = match (&ctx.config.rates.source, &ctx.config.rates.file) {
        (RatesSource::File, Some(path)) => io::read_params(path, &ctx.config.integrator)?.values.len() - 1,
        _ => ctx.config.simulate.days,
    };
    let grid = ctx.grid(days)?;
    let params = ctx.rates(grid, &tying)?;
    let traj = integrate_heun(&ic, &params)?;
    let out = ctx.path("trajectory.csv");
    io::write_trajectory(&out, &grid, &traj, &params)?;
    let (snapshot, hash) = ctx.snapshot("simulate")?;
    Sidecar {
        command: "simulate",
        version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        seed: (ctx.config.rates.source == RatesSource::Random).then_some(ctx.config.fit.seed),
        extrapolation: EXTRAPOLATION,
        outputs: io::file_names(&[out, snapshot]),
        details: SimulateDetails { days, population: ic.population },
    }
    .write(&ctx.path("simulate.json"))?;
    println!("simulated {days} days");
    Ok(())
}

#[derive(Serialize)]
struct SimulateDetails {
    days: usize,
    population: f64,
}

#[derive(Serialize)]
struct FitDetails {
    split: SplitSpec,
    holdout: &'static str,
    epochs_run: usize,
    best_epoch: usize,
    best_train_total: f64,
    best_validation: Option<f64>,
    boundary: BoundaryDiagnostic,
    weights: LossWeights,
    error: Option<String>,
}

pub fn fit_cmd(ctx: &Session) -> Result<(), Failure> {
    let (obs, _) = ctx.data()?;
    let spec = ctx.split_spec(obs.len());
    let (train, val, _) = split(&obs, &spec)?;
    let ic = ctx.initial(Some(&obs))?;
    let tying = ctx.tying()?;
    let grid = ctx.grid(spec.train.saturating_sub(1))?;
    let f = &ctx.config.fit;
    let weights = LossWeights { m: f.m, e_p: f.e_p, ..LossWeights::default() }.with_fidelity(ctx.scale_weights(f.weights, &obs, spec.train)?);
    let cfg = FitConfig {
        schedule: ctx.schedule(),
        weights,
        tying: tying.clone(),
        max_epochs: f.max_epochs,
        seed: f.seed,
        init: ctx.rates(grid, &tying)?,
        patience: f.patience,
    };
    let (result, error) = match fit(&cfg, &ic, &train, &val) {
        Ok(r) => (r, None),
        Err(e) => (*e.partial, Some(e.source)),
    };

    let params_path = ctx.path("params.csv");
    io::write_params(&params_path, &result.params)?;
    let history_path = ctx.path("history.csv");
    write_history(&history_path, &result.history, f.history_stride.max(1))?;
    let (snapshot, hash) = ctx.snapshot("fit")?;
    let best = result.best();
    Sidecar {
        command: "fit",
        version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        seed: Some(f.seed),
        extrapolation: EXTRAPOLATION,
        outputs: io::file_names(&[params_path, history_path, snapshot]),
        details: FitDetails {
            split: spec,
            holdout: "selection by validation fidelity, or training total without a validation window",
            epochs_run: result.epochs_run,
            best_epoch: result.best_epoch,
            best_train_total: best.train.total,
            best_validation: best.validation,
            boundary: result.boundary,
            weights,
            error: error.as_ref().map(ToString::to_string),
        },
    }
    .write(&ctx.path("fit.json"))?;
    println!("fit: {} epochs, best epoch {} (train total {:.6e})", result.epochs_run, result.best_epoch, best.train.total);
    match error {
        Some(e) => Err(Failure::from(e).context("fit stopped early; the last finite iterate was written")),
        None => Ok(()),
    }
}

fn write_history(path: &Path, history: &[sidarthe::optimizer::EpochRecord], stride: usize) -> sidarthe::Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record([
        "epoch", "fidelity_d", "fidelity_r", "fidelity_t", "fidelity_h", "fidelity_e", "derivative", "positivity", "positivity_indicator",
        "total", "validation",
    ])?;
    let last = history.len().saturating_sub(1);
    for (k, rec) in history.iter().enumerate() {
        if k % stride != 0 && k != last {
            continue;
        }
        let b = &rec.train;
        let mut row = vec![rec.epoch.to_string()];
        row.extend(b.fidelity.iter().map(f64::to_string));
        row.extend([b.derivative_penalty, b.positivity_penalty, b.positivity_indicator, b.total].map(|v| v.to_string()));
        row.push(rec.validation.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ForecastDetails {
    split: SplitSpec,
    params: String,
    report: ForecastReport,
}

pub fn forecast_cmd(ctx: &Session) -> Result<(), Failure> {
    let (obs, _) = ctx.data()?;
    let spec = ctx.split_spec(obs.len());
    let (_, val, test) = split(&obs, &spec)?;
    if test.is_empty() {
        return Err(Failure::config(anyhow!("forecast needs a test window in [split]")));
    }
    let ic = ctx.initial(Some(&obs))?;
    let params_path = ctx.config.forecast.params.clone().unwrap_or_else(|| ctx.path("params.csv"));
    let params = io::read_params(&params_path, &ctx.config.integrator).with_context(|| format!("reading {}", params_path.display()))
        .map_err(Failure::data)?;
    if params.values.len() != spec.train {
        return Err(Failure::data(anyhow!(
            "{} has {} nodes but the training window has {} days",
            params_path.display(),
            params.values.len(),
            spec.train
        )));
    }
    let extra = val.len() + test.len();
    let traj = forecast(&ic, &params, extra)?;
    let first = params.values.len() + val.len();
    let report = ForecastReport::new(&traj, &test, first, ctx.config.forecast.threshold)?;

    let table_path = ctx.path("report.csv");
    std::fs::write(&table_path, report.to_table()).map_err(|e| Failure::data(e.into()))?;
    let series_path = ctx.path("forecast.csv");
    write_forecast_series(&series_path, &traj, &params.grid.extended(extra), &obs, spec.total())?;
    let (snapshot, hash) = ctx.snapshot("forecast")?;
    Sidecar {
        command: "forecast",
        version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        seed: None,
        extrapolation: EXTRAPOLATION,
        outputs: io::file_names(&[table_path, series_path, snapshot]),
        details: ForecastDetails { split: spec, params: params_path.display().to_string(), report: report.clone() },
    }
    .write(&ctx.path("forecast.json"))?;
    print!("{}", report.to_table());
    Ok(())
}

/// Predicted and observed targets per day, for plotting.
fn write_forecast_series(
    path: &Path,
    traj: &sidarthe::integrator::Trajectory<f64>,
    grid: &TimeGrid<f64>,
    obs: &ObservedSeries,
    days: usize,
) -> sidarthe::Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["day".to_owned()];
    for t in Target::ALL {
        header.push(format!("{t}_pred"));
        header.push(format!("{t}_obs"));
    }
    w.write_record(&header)?;
    for day in 0..days.min(grid.node_count()) {
        let state = traj.states[day].to_array();
        let mut row = vec![day.to_string()];
        for (j, t) in Target::ALL.into_iter().enumerate() {
            row.push(state[TARGET_STATE[j]].to_string());
            row.push(obs.get(t, day).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn sweep_base(ctx: &Session, obs: &ObservedSeries, spec: SplitSpec) -> Result<SweepBase, Failure> {
    let f = &ctx.config.fit;
    Ok(SweepBase {
        pi0: f.pi0,
        e_p: f.e_p,
        max_epochs: f.max_epochs,
        patience: f.patience,
        tying: ctx.tying()?,
        init_range: ctx.config.rates.init_range,
        split: spec,
        substeps: ctx.config.integrator.substeps,
        interpolation: ctx.config.integrator.interpolation,
        eval_weights: ctx.scale_weights(f.weights, obs, spec.train)?,
        threshold: ctx.config.forecast.threshold,
    })
}

fn sweep_inputs(ctx: &Session) -> Result<(ObservedSeries, InitialCondition<f64>, GridSpec, SweepBase), Failure> {
    let mut spec = ctx.config.grid.clone().ok_or_else(|| Failure::config(anyhow!("this command needs a [grid] section")))?;
    spec.validate()?;
    let (obs, _) = ctx.data()?;
    let split = ctx.split_spec(obs.len());
    let base = sweep_base(ctx, &obs, split)?;
    for e in &mut spec.e {
        *e = ctx.scale_weights(*e, &obs, split.train)?;
    }
    let ic = ctx.initial(Some(&obs))?;
    Ok((obs, ic, spec, base))
}

pub fn grid_cmd(ctx: &Session) -> Result<(), Failure> {
    let (obs, ic, spec, base) = sweep_inputs(ctx)?;
    println!("planned runs: {}", spec.planned_runs());
    let log = ctx.path("runs.ndjson");
    let outcome = grid_search(&spec, &base, &obs, &ic, &SweepOptions { workers: ctx.workers, log: Some(&log) })?;
    let ranking_path = ctx.path("ranking.csv");
    AblationSummary { loss: ctx.config.fit.test_loss, cells: outcome.ranking.clone() }
        .write_csv(BufWriter::new(File::create(&ranking_path).map_err(|e| Failure::data(e.into()))?))?;
    let (snapshot, hash) = ctx.snapshot("grid")?;
    let diverged = outcome.runs.iter().filter(|r| r.diverged()).count();
    Sidecar {
        command: "grid",
        version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        seed: None,
        extrapolation: EXTRAPOLATION,
        outputs: io::file_names(&[log, ranking_path, snapshot]),
        details: GridDetails { planned_runs: spec.planned_runs(), diverged, best: outcome.best().map(|c| c.hash.clone()) },
    }
    .write(&ctx.path("grid.json"))?;
    match outcome.best() {
        Some(best) => println!(
            "best cell {}: a={} b={} momentum={} m={} T={} mean {:.6e} +/- {:.2e}",
            best.hash, best.cell.a, best.cell.b, best.cell.momentum, best.cell.m, best.cell.train_days, best.mean, best.ci95
        ),
        None => return Err(Failure::divergence(anyhow!("every run diverged"))),
    }
    Ok(())
}

#[derive(Serialize)]
struct GridDetails {
    planned_runs: usize,
    diverged: usize,
    best: Option<String>,
}

pub fn ablate_cmd(ctx: &Session) -> Result<(), Failure> {
    let section = ctx.config.ablate.clone().ok_or_else(|| Failure::config(anyhow!("this command needs an [ablate] section")))?;
    let (obs, ic, template, base) = sweep_inputs(ctx)?;
    let spec = match section.kind {
        AblationKind::Momentum => GridSpec { a: section.a.clone(), b: section.b.clone(), baseline: true, ..template },
        AblationKind::Regularization => GridSpec { m: section.m.clone(), ..template },
    };
    println!("planned runs: {}", spec.planned_runs());
    let log = ctx.path("ablation.ndjson");
    let outcome = grid_search(&spec, &base, &obs, &ic, &SweepOptions { workers: ctx.workers, log: Some(&log) })?;
    let summary = AblationSummary::from_runs(&outcome.runs, ctx.config.fit.test_loss);
    let csv_path = ctx.path("ablation.csv");
    summary.write_csv(BufWriter::new(File::create(&csv_path).map_err(|e| Failure::data(e.into()))?))?;
    let (snapshot, hash) = ctx.snapshot("ablate")?;
    Sidecar {
        command: "ablate",
        version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        seed: None,
        extrapolation: EXTRAPOLATION,
        outputs: io::file_names(&[log, csv_path, snapshot]),
        details: section.kind,
    }
    .write(&ctx.path("ablate.json"))?;
    for c in &summary.cells {
        println!(
            "a={} b={} momentum={} m={}: mean {:.6e} +/- {:.2e}, derivative norm {:.4e}",
            c.cell.a, c.cell.b, c.cell.momentum, c.cell.m, c.mean, c.ci95, c.mean_derivative_norm
        );
    }
    Ok(())
}
