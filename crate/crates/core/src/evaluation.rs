//! Forecast metrics, grid search and ablation sweeps.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ObservedSeries, SplitSpec, Target};
use crate::error::{Error, Result};
use crate::integrator::{integrate_heun, Interpolation, ParamTrajectory, TimeGrid, Trajectory};
use crate::model::InitialCondition;
use crate::objective::{derivative_penalty, flatten, positivity_penalty, squared_increments, window_fidelity, LossWeights, Targets, TARGET_STATE};
use crate::optimizer::{fit, holdout_fidelity, random_init, FitConfig, MomentumSchedule, TyingMap, DEFAULT_INIT_RANGE};

pub const DEFAULT_THRESHOLD: f64 = 0.30;

/// Mean absolute percentage error over the evaluable days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub percent: f64,
    pub evaluated: usize,
    /// Days with a missing or zero observation.
    pub skipped: usize,
}

fn evaluable<'a>(pred: &'a [f64], obs: &'a [Option<f64>]) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if pred.len() != obs.len() {
        return Err(Error::Shape { expected: obs.len(), actual: pred.len() });
    }
    Ok(pred.iter().zip(obs).filter_map(|(p, o)| o.filter(|o| *o != 0.0).map(|o| (*p, o))))
}

pub fn mape(pred: &[f64], obs: &[Option<f64>]) -> Result<Mape> {
    let (sum, n) = evaluable(pred, obs)?.fold((0.0, 0usize), |(s, n), (p, o)| (s + ((p - o) / o).abs(), n + 1));
    if n == 0 {
        return Err(Error::Data("no day has a present, nonzero observation".into()));
    }
    Ok(Mape { percent: 100.0 * sum / n as f64, evaluated: n, skipped: obs.len() - n })
}

/// `(days with relative error <= thr, evaluable days)`.
pub fn within_threshold(pred: &[f64], obs: &[Option<f64>], thr: f64) -> Result<(usize, usize)> {
    let (hit, n) = evaluable(pred, obs)?.fold((0, 0), |(h, n), (p, o)| (h + usize::from(((p - o) / o).abs() <= thr), n + 1));
    if n == 0 {
        return Err(Error::Data("no day has a present, nonzero observation".into()));
    }
    Ok((hit, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesScore {
    pub mape: f64,
    pub within: usize,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Forecast accuracy per target; `None` where a series has no evaluable day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub threshold: f64,
    pub series: [Option<SeriesScore>; 5],
}

impl ForecastReport {
    /// Scores observation day `k` against trajectory node `first_node + k`.
    pub fn new(traj: &Trajectory<f64>, obs: &ObservedSeries, first_node: usize, threshold: f64) -> Result<Self> {
        if first_node + obs.len() > traj.states.len() {
            return Err(Error::Shape { expected: traj.states.len(), actual: first_node + obs.len() });
        }
        let mut series = [None; 5];
        for t in Target::ALL {
            let pred: Vec<f64> = traj.states[first_node..first_node + obs.len()]
                .iter()
                .map(|s| s.to_array()[TARGET_STATE[t.index()]])
                .collect();
            let o = obs.series(t);
            if let (Ok(m), Ok((within, evaluated))) = (mape(&pred, o), within_threshold(&pred, o, threshold)) {
                series[t.index()] = Some(SeriesScore { mape: m.percent, within, evaluated, skipped: m.skipped });
            }
        }
        Ok(Self { threshold, series })
    }

    /// Rows `series,mape_percent,d` with `d` written as `within/evaluated`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("series,mape_percent,d\n");
        for t in Target::ALL {
            match &self.series[t.index()] {
                Some(s) => out.push_str(&format!("{t},{:.2},{}/{}\n", s.mape, s.within, s.evaluated)),
                None => out.push_str(&format!("{t},,\n")),
            }
        }
        out
    }
}

/// Integrates `params` and `extra` further days with the last-node rates held.
pub fn forecast(ic: &InitialCondition<f64>, params: &ParamTrajectory<f64>, extra: usize) -> Result<Trajectory<f64>> {
    integrate_heun(ic, &params.extended_hold(extra))
}

/// Settings shared by every run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBase {
    pub pi0: f64,
    pub e_p: f64,
    pub max_epochs: usize,
    pub patience: Option<usize>,
    pub tying: TyingMap,
    pub init_range: (f64, f64),
    /// Training, validation and test lengths; a `train_days` axis overrides `train`.
    pub split: SplitSpec,
    pub substeps: usize,
    pub interpolation: Interpolation,
    /// Weights of the validation and test losses.
    pub eval_weights: [f64; 5],
    pub threshold: f64,
}

impl Default for SweepBase {
    fn default() -> Self {
        Self {
            pi0: 1e-5,
            e_p: 0.0,
            max_epochs: 100,
            patience: None,
            tying: TyingMap::default(),
            init_range: DEFAULT_INIT_RANGE,
            split: SplitSpec { train: 0, validation: 0, test: 0 },
            substeps: 1,
            interpolation: Interpolation::Hold,
            eval_weights: [1.0; 5],
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Hyperparameter axes; the planned runs are their Cartesian product times
/// the seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub m: Vec<f64>,
    /// Fidelity weights `[e_D, e_R, e_T, e_H, e_E]`.
    pub e: Vec<[f64; 5]>,
    pub train_days: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Adds one momentum-off cell per `(m, e, train_days)` combination, run
    /// with the first `a` value.
    #[serde(default)]
    pub baseline: bool,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("a", self.a.len()),
            ("b", self.b.len()),
            ("m", self.m.len()),
            ("e", self.e.len()),
            ("train_days", self.train_days.len()),
            ("seeds", self.seeds.len()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, n)| *n == 0) {
            return Err(Error::Config(format!("grid axis {name} is empty")));
        }
        let finite = self.a.iter().chain(&self.b).chain(&self.m).chain(self.e.iter().flatten()).all(|v| v.is_finite() && *v >= 0.0);
        if !finite {
            return Err(Error::Config("grid values must be finite and non-negative".into()));
        }
        if self.train_days.iter().any(|t| *t < 2) {
            return Err(Error::Config("train_days must be at least 2".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &train_days in &self.train_days {
            for &e in &self.e {
                for &m in &self.m {
                    for &a in &self.a {
                        for &b in &self.b {
                            out.push(Cell { a, b, momentum: true, m, e, train_days });
                        }
                    }
                    if self.baseline {
                        out.push(Cell { a: self.a[0], b: 0.0, momentum: false, m, e, train_days });
                    }
                }
            }
        }
        out
    }

    pub fn planned_runs(&self) -> usize {
        self.cells().len() * self.seeds.len()
    }

    /// The momentum grid: 5 values of `a` in [0, 0.2], 6 of `b` in [0, 0.5],
    /// and a momentum-off baseline.
    pub fn momentum_grid(m: f64, e: [f64; 5], train_days: usize, seeds: Vec<u64>) -> Self {
        Self {
            a: linspace(0.0, 0.2, 5),
            b: linspace(0.0, 0.5, 6),
            m: vec![m],
            e: vec![e],
            train_days: vec![train_days],
            seeds,
            baseline: true,
        }
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// One point of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub a: f64,
    pub b: f64,
    pub momentum: bool,
    pub m: f64,
    pub e: [f64; 5],
    pub train_days: usize,
}

impl Cell {
    /// Hex SHA-256 of the cell and the shared settings.
    pub fn hash(&self, base: &SweepBase) -> String {
        let doc = serde_json::to_vec(&(self, base)).expect("cell serializes");
        hex::encode(&Sha256::digest(doc)[..8])
    }

    pub fn schedule(&self, pi0: f64) -> MomentumSchedule {
        if self.momentum {
            MomentumSchedule::new(pi0, self.a, self.b)
        } else {
            MomentumSchedule::without_momentum(pi0, self.a)
        }
    }

    pub fn weights(&self, e_p: f64) -> LossWeights {
        LossWeights { m: self.m, e_p, ..LossWeights::default() }.with_fidelity(self.e)
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub hash: String,
    pub cell: Cell,
    pub seed: u64,
    /// Set when the fit diverged; the metrics then describe the last finite iterate, if any.
    pub error: Option<String>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_total: f64,
    /// Fidelity on the validation window under the sweep's evaluation weights.
    pub validation: Option<f64>,
    /// Fidelity on the test window.
    pub test_loss: Option<f64>,
    /// Test fidelity plus the derivative and positivity penalties of the fitted parameters.
    pub test_total: Option<f64>,
    /// `sum_i |x_{i+1} - x_i|^2` of the fitted parameters.
    pub derivative_norm: f64,
    pub test_report: Option<ForecastReport>,
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        self.error.is_some()
    }
}

/// Which loss ablation summaries and rankings aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestLoss {
    #[default]
    Fidelity,
    Full,
}

/// Fits one cell with one seed and scores it on the held-out windows.
pub fn run_one(cell: &Cell, seed: u64, base: &SweepBase, data: &ObservedSeries, ic: &InitialCondition<f64>) -> Result<RunRecord> {
    let split = SplitSpec { train: cell.train_days, ..base.split };
    let (train, val, test) = crate::data::split(data, &split)?;
    let grid = TimeGrid::new(0.0, (cell.train_days - 1) as f64, cell.train_days - 1)?
        .with_substeps(base.substeps)?
        .with_interpolation(base.interpolation);
    let cfg = FitConfig {
        schedule: cell.schedule(base.pi0),
        weights: cell.weights(base.e_p),
        tying: base.tying.clone(),
        max_epochs: base.max_epochs,
        seed,
        init: random_init(grid, &base.tying, seed, base.init_range),
        patience: base.patience,
    };
    let (result, error) = match fit(&cfg, ic, &train, &val) {
        Ok(r) => (r, None),
        Err(e) => (*e.partial, Some(e.source.to_string())),
    };
    let eval = LossWeights::default().with_fidelity(base.eval_weights);
    let validation = if val.is_empty() || error.is_some() {
        None
    } else {
        holdout_fidelity(ic, &result.params, &val, 0, &eval).ok().map(|v| v.iter().sum())
    };
    let x = flatten(&result.params);
    let derivative_norm = squared_increments(&x);
    let best = result.history.get(result.best_epoch);
    let mut record = RunRecord {
        hash: cell.hash(base),
        cell: *cell,
        seed,
        error,
        epochs_run: result.epochs_run,
        best_epoch: result.best_epoch,
        train_total: best.map_or(f64::NAN, |r| r.train.total),
        validation,
        test_loss: None,
        test_total: None,
        derivative_norm,
        test_report: None,
    };
    if test.is_empty() {
        return Ok(record);
    }
    let first = grid.node_count() + val.len();
    match forecast(ic, &result.params, val.len() + test.len()) {
        Ok(traj) => {
            let fid: f64 = window_fidelity(&traj.states, &Targets::new(&test), first, grid.dt(), &eval)?.iter().sum();
            let penalties = derivative_penalty(&x, cell.m, &grid) + positivity_penalty(&x, base.e_p, &grid).surrogate;
            record.test_loss = Some(fid);
            record.test_total = Some(fid + penalties);
            record.test_report = Some(ForecastReport::new(&traj, &test, first, base.threshold)?);
        }
        Err(e) => {
            record.error.get_or_insert_with(|| format!("forecast failed: {e}"));
        }
    }
    Ok(record)
}

/// Per-cell aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub hash: String,
    pub cell: Cell,
    /// Runs with a finite loss.
    pub n: usize,
    pub diverged: usize,
    pub mean: f64,
    /// 95% half-width `1.96 sd / sqrt(n)`; zero for a single run.
    pub ci95: f64,
    pub mean_derivative_norm: f64,
}

impl CellSummary {
    pub fn lower(&self) -> f64 {
        self.mean - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci95
    }
}

/// `(mean, 1.96 * sample sd / sqrt(n))`.
pub fn mean_ci95(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, 1.96 * var.sqrt() / (n as f64).sqrt()))
}

/// Aggregates `records` per cell with `metric`, in the order cells first appear.
pub fn summarize(records: &[RunRecord], metric: impl Fn(&RunRecord) -> Option<f64>) -> Vec<CellSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.hash.as_str()) {
            order.push(&r.hash);
        }
    }
    order
        .into_iter()
        .map(|hash| {
            let runs: Vec<&RunRecord> = records.iter().filter(|r| r.hash == hash).collect();
            let values: Vec<f64> = runs.iter().filter_map(|r| metric(r)).filter(|v| v.is_finite()).collect();
            let (mean, ci95) = mean_ci95(&values).unwrap_or((f64::NAN, f64::NAN));
            let norms: Vec<f64> = runs.iter().map(|r| r.derivative_norm).filter(|v| v.is_finite()).collect();
            CellSummary {
                hash: hash.to_string(),
                cell: runs[0].cell,
                n: values.len(),
                diverged: runs.iter().filter(|r| r.diverged()).count(),
                mean,
                ci95,
                mean_derivative_norm: mean_ci95(&norms).map_or(f64::NAN, |(m, _)| m),
            }
        })
        .collect()
}

/// Sorts by mean, cells without a finite mean last, ties broken by hash.
fn rank(mut cells: Vec<CellSummary>) -> Vec<CellSummary> {
    cells.sort_by(|x, y| {
        let key = |c: &CellSummary| if c.mean.is_finite() { c.mean } else { f64::INFINITY };
        key(x).total_cmp(&key(y)).then_with(|| x.hash.cmp(&y.hash))
    });
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    /// Every planned run, in planning order.
    pub runs: Vec<RunRecord>,
    /// Cells by increasing mean validation loss.
    pub ranking: Vec<CellSummary>,
}

impl GridOutcome {
    pub fn best(&self) -> Option<&CellSummary> {
        self.ranking.first().filter(|c| c.mean.is_finite())
    }
}

/// Reads the completed runs of an NDJSON run log, ignoring a truncated last line.
pub fn read_run_log(path: &Path) -> Result<Vec<RunRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(e) if e.is_eof() => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Options controlling how a sweep executes.
#[derive(Debug, Clone, Default)]
pub struct SweepOptions<'a> {
    /// Worker threads; `None` uses the rayon default.
    pub workers: Option<usize>,
    /// Append-only run log; existing `(hash, seed)` entries are not rerun.
    pub log: Option<&'a Path>,
}

/// Fits every cell of `spec` for every seed and ranks cells by mean
/// validation loss. A diverged run is recorded and excluded from its cell's mean.
pub fn grid_search(
    spec: &GridSpec,
    base: &SweepBase,
    data: &ObservedSeries,
    ic: &InitialCondition<f64>,
    opts: &SweepOptions,
) -> Result<GridOutcome> {
    spec.validate()?;
    let needed = spec.train_days.iter().max().copied().unwrap_or(0) + base.split.validation + base.split.test;
    if needed > data.len() {
        return Err(Error::Data(format!("grid needs {needed} days, data has {}", data.len())));
    }
    let planned: Vec<(Cell, String, u64)> = spec
        .cells()
        .into_iter()
        .flat_map(|c| {
            let hash = c.hash(base);
            spec.seeds.iter().map(move |s| (c, hash.clone(), *s))
        })
        .collect();

    let existing = match opts.log {
        Some(p) => read_run_log(p)?,
        None => Vec::new(),
    };
    let done: HashSet<(&str, u64)> = existing.iter().map(|r| (r.hash.as_str(), r.seed)).collect();
    let pending: Vec<&(Cell, String, u64)> = planned.iter().filter(|(_, h, s)| !done.contains(&(h.as_str(), *s))).collect();
    log::info!("{} runs planned, {} already logged", planned.len(), planned.len() - pending.len());

    let writer = match opts.log {
        Some(p) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(p)?)),
        None => None,
    };
    let run = |(cell, _, seed): &&(Cell, String, u64)| -> Result<RunRecord> {
        let record = run_one(cell, *seed, base, data, ic)?;
        if let Some(w) = &writer {
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            let mut f = w.lock().expect("run log lock");
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        Ok(record)
    };
    let fresh: Vec<RunRecord> = match opts.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| pending.par_iter().map(run).collect::<Result<_>>())?
        }
        None => pending.par_iter().map(run).collect::<Result<_>>()?,
    };

    let mut by_key: std::collections::HashMap<(String, u64), RunRecord> =
        existing.into_iter().chain(fresh).map(|r| ((r.hash.clone(), r.seed), r)).collect();
    let runs: Vec<RunRecord> = planned.iter().filter_map(|(_, h, s)| by_key.remove(&(h.clone(), *s))).collect();
    let ranking = rank(summarize(&runs, |r| if r.diverged() { None } else { r.validation.or(Some(r.train_total)) }));
    Ok(GridOutcome { runs, ranking })
}

/// Test-loss aggregates of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub loss: TestLoss,
    pub cells: Vec<CellSummary>,
}

impl AblationSummary {
    pub fn from_runs(runs: &[RunRecord], loss: TestLoss) -> Self {
        let cells = summarize(runs, |r| {
            if r.diverged() {
                return None;
            }
            match loss {
                TestLoss::Fidelity => r.test_loss,
                TestLoss::Full => r.test_total,
            }
        });
        Self { loss, cells }
    }

    /// Plot-ready table: cell axes, `n`, mean, `ci95`, lower, upper and mean derivative norm.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "a", "b", "momentum", "m", "e_d", "e_r", "e_t", "e_h", "e_e", "train_days", "n", "diverged", "mean", "ci95", "lower", "upper",
            "derivative_norm",
        ])?;
        for c in &self.cells {
            let k = &c.cell;
            let mut row = vec![k.a.to_string(), k.b.to_string(), k.momentum.to_string(), k.m.to_string()];
            row.extend(k.e.iter().map(|v| v.to_string()));
            row.extend([
                k.train_days.to_string(),
                c.n.to_string(),
                c.diverged.to_string(),
                c.mean.to_string(),
                c.ci95.to_string(),
                c.lower().to_string(),
                c.upper().to_string(),
                c.mean_derivative_norm.to_string(),
            ]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Momentum ablation over `a` and `b` with a momentum-off baseline.
pub fn ablation_momentum(
    a: Vec<f64>,
    b: Vec<f64>,
    template: &GridSpec,
    base: &SweepBase,
    data: &ObservedSeries,
    ic: &InitialCondition<f64>,
    opts: &SweepOptions,
) -> Result<AblationSummary> {
    let spec = GridSpec { a, b, baseline: true, ..template.clone() };
    let outcome = grid_search(&spec, base, data, ic, opts)?;
    Ok(AblationSummary::from_runs(&outcome.runs, TestLoss::Fidelity))
}

/// Regularization ablation over the derivative weight `m`.
pub fn ablation_regularization(
    m: Vec<f64>,
    template: &GridSpec,
    base: &SweepBase,
    data: &ObservedSeries,
    ic: &InitialCondition<f64>,
    opts: &SweepOptions,
) -> Result<AblationSummary> {
    let spec = GridSpec { m, ..template.clone() };
    let outcome = grid_search(&spec, base, data, ic, opts)?;
    Ok(AblationSummary::from_runs(&outcome.runs, TestLoss::Fidelity))
}
