//! Gradient-flow training with temporal momentum.
//!
//! Slice `i` of the parameters (the rates at `t_i`) is updated as
//!
//! ```text
//! x_0 <- x_0 - pi_0 g_0
//! x_i <- x_i - pi_i g_i + omega_i (x_{i-1}^new - x_{i-1}^old),   i > 0
//! pi_i = pi_0 / (1 + a t_i),   omega_i = 1 / (1 + exp(-b t_i))
//! ```
//!
//! The recursion runs in increasing `i`, so an update of an early slice is
//! carried forward to later slices, whose own gradients are small because
//! they influence only the tail of the trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ObservedSeries;
use crate::error::{Error, Result};
use crate::integrator::{integrate_heun, ParamTrajectory, TimeGrid};
use crate::model::{InitialCondition, Rate, RateVector, RATE_COUNT};
use crate::objective::{flatten, unflatten, window_fidelity, FlatParams, LossWeights, ObjectiveBreakdown, Problem, Targets};
use crate::scalar::Scalar;

fn enabled() -> bool {
    true
}

/// Learning-rate decay and momentum gate over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumSchedule {
    pub pi0: f64,
    /// Learning-rate decay, 1/day.
    pub a: f64,
    /// Momentum gate steepness, 1/day.
    pub b: f64,
    /// When false every `omega_i` is zero and the step is plain gradient descent.
    #[serde(default = "enabled")]
    pub momentum: bool,
}

impl MomentumSchedule {
    pub fn new(pi0: f64, a: f64, b: f64) -> Self {
        Self { pi0, a, b, momentum: true }
    }

    pub fn without_momentum(pi0: f64, a: f64) -> Self {
        Self { pi0, a, b: 0.0, momentum: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi0.is_finite() && self.pi0 > 0.0) {
            return Err(Error::Config(format!("pi0 must be positive, got {}", self.pi0)));
        }
        if !(self.a.is_finite() && self.a >= 0.0 && self.b.is_finite() && self.b >= 0.0) {
            return Err(Error::Config(format!("a and b must be finite and non-negative, got a={}, b={}", self.a, self.b)));
        }
        Ok(())
    }

    /// `(pi(t), omega(t))` at elapsed time `t` (days since the first node).
    pub fn schedule_at(&self, t: f64) -> (f64, f64) {
        let pi = self.pi0 / (1.0 + self.a * t);
        let omega = if self.momentum { 1.0 / (1.0 + (-self.b * t).exp()) } else { 0.0 };
        (pi, omega)
    }

    /// `pi(t) / (1 - omega(t))`, the learning rate the momentum recursion
    /// amounts to for slowly varying parameters.
    pub fn effective_learning_rate(&self, t: f64) -> f64 {
        let (pi, omega) = self.schedule_at(t);
        // 1 - 1/(1+e^{-bt}) = 1/(1+e^{bt}); written this way to stay exact for large bt.
        let gap = if self.momentum { 1.0 / (1.0 + (self.b * t).exp()) } else { 1.0 - omega };
        pi / gap
    }
}

/// One temporal-momentum update of every slice of `x`.
pub fn gf_step<T: Scalar>(x: &FlatParams<T>, grad: &FlatParams<T>, schedule: &MomentumSchedule, grid: &TimeGrid<T>) -> Result<FlatParams<T>> {
    if x.len() != grad.len() {
        return Err(Error::Shape { expected: x.len(), actual: grad.len() });
    }
    let nodes = x.node_count();
    let dt = grid.dt().as_f64();
    let mut out = x.clone();
    let mut carry = [T::zero(); RATE_COUNT];
    for i in 0..nodes {
        let (pi, omega) = if i == 0 { (schedule.pi0, 0.0) } else { schedule.schedule_at(i as f64 * dt) };
        let (pi, omega) = (T::lit(pi), T::lit(omega));
        let old = x.slice(i);
        let g = grad.slice(i);
        let new = out.slice_mut(i);
        for k in 0..RATE_COUNT {
            new[k] = old[k] - pi * g[k] + omega * carry[k];
            carry[k] = new[k] - old[k];
        }
    }
    Ok(out)
}

/// Groups of rates that share one learnable value per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TyingMap {
    groups: Vec<Vec<Rate>>,
}

impl Default for TyingMap {
    /// `{beta, delta}`, `{xi, kappa}`, `{lambda, rho}`, `{eta, zeta}`, the rest free.
    fn default() -> Self {
        Self::from_pairs(&[(Rate::Beta, Rate::Delta), (Rate::Xi, Rate::Kappa), (Rate::Lambda, Rate::Rho), (Rate::Eta, Rate::Zeta)])
            .expect("default tying is a partition")
    }
}

impl TyingMap {
    pub fn new(groups: Vec<Vec<Rate>>) -> Result<Self> {
        let mut seen = [false; RATE_COUNT];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::Config("tying group is empty".into()));
            }
            for r in g {
                if std::mem::replace(&mut seen[r.index()], true) {
                    return Err(Error::Config(format!("rate {r} appears in more than one tying group")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("rate {} is not in any tying group", Rate::ALL[missing])));
        }
        Ok(Self { groups })
    }

    /// Every rate learned independently.
    pub fn untied() -> Self {
        Self { groups: Rate::ALL.iter().map(|r| vec![*r]).collect() }
    }

    /// Pairs tied together, all other rates singletons.
    pub fn from_pairs(pairs: &[(Rate, Rate)]) -> Result<Self> {
        let mut groups: Vec<Vec<Rate>> = pairs.iter().map(|(a, b)| vec![*a, *b]).collect();
        for r in Rate::ALL {
            if !pairs.iter().any(|(a, b)| *a == r || *b == r) {
                groups.push(vec![r]);
            }
        }
        groups.sort_by_key(|g| g[0]);
        Self::new(groups)
    }

    pub fn groups(&self) -> &[Vec<Rate>] {
        &self.groups
    }

    /// Replaces each group's gradient entries by their sum.
    pub fn tie_gradient<T: Scalar>(&self, grad: &mut FlatParams<T>) {
        for i in 0..grad.node_count() {
            let slice = grad.slice_mut(i);
            for g in self.groups.iter().filter(|g| g.len() > 1) {
                let total: T = g.iter().map(|r| slice[r.index()]).sum();
                for r in g {
                    slice[r.index()] = total;
                }
            }
        }
    }

    /// Sets every group member to the value of the group's first rate.
    pub fn project<T: Scalar>(&self, x: &mut FlatParams<T>) {
        for i in 0..x.node_count() {
            let slice = x.slice_mut(i);
            for g in self.groups.iter().filter(|g| g.len() > 1) {
                let rep = slice[g[0].index()];
                for r in &g[1..] {
                    slice[r.index()] = rep;
                }
            }
        }
    }
}

/// Constant-in-time initialization with each group value drawn uniformly
/// from `range`.
pub fn random_init<T: Scalar>(grid: TimeGrid<T>, tying: &TyingMap, seed: u64, range: (f64, f64)) -> ParamTrajectory<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rates = RateVector::<T>::zeros();
    for g in tying.groups() {
        let v = T::lit(rng.gen_range(range.0..=range.1));
        for r in g {
            rates[*r] = v;
        }
    }
    ParamTrajectory::constant(grid, rates)
}

pub const DEFAULT_INIT_RANGE: (f64, f64) = (0.0, 0.6);

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig<T> {
    pub schedule: MomentumSchedule,
    pub weights: LossWeights,
    pub tying: TyingMap,
    pub max_epochs: usize,
    /// Recorded with the result; randomness enters only through `init`.
    pub seed: u64,
    /// Starting parameters; its grid is the training grid.
    pub init: ParamTrajectory<T>,
    /// Stop after this many epochs without a better selection loss.
    pub patience: Option<usize>,
}

impl<T: Scalar> FitConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.weights.validate()?;
        self.init.grid.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: ObjectiveBreakdown<f64>,
    /// Fidelity on the validation window, parameters held after training.
    pub validation: Option<f64>,
}

/// Size of the first and last parameter increments relative to the others.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDiagnostic {
    /// `|x_1 - x_0|`.
    pub first: f64,
    /// `|x_N - x_{N-1}|`.
    pub last: f64,
    pub max: f64,
    pub median: f64,
}

impl BoundaryDiagnostic {
    pub fn of<T: Scalar>(x: &FlatParams<T>) -> Self {
        let n = x.node_count();
        let mut steps: Vec<f64> = (0..n.saturating_sub(1))
            .map(|i| {
                x.slice(i + 1).iter().zip(x.slice(i)).map(|(a, b)| (*a - *b).as_f64().powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        if steps.is_empty() {
            return Self { first: 0.0, last: 0.0, max: 0.0, median: 0.0 };
        }
        let (first, last) = (steps[0], steps[steps.len() - 1]);
        steps.sort_by(f64::total_cmp);
        let median = if steps.len() % 2 == 1 {
            steps[steps.len() / 2]
        } else {
            0.5 * (steps[steps.len() / 2 - 1] + steps[steps.len() / 2])
        };
        Self { first, last, max: steps[steps.len() - 1], median }
    }

    pub fn first_relative(&self) -> f64 {
        if self.max > 0.0 { self.first / self.max } else { 0.0 }
    }

    pub fn last_relative(&self) -> f64 {
        if self.max > 0.0 { self.last / self.max } else { 0.0 }
    }

    /// Whether both boundary increments are below the median increment, the
    /// discrete counterpart of vanishing boundary derivatives.
    pub fn boundaries_flat(&self) -> bool {
        self.first <= self.median && self.last <= self.median
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    /// The selected iterate.
    pub params: ParamTrajectory<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub boundary: BoundaryDiagnostic,
    pub seed: u64,
}

impl<T: Scalar> FitResult<T> {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }
}

/// A fit aborted by an integration failure, with everything recorded so far.
#[derive(Debug, thiserror::Error)]
#[error("fit aborted at epoch {epoch}: {source}")]
pub struct FitError<T: Scalar> {
    pub epoch: usize,
    pub source: Error,
    pub partial: Box<FitResult<T>>,
}

impl<T: Scalar> From<FitError<T>> for Error {
    fn from(e: FitError<T>) -> Self {
        e.source
    }
}

/// Fidelity on days following the training window, integrating from the
/// training initial condition with the last-node rates held constant.
pub fn holdout_fidelity<T: Scalar>(
    ic: &InitialCondition<T>,
    params: &ParamTrajectory<T>,
    holdout: &ObservedSeries,
    offset: usize,
    weights: &LossWeights,
) -> Result<[f64; 5]> {
    let first = params.grid.node_count() + offset;
    let extended = params.extended_hold(offset + holdout.len());
    let traj = integrate_heun(ic, &extended)?;
    let parts = window_fidelity(&traj.states, &Targets::new(holdout), first, params.grid.dt(), weights)?;
    Ok(parts.map(|v| v.as_f64()))
}

/// Runs the gradient flow on `train`, selecting the iterate with the lowest
/// validation fidelity (or lowest training objective when `val` is empty).
pub fn fit<T: Scalar>(
    cfg: &FitConfig<T>,
    ic: &InitialCondition<T>,
    train: &ObservedSeries,
    val: &ObservedSeries,
) -> std::result::Result<FitResult<T>, FitError<T>> {
    let grid = cfg.init.grid;
    let mut history = Vec::new();
    let fail = |source: Error, epoch: usize, history: &Vec<EpochRecord>, x: &FlatParams<T>| FitError {
        epoch,
        source,
        partial: Box::new(FitResult {
            params: unflatten(x, grid).unwrap_or_else(|_| cfg.init.clone()),
            history: history.clone(),
            best_epoch: 0,
            epochs_run: history.len().saturating_sub(1),
            boundary: BoundaryDiagnostic::of(x),
            seed: cfg.seed,
        }),
    };
    let mut x = flatten(&cfg.init);
    let problem = match cfg.validate().and_then(|_| Problem::new(*ic, grid, train, cfg.weights)) {
        Ok(p) => p,
        Err(e) => return Err(fail(e, 0, &history, &x)),
    };
    let validation = |x: &FlatParams<T>| -> Result<Option<f64>> {
        if val.is_empty() {
            return Ok(None);
        }
        let params = unflatten(x, grid)?;
        Ok(Some(holdout_fidelity(ic, &params, val, 0, &cfg.weights)?.iter().sum()))
    };
    let evaluate = |x: &FlatParams<T>| -> Result<(ObjectiveBreakdown<T>, FlatParams<T>, Option<f64>)> {
        let (value, grad) = problem.value_and_gradient(x)?;
        Ok((value, grad, validation(x)?))
    };
    let selection = |r: &EpochRecord| r.validation.unwrap_or(r.train.total);

    let (value, mut grad, v) = evaluate(&x).map_err(|e| fail(e, 0, &history, &x))?;
    history.push(EpochRecord { epoch: 0, train: value.to_f64(), validation: v });
    let mut best = (selection(&history[0]), 0usize, x.clone());
    let mut stale = 0usize;

    for epoch in 1..=cfg.max_epochs {
        cfg.tying.tie_gradient(&mut grad);
        let mut next = gf_step(&x, &grad, &cfg.schedule, &grid).map_err(|e| fail(e, epoch, &history, &x))?;
        cfg.tying.project(&mut next);
        x = next;
        let (value, g, v) = evaluate(&x).map_err(|e| fail(e, epoch, &history, &x))?;
        grad = g;
        let record = EpochRecord { epoch, train: value.to_f64(), validation: v };
        let score = selection(&record);
        history.push(record);
        if !score.is_finite() {
            return Err(fail(Error::Divergence { step: epoch, time: f64::NAN }, epoch, &history, &x));
        }
        if score < best.0 {
            best = (score, epoch, x.clone());
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }

    let epochs_run = history.len() - 1;
    let (_, best_epoch, best_x) = best;
    let params = if best_epoch == 0 { cfg.init.clone() } else { unflatten(&best_x, grid).expect("shape preserved") };
    Ok(FitResult { boundary: BoundaryDiagnostic::of(&best_x), params, history, best_epoch, epochs_run, seed: cfg.seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Column;
    use crate::objective::TARGET_STATE;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn schedule_values() {
        let s = MomentumSchedule::new(1e-5, 0.1, 0.3);
        assert_eq!(s.schedule_at(0.0), (1e-5, 0.5));
        let flat = MomentumSchedule::new(2.0, 0.0, 0.3);
        assert!((0..100).all(|t| flat.schedule_at(t as f64).0 == 2.0));
        let gate = MomentumSchedule::new(2.0, 0.1, 0.0);
        assert!((0..100).all(|t| gate.schedule_at(t as f64).1 == 0.5));
        assert_eq!(MomentumSchedule::without_momentum(1.0, 0.0).schedule_at(50.0).1, 0.0);
    }

    #[test]
    fn effective_rate_properties() {
        let s = MomentumSchedule::new(1e-5, 0.0, 0.1);
        assert_eq!(s.effective_learning_rate(0.0), 2e-5);
        let ts: Vec<f64> = (0..1000).map(|k| 188.0 * k as f64 / 999.0).collect();
        assert!(ts.windows(2).all(|w| s.effective_learning_rate(w[1]) > s.effective_learning_rate(w[0])));

        let s = MomentumSchedule::new(1e-5, 0.05, 0.2);
        let t: f64 = 150.0;
        let approx = 1e-5 * (0.2 * t).exp() / (0.05 * t);
        assert_relative_eq!(s.effective_learning_rate(t), approx, max_relative = 1.0 / (0.05 * t) + 1e-9);
    }

    fn grid(n: usize) -> TimeGrid<f64> {
        TimeGrid::daily(n).unwrap()
    }

    #[test]
    fn gf_step_without_momentum_is_plain_descent() {
        let g = grid(7);
        let x = FlatParams((0..144).map(|k| (k as f64 * 0.37).sin()).collect());
        let grad = FlatParams((0..144).map(|k| (k as f64 * 1.3).cos()).collect());
        let s = MomentumSchedule::without_momentum(0.01, 0.0);
        let stepped = gf_step(&x, &grad, &s, &g).unwrap();
        for k in 0..144 {
            assert_eq!(stepped.0[k], x.0[k] - 0.01 * grad.0[k]);
        }
    }

    #[test]
    fn gf_step_two_slices_by_hand() {
        let g = grid(1);
        let x = FlatParams((0..36).map(|k| k as f64).collect());
        let mut grad = FlatParams(vec![0.0; 36]);
        grad.0[..18].iter_mut().enumerate().for_each(|(k, v)| *v = 1.0 + k as f64);
        let s = MomentumSchedule::new(0.1, 0.0, 0.7);
        let out = gf_step(&x, &grad, &s, &g).unwrap();
        let omega1 = 1.0 / (1.0 + (-0.7f64).exp());
        for k in 0..18 {
            let delta0 = (x.0[k] - 0.1 * grad.0[k]) - x.0[k];
            assert_eq!(out.0[k], x.0[k] - 0.1 * grad.0[k]);
            assert_relative_eq!(out.0[18 + k], x.0[18 + k] + omega1 * delta0, max_relative = 1e-15);
        }
    }

    #[test]
    fn tying_behaviour() {
        let mut g = FlatParams(vec![0.0; 36]);
        g.0[Rate::Beta.index()] = 2.0;
        g.0[Rate::Delta.index()] = 5.0;
        g.0[18 + Rate::Xi.index()] = 1.5;
        let mut singles = g.clone();
        TyingMap::untied().tie_gradient(&mut singles);
        assert_eq!(singles, g);
        TyingMap::default().tie_gradient(&mut g);
        assert_eq!(g.0[Rate::Beta.index()], 7.0);
        assert_eq!(g.0[Rate::Delta.index()], 7.0);
        assert_eq!(g.0[18 + Rate::Kappa.index()], 1.5);

        let mut x = FlatParams((0..36).map(|k| k as f64).collect());
        TyingMap::default().project(&mut x);
        assert_eq!(x.0[Rate::Delta.index()], x.0[Rate::Beta.index()]);
        let once = x.clone();
        TyingMap::default().project(&mut x);
        assert_eq!(once, x);
    }

    #[test]
    fn tying_map_validation() {
        assert!(TyingMap::new(vec![vec![Rate::Alpha]]).is_err());
        let mut groups: Vec<Vec<Rate>> = Rate::ALL.iter().map(|r| vec![*r]).collect();
        groups.push(vec![Rate::Alpha]);
        assert!(TyingMap::new(groups).is_err());
        assert_eq!(TyingMap::default().groups().len(), 14);
    }

    fn synthetic(days: usize) -> (InitialCondition<f64>, ObservedSeries, RateVector<f64>) {
        let truth = RateVector::giordano().with(Rate::Alpha, 0.3).with(Rate::Gamma, 0.2);
        let ic = InitialCondition::with_complement([200.0, 20.0, 50.0, 5.0, 2.0, 0.0, 0.0], 0.0, 1e6).unwrap();
        let traj = integrate_heun(&ic, &ParamTrajectory::constant(grid(days - 1), truth)).unwrap();
        let series: [Column; 5] = std::array::from_fn(|j| traj.states.iter().map(|s| Some(s.to_array()[TARGET_STATE[j]])).collect());
        (ic, ObservedSeries::new(None, 1e6, series).unwrap(), truth)
    }

    fn config(init: ParamTrajectory<f64>, max_epochs: usize) -> FitConfig<f64> {
        FitConfig {
            schedule: MomentumSchedule::new(1e-9, 0.0, 0.1),
            weights: LossWeights::uniform(1.0),
            tying: TyingMap::default(),
            max_epochs,
            seed: 7,
            init,
            patience: None,
        }
    }

    #[test]
    fn zero_epochs_returns_init() {
        let (ic, obs, _) = synthetic(15);
        let init = random_init(grid(14), &TyingMap::default(), 3, DEFAULT_INIT_RANGE);
        let out = fit(&config(init.clone(), 0), &ic, &obs, &obs.slice(0, 0).unwrap()).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.epochs_run, 0);
    }

    #[test]
    fn perfect_fit_stays_put() {
        let (ic, obs, truth) = synthetic(20);
        let (train, val) = (obs.slice(0, 15).unwrap(), obs.slice(15, 20).unwrap());
        let out = fit(&config(ParamTrajectory::constant(grid(14), truth), 30), &ic, &train, &val).unwrap();
        assert!(out.history[0].train.total <= 1e-10);
        assert!(out.history.windows(2).all(|w| w[1].train.total <= w[0].train.total.max(1e-10)));
        assert_eq!(out.history.len(), out.epochs_run + 1);
    }

    #[test]
    fn fit_is_deterministic_and_respects_patience() {
        let (ic, obs, _) = synthetic(20);
        let (train, val) = (obs.slice(0, 15).unwrap(), obs.slice(15, 20).unwrap());
        let init = random_init(grid(14), &TyingMap::default(), 11, (0.0, 0.2));
        let mut cfg = config(init, 40);
        cfg.weights = LossWeights::uniform(1e-3);
        let a = fit(&cfg, &ic, &train, &val).unwrap();
        let b = fit(&cfg, &ic, &train, &val).unwrap();
        assert_eq!(a, b);
        cfg.patience = Some(1);
        cfg.schedule.pi0 = 1e-30;
        let c = fit(&cfg, &ic, &train, &val).unwrap();
        assert!(c.epochs_run <= 2, "ran {} epochs", c.epochs_run);
    }

    #[test]
    fn divergence_keeps_partial_history() {
        let (ic, obs, _) = synthetic(20);
        let init = random_init(grid(19), &TyingMap::default(), 1, DEFAULT_INIT_RANGE);
        let mut cfg = config(init, 50);
        cfg.schedule = MomentumSchedule::new(1e3, 0.0, 0.0);
        match fit(&cfg, &ic, &obs, &obs.slice(0, 0).unwrap()) {
            Err(e) => {
                assert!(e.epoch >= 1);
                assert_eq!(e.partial.history.len(), e.epoch.max(1));
            }
            Ok(r) => panic!("expected divergence, ran {} epochs", r.epochs_run),
        }
    }

    #[test]
    fn random_init_respects_tying_and_range() {
        let p = random_init(grid(9), &TyingMap::default(), 42, DEFAULT_INIT_RANGE);
        assert!(p.values.windows(2).all(|w| w[0] == w[1]));
        let r = p.values[0];
        assert_eq!(r[Rate::Beta], r[Rate::Delta]);
        assert_eq!(r[Rate::Eta], r[Rate::Zeta]);
        assert!(r.as_array().iter().all(|v| (0.0..=0.6).contains(v)));
        assert_eq!(p, random_init(grid(9), &TyingMap::default(), 42, DEFAULT_INIT_RANGE));
        assert_ne!(p, random_init(grid(9), &TyingMap::default(), 43, DEFAULT_INIT_RANGE));
    }

    #[test]
    fn boundary_diagnostic_on_ramp() {
        let x = FlatParams((0..5 * 18).map(|k| [0.0, 0.1, 0.5, 0.9, 1.0][k / 18]).collect());
        let d = BoundaryDiagnostic::of(&x);
        assert_relative_eq!(d.first, 0.1 * 18f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(d.max, 0.4 * 18f64.sqrt(), max_relative = 1e-12);
        assert!(d.boundaries_flat());
        assert_relative_eq!(d.first_relative(), 0.25, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn zero_gradient_is_identity(vals in prop::collection::vec(-2.0f64..2.0, 18 * 6), b in 0.0f64..1.0, a in 0.0f64..0.3) {
            let x = FlatParams(vals);
            let g = FlatParams(vec![0.0; x.len()]);
            prop_assert_eq!(gf_step(&x, &g, &MomentumSchedule::new(0.5, a, b), &grid(5)).unwrap(), x);
        }

        #[test]
        fn projection_is_idempotent(vals in prop::collection::vec(-2.0f64..2.0, 18 * 4)) {
            let mut x = FlatParams(vals);
            let tying = TyingMap::default();
            tying.project(&mut x);
            let once = x.clone();
            tying.project(&mut x);
            prop_assert_eq!(once, x);
        }
    }

    #[test]
    fn holdout_uses_held_rates() {
        let (ic, obs, truth) = synthetic(20);
        let params = ParamTrajectory::constant(grid(14), truth);
        let tail = obs.slice(15, 20).unwrap();
        let f = holdout_fidelity(&ic, &params, &tail, 0, &LossWeights::uniform(1.0)).unwrap();
        assert!(f.iter().sum::<f64>() < 1e-12);
    }
}
