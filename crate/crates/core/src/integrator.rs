//! Fixed-step Heun integration of the augmented SIDARTHE system with
//! time-variant rates sampled on a uniform grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AugmentedState, InitialCondition, RateVector, SidartheModel, AUGMENTED_DIM, RATE_COUNT};
use crate::scalar::Scalar;

/// How rate samples are read between grid nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Zero-order hold: the sample at `t_i` is used on `[t_i, t_{i+1})`.
    #[default]
    Hold,
    Linear,
}

/// Uniform partition `t_i = t_start + i * dt`, `i = 0..=n_intervals`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<T> {
    pub t_start: T,
    pub horizon: T,
    pub n_intervals: usize,
    #[serde(default = "one")]
    pub substeps: usize,
    #[serde(default)]
    pub interpolation: Interpolation,
}

fn one() -> usize {
    1
}

impl<T: Scalar> TimeGrid<T> {
    pub fn new(t_start: T, horizon: T, n_intervals: usize) -> Result<Self> {
        let g = Self { t_start, horizon, n_intervals, substeps: 1, interpolation: Interpolation::Hold };
        g.validate()?;
        Ok(g)
    }

    /// One node per day, starting at day 0.
    pub fn daily(n_intervals: usize) -> Result<Self> {
        Self::new(T::zero(), T::from_usize_lossy(n_intervals), n_intervals)
    }

    pub fn with_substeps(mut self, substeps: usize) -> Result<Self> {
        self.substeps = substeps;
        self.validate()?;
        Ok(self)
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_intervals == 0 {
            return Err(Error::Config("time grid needs at least one interval".into()));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps per interval must be at least 1".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > T::zero()) || !self.t_start.is_finite() {
            return Err(Error::Config(format!("invalid horizon {} (t_start {})", self.horizon, self.t_start)));
        }
        Ok(())
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.horizon / T::from_usize_lossy(self.n_intervals)
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.n_intervals + 1
    }

    #[inline]
    pub fn node_time(&self, i: usize) -> T {
        self.t_start + T::from_usize_lossy(i) * self.dt()
    }

    #[inline]
    pub fn t_end(&self) -> T {
        self.t_start + self.horizon
    }

    /// Same spacing and settings, `extra` more intervals.
    pub fn extended(&self, extra: usize) -> Self {
        let n = self.n_intervals + extra;
        Self { horizon: self.dt() * T::from_usize_lossy(n), n_intervals: n, ..*self }
    }

    /// Node weights used for the two Heun stages of sub-step `j` in interval
    /// `i`. Each stage reads `w0 * x_i + w1 * x_{i+1}`.
    #[inline]
    pub(crate) fn stage_weights(&self, j: usize) -> [(T, T); 2] {
        let s = self.substeps;
        match self.interpolation {
            Interpolation::Hold => {
                let second = if j + 1 == s { (T::zero(), T::one()) } else { (T::one(), T::zero()) };
                [(T::one(), T::zero()), second]
            }
            Interpolation::Linear => {
                let sf = T::from_usize_lossy(s);
                let a = T::from_usize_lossy(j) / sf;
                let b = T::from_usize_lossy(j + 1) / sf;
                [(T::one() - a, a), (T::one() - b, b)]
            }
        }
    }
}

/// Rates sampled at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTrajectory<T> {
    pub grid: TimeGrid<T>,
    pub values: Vec<RateVector<T>>,
}

impl<T: Scalar> ParamTrajectory<T> {
    pub fn new(grid: TimeGrid<T>, values: Vec<RateVector<T>>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Shape { expected: grid.node_count(), actual: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("rate sample {i} is not finite")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid<T>, rates: RateVector<T>) -> Self {
        Self { grid, values: vec![rates; grid.node_count()] }
    }

    /// Holds the final sample constant over `extra` further intervals.
    pub fn extended_hold(&self, extra: usize) -> Self {
        let mut values = self.values.clone();
        let last = *values.last().expect("trajectory has at least one node");
        values.extend(std::iter::repeat_n(last, extra));
        Self { grid: self.grid.extended(extra), values }
    }

    /// Rates in effect at time `t`.
    pub fn rate_at(&self, t: T) -> Result<RateVector<T>> {
        let g = &self.grid;
        if !(t >= g.t_start && t <= g.t_end()) {
            return Err(Error::Range(format!("t = {t} outside [{}, {}]", g.t_start, g.t_end())));
        }
        let pos = (t - g.t_start) / g.dt();
        let i = pos.floor().to_usize().unwrap_or(0).min(g.n_intervals);
        match g.interpolation {
            Interpolation::Hold => Ok(self.values[i]),
            Interpolation::Linear => {
                if i == g.n_intervals {
                    return Ok(self.values[i]);
                }
                let w = pos - T::from_usize_lossy(i);
                Ok(lerp(&self.values[i], &self.values[i + 1], T::one() - w, w))
            }
        }
    }
}

#[inline]
fn lerp<T: Scalar>(a: &RateVector<T>, b: &RateVector<T>, wa: T, wb: T) -> RateVector<T> {
    let (a, b) = (a.as_array(), b.as_array());
    let mut out = [T::zero(); RATE_COUNT];
    for k in 0..RATE_COUNT {
        out[k] = wa * a[k] + wb * b[k];
    }
    RateVector::from_array(out)
}

#[inline]
fn mix<T: Scalar>(a: &[T; RATE_COUNT], b: &[T; RATE_COUNT], (wa, wb): (T, T)) -> [T; RATE_COUNT] {
    if wb == T::zero() {
        return *a;
    }
    if wa == T::zero() {
        return *b;
    }
    let mut out = [T::zero(); RATE_COUNT];
    for k in 0..RATE_COUNT {
        out[k] = wa * a[k] + wb * b[k];
    }
    out
}

/// States at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub grid: TimeGrid<T>,
    pub states: Vec<AugmentedState<T>>,
}

impl<T: Scalar> Trajectory<T> {
    /// Compartment totals at each node.
    pub fn totals(&self) -> Vec<T> {
        self.states.iter().map(|s| s.state.total()).collect()
    }
}

/// Every sub-step state of one integration, `n_intervals * substeps + 1` rows.
pub(crate) struct DenseSolution<T> {
    pub steps: Vec<[T; AUGMENTED_DIM]>,
}

impl<T: Scalar> DenseSolution<T> {
    pub fn node(&self, grid: &TimeGrid<T>, i: usize) -> &[T; AUGMENTED_DIM] {
        &self.steps[i * grid.substeps]
    }
}

#[inline]
pub(crate) fn heun_step<T: Scalar>(
    model: &SidartheModel<T>,
    y: &[T; AUGMENTED_DIM],
    p1: &[T; RATE_COUNT],
    p2: &[T; RATE_COUNT],
    h: T,
) -> [T; AUGMENTED_DIM] {
    let k1 = model.derivative(y, p1);
    let mut pred = *y;
    for k in 0..AUGMENTED_DIM {
        pred[k] += h * k1[k];
    }
    let k2 = model.derivative(&pred, p2);
    let half = h / T::lit(2.0);
    let mut next = *y;
    for k in 0..AUGMENTED_DIM {
        next[k] += half * (k1[k] + k2[k]);
    }
    next
}

pub(crate) fn integrate_dense<T: Scalar>(
    ic: &InitialCondition<T>,
    params: &ParamTrajectory<T>,
) -> Result<DenseSolution<T>> {
    ic.validate()?;
    let grid = &params.grid;
    grid.validate()?;
    if params.values.len() != grid.node_count() {
        return Err(Error::Shape { expected: grid.node_count(), actual: params.values.len() });
    }
    let model = ic.model();
    let s = grid.substeps;
    let h = grid.dt() / T::from_usize_lossy(s);
    let mut steps = Vec::with_capacity(grid.n_intervals * s + 1);
    let mut y = ic.augmented().to_array();
    steps.push(y);
    for i in 0..grid.n_intervals {
        let (lo, hi) = (params.values[i].as_array(), params.values[i + 1].as_array());
        for j in 0..s {
            let [w1, w2] = grid.stage_weights(j);
            y = heun_step(&model, &y, &mix(lo, hi, w1), &mix(lo, hi, w2), h);
            if y.iter().any(|v| !v.is_finite()) {
                let step = i * s + j + 1;
                return Err(Error::Divergence {
                    step,
                    time: (grid.t_start + h * T::from_usize_lossy(step)).as_f64(),
                });
            }
            steps.push(y);
        }
    }
    Ok(DenseSolution { steps })
}

/// Integrates the augmented system with Heun's method, recording the state at
/// every grid node.
pub fn integrate_heun<T: Scalar>(ic: &InitialCondition<T>, params: &ParamTrajectory<T>) -> Result<Trajectory<T>> {
    if !params.values.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("rate trajectory is not finite".into()));
    }
    let dense = integrate_dense(ic, params)?;
    let grid = params.grid;
    let states = (0..grid.node_count())
        .map(|i| AugmentedState::from_array(dense.node(&grid, i)))
        .collect();
    Ok(Trajectory { grid, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Compartment, Rate, StateVector};

    fn decay_ic() -> InitialCondition<f64> {
        InitialCondition {
            z0: StateVector::zeros().with(Compartment::T, 1.0).with(Compartment::S, 1.0),
            h_d0: 0.0,
            population: 2.0,
        }
    }

    fn decay_error(n: usize, substeps: usize) -> f64 {
        let tau = 0.3;
        let grid = TimeGrid::new(0.0, 10.0, n).unwrap().with_substeps(substeps).unwrap();
        let params = ParamTrajectory::constant(grid, RateVector::zeros().with(Rate::Tau, tau));
        let traj = integrate_heun(&decay_ic(), &params).unwrap();
        (0..grid.node_count())
            .map(|i| (traj.states[i].state[Compartment::T] - (-tau * grid.node_time(i)).exp()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rate_at_hold_semantics() {
        let grid = TimeGrid::<f64>::daily(3).unwrap();
        let values: Vec<_> = (0..4).map(|i| RateVector::zeros().with(Rate::Alpha, i as f64)).collect();
        let p = ParamTrajectory::new(grid, values.clone()).unwrap();
        for (i, v) in values.iter().enumerate() {
            assert_eq!(p.rate_at(i as f64).unwrap(), *v);
        }
        assert_eq!(p.rate_at(1.5).unwrap(), values[1]);
        assert!(matches!(p.rate_at(3.0001), Err(Error::Range(_))));
        assert!(matches!(p.rate_at(-0.1), Err(Error::Range(_))));
    }

    #[test]
    fn rate_at_linear_option() {
        let grid = TimeGrid::<f64>::daily(2).unwrap().with_interpolation(Interpolation::Linear);
        let values: Vec<_> = (0..3).map(|i| RateVector::zeros().with(Rate::Alpha, 2.0 * i as f64)).collect();
        let p = ParamTrajectory::new(grid, values).unwrap();
        assert_eq!(p.rate_at(0.5).unwrap()[Rate::Alpha], 1.0);
        assert_eq!(p.rate_at(2.0).unwrap()[Rate::Alpha], 4.0);
    }

    #[test]
    fn constant_trajectory_is_constant_everywhere() {
        let grid = TimeGrid::new(5.0, 4.0, 8).unwrap();
        let p = ParamTrajectory::constant(grid, RateVector::giordano());
        for k in 0..=40 {
            assert_eq!(p.rate_at(5.0 + 0.1 * k as f64).unwrap(), RateVector::giordano());
        }
    }

    #[test]
    fn zero_rates_leave_state_unchanged() {
        let ic = InitialCondition::with_complement([3.0, 2.0, 1.0, 1.0, 0.5, 0.2, 0.1], 0.3, 100.0).unwrap();
        let grid = TimeGrid::daily(20).unwrap().with_substeps(3).unwrap();
        let traj = integrate_heun(&ic, &ParamTrajectory::constant(grid, RateVector::zeros())).unwrap();
        assert!(traj.states.iter().all(|s| *s == ic.augmented()));
    }

    #[test]
    fn analytic_decay_second_order() {
        let e1 = decay_error(10, 1);
        let e2 = decay_error(20, 1);
        let order = (e1 / e2).log2();
        assert!((1.7..=2.3).contains(&order), "observed order {order}");
        // Sub-stepping refines the same way.
        let ratio = decay_error(10, 1) / decay_error(10, 2);
        assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn first_state_is_initial_condition_and_runs_are_bitwise_deterministic() {
        let ic = InitialCondition::with_complement([50.0, 20.0, 10.0, 5.0, 2.0, 1.0, 0.5], 1.0, 1e5).unwrap();
        let grid = TimeGrid::daily(30).unwrap();
        let p = ParamTrajectory::constant(grid, RateVector::giordano());
        let a = integrate_heun(&ic, &p).unwrap();
        let b = integrate_heun(&ic, &p).unwrap();
        assert_eq!(a.states[0], ic.augmented());
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let ic = InitialCondition::with_complement([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0, 10.0).unwrap();
        let grid = TimeGrid::daily(50).unwrap();
        // A huge negative removal rate makes I grow without bound.
        let p = ParamTrajectory::constant(grid, RateVector::zeros().with(Rate::Lambda, -1e8));
        match integrate_heun(&ic, &p) {
            Err(Error::Divergence { step, .. }) => assert!(step > 0 && step <= 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn extended_hold_repeats_last_node() {
        let grid = TimeGrid::<f64>::daily(2).unwrap();
        let values: Vec<_> = (0..3).map(|i| RateVector::zeros().with(Rate::Mu, i as f64)).collect();
        let p = ParamTrajectory::new(grid, values).unwrap().extended_hold(3);
        assert_eq!(p.values.len(), 6);
        assert_eq!(p.grid.n_intervals, 5);
        assert_eq!(p.grid.dt(), 1.0);
        assert!(p.values[2..].iter().all(|v| v[Rate::Mu] == 2.0));
    }

    #[test]
    fn runs_in_single_precision() {
        let ic = InitialCondition::<f32>::with_complement([5.0, 2.0, 1.0, 1.0, 0.0, 0.0, 0.0], 0.0, 1e4).unwrap();
        let grid = TimeGrid::<f32>::daily(40).unwrap();
        let traj = integrate_heun(&ic, &ParamTrajectory::constant(grid, RateVector::giordano())).unwrap();
        let drift = traj.totals().iter().map(|t| (t - 1e4).abs()).fold(0.0f32, f32::max);
        assert!(drift <= 1e-2, "drift {drift}");
    }
}
