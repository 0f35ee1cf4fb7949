//! Discretized risk: data fidelity, derivative penalty and positivity
//! penalty, together with its exact gradient.
//!
//! A parameter trajectory with `N + 1` nodes is flattened time-major into a
//! vector of length `18 (N + 1)`: the 18 rates at `t_0`, then at `t_1`, and so
//! on. Slice `i` (components `18 i .. 18 i + 17`) is the rate vector at `t_i`.
//!
//! The gradient is accumulated in reverse through every Heun sub-step, so it
//! is exact for the discrete objective up to floating-point rounding.

use serde::{Deserialize, Serialize};

use crate::data::{ObservedSeries, Target};
use crate::error::{Error, Result};
use crate::integrator::{integrate_dense, DenseSolution, ParamTrajectory, TimeGrid, Trajectory};
use crate::model::{AugmentedState, InitialCondition, RateVector, AUGMENTED_DIM, H_D, RATE_COUNT};
use crate::scalar::Scalar;

/// Augmented-state index compared against each target.
pub const TARGET_STATE: [usize; 5] = [2, 4, 5, H_D, 7];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub e_d: f64,
    pub e_r: f64,
    pub e_t: f64,
    pub e_h: f64,
    pub e_e: f64,
    /// Weight of the squared time derivative of the rates.
    pub m: f64,
    /// Weight of the positivity penalty.
    pub e_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { e_d: 1.0, e_r: 1.0, e_t: 1.0, e_h: 1.0, e_e: 1.0, m: 0.0, e_p: 0.0 }
    }
}

impl LossWeights {
    pub fn uniform(e: f64) -> Self {
        Self { e_d: e, e_r: e, e_t: e, e_h: e, e_e: e, m: 0.0, e_p: 0.0 }
    }

    pub fn fidelity(&self) -> [f64; 5] {
        [self.e_d, self.e_r, self.e_t, self.e_h, self.e_e]
    }

    pub fn with_fidelity(mut self, e: [f64; 5]) -> Self {
        [self.e_d, self.e_r, self.e_t, self.e_h, self.e_e] = e;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.e_d, self.e_r, self.e_t, self.e_h, self.e_e, self.m, self.e_p];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")))
        }
    }
}

/// Parameters flattened time-major, length `18 (N + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams<T>(pub Vec<T>);

impl<T: Scalar> FlatParams<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Rates at node `i`.
    #[inline]
    pub fn slice(&self, i: usize) -> &[T] {
        &self.0[RATE_COUNT * i..RATE_COUNT * (i + 1)]
    }

    #[inline]
    pub fn slice_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.0[RATE_COUNT * i..RATE_COUNT * (i + 1)]
    }

    pub fn node_count(&self) -> usize {
        self.0.len() / RATE_COUNT
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }
}

pub fn flatten<T: Scalar>(params: &ParamTrajectory<T>) -> FlatParams<T> {
    FlatParams(params.values.iter().flat_map(|r| r.as_array().iter().copied()).collect())
}

pub fn unflatten<T: Scalar>(x: &FlatParams<T>, grid: TimeGrid<T>) -> Result<ParamTrajectory<T>> {
    let expected = RATE_COUNT * grid.node_count();
    if x.len() != expected {
        return Err(Error::Shape { expected, actual: x.len() });
    }
    let values = x.0.chunks_exact(RATE_COUNT).map(|c| RateVector::from_slice(c)).collect::<Result<_>>()?;
    ParamTrajectory::new(grid, values)
}

/// Per-term values of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown<T> {
    /// Fidelity per target in D, R, T, H, E order.
    pub fidelity: [T; 5],
    pub derivative_penalty: T,
    /// Squared-hinge surrogate that enters the differentiated objective.
    pub positivity_penalty: T,
    /// `e_P * dt * #{negative samples}`, reported but not differentiated.
    pub positivity_indicator: T,
    pub total: T,
}

impl<T: Scalar> ObjectiveBreakdown<T> {
    pub fn fidelity_total(&self) -> T {
        self.fidelity.iter().copied().sum()
    }

    pub fn to_f64(&self) -> ObjectiveBreakdown<f64> {
        ObjectiveBreakdown {
            fidelity: self.fidelity.map(|v| v.as_f64()),
            derivative_penalty: self.derivative_penalty.as_f64(),
            positivity_penalty: self.positivity_penalty.as_f64(),
            positivity_indicator: self.positivity_indicator.as_f64(),
            total: self.total.as_f64(),
        }
    }
}

/// Observations converted to the working scalar, one row per node.
#[derive(Debug, Clone)]
pub struct Targets<T> {
    rows: Vec<[Option<T>; 5]>,
}

impl<T: Scalar> Targets<T> {
    pub fn new(obs: &ObservedSeries) -> Self {
        let rows = (0..obs.len())
            .map(|day| Target::ALL.map(|t| obs.get(t, day).map(T::lit)))
            .collect();
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[inline]
fn weights_as<T: Scalar>(w: &LossWeights) -> [T; 5] {
    w.fidelity().map(T::lit)
}

/// `dt * sum_i phi(t_i)` where observation day `k` is compared against node
/// `first_node + k`. Returns the contribution of each target separately.
pub fn window_fidelity<T: Scalar>(
    states: &[AugmentedState<T>],
    targets: &Targets<T>,
    first_node: usize,
    dt: T,
    w: &LossWeights,
) -> Result<[T; 5]> {
    if first_node + targets.len() > states.len() {
        return Err(Error::Shape { expected: states.len(), actual: first_node + targets.len() });
    }
    let e = weights_as::<T>(w);
    let half = T::lit(0.5);
    let mut out = [T::zero(); 5];
    for (k, row) in targets.rows.iter().enumerate() {
        let y = states[first_node + k].to_array();
        for (j, obs) in row.iter().enumerate() {
            if let Some(o) = obs {
                let r = y[TARGET_STATE[j]] - *o;
                out[j] += half * e[j] * r * r;
            }
        }
    }
    Ok(out.map(|v| v * dt))
}

/// Data fidelity of a trajectory against observations on the same day index.
pub fn data_fidelity<T: Scalar>(traj: &Trajectory<T>, obs: &ObservedSeries, w: &LossWeights) -> Result<T> {
    if obs.len() != traj.states.len() {
        return Err(Error::Shape { expected: traj.states.len(), actual: obs.len() });
    }
    let parts = window_fidelity(&traj.states, &Targets::new(obs), 0, traj.grid.dt(), w)?;
    Ok(parts.iter().copied().sum())
}

/// `(m / 2) * sum_i |x_{i+1} - x_i|^2 / dt`.
pub fn derivative_penalty<T: Scalar>(x: &FlatParams<T>, m: f64, grid: &TimeGrid<T>) -> T {
    if m == 0.0 {
        return T::zero();
    }
    T::lit(m / 2.0) * squared_increments(x) / grid.dt()
}

/// `sum_i |x_{i+1} - x_i|^2`, the discrete derivative norm used in reports.
pub fn squared_increments<T: Scalar>(x: &FlatParams<T>) -> T {
    x.0.windows(RATE_COUNT + 1)
        .map(|w| {
            let d = w[RATE_COUNT] - w[0];
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Positivity<T> {
    /// `e_P * dt * #{(i, j): x_ij < 0}`.
    pub indicator: T,
    /// `e_P * dt * sum max(0, -x_ij)^2`.
    pub surrogate: T,
}

pub fn positivity_penalty<T: Scalar>(x: &FlatParams<T>, e_p: f64, grid: &TimeGrid<T>) -> Positivity<T> {
    if e_p == 0.0 {
        return Positivity { indicator: T::zero(), surrogate: T::zero() };
    }
    let (count, sq) = x.0.iter().filter(|v| **v < T::zero()).fold((0usize, T::zero()), |(c, s), v| (c + 1, s + *v * *v));
    let scale = T::lit(e_p) * grid.dt();
    Positivity { indicator: scale * T::from_usize_lossy(count), surrogate: scale * sq }
}

/// A fitting problem on one training window.
#[derive(Debug, Clone)]
pub struct Problem<T> {
    pub ic: InitialCondition<T>,
    pub grid: TimeGrid<T>,
    pub weights: LossWeights,
    targets: Targets<T>,
}

impl<T: Scalar> Problem<T> {
    /// `obs` day `k` is matched to grid node `k`; the series must cover every node.
    pub fn new(ic: InitialCondition<T>, grid: TimeGrid<T>, obs: &ObservedSeries, weights: LossWeights) -> Result<Self> {
        ic.validate()?;
        grid.validate()?;
        weights.validate()?;
        if obs.len() != grid.node_count() {
            return Err(Error::Shape { expected: grid.node_count(), actual: obs.len() });
        }
        Ok(Self { ic, grid, weights, targets: Targets::new(obs) })
    }

    pub fn dim(&self) -> usize {
        RATE_COUNT * self.grid.node_count()
    }

    fn check(&self, x: &FlatParams<T>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape { expected: self.dim(), actual: x.len() });
        }
        Ok(())
    }

    pub fn objective(&self, x: &FlatParams<T>) -> Result<ObjectiveBreakdown<T>> {
        self.check(x)?;
        let params = unflatten(x, self.grid)?;
        let dense = integrate_dense(&self.ic, &params)?;
        Ok(self.breakdown(x, &dense))
    }

    fn breakdown(&self, x: &FlatParams<T>, dense: &DenseSolution<T>) -> ObjectiveBreakdown<T> {
        let states: Vec<_> =
            (0..self.grid.node_count()).map(|i| AugmentedState::from_array(dense.node(&self.grid, i))).collect();
        let fidelity = window_fidelity(&states, &self.targets, 0, self.grid.dt(), &self.weights)
            .expect("targets cover the grid by construction");
        let derivative = derivative_penalty(x, self.weights.m, &self.grid);
        let pos = positivity_penalty(x, self.weights.e_p, &self.grid);
        let total = fidelity.iter().copied().sum::<T>() + derivative + pos.surrogate;
        ObjectiveBreakdown {
            fidelity,
            derivative_penalty: derivative,
            positivity_penalty: pos.surrogate,
            positivity_indicator: pos.indicator,
            total,
        }
    }

    pub fn gradient(&self, x: &FlatParams<T>) -> Result<FlatParams<T>> {
        self.value_and_gradient(x).map(|(_, g)| g)
    }

    /// Objective breakdown and the gradient of its `total`.
    pub fn value_and_gradient(&self, x: &FlatParams<T>) -> Result<(ObjectiveBreakdown<T>, FlatParams<T>)> {
        self.check(x)?;
        let params = unflatten(x, self.grid)?;
        let dense = integrate_dense(&self.ic, &params)?;
        let value = self.breakdown(x, &dense);
        let mut grad = vec![T::zero(); self.dim()];
        self.backpropagate(x, &dense, &mut grad);
        add_derivative_gradient(x, self.weights.m, &self.grid, &mut grad);
        add_positivity_gradient(x, self.weights.e_p, &self.grid, &mut grad);
        Ok((value, FlatParams(grad)))
    }

    /// Reverse sweep of the fidelity term through the Heun recursion.
    fn backpropagate(&self, x: &FlatParams<T>, dense: &DenseSolution<T>, grad: &mut [T]) {
        let grid = &self.grid;
        let model = self.ic.model();
        let s = grid.substeps;
        let dt = grid.dt();
        let h = dt / T::from_usize_lossy(s);
        let half = h / T::lit(2.0);
        let e = weights_as::<T>(&self.weights);
        let as_rates = |i: usize| -> [T; RATE_COUNT] { x.slice(i).try_into().expect("slice has 18 rates") };

        let mut adj = [T::zero(); AUGMENTED_DIM];
        for i in (0..grid.node_count()).rev() {
            let y = dense.node(grid, i);
            for (j, obs) in self.targets.rows[i].iter().enumerate() {
                if let Some(o) = obs {
                    let k = TARGET_STATE[j];
                    adj[k] += dt * e[j] * (y[k] - *o);
                }
            }
            if i == 0 {
                break;
            }
            let lo = i - 1;
            let (x_lo, x_hi) = (as_rates(lo), as_rates(i));
            for j in (0..s).rev() {
                let [w1, w2] = grid.stage_weights(j);
                let p1 = mix(&x_lo, &x_hi, w1);
                let p2 = mix(&x_lo, &x_hi, w2);
                let y = &dense.steps[lo * s + j];
                let k1 = model.derivative(y, &p1);
                let mut pred = *y;
                for k in 0..AUGMENTED_DIM {
                    pred[k] += h * k1[k];
                }
                let v2 = adj.map(|a| a * half);
                let (g_pred, gp2) = model.vjp(&pred, &p2, &v2);
                let mut v1 = v2;
                for k in 0..AUGMENTED_DIM {
                    v1[k] += h * g_pred[k];
                }
                let (g_y, gp1) = model.vjp(y, &p1, &v1);
                for k in 0..AUGMENTED_DIM {
                    adj[k] += g_pred[k] + g_y[k];
                }
                scatter(grad, lo, i, &gp1, w1);
                scatter(grad, lo, i, &gp2, w2);
            }
        }
    }
}

#[inline]
fn mix<T: Scalar>(a: &[T; RATE_COUNT], b: &[T; RATE_COUNT], (wa, wb): (T, T)) -> [T; RATE_COUNT] {
    let mut out = [T::zero(); RATE_COUNT];
    for k in 0..RATE_COUNT {
        out[k] = wa * a[k] + wb * b[k];
    }
    out
}

#[inline]
fn scatter<T: Scalar>(grad: &mut [T], lo: usize, hi: usize, g: &[T; RATE_COUNT], (wa, wb): (T, T)) {
    for (node, w) in [(lo, wa), (hi, wb)] {
        if w != T::zero() {
            for (dst, v) in grad[RATE_COUNT * node..RATE_COUNT * (node + 1)].iter_mut().zip(g) {
                *dst += w * *v;
            }
        }
    }
}

/// Adds `(m / dt) * L x`, with `L` the path-graph Laplacian over time.
pub fn add_derivative_gradient<T: Scalar>(x: &FlatParams<T>, m: f64, grid: &TimeGrid<T>, grad: &mut [T]) {
    if m == 0.0 {
        return;
    }
    let c = T::lit(m) / grid.dt();
    for i in 0..x.node_count().saturating_sub(1) {
        for k in 0..RATE_COUNT {
            let a = RATE_COUNT * i + k;
            let b = a + RATE_COUNT;
            let d = c * (x.0[b] - x.0[a]);
            grad[a] -= d;
            grad[b] += d;
        }
    }
}

pub fn add_positivity_gradient<T: Scalar>(x: &FlatParams<T>, e_p: f64, grid: &TimeGrid<T>, grad: &mut [T]) {
    if e_p == 0.0 {
        return;
    }
    let c = T::lit(2.0 * e_p) * grid.dt();
    for (g, v) in grad.iter_mut().zip(&x.0) {
        if *v < T::zero() {
            *g += c * *v;
        }
    }
}
