#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sidarthe::data::{Column, ObservedSeries, SplitSpec, Target};
use sidarthe::evaluation::{Cell, RunRecord, SweepBase};
use sidarthe::integrator::{integrate_heun, ParamTrajectory, TimeGrid};
use sidarthe::model::{InitialCondition, RateVector, RATE_COUNT};
use sidarthe::objective::TARGET_STATE;

pub const SYNTH_DAYS: usize = 60;
pub const SYNTH_TRAIN: usize = 50;
pub const SYNTH_TEST: usize = 10;
pub const SYNTH_SUBSTEPS: usize = 2;

pub fn synthetic_truth() -> RateVector<f64> {
    RateVector::from_array([
        0.3, 0.1, 0.25, 0.1, 0.15, 0.1, 0.1, 0.25, 0.1, 0.1, 0.1, 0.15, 0.1, 0.1, 0.15, 0.05, 0.05, 0.1,
    ])
}

/// Population fractions seeded at two per mille infected.
pub fn synthetic_ic() -> InitialCondition<f64> {
    InitialCondition::with_complement([2e-3, 2e-3, 2e-4, 2e-4, 2e-5, 1e-5, 5e-6], 1e-5, 1.0).unwrap()
}

pub fn observe(ic: &InitialCondition<f64>, truth: &RateVector<f64>, days: usize, substeps: usize) -> ObservedSeries {
    let grid = TimeGrid::daily(days - 1).unwrap().with_substeps(substeps).unwrap();
    let traj = integrate_heun(ic, &ParamTrajectory::constant(grid, *truth)).unwrap();
    let series: [Column; 5] =
        std::array::from_fn(|j| traj.states.iter().map(|s| Some(s.to_array()[TARGET_STATE[j]])).collect());
    ObservedSeries::new(None, ic.population, series).unwrap()
}

pub fn synthetic_series() -> ObservedSeries {
    observe(&synthetic_ic(), &synthetic_truth(), SYNTH_DAYS, SYNTH_SUBSTEPS)
}

/// `scale / mean(train_j)^2` so every series contributes on a relative scale.
pub fn relative_weights(obs: &ObservedSeries, train: usize, scale: f64) -> [f64; 5] {
    std::array::from_fn(|j| {
        let values: Vec<f64> = obs.series(Target::ALL[j])[..train].iter().flatten().copied().collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        scale / (mean * mean)
    })
}

pub const SYNTH_WEIGHT_SCALE: f64 = 4000.0;

pub fn synthetic_base(obs: &ObservedSeries) -> SweepBase {
    SweepBase {
        pi0: 2.5e-9,
        e_p: 4e5,
        max_epochs: 300_000,
        split: SplitSpec { train: SYNTH_TRAIN, validation: 0, test: SYNTH_TEST },
        substeps: SYNTH_SUBSTEPS,
        eval_weights: relative_weights(obs, SYNTH_TRAIN, SYNTH_WEIGHT_SCALE),
        ..SweepBase::default()
    }
}

pub fn synthetic_cell(obs: &ObservedSeries, momentum: bool, m: f64) -> Cell {
    Cell {
        a: 0.0,
        b: if momentum { 0.2 } else { 0.0 },
        momentum,
        m,
        e: relative_weights(obs, SYNTH_TRAIN, SYNTH_WEIGHT_SCALE),
        train_days: SYNTH_TRAIN,
    }
}

pub fn seed_runs(cell: &Cell, base: &SweepBase, obs: &ObservedSeries, seeds: u64) -> Vec<RunRecord> {
    let ic = sidarthe::data::build_initial_condition(obs, obs.population).unwrap();
    (0..seeds)
        .map(|seed| sidarthe::evaluation::run_one(cell, seed, base, obs, &ic).unwrap())
        .collect()
}

/// Rates drawn uniformly from `(lo, hi)`.
pub fn random_rates(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> RateVector<f64> {
    let mut values = [0.0; RATE_COUNT];
    for v in &mut values {
        *v = rng.gen_range(lo..hi);
    }
    RateVector::from_array(values)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
