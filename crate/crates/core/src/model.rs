//! Extended SIDARTHE dynamics.
//!
//! Eight compartments (S, I, D, A, R, T, H, E) exchange population through
//! eighteen non-negative rates. Two death flows, `phi` (A to E) and `chi`
//! (R to E), extend the original model so that deaths outside intensive care
//! can be represented.
//!
//! # Population scale
//!
//! Compartments are stored as absolute head counts. The bilinear infection
//! term is evaluated as `S / N * (alpha I + beta D + gamma A + delta R)` where
//! `N` is the total population held by [`SidartheModel`]. Rates therefore keep
//! their per-day meaning whether the state is given in individuals or as
//! fractions of the population (use `N = 1` for fractions).
//!
//! A ninth integrated component `h_d` accumulates the diagnosed recoveries
//! `rho D + xi R + sigma T`, which is what the recovered series in the
//! national reports actually counts.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const RATE_COUNT: usize = 18;
pub const COMPARTMENT_COUNT: usize = 8;
/// Compartments plus the diagnosed-recovered accumulator.
pub const AUGMENTED_DIM: usize = COMPARTMENT_COUNT + 1;

/// Canonical rate ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rate {
    Alpha,
    Beta,
    Gamma,
    Delta,
    Epsilon,
    Zeta,
    Eta,
    Theta,
    Kappa,
    Lambda,
    Mu,
    Nu,
    Xi,
    Rho,
    Sigma,
    Phi,
    Chi,
    Tau,
}

impl Rate {
    pub const ALL: [Rate; RATE_COUNT] = [
        Rate::Alpha,
        Rate::Beta,
        Rate::Gamma,
        Rate::Delta,
        Rate::Epsilon,
        Rate::Zeta,
        Rate::Eta,
        Rate::Theta,
        Rate::Kappa,
        Rate::Lambda,
        Rate::Mu,
        Rate::Nu,
        Rate::Xi,
        Rate::Rho,
        Rate::Sigma,
        Rate::Phi,
        Rate::Chi,
        Rate::Tau,
    ];

    #[inline]
    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn name(self) -> &'static str {
        match self {
            Rate::Alpha => "alpha",
            Rate::Beta => "beta",
            Rate::Gamma => "gamma",
            Rate::Delta => "delta",
            Rate::Epsilon => "epsilon",
            Rate::Zeta => "zeta",
            Rate::Eta => "eta",
            Rate::Theta => "theta",
            Rate::Kappa => "kappa",
            Rate::Lambda => "lambda",
            Rate::Mu => "mu",
            Rate::Nu => "nu",
            Rate::Xi => "xi",
            Rate::Rho => "rho",
            Rate::Sigma => "sigma",
            Rate::Phi => "phi",
            Rate::Chi => "chi",
            Rate::Tau => "tau",
        }
    }

    pub fn from_name(name: &str) -> Option<Rate> {
        Rate::ALL.into_iter().find(|r| r.name() == name)
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Compartment {
    S,
    I,
    D,
    A,
    R,
    T,
    H,
    E,
}

impl Compartment {
    pub const ALL: [Compartment; COMPARTMENT_COUNT] = [
        Compartment::S,
        Compartment::I,
        Compartment::D,
        Compartment::A,
        Compartment::R,
        Compartment::T,
        Compartment::H,
        Compartment::E,
    ];

    #[inline]
    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn name(self) -> &'static str {
        match self {
            Compartment::S => "S",
            Compartment::I => "I",
            Compartment::D => "D",
            Compartment::A => "A",
            Compartment::R => "R",
            Compartment::T => "T",
            Compartment::H => "H",
            Compartment::E => "E",
        }
    }
}

/// Index of the diagnosed-recovered accumulator in augmented arrays.
pub const H_D: usize = COMPARTMENT_COUNT;

/// The eighteen instantaneous flow rates, in 1/day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateVector<T> {
    values: [T; RATE_COUNT],
}

impl<T: Scalar> Default for RateVector<T> {
    fn default() -> Self {
        Self::zeros()
    }
}

impl<T: Scalar> RateVector<T> {
    pub fn zeros() -> Self {
        Self { values: [T::zero(); RATE_COUNT] }
    }

    pub fn from_array(values: [T; RATE_COUNT]) -> Self {
        Self { values }
    }

    pub fn from_slice(values: &[T]) -> Result<Self> {
        let values: [T; RATE_COUNT] = values.try_into().map_err(|_| Error::Shape {
            expected: RATE_COUNT,
            actual: values.len(),
        })?;
        Ok(Self { values })
    }

    pub fn as_array(&self) -> &[T; RATE_COUNT] {
        &self.values
    }

    pub fn as_mut_array(&mut self) -> &mut [T; RATE_COUNT] {
        &mut self.values
    }

    pub fn with(mut self, rate: Rate, value: T) -> Self {
        self.values[rate.index()] = value;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// True iff every rate is non-negative.
    pub fn is_admissible(&self) -> bool {
        self.values.iter().all(|&v| v >= T::zero())
    }

    pub fn cast<U: Scalar>(&self) -> RateVector<U> {
        RateVector { values: self.values.map(|v| U::lit(v.as_f64())) }
    }

    /// Initial rates reported for Italy at the start of the outbreak
    /// (Giordano et al., 2020), with `phi = chi = 0`.
    pub fn giordano() -> Self {
        let mut r = Self::zeros();
        for (rate, v) in [
            (Rate::Alpha, 0.570),
            (Rate::Beta, 0.011),
            (Rate::Gamma, 0.456),
            (Rate::Delta, 0.011),
            (Rate::Epsilon, 0.171),
            (Rate::Zeta, 0.125),
            (Rate::Eta, 0.125),
            (Rate::Theta, 0.371),
            (Rate::Kappa, 0.017),
            (Rate::Lambda, 0.034),
            (Rate::Mu, 0.017),
            (Rate::Nu, 0.027),
            (Rate::Xi, 0.017),
            (Rate::Rho, 0.034),
            (Rate::Sigma, 0.017),
            (Rate::Tau, 0.01),
        ] {
            r.values[rate.index()] = T::lit(v);
        }
        r
    }
}

impl<T> Index<Rate> for RateVector<T> {
    type Output = T;
    fn index(&self, r: Rate) -> &T {
        &self.values[r as usize]
    }
}

impl<T> IndexMut<Rate> for RateVector<T> {
    fn index_mut(&mut self, r: Rate) -> &mut T {
        &mut self.values[r as usize]
    }
}

/// Serialized form of a rate vector: named fields, absent rates default to zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NamedRates {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub zeta: f64,
    pub eta: f64,
    pub theta: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub xi: f64,
    pub rho: f64,
    pub sigma: f64,
    pub phi: f64,
    pub chi: f64,
    pub tau: f64,
}

impl<T: Scalar> From<NamedRates> for RateVector<T> {
    fn from(n: NamedRates) -> Self {
        RateVector::from_array(
            [
                n.alpha, n.beta, n.gamma, n.delta, n.epsilon, n.zeta, n.eta, n.theta, n.kappa,
                n.lambda, n.mu, n.nu, n.xi, n.rho, n.sigma, n.phi, n.chi, n.tau,
            ]
            .map(T::lit),
        )
    }
}

impl<T: Scalar> From<&RateVector<T>> for NamedRates {
    fn from(r: &RateVector<T>) -> Self {
        let v = r.values.map(|x| x.as_f64());
        NamedRates {
            alpha: v[0],
            beta: v[1],
            gamma: v[2],
            delta: v[3],
            epsilon: v[4],
            zeta: v[5],
            eta: v[6],
            theta: v[7],
            kappa: v[8],
            lambda: v[9],
            mu: v[10],
            nu: v[11],
            xi: v[12],
            rho: v[13],
            sigma: v[14],
            phi: v[15],
            chi: v[16],
            tau: v[17],
        }
    }
}

/// Compartment populations in canonical order S, I, D, A, R, T, H, E.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector<T> {
    values: [T; COMPARTMENT_COUNT],
}

impl<T: Scalar> StateVector<T> {
    pub fn zeros() -> Self {
        Self { values: [T::zero(); COMPARTMENT_COUNT] }
    }

    pub fn from_array(values: [T; COMPARTMENT_COUNT]) -> Self {
        Self { values }
    }

    pub fn as_array(&self) -> &[T; COMPARTMENT_COUNT] {
        &self.values
    }

    pub fn with(mut self, c: Compartment, value: T) -> Self {
        self.values[c.index()] = value;
        self
    }

    pub fn total(&self) -> T {
        self.values.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn is_admissible(&self) -> bool {
        self.values.iter().all(|&v| v >= T::zero())
    }
}

impl<T> Index<Compartment> for StateVector<T> {
    type Output = T;
    fn index(&self, c: Compartment) -> &T {
        &self.values[c as usize]
    }
}

impl<T> IndexMut<Compartment> for StateVector<T> {
    fn index_mut(&mut self, c: Compartment) -> &mut T {
        &mut self.values[c as usize]
    }
}

/// Compartments plus the cumulative count of diagnosed recoveries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState<T> {
    pub state: StateVector<T>,
    pub h_d: T,
}

impl<T: Scalar> AugmentedState<T> {
    pub fn new(state: StateVector<T>, h_d: T) -> Self {
        Self { state, h_d }
    }

    pub fn to_array(&self) -> [T; AUGMENTED_DIM] {
        let mut y = [T::zero(); AUGMENTED_DIM];
        y[..COMPARTMENT_COUNT].copy_from_slice(&self.state.values);
        y[H_D] = self.h_d;
        y
    }

    pub fn from_array(y: &[T; AUGMENTED_DIM]) -> Self {
        let mut values = [T::zero(); COMPARTMENT_COUNT];
        values.copy_from_slice(&y[..COMPARTMENT_COUNT]);
        Self { state: StateVector { values }, h_d: y[H_D] }
    }

    pub fn is_finite(&self) -> bool {
        self.state.is_finite() && self.h_d.is_finite()
    }
}

/// Initial compartments, initial diagnosed recoveries and total population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCondition<T> {
    pub z0: StateVector<T>,
    pub h_d0: T,
    pub population: T,
}

impl<T: Scalar> InitialCondition<T> {
    /// Builds an initial condition whose susceptible count is the complement
    /// of the other seven compartments.
    pub fn with_complement(
        infected: [T; COMPARTMENT_COUNT - 1],
        h_d0: T,
        population: T,
    ) -> Result<Self> {
        let others: T = infected.iter().copied().sum();
        let s0 = population - others;
        let mut values = [T::zero(); COMPARTMENT_COUNT];
        values[0] = s0;
        values[1..].copy_from_slice(&infected);
        let ic = Self { z0: StateVector { values }, h_d0, population };
        ic.validate()?;
        Ok(ic)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.population.is_finite() && self.population > T::zero()) {
            return Err(Error::Domain(format!("population must be positive, got {}", self.population)));
        }
        if !self.z0.is_finite() || !self.h_d0.is_finite() {
            return Err(Error::Domain("initial condition is not finite".into()));
        }
        if !self.z0.is_admissible() || self.h_d0 < T::zero() {
            return Err(Error::Domain(format!(
                "initial condition has negative components: {:?}, h_d0 = {}",
                self.z0.values, self.h_d0
            )));
        }
        Ok(())
    }

    pub fn augmented(&self) -> AugmentedState<T> {
        AugmentedState::new(self.z0, self.h_d0)
    }

    pub fn model(&self) -> SidartheModel<T> {
        SidartheModel { population: self.population }
    }
}

/// A linear transfer `rate * source` from one compartment into another.
struct Flow {
    rate: usize,
    from: usize,
    to: usize,
    /// Diagnosed recovery, also accumulated into `h_d`.
    diagnosed_recovery: bool,
}

const fn flow(rate: Rate, from: Compartment, to: Compartment, diagnosed_recovery: bool) -> Flow {
    Flow { rate: rate as usize, from: from as usize, to: to as usize, diagnosed_recovery }
}

use Compartment as C;

const LINEAR_FLOWS: [Flow; 14] = [
    flow(Rate::Epsilon, C::I, C::D, false),
    flow(Rate::Zeta, C::I, C::A, false),
    flow(Rate::Lambda, C::I, C::H, false),
    flow(Rate::Eta, C::D, C::R, false),
    flow(Rate::Rho, C::D, C::H, true),
    flow(Rate::Theta, C::A, C::R, false),
    flow(Rate::Mu, C::A, C::T, false),
    flow(Rate::Kappa, C::A, C::H, false),
    flow(Rate::Phi, C::A, C::E, false),
    flow(Rate::Nu, C::R, C::T, false),
    flow(Rate::Xi, C::R, C::H, true),
    flow(Rate::Chi, C::R, C::E, false),
    flow(Rate::Sigma, C::T, C::H, true),
    flow(Rate::Tau, C::T, C::E, false),
];

/// Infection sources paired with their contact rate.
const INFECTION: [(usize, usize); 4] = [
    (Rate::Alpha as usize, C::I as usize),
    (Rate::Beta as usize, C::D as usize),
    (Rate::Gamma as usize, C::A as usize),
    (Rate::Delta as usize, C::R as usize),
];

/// The SIDARTHE vector field for a fixed total population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SidartheModel<T> {
    pub population: T,
}

impl<T: Scalar> SidartheModel<T> {
    pub fn new(population: T) -> Result<Self> {
        if !(population.is_finite() && population > T::zero()) {
            return Err(Error::Domain(format!("population must be positive, got {population}")));
        }
        Ok(Self { population })
    }

    /// Time derivative of all nine augmented components.
    pub fn rhs(&self, state: &AugmentedState<T>, rates: &RateVector<T>) -> Result<AugmentedState<T>> {
        if !state.is_finite() {
            return Err(Error::Domain("state is not finite".into()));
        }
        if !rates.is_finite() {
            return Err(Error::Domain("rates are not finite".into()));
        }
        let dy = self.derivative(&state.to_array(), rates.as_array());
        Ok(AugmentedState::from_array(&dy))
    }

    /// Unchecked vector field on raw arrays.
    #[inline]
    pub(crate) fn derivative(&self, y: &[T; AUGMENTED_DIM], p: &[T; RATE_COUNT]) -> [T; AUGMENTED_DIM] {
        let mut dy = [T::zero(); AUGMENTED_DIM];
        let force: T = INFECTION.iter().map(|&(r, c)| p[r] * y[c]).sum();
        let infection = y[C::S as usize] / self.population * force;
        dy[C::S as usize] -= infection;
        dy[C::I as usize] += infection;
        for f in &LINEAR_FLOWS {
            let q = p[f.rate] * y[f.from];
            dy[f.from] -= q;
            dy[f.to] += q;
            if f.diagnosed_recovery {
                dy[H_D] += q;
            }
        }
        dy
    }

    /// Vector-Jacobian products `(v^T df/dy, v^T df/dp)` at `(y, p)`.
    #[inline]
    pub(crate) fn vjp(
        &self,
        y: &[T; AUGMENTED_DIM],
        p: &[T; RATE_COUNT],
        v: &[T; AUGMENTED_DIM],
    ) -> ([T; AUGMENTED_DIM], [T; RATE_COUNT]) {
        let mut gy = [T::zero(); AUGMENTED_DIM];
        let mut gp = [T::zero(); RATE_COUNT];
        let s = C::S as usize;
        // d(infection) is routed S -> I.
        let w = v[C::I as usize] - v[s];
        let frac = y[s] / self.population;
        let force: T = INFECTION.iter().map(|&(r, c)| p[r] * y[c]).sum();
        gy[s] += w * force / self.population;
        for &(r, c) in &INFECTION {
            gy[c] += w * frac * p[r];
            gp[r] += w * frac * y[c];
        }
        for f in &LINEAR_FLOWS {
            let mut wf = v[f.to] - v[f.from];
            if f.diagnosed_recovery {
                wf += v[H_D];
            }
            gy[f.from] += wf * p[f.rate];
            gp[f.rate] += wf * y[f.from];
        }
        (gy, gp)
    }
}

/// Basic reproduction number, evaluated term by term as
///
/// ```text
/// R0 = 1/(eps+xi) * ( alpha + beta eps/(eta+rho) + gamma zeta/(theta+mu+kappa+phi)
///        + delta/(nu+xi+chi) * ( eta eps/(eta+rho) + zeta theta/(theta+mu+kappa) ) )
/// ```
///
/// The leading `1/(eps+xi)` and the `phi`-free inner `theta+mu+kappa` are kept
/// exactly as stated in the model's published form.
pub fn basic_reproduction_number<T: Scalar>(rates: &RateVector<T>) -> Result<T> {
    let r = rates;
    let den = |group: &'static str, v: T| -> Result<T> {
        if v == T::zero() || !v.is_finite() {
            Err(Error::Singularity { group })
        } else {
            Ok(v)
        }
    };
    let lead = den("epsilon+xi", r[Rate::Epsilon] + r[Rate::Xi])?;
    let d_eta_rho = den("eta+rho", r[Rate::Eta] + r[Rate::Rho])?;
    let d_a_full = den(
        "theta+mu+kappa+phi",
        r[Rate::Theta] + r[Rate::Mu] + r[Rate::Kappa] + r[Rate::Phi],
    )?;
    let d_r = den("nu+xi+chi", r[Rate::Nu] + r[Rate::Xi] + r[Rate::Chi])?;
    let d_a = den("theta+mu+kappa", r[Rate::Theta] + r[Rate::Mu] + r[Rate::Kappa])?;

    let inner = r[Rate::Eta] * r[Rate::Epsilon] / d_eta_rho + r[Rate::Zeta] * r[Rate::Theta] / d_a;
    let total = r[Rate::Alpha]
        + r[Rate::Beta] * r[Rate::Epsilon] / d_eta_rho
        + r[Rate::Gamma] * r[Rate::Zeta] / d_a_full
        + r[Rate::Delta] / d_r * inner;
    Ok(total / lead)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn frac_model() -> SidartheModel<f64> {
        SidartheModel::new(1.0).unwrap()
    }

    fn state(values: [f64; 8], h_d: f64) -> AugmentedState<f64> {
        AugmentedState::new(StateVector::from_array(values), h_d)
    }

    #[test]
    fn zero_rates_give_zero_flow() {
        let d = frac_model()
            .rhs(&state([0.5, 0.1, 0.1, 0.1, 0.1, 0.05, 0.03, 0.02], 0.01), &RateVector::zeros())
            .unwrap();
        assert!(d.to_array().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_infectious_population_means_no_infection() {
        let d = frac_model()
            .rhs(&state([0.7, 0.0, 0.0, 0.0, 0.0, 0.2, 0.05, 0.05], 0.0), &RateVector::giordano())
            .unwrap();
        assert_eq!(d.state[Compartment::S], 0.0);
        assert_eq!(d.state[Compartment::I], 0.0);
    }

    #[test]
    fn single_infection_channel_by_hand() {
        let rates = RateVector::zeros().with(Rate::Alpha, 0.5);
        let d = frac_model()
            .rhs(&state([0.9, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0), &rates)
            .unwrap();
        assert_relative_eq!(d.state[Compartment::S], -0.045, max_relative = 1e-15);
        assert_relative_eq!(d.state[Compartment::I], 0.045, max_relative = 1e-15);
        for c in &Compartment::ALL[2..] {
            assert_eq!(d.state[*c], 0.0);
        }
        assert_eq!(d.h_d, 0.0);
    }

    #[test]
    fn diagnosed_recovery_accumulator() {
        let rates = RateVector::zeros()
            .with(Rate::Rho, 0.1)
            .with(Rate::Xi, 0.2)
            .with(Rate::Sigma, 0.3)
            .with(Rate::Lambda, 0.7)
            .with(Rate::Kappa, 0.9);
        let d = frac_model()
            .rhs(&state([0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 0.0, 0.0], 0.0), &rates)
            .unwrap();
        assert_relative_eq!(d.h_d, 0.1 * 2.0 + 0.2 * 4.0 + 0.3 * 5.0, max_relative = 1e-15);
        assert_relative_eq!(d.state[Compartment::H], d.h_d + 0.7 + 0.9 * 3.0, max_relative = 1e-15);
    }

    #[test]
    fn count_and_fraction_scales_agree() {
        let n = 6.0e7;
        let frac = [0.9, 0.03, 0.02, 0.01, 0.01, 0.01, 0.01, 0.01];
        let counts = frac.map(|v| v * n);
        let rates = RateVector::giordano();
        let df = frac_model().rhs(&state(frac, 0.0), &rates).unwrap().to_array();
        let dc = SidartheModel::new(n).unwrap().rhs(&state(counts, 0.0), &rates).unwrap().to_array();
        for k in 0..AUGMENTED_DIM {
            assert_relative_eq!(dc[k], df[k] * n, max_relative = 1e-12, epsilon = 1e-6);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let bad = state([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0);
        assert!(matches!(frac_model().rhs(&bad, &RateVector::zeros()), Err(Error::Domain(_))));
        let rates = RateVector::zeros().with(Rate::Tau, f64::INFINITY);
        let ok = state([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0);
        assert!(matches!(frac_model().rhs(&ok, &rates), Err(Error::Domain(_))));
    }

    #[test]
    fn reproduction_number_first_summand_only() {
        let r = RateVector::giordano()
            .with(Rate::Beta, 0.0)
            .with(Rate::Gamma, 0.0)
            .with(Rate::Delta, 0.0);
        let expected = r[Rate::Alpha] / (r[Rate::Epsilon] + r[Rate::Xi]);
        assert_eq!(basic_reproduction_number(&r).unwrap(), expected);

        let unit = r.with(Rate::Alpha, r[Rate::Epsilon] + r[Rate::Xi]);
        assert_eq!(basic_reproduction_number(&unit).unwrap(), 1.0);
    }

    #[test]
    fn reproduction_number_scales_with_alpha() {
        let r = RateVector::giordano()
            .with(Rate::Beta, 0.0)
            .with(Rate::Gamma, 0.0)
            .with(Rate::Delta, 0.0)
            .with(Rate::Alpha, 0.25);
        let base = basic_reproduction_number(&r).unwrap();
        let scaled = basic_reproduction_number(&r.with(Rate::Alpha, 1.0)).unwrap();
        assert_eq!(scaled, 4.0 * base);
    }

    #[test]
    fn reproduction_number_singularity_names_group() {
        let r = RateVector::giordano().with(Rate::Eta, 0.0).with(Rate::Rho, 0.0);
        match basic_reproduction_number(&r) {
            Err(Error::Singularity { group }) => assert_eq!(group, "eta+rho"),
            other => panic!("expected singularity, got {other:?}"),
        }
        let r = RateVector::giordano().with(Rate::Epsilon, 0.0).with(Rate::Xi, 0.0);
        assert!(matches!(
            basic_reproduction_number(&r),
            Err(Error::Singularity { group: "epsilon+xi" })
        ));
    }

    #[test]
    fn admissibility() {
        assert!(RateVector::<f64>::zeros().is_admissible());
        assert!(!RateVector::<f64>::zeros().with(Rate::Chi, -1e-9).is_admissible());
        assert!(RateVector::<f64>::giordano().is_admissible());
    }

    #[test]
    fn named_rates_round_trip() {
        let r = RateVector::<f64>::giordano().with(Rate::Phi, 0.003);
        let named = NamedRates::from(&r);
        assert_eq!(RateVector::<f64>::from(named), r);
        assert_eq!(Rate::from_name("xi"), Some(Rate::Xi));
    }

    #[test]
    fn vjp_matches_jacobian_columns() {
        // Directional check: v^T J e_k equals the k-th component of the VJP.
        let m = SidartheModel::new(2.0).unwrap();
        let y = [1.2, 0.2, 0.1, 0.15, 0.1, 0.05, 0.1, 0.05, 0.03];
        let p = RateVector::<f64>::giordano().with(Rate::Phi, 0.02).with(Rate::Chi, 0.01);
        let v = [0.3, -0.7, 1.1, 0.4, -0.2, 0.9, 0.5, -1.3, 0.8];
        let (gy, gp) = m.vjp(&y, p.as_array(), &v);
        let dot = |a: &[f64; 9]| a.iter().zip(&v).map(|(x, w)| x * w).sum::<f64>();
        let h = 1e-6;
        for k in 0..AUGMENTED_DIM {
            let (mut yp, mut ym) = (y, y);
            yp[k] += h;
            ym[k] -= h;
            let fd = (dot(&m.derivative(&yp, p.as_array())) - dot(&m.derivative(&ym, p.as_array()))) / (2.0 * h);
            assert_relative_eq!(gy[k], fd, epsilon = 1e-8);
        }
        for k in 0..RATE_COUNT {
            let (mut pp, mut pm) = (*p.as_array(), *p.as_array());
            pp[k] += h;
            pm[k] -= h;
            let fd = (dot(&m.derivative(&y, &pp)) - dot(&m.derivative(&y, &pm))) / (2.0 * h);
            assert_relative_eq!(gp[k], fd, epsilon = 1e-8);
        }
    }
}
