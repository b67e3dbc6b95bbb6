//! Revision protocols and the mean dynamic they induce.
//!
//! Three protocol families are supported:
//!
//! * excess payoff target (EPT): `T_ij(r, z) = τ_j(r̂)` where `r̂` is the
//!   payoff in excess of the population average; BNN uses `τ_j = [r̂_j]₊`;
//! * impartial pairwise comparison (IPC): `T_ij(r, z) = τ_j(r_j - r_i)`;
//!   Smith uses `τ_j(d) = [d]₊`;
//! * perturbed best response (PBR) with the logit choice rule.
//!
//! The mean dynamic is
//! `V_i(z, r) = Σ_j z_j T_ji(r, z) - z_i Σ_j T_ij(r, z)`; for PBR the
//! equivalent closed form `m·C(r) - z` is used.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::simplex::{PayoffVector, SimplexState, TangentVector};

/// Rates within this distance below zero are treated as rounding and clamped.
pub const NEGATIVE_RATE_TOL: f64 = 1e-12;

/// Default tie tolerance for best responses.
pub const DEFAULT_BEST_RESPONSE_TOL: f64 = 1e-9;

type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type VectorMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A nonnegative scalar switching rate.
#[derive(Clone)]
pub enum RateFn {
    /// `[d]₊`
    PositivePart,
    Custom(ScalarMap),
}

impl RateFn {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        RateFn::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, d: f64) -> f64 {
        match self {
            RateFn::PositivePart => d.max(0.0),
            RateFn::Custom(f) => f(d),
        }
    }
}

impl fmt::Debug for RateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateFn::PositivePart => write!(f, "PositivePart"),
            RateFn::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// EPT target rates as a function of the excess payoff vector.
#[derive(Clone)]
pub enum EptRates {
    /// `τ_j(r̂) = τ_j(r̂_j)`
    Separable(Vec<RateFn>),
    General(VectorMap),
}

impl fmt::Debug for EptRates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EptRates::Separable(r) => f.debug_tuple("Separable").field(r).finish(),
            EptRates::General(_) => write!(f, "General"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Ept,
    Ipc,
    Pbr,
}

#[derive(Debug, Clone)]
pub enum ProtocolKind {
    Ept(EptRates),
    Ipc(Vec<RateFn>),
    /// Logit choice with noise level `eta`.
    Logit {
        eta: f64,
    },
}

/// A revision protocol over `n` strategies.
#[derive(Debug, Clone)]
pub struct Protocol {
    n: usize,
    kind: ProtocolKind,
    name: &'static str,
}

impl Protocol {
    /// Brown-von Neumann-Nash: separable EPT with `τ_j = [r̂_j]₊`.
    pub fn bnn(n: usize) -> Result<Self> {
        check_strategies(n)?;
        Ok(Self { n, kind: ProtocolKind::Ept(EptRates::Separable(vec![RateFn::PositivePart; n])), name: "bnn" })
    }

    /// Smith: IPC with `τ_j(d) = [d]₊`.
    pub fn smith(n: usize) -> Result<Self> {
        check_strategies(n)?;
        Ok(Self { n, kind: ProtocolKind::Ipc(vec![RateFn::PositivePart; n]), name: "smith" })
    }

    pub fn logit(n: usize, eta: f64) -> Result<Self> {
        check_strategies(n)?;
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::invalid(format!("logit noise level must be positive, got {eta}")));
        }
        Ok(Self { n, kind: ProtocolKind::Logit { eta }, name: "logit" })
    }

    /// Separable EPT protocol; acuteness is checked on sampled excess payoffs.
    pub fn separable_ept(rates: Vec<RateFn>) -> Result<Self> {
        let n = rates.len();
        check_strategies(n)?;
        let p = Self { n, kind: ProtocolKind::Ept(EptRates::Separable(rates)), name: "separable_ept" };
        p.check_acuteness(200)?;
        Ok(p)
    }

    /// General EPT protocol; acuteness is checked on sampled excess payoffs.
    pub fn general_ept(n: usize, rates: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Result<Self> {
        check_strategies(n)?;
        let p = Self { n, kind: ProtocolKind::Ept(EptRates::General(Arc::new(rates))), name: "general_ept" };
        p.check_acuteness(200)?;
        Ok(p)
    }

    /// IPC protocol; sign preservation is checked on sampled differences.
    pub fn ipc(rates: Vec<RateFn>) -> Result<Self> {
        let n = rates.len();
        check_strategies(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x1bc);
        for (j, tau) in rates.iter().enumerate() {
            for k in 0..200 {
                // Mix of small and large magnitudes on both sides of zero.
                let mag = 10f64.powf(rng.gen_range(-6.0..2.0));
                let d = if k % 2 == 0 { mag } else { -mag };
                let v = tau.eval(d);
                let ok = if d > 0.0 { v > 0.0 } else { v == 0.0 };
                if !ok {
                    return Err(Error::invalid(format!("IPC rate {j} violates sign preservation at d = {d}: τ = {v}")));
                }
            }
            if tau.eval(0.0) != 0.0 {
                return Err(Error::invalid(format!("IPC rate {j} must vanish at zero")));
            }
        }
        Ok(Self { n, kind: ProtocolKind::Ipc(rates), name: "ipc" })
    }

    fn check_acuteness(&self, samples: usize) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0xac07e);
        let mut tau = vec![0.0; self.n];
        for _ in 0..samples {
            let mut r: Vec<f64> = (0..self.n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            if r.iter().all(|&v| v <= 0.0) {
                let k = rng.gen_range(0..self.n);
                r[k] = rng.gen_range(1e-3..5.0);
            }
            self.ept_targets(&r, &mut tau)?;
            let inner: f64 = r.iter().zip(&tau).map(|(a, b)| a * b).sum();
            if !(inner > 0.0) {
                return Err(Error::invalid(format!("EPT protocol violates acuteness at r̂ = {r:?}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &ProtocolKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn family(&self) -> Family {
        match self.kind {
            ProtocolKind::Ept(_) => Family::Ept,
            ProtocolKind::Ipc(_) => Family::Ipc,
            ProtocolKind::Logit { .. } => Family::Pbr,
        }
    }

    /// Noise level for logit protocols.
    pub fn eta(&self) -> Option<f64> {
        match self.kind {
            ProtocolKind::Logit { eta } => Some(eta),
            _ => None,
        }
    }

    fn ept_targets(&self, r_hat: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.kind {
            ProtocolKind::Ept(EptRates::Separable(rates)) => {
                for (j, tau) in rates.iter().enumerate() {
                    out[j] = clamp_rate(tau.eval(r_hat[j]))?;
                }
            }
            ProtocolKind::Ept(EptRates::General(f)) => {
                f(r_hat, out);
                for v in out.iter_mut() {
                    *v = clamp_rate(*v)?;
                }
            }
            _ => unreachable!("EPT targets requested for a non-EPT protocol"),
        }
        Ok(())
    }

    /// Switching rates `T_ij(r, z)` out of strategy `i`, written to `out[j]`.
    /// The diagonal entry is included but plays no role in the dynamics.
    pub fn rate_row(&self, i: usize, z: &[f64], mass: f64, r: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.kind {
            ProtocolKind::Ept(_) => {
                let mut buf = [0.0; 16];
                let mut heap = Vec::new();
                let r_hat = if self.n <= 16 {
                    &mut buf[..self.n]
                } else {
                    heap.resize(self.n, 0.0);
                    &mut heap[..]
                };
                excess_payoff_into(z, mass, r, r_hat);
                self.ept_targets(r_hat, out)?;
            }
            ProtocolKind::Ipc(rates) => {
                for (j, tau) in rates.iter().enumerate() {
                    out[j] = clamp_rate(tau.eval(r[j] - r[i]))?;
                }
            }
            ProtocolKind::Logit { eta } => logit_choice_into(r, *eta, out),
        }
        Ok(())
    }

    /// Full rate matrix `T(r, z)`.
    pub fn rate_matrix(&self, z: &SimplexState, r: &PayoffVector) -> Result<DMatrix<f64>> {
        self.check_inputs(z, r)?;
        let mut m = DMatrix::zeros(self.n, self.n);
        let mut row = vec![0.0; self.n];
        for i in 0..self.n {
            self.rate_row(i, z.entries(), z.mass(), r.entries(), &mut row)?;
            for j in 0..self.n {
                m[(i, j)] = row[j];
            }
        }
        Ok(m)
    }

    fn check_inputs(&self, z: &SimplexState, r: &PayoffVector) -> Result<()> {
        check_dim(self.n, z.dim(), "population state")?;
        check_dim(self.n, r.dim(), "payoff vector")
    }

    pub fn mean_dynamic(&self, z: &SimplexState, r: &PayoffVector) -> Result<TangentVector> {
        self.check_inputs(z, r)?;
        let mut v = vec![0.0; self.n];
        self.mean_dynamic_into(z.entries(), z.mass(), r.entries(), &mut v)?;
        TangentVector::new(v)
    }

    /// Unchecked-dimension mean dynamic on raw slices.
    pub fn mean_dynamic_into(&self, z: &[f64], mass: f64, r: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        match &self.kind {
            ProtocolKind::Ept(_) => {
                let mut r_hat = [0.0; 16];
                let mut tau = [0.0; 16];
                let (r_hat, tau) = if n <= 16 {
                    (&mut r_hat[..n], &mut tau[..n])
                } else {
                    return self.mean_dynamic_dense(z, mass, r, out);
                };
                excess_payoff_into(z, mass, r, r_hat);
                self.ept_targets(r_hat, tau)?;
                let total: f64 = tau.iter().sum();
                for i in 0..n {
                    out[i] = mass * tau[i] - z[i] * total;
                }
            }
            ProtocolKind::Ipc(rates) => {
                for i in 0..n {
                    let mut inflow = 0.0;
                    let mut outflow = 0.0;
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        inflow += z[j] * clamp_rate(rates[i].eval(r[i] - r[j]))?;
                        outflow += clamp_rate(rates[j].eval(r[j] - r[i]))?;
                    }
                    out[i] = inflow - z[i] * outflow;
                }
            }
            ProtocolKind::Logit { eta } => {
                logit_choice_into(r, *eta, out);
                for i in 0..n {
                    out[i] = mass * out[i] - z[i];
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite mean dynamic"));
        }
        Ok(())
    }

    fn mean_dynamic_dense(&self, z: &[f64], mass: f64, r: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let mut r_hat = vec![0.0; n];
        let mut tau = vec![0.0; n];
        excess_payoff_into(z, mass, r, &mut r_hat);
        self.ept_targets(&r_hat, &mut tau)?;
        let total: f64 = tau.iter().sum();
        for i in 0..n {
            out[i] = mass * tau[i] - z[i] * total;
        }
        Ok(())
    }
}

fn check_strategies(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("a protocol needs at least two strategies"));
    }
    Ok(())
}

#[inline]
fn clamp_rate(v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::numerical("non-finite switching rate"));
    }
    if v >= 0.0 {
        Ok(v)
    } else if v > -NEGATIVE_RATE_TOL {
        Ok(0.0)
    } else {
        Err(Error::numerical(format!("negative switching rate {v}")))
    }
}

/// `r̂_i = r_i - (1/m) Σ_j r_j z_j`
pub fn excess_payoff(z: &SimplexState, r: &PayoffVector) -> Result<PayoffVector> {
    check_dim(z.dim(), r.dim(), "payoff vector")?;
    let mut out = vec![0.0; r.dim()];
    excess_payoff_into(z.entries(), z.mass(), r.entries(), &mut out);
    PayoffVector::new(out)
}

#[inline]
pub fn excess_payoff_into(z: &[f64], mass: f64, r: &[f64], out: &mut [f64]) {
    let avg: f64 = z.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / mass;
    for (o, v) in out.iter_mut().zip(r) {
        *o = v - avg;
    }
}

/// Logit choice probabilities `softmax(r / eta)` as a unit-mass state.
pub fn logit_choice(r: &PayoffVector, eta: f64) -> Result<SimplexState> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid(format!("noise level must be positive, got {eta}")));
    }
    let mut out = vec![0.0; r.dim()];
    logit_choice_into(r.entries(), eta, &mut out);
    Ok(SimplexState::from_raw_unchecked(out, 1.0))
}

/// Max-shifted softmax; stable for any finite input.
#[inline]
pub fn logit_choice_into(r: &[f64], eta: f64, out: &mut [f64]) {
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(r) {
        *o = ((v - max) / eta).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `η · ln Σ exp(r_i / η)`, computed stably.
pub fn log_sum_exp(r: &[f64], eta: f64) -> f64 {
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = r.iter().map(|v| ((v - max) / eta).exp()).sum();
    max + eta * s.ln()
}

/// Indices (0-based) of strategies within `tol` of the best payoff. `mass`
/// does not affect the maximizers and is accepted for symmetry with the
/// set-valued best response `argmax_{z∈X} zᵀr`.
pub fn best_response_set(r: &PayoffVector, _mass: f64, tol: f64) -> Vec<usize> {
    let max = r.entries().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..r.dim()).filter(|&i| r.entries()[i] >= max - tol).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit(v: &[f64]) -> SimplexState {
        SimplexState::unit(v.to_vec()).unwrap()
    }

    fn pv(v: &[f64]) -> PayoffVector {
        PayoffVector::new(v.to_vec()).unwrap()
    }

    /// Eq. (5) evaluated term by term from the rate matrix.
    fn brute_force_dynamic(p: &Protocol, z: &SimplexState, r: &PayoffVector) -> Vec<f64> {
        let t = p.rate_matrix(z, r).unwrap();
        let zs = z.entries();
        (0..p.dim())
            .map(|i| {
                let inflow: f64 = (0..p.dim()).map(|j| zs[j] * t[(j, i)]).sum();
                let outflow: f64 = (0..p.dim()).map(|j| t[(i, j)]).sum();
                inflow - zs[i] * outflow
            })
            .collect()
    }

    #[test]
    fn excess_payoff_examples() {
        assert_eq!(
            excess_payoff(&unit(&[1.0, 0.0, 0.0]), &pv(&[1.0, 0.0, 0.0])).unwrap().entries(),
            &[0.0, -1.0, -1.0]
        );
        assert_eq!(excess_payoff(&unit(&[0.0, 1.0, 0.0]), &pv(&[1.0, 0.0, 0.0])).unwrap().entries(), &[1.0, 0.0, 0.0]);
        let e = excess_payoff(&unit(&[0.2, 0.3, 0.5]), &pv(&[4.0, 4.0, 4.0])).unwrap();
        assert!(e.entries().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn mean_dynamic_examples() {
        let bnn = Protocol::bnn(3).unwrap();
        let v = bnn.mean_dynamic(&unit(&[0.0, 1.0, 0.0]), &pv(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(v.entries(), &[1.0, -1.0, 0.0]);

        let smith = Protocol::smith(3).unwrap();
        let v = smith.mean_dynamic(&unit(&[1.0, 0.0, 0.0]), &pv(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(v.entries(), &[0.0, 0.0, 0.0]);

        let logit = Protocol::logit(3, 1.0).unwrap();
        let v = logit.mean_dynamic(&unit(&[1.0, 0.0, 0.0]), &pv(&[0.0, 0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(v.entries()[0], -2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.entries()[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.entries()[2], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn logit_choice_examples() {
        let c = logit_choice(&pv(&[0.0, 0.0, 0.0]), 0.7).unwrap();
        assert!(c.entries().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let e = std::f64::consts::E;
        let c = logit_choice(&pv(&[1.0, 0.0, 0.0]), 1.0).unwrap();
        assert_abs_diff_eq!(c.entries()[0], e / (e + 2.0), epsilon = 1e-15);
        assert_abs_diff_eq!(c.entries()[1], 1.0 / (e + 2.0), epsilon = 1e-15);
        let c = logit_choice(&pv(&[1000.0, 0.0, 0.0]), 1.0).unwrap();
        assert!(c.entries().iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(c.entries()[0], 1.0, epsilon = 1e-15);
        let c = logit_choice(&pv(&[0.5, 0.5, 0.5]), 25.0).unwrap();
        assert!(c.entries().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(logit_choice(&pv(&[0.0, 0.0]), 0.0).is_err());
    }

    #[test]
    fn named_protocol_rates() {
        let bnn = Protocol::bnn(3).unwrap();
        // With z at a vertex whose payoff is zero, r̂ = r.
        let mut row = vec![0.0; 3];
        bnn.rate_row(0, &[0.0, 0.0, 1.0], 1.0, &[2.0, -1.0, 0.0], &mut row).unwrap();
        assert_eq!(row, vec![2.0, 0.0, 0.0]);
        assert_eq!(RateFn::PositivePart.eval(-3.0), 0.0);
    }

    #[test]
    fn best_response_examples() {
        assert_eq!(best_response_set(&pv(&[1.0, 0.0, 0.0]), 1.0, 1e-9), vec![0]);
        assert_eq!(best_response_set(&pv(&[2.0, 2.0, 0.0]), 1.0, 1e-9), vec![0, 1]);
        let c = -13.0 / 11.0;
        assert_eq!(best_response_set(&pv(&[c, c, c]), 1.0, 1e-9), vec![0, 1, 2]);
    }

    #[test]
    fn custom_rate_validation() {
        assert!(Protocol::ipc(vec![RateFn::custom(|d: f64| d.max(0.0).powi(2)); 3]).is_ok());
        assert!(Protocol::ipc(vec![RateFn::custom(|d: f64| d.abs()); 3]).is_err());
        assert!(Protocol::separable_ept(vec![RateFn::custom(|d: f64| d.max(0.0).sqrt()); 3]).is_ok());
        assert!(Protocol::separable_ept(vec![RateFn::custom(|_| 0.0); 3]).is_err());
    }

    #[test]
    fn tiny_negative_rates_are_clamped_large_ones_rejected() {
        let p = Protocol::general_ept(3, |r, out| {
            for (o, v) in out.iter_mut().zip(r) {
                *o = if *v > 0.0 { *v } else { -1e-13 };
            }
        })
        .unwrap();
        let v = p.mean_dynamic(&unit(&[0.2, 0.3, 0.5]), &pv(&[1.0, 0.0, 0.0])).unwrap();
        assert!(v.entries().iter().sum::<f64>().abs() < 1e-12);

        let bad = Protocol::ipc(vec![RateFn::PositivePart; 3]).unwrap();
        let bad = Protocol { kind: ProtocolKind::Ipc(vec![RateFn::custom(|_| -1.0); 3]), ..bad };
        assert!(matches!(bad.mean_dynamic(&unit(&[0.2, 0.3, 0.5]), &pv(&[1.0, 0.0, 0.0])), Err(Error::Numerical(_))));
    }

    fn state_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_map(|mut v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-12;
            v.iter_mut().for_each(|x| *x /= s);
            let t: f64 = v.iter().sum();
            let k = v.len() - 1;
            v[k] += 1.0 - t;
            v[k] = v[k].max(0.0);
            v
        })
    }

    fn protocols() -> Vec<Protocol> {
        vec![Protocol::bnn(3).unwrap(), Protocol::smith(3).unwrap(), Protocol::logit(3, 0.3).unwrap()]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn tangency_and_agreement_with_double_sum(z in state_strategy(3), r in prop::collection::vec(-5.0f64..5.0, 3)) {
            let z = SimplexState::project(&z, 1.0).unwrap().0;
            let r = pv(&r);
            for p in protocols() {
                let v = p.mean_dynamic(&z, &r).unwrap();
                prop_assert!(v.entries().iter().sum::<f64>().abs() < 1e-9);
                let brute = brute_force_dynamic(&p, &z, &r);
                for (a, b) in v.entries().iter().zip(&brute) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn forward_invariance_on_the_boundary(z in state_strategy(3), k in 0usize..3, r in prop::collection::vec(-5.0f64..5.0, 3)) {
            let mut z = z;
            z[k] = 0.0;
            if z.iter().sum::<f64>() < 1e-6 { z[(k + 1) % 3] = 1.0; }
            let z = SimplexState::project(&z, 1.0).unwrap().0;
            let r = pv(&r);
            for p in protocols() {
                let v = p.mean_dynamic(&z, &r).unwrap();
                prop_assert!(v.entries()[k] >= 0.0);
            }
        }

        #[test]
        fn positive_correlation(z in state_strategy(3), r in prop::collection::vec(-5.0f64..5.0, 3)) {
            let z = SimplexState::project(&z, 1.0).unwrap().0;
            let r = pv(&r);
            for p in [Protocol::bnn(3).unwrap(), Protocol::smith(3).unwrap()] {
                let v = p.mean_dynamic(&z, &r).unwrap();
                let norm = v.entries().iter().fold(0.0f64, |a, x| a.max(x.abs()));
                if norm > 1e-12 {
                    let corr: f64 = r.entries().iter().zip(v.entries()).map(|(a, b)| a * b).sum();
                    prop_assert!(corr > 0.0);
                }
            }
        }

        #[test]
        fn logit_choice_is_shift_invariant(r in prop::collection::vec(-50.0f64..50.0, 4), c in -100.0f64..100.0, eta in 0.01f64..10.0) {
            let a = logit_choice(&pv(&r), eta).unwrap();
            let shifted: Vec<f64> = r.iter().map(|v| v + c).collect();
            let b = logit_choice(&pv(&shifted), eta).unwrap();
            prop_assert!(SimplexState::unit(a.entries().to_vec()).is_ok());
            for (x, y) in a.entries().iter().zip(b.entries()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn nash_stationarity_for_bnn_and_smith() {
        let cases: Vec<(Vec<f64>, Vec<f64>, bool)> = vec![
            (vec![0.5, 0.5, 0.0], vec![1.0, 1.0, 0.0], true),
            (vec![1.0, 0.0, 0.0], vec![2.0, 1.0, 0.0], true),
            (vec![0.2, 0.3, 0.5], vec![-1.0, -1.0, -1.0], true),
            (vec![0.0, 0.0, 1.0], vec![0.3, 0.3, 0.3], true),
            (vec![0.5, 0.5, 0.0], vec![1.0, 1.0, 1.5], false),
            (vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0], false),
            (vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1e-6], false),
        ];
        for p in [Protocol::bnn(3).unwrap(), Protocol::smith(3).unwrap()] {
            for (z, r, nash) in &cases {
                let z = unit(z);
                let r = pv(r);
                let v = p.mean_dynamic(&z, &r).unwrap();
                let norm = v.entries().iter().fold(0.0f64, |a, x| a.max(x.abs()));
                let br = best_response_set(&r, 1.0, 1e-9);
                let supported = z.support(0.0).iter().all(|i| br.contains(i));
                assert_eq!(supported, *nash);
                assert_eq!(norm <= 1e-9, *nash, "{} at {:?} / {:?}", p.name(), z, r);
            }
        }
    }

    #[test]
    fn perturbed_stationarity_for_logit() {
        let eta = 0.4;
        let p = Protocol::logit(3, eta).unwrap();
        let r = pv(&[0.3, -0.2, 0.9]);
        let c = logit_choice(&r, eta).unwrap();
        let v = p.mean_dynamic(&c, &r).unwrap();
        assert!(v.entries().iter().all(|x| x.abs() <= 1e-9));
        let off = unit(&[0.3, 0.3, 0.4]);
        let v = p.mean_dynamic(&off, &r).unwrap();
        assert!(v.entries().iter().any(|x| x.abs() > 1e-9));
    }
}
