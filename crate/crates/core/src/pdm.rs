//! Payoff dynamics models: `q̇ = G(q, u)`, `p = H(q, u)`.
//!
//! Only the smoothing-anticipatory family is provided (the memoryless game
//! being its `μ0 = 1, μ1 = μ2 = 0` member):
//!
//! ```text
//! q̇ = α (F(u) - q)
//! p  = μ0 F(u) + μ1 q + μ2 q̇ = (μ0 + α μ2) F(u) + (μ1 - α μ2) q
//! ```

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::games::PopulationGame;
use crate::simplex::{lattice, sup_norm, PayoffVector, SimplexState};

/// Grid resolution used to bound `max_z ‖F(z)‖` on the simplex.
pub const BOUND_GRID_RESOLUTION: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PdmKind {
    Memoryless,
    SmoothingAnticipatory,
}

/// Internal PDM state.
#[derive(Debug, Clone, PartialEq)]
pub struct PdmState(Vec<f64>);

impl PdmState {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("PDM state entries must be finite"));
        }
        Ok(Self(q))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct PdmModel {
    game: PopulationGame,
    kind: PdmKind,
    alpha: f64,
    mu0: f64,
    mu1: f64,
    mu2: f64,
}

impl PdmModel {
    /// The population game itself, `p = F(u)`.
    pub fn memoryless(game: PopulationGame) -> Self {
        Self { game, kind: PdmKind::Memoryless, alpha: 1.0, mu0: 1.0, mu1: 0.0, mu2: 0.0 }
    }

    /// `μ0 = 1, μ1 = 0, μ2 > 0`.
    pub fn anticipatory(game: PopulationGame, alpha: f64, mu2: f64) -> Result<Self> {
        if !(mu2 > 0.0) {
            return Err(Error::invalid(format!("anticipation gain must be positive, got {mu2}")));
        }
        Self::general(game, alpha, 1.0, 0.0, mu2)
    }

    /// `μ0 = 0, μ1 = 1, μ2 = 0`.
    pub fn smoothing(game: PopulationGame, alpha: f64) -> Result<Self> {
        Self::general(game, alpha, 0.0, 1.0, 0.0)
    }

    pub fn general(game: PopulationGame, alpha: f64, mu0: f64, mu1: f64, mu2: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        for (name, v) in [("mu0", mu0), ("mu1", mu1), ("mu2", mu2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if (mu0 + mu1 - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mu0 + mu1 must equal 1, got {}", mu0 + mu1)));
        }
        Ok(Self { game, kind: PdmKind::SmoothingAnticipatory, alpha, mu0, mu1, mu2 })
    }

    pub fn game(&self) -> &PopulationGame {
        &self.game
    }

    pub fn kind(&self) -> PdmKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.game.dim()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mu(&self) -> (f64, f64, f64) {
        (self.mu0, self.mu1, self.mu2)
    }

    /// Weight of `F(u)` in the substituted output formula.
    pub fn payoff_gain(&self) -> f64 {
        self.mu0 + self.alpha * self.mu2
    }

    /// Weight of `q` in the substituted output formula.
    pub fn state_gain(&self) -> f64 {
        self.mu1 - self.alpha * self.mu2
    }

    /// Whether `{(z, s) : H(s, z) = F(z)}` reduces to the compact graph `s = F(z)`;
    /// when `μ1 = α μ2` the output never depends on `s`.
    pub fn stationary_set_is_graph(&self) -> bool {
        self.kind == PdmKind::SmoothingAnticipatory && self.state_gain() != 0.0
    }

    /// Default initial state: on the stationary manifold, `q(0) = F(x(0))`.
    pub fn default_state(&self, x0: &SimplexState) -> Result<PdmState> {
        Ok(PdmState(self.game.payoff(x0)?.into_vec()))
    }

    fn check(&self, q: &PdmState, u: &SimplexState) -> Result<()> {
        self.game.check_state(u)?;
        check_dim(self.dim(), q.0.len(), "PDM state")
    }

    pub fn derivative(&self, q: &PdmState, u: &SimplexState) -> Result<Vec<f64>> {
        self.check(q, u)?;
        let f = self.game.payoff_vec(u.entries());
        let mut out = vec![0.0; self.dim()];
        self.derivative_from_payoff(&f, q.entries(), &mut out);
        Ok(out)
    }

    pub fn output(&self, q: &PdmState, u: &SimplexState) -> Result<PayoffVector> {
        self.check(q, u)?;
        let f = self.game.payoff_vec(u.entries());
        let mut out = vec![0.0; self.dim()];
        self.output_from_payoff(&f, q.entries(), &mut out);
        PayoffVector::new(out)
    }

    /// `α (F(u) - q)` given `F(u)`.
    #[inline]
    pub fn derivative_from_payoff(&self, f: &[f64], q: &[f64], out: &mut [f64]) {
        for i in 0..f.len() {
            out[i] = self.alpha * (f[i] - q[i]);
        }
    }

    /// `(μ0 + α μ2) F(u) + (μ1 - α μ2) q` given `F(u)`.
    #[inline]
    pub fn output_from_payoff(&self, f: &[f64], q: &[f64], out: &mut [f64]) {
        if self.kind == PdmKind::Memoryless {
            out.copy_from_slice(f);
            return;
        }
        let a = self.payoff_gain();
        let b = self.state_gain();
        for i in 0..f.len() {
            out[i] = a * f[i] + b * q[i];
        }
    }

    /// The stationary population game; for this family it is the base game.
    pub fn stationary_game(&self) -> &PopulationGame {
        &self.game
    }

    /// Bound on `‖q(t)‖` along any trajectory: `max_z ‖F(z)‖ + ‖q(0)‖`,
    /// with the maximum taken over a barycentric grid.
    pub fn state_bound(&self, q0: &PdmState) -> f64 {
        max_payoff_norm(&self.game, BOUND_GRID_RESOLUTION) + sup_norm(q0.entries())
    }

    /// Integrates the PDM under a constant input from `q(0) = 0` and checks
    /// that `‖p(t) - F(u)‖` decays at rate at least `α (1 - ε)`.
    pub fn stationary_response_check(&self, u: &SimplexState, horizon: f64, step: f64) -> Result<DecayReport> {
        self.game.check_state(u)?;
        if !(horizon > 0.0 && step > 0.0 && step <= horizon) {
            return Err(Error::invalid("stationary response check needs 0 < step <= horizon"));
        }
        let n = self.dim();
        let f = self.game.payoff_vec(u.entries());
        let steps = (horizon / step).round().max(1.0) as usize;
        let h = horizon / steps as f64;
        let mut q = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut times = Vec::with_capacity(steps + 1);
        let mut deviations = Vec::with_capacity(steps + 1);
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut tmp = vec![0.0; n];
        for s in 0..=steps {
            self.output_from_payoff(&f, &q, &mut p);
            let dev = p.iter().zip(&f).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            times.push(s as f64 * h);
            deviations.push(dev);
            if s == steps {
                break;
            }
            rk4_filter_step(self, &f, &mut q, h, &mut k, &mut tmp);
        }

        let initial = deviations[0];
        let fitted_rate = fit_decay_rate(&times, &deviations);
        let required_rate = self.alpha * (1.0 - DECAY_RATE_SLACK);
        let identically_zero = deviations.iter().all(|&d| d <= 1e-14 * (1.0 + initial));
        let passed = identically_zero || fitted_rate.is_some_and(|r| r >= required_rate);
        Ok(DecayReport {
            final_deviation: *deviations.last().unwrap(),
            times,
            deviations,
            fitted_rate,
            required_rate,
            passed,
        })
    }
}

/// Relative slack ε on the decay-rate requirement.
pub const DECAY_RATE_SLACK: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub times: Vec<f64>,
    pub deviations: Vec<f64>,
    /// Negated slope of the log-linear fit of the deviation, when it is nonzero.
    pub fitted_rate: Option<f64>,
    pub required_rate: f64,
    pub final_deviation: f64,
    pub passed: bool,
}

fn rk4_filter_step(pdm: &PdmModel, f: &[f64], q: &mut [f64], h: f64, k: &mut [Vec<f64>; 4], tmp: &mut [f64]) {
    let n = q.len();
    pdm.derivative_from_payoff(f, q, &mut k[0]);
    for i in 0..n {
        tmp[i] = q[i] + 0.5 * h * k[0][i];
    }
    pdm.derivative_from_payoff(f, tmp, &mut k[1]);
    for i in 0..n {
        tmp[i] = q[i] + 0.5 * h * k[1][i];
    }
    pdm.derivative_from_payoff(f, tmp, &mut k[2]);
    for i in 0..n {
        tmp[i] = q[i] + h * k[2][i];
    }
    pdm.derivative_from_payoff(f, tmp, &mut k[3]);
    for i in 0..n {
        q[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
}

/// Least-squares slope of `ln d` against `t`, over samples well above the
/// floating point floor.
fn fit_decay_rate(times: &[f64], deviations: &[f64]) -> Option<f64> {
    let d0 = deviations.iter().copied().fold(0.0, f64::max);
    let floor = (d0 * 1e-12).max(1e-300);
    let pts: Vec<(f64, f64)> =
        times.iter().zip(deviations).filter(|(_, &d)| d > floor).map(|(&t, &d)| (t, d.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

/// `max_z ‖F(z)‖∞` over the barycentric grid of the given resolution.
pub fn max_payoff_norm(game: &PopulationGame, resolution: usize) -> f64 {
    let mut f = vec![0.0; game.dim()];
    lattice(game.dim(), resolution, game.mass())
        .iter()
        .map(|z| {
            game.payoff_into(z, &mut f);
            sup_norm(&f)
        })
        .fold(0.0, f64::max)
}
