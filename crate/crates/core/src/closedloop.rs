//! Mean closed loop: a PDM in feedback with an EDM, integrated with fixed-step RK4.

use serde::Serialize;

use crate::edm::Protocol;
use crate::equilibria::EquilibriumSet;
use crate::error::{check_dim, Error, Result};
use crate::games::PopulationGame;
use crate::passivity::StorageFunction;
use crate::pdm::{PdmModel, PdmState};
use crate::simplex::{sup_distance, SimplexState};

/// Sampled solution of the closed loop on a uniform grid.
///
/// Per-sample vectors are stored row-major in flat buffers; use the indexed
/// accessors to read them.
#[derive(Debug, Clone)]
pub struct Trajectory {
    n: usize,
    mass: f64,
    step: f64,
    times: Vec<f64>,
    x: Vec<f64>,
    q: Vec<f64>,
    p: Vec<f64>,
    x_dot: Vec<f64>,
    q_dot: Vec<f64>,
    p_dot: Vec<f64>,
    projection_correction: f64,
    max_projection_step: f64,
    distance: Option<Vec<f64>>,
    storage: Option<Vec<f64>>,
}

impl Trajectory {
    /// Builds a trajectory from sampled `x`, `q`, `p` and their model
    /// derivatives; `ṗ` is recomputed by differences. Used for externally
    /// produced data and in tests.
    #[allow(clippy::too_many_arguments)]
    pub fn from_samples(
        mass: f64,
        step: f64,
        x: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        p: Vec<Vec<f64>>,
        x_dot: Vec<Vec<f64>>,
        q_dot: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let k = x.len();
        if k < 2 {
            return Err(Error::invalid("a trajectory needs at least two samples"));
        }
        if !(step > 0.0) {
            return Err(Error::invalid("trajectory step must be positive"));
        }
        let n = x[0].len();
        for (name, series) in [("q", &q), ("p", &p), ("x_dot", &x_dot), ("q_dot", &q_dot)] {
            if series.len() != k {
                return Err(Error::invalid(format!("series {name} has {} samples, expected {k}", series.len())));
            }
        }
        let flat = |s: Vec<Vec<f64>>| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(k * n);
            for row in s {
                check_dim(n, row.len(), "trajectory sample")?;
                out.extend(row);
            }
            Ok(out)
        };
        let mut traj = Self {
            n,
            mass,
            step,
            times: (0..k).map(|i| i as f64 * step).collect(),
            x: flat(x)?,
            q: flat(q)?,
            p: flat(p)?,
            x_dot: flat(x_dot)?,
            q_dot: flat(q_dot)?,
            p_dot: Vec::new(),
            projection_correction: 0.0,
            max_projection_step: 0.0,
            distance: None,
            storage: None,
        };
        traj.p_dot = central_differences(&traj.p, n, step);
        Ok(traj)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn row<'a>(&self, buf: &'a [f64], k: usize) -> &'a [f64] {
        &buf[k * self.n..(k + 1) * self.n]
    }

    pub fn x(&self, k: usize) -> &[f64] {
        self.row(&self.x, k)
    }

    pub fn q(&self, k: usize) -> &[f64] {
        self.row(&self.q, k)
    }

    pub fn p(&self, k: usize) -> &[f64] {
        self.row(&self.p, k)
    }

    pub fn x_dot(&self, k: usize) -> &[f64] {
        self.row(&self.x_dot, k)
    }

    pub fn q_dot(&self, k: usize) -> &[f64] {
        self.row(&self.q_dot, k)
    }

    /// Central differences inside the grid, one-sided at the ends.
    pub fn p_dot(&self, k: usize) -> &[f64] {
        self.row(&self.p_dot, k)
    }

    pub fn final_state(&self) -> SimplexState {
        SimplexState::from_raw_unchecked(self.x(self.len() - 1).to_vec(), self.mass)
    }

    pub fn state(&self, k: usize) -> SimplexState {
        SimplexState::from_raw_unchecked(self.x(k).to_vec(), self.mass)
    }

    /// Sum over steps of the sup-norm change made by the simplex projection.
    pub fn projection_correction(&self) -> f64 {
        self.projection_correction
    }

    /// Largest single-step projection change.
    pub fn max_projection_step(&self) -> f64 {
        self.max_projection_step
    }

    pub fn distance_series(&self) -> Option<&[f64]> {
        self.distance.as_deref()
    }

    pub fn storage_series(&self) -> Option<&[f64]> {
        self.storage.as_deref()
    }

    /// Fills the per-sample diagnostic slots.
    pub fn annotate(&mut self, set: Option<&EquilibriumSet>, storage: Option<&StorageFunction>) -> Result<()> {
        if let Some(set) = set {
            if set.is_empty() {
                return Err(Error::invalid("cannot measure distance to an empty equilibrium set"));
            }
            self.distance = Some((0..self.len()).map(|k| set.distance(self.x(k))).collect());
        }
        if let Some(sf) = storage {
            let mut values = Vec::with_capacity(self.len());
            for k in 0..self.len() {
                values.push(sf.eval_raw(self.x(k), self.mass, self.p(k))?);
            }
            self.storage = Some(values);
        }
        Ok(())
    }
}

fn central_differences(p: &[f64], n: usize, h: f64) -> Vec<f64> {
    let k = p.len() / n;
    let mut out = vec![0.0; p.len()];
    for s in 0..k {
        let (a, b, scale) = if s == 0 {
            (0, 1, h)
        } else if s == k - 1 {
            (k - 2, k - 1, h)
        } else {
            (s - 1, s + 1, 2.0 * h)
        };
        for i in 0..n {
            out[s * n + i] = (p[b * n + i] - p[a * n + i]) / scale;
        }
    }
    out
}

/// Right-hand side of the closed loop on the joint state `(q, x)`.
struct ClosedLoop<'a> {
    pdm: &'a PdmModel,
    protocol: &'a Protocol,
    n: usize,
    mass: f64,
    f: Vec<f64>,
    p: Vec<f64>,
}

impl ClosedLoop<'_> {
    /// Writes `(q̇, ẋ)` into `out` and leaves `F(x)` and `p` in the scratch buffers.
    fn eval(&mut self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let (q, x) = y.split_at(n);
        let (dq, dx) = out.split_at_mut(n);
        self.pdm.game().payoff_into(x, &mut self.f);
        self.pdm.derivative_from_payoff(&self.f, q, dq);
        self.pdm.output_from_payoff(&self.f, q, &mut self.p);
        self.protocol.mean_dynamic_into(x, self.mass, &self.p, dx)
    }
}

/// Classic RK4 with `round(T / h)` steps of size `T / steps`; the population
/// state is clipped and renormalized after every step.
pub fn integrate(
    pdm: &PdmModel,
    protocol: &Protocol,
    x0: &SimplexState,
    q0: &PdmState,
    horizon: f64,
    step: f64,
) -> Result<Trajectory> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    if !(step > 0.0 && step <= horizon) {
        return Err(Error::invalid(format!("step must lie in (0, horizon], got {step}")));
    }
    let n = pdm.dim();
    check_dim(n, protocol.dim(), "protocol")?;
    check_dim(n, q0.entries().len(), "PDM state")?;
    pdm.game().check_state(x0)?;
    let mass = x0.mass();

    let steps = (horizon / step).round().max(1.0) as usize;
    let h = horizon / steps as f64;
    let samples = steps + 1;

    let mut sys = ClosedLoop { pdm, protocol, n, mass, f: vec![0.0; n], p: vec![0.0; n] };
    let mut y: Vec<f64> = q0.entries().iter().chain(x0.entries()).copied().collect();
    let mut k1 = vec![0.0; 2 * n];
    let mut k2 = vec![0.0; 2 * n];
    let mut k3 = vec![0.0; 2 * n];
    let mut k4 = vec![0.0; 2 * n];
    let mut tmp = vec![0.0; 2 * n];

    let mut traj = Trajectory {
        n,
        mass,
        step: h,
        times: Vec::with_capacity(samples),
        x: Vec::with_capacity(samples * n),
        q: Vec::with_capacity(samples * n),
        p: Vec::with_capacity(samples * n),
        x_dot: Vec::with_capacity(samples * n),
        q_dot: Vec::with_capacity(samples * n),
        p_dot: Vec::new(),
        projection_correction: 0.0,
        max_projection_step: 0.0,
        distance: None,
        storage: None,
    };

    for s in 0..=steps {
        let t = s as f64 * h;
        // k1 doubles as the sample derivative at the grid point.
        sys.eval(&y, &mut k1).map_err(|e| diverged_or(e, t))?;
        if k1.iter().any(|v| !v.is_finite()) || sys.p.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged { time: t });
        }
        traj.times.push(t);
        traj.q.extend_from_slice(&y[..n]);
        traj.x.extend_from_slice(&y[n..]);
        traj.p.extend_from_slice(&sys.p);
        traj.q_dot.extend_from_slice(&k1[..n]);
        traj.x_dot.extend_from_slice(&k1[n..]);
        if s == steps {
            break;
        }

        for i in 0..2 * n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        sys.eval(&tmp, &mut k2).map_err(|e| diverged_or(e, t))?;
        for i in 0..2 * n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        sys.eval(&tmp, &mut k3).map_err(|e| diverged_or(e, t))?;
        for i in 0..2 * n {
            tmp[i] = y[i] + h * k3[i];
        }
        sys.eval(&tmp, &mut k4).map_err(|e| diverged_or(e, t))?;
        for i in 0..2 * n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t_next = t + h;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged { time: t_next });
        }
        let (projected, correction) =
            SimplexState::project(&y[n..], mass).map_err(|_| Error::IntegrationDiverged { time: t_next })?;
        y[n..].copy_from_slice(projected.entries());
        traj.projection_correction += correction;
        traj.max_projection_step = traj.max_projection_step.max(correction);
    }
    traj.p_dot = central_differences(&traj.p, n, h);
    Ok(traj)
}

fn diverged_or(e: Error, t: f64) -> Error {
    match e {
        Error::Numerical(_) => Error::IntegrationDiverged { time: t },
        other => other,
    }
}

/// Sup-norm distance from `z` to the nearest point of `set`.
pub fn distance_to_set(z: &SimplexState, set: &EquilibriumSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("cannot measure distance to an empty equilibrium set"));
    }
    Ok(set.distance(z.entries()))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub times: Vec<f64>,
    /// Sup-norm distance of `x(t)` to the equilibrium set.
    pub distance: Vec<f64>,
    /// `‖p(t) - F̄(x(t))‖∞`.
    pub payoff_gap: Vec<f64>,
    pub terminal_distance: f64,
    pub terminal_payoff_gap: f64,
}

impl ConvergenceReport {
    /// First sample time after which the distance stays strictly below
    /// `threshold`; `None` if it is still at or above it at the end.
    pub fn time_to_tolerance(&self, threshold: f64) -> Option<f64> {
        match self.distance.iter().rposition(|&d| !(d < threshold)) {
            None => Some(self.times[0]),
            Some(k) if k + 1 < self.times.len() => Some(self.times[k + 1]),
            Some(_) => None,
        }
    }
}

pub fn convergence_report(
    traj: &Trajectory,
    set: &EquilibriumSet,
    stationary: &PopulationGame,
) -> Result<ConvergenceReport> {
    if set.is_empty() {
        return Err(Error::invalid("cannot measure distance to an empty equilibrium set"));
    }
    check_dim(stationary.dim(), traj.dim(), "trajectory")?;
    let mut f = vec![0.0; traj.dim()];
    let mut distance = Vec::with_capacity(traj.len());
    let mut payoff_gap = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        distance.push(set.distance(traj.x(k)));
        stationary.payoff_into(traj.x(k), &mut f);
        payoff_gap.push(sup_distance(traj.p(k), &f));
    }
    Ok(ConvergenceReport {
        times: traj.times.clone(),
        terminal_distance: *distance.last().unwrap(),
        terminal_payoff_gap: *payoff_gap.last().unwrap(),
        distance,
        payoff_gap,
    })
}
