//! Finite-population Markov jump process approximated by the mean closed loop.
//!
//! The state is the vector of strategy counts. Revision opportunities arrive
//! at rate `N ϱ`; the revising agent plays `i` with probability `count_i / N`
//! and switches to `j ≠ i` with probability `T_ij(P, X) / ϱ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::closedloop::Trajectory;
use crate::edm::{Family, Protocol};
use crate::error::{check_dim, Error, Result};
use crate::pdm::{PdmKind, PdmModel, PdmState};
use crate::simplex::{lattice, SimplexState};

/// Multiplier applied to the largest outgoing rate found on the payoff box.
pub const RATE_SAFETY_FACTOR: f64 = 1.1;

/// Widening of the payoff box estimated from a deterministic run.
pub const BOX_INFLATION: f64 = 1.5;

/// Relative slack before an outgoing rate counts as exceeding `ϱ`.
const RATE_GUARD_SLACK: f64 = 1e-12;

/// Sample path of the jump process. Only state-changing jumps are stored.
#[derive(Debug, Clone)]
pub struct JumpTrajectory {
    n: usize,
    population: usize,
    mass: f64,
    horizon: f64,
    rho: f64,
    initial_counts: Vec<u64>,
    event_times: Vec<f64>,
    event_counts: Vec<u64>,
    event_payoffs: Vec<f64>,
    grid_times: Vec<f64>,
    q_grid: Vec<f64>,
    attempts: u64,
}

impl JumpTrajectory {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn population(&self) -> usize {
        self.population
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Revision opportunities drawn, including those without a switch.
    pub fn attempts(&self) -> u64 {
        self.attempts
    }

    pub fn initial_counts(&self) -> &[u64] {
        &self.initial_counts
    }

    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn num_events(&self) -> usize {
        self.event_times.len()
    }

    /// Counts right after event `k`.
    pub fn event_counts(&self, k: usize) -> &[u64] {
        &self.event_counts[k * self.n..(k + 1) * self.n]
    }

    /// Payoff vector that drove event `k`.
    pub fn event_payoff(&self, k: usize) -> &[f64] {
        &self.event_payoffs[k * self.n..(k + 1) * self.n]
    }

    /// Output grid on which `Q^N` was sampled.
    pub fn grid_times(&self) -> &[f64] {
        &self.grid_times
    }

    pub fn q_at_grid(&self, k: usize) -> &[f64] {
        &self.q_grid[k * self.n..(k + 1) * self.n]
    }

    /// Counts at time `t` (right-continuous).
    pub fn counts_at(&self, t: f64) -> &[u64] {
        let k = self.event_times.partition_point(|&s| s <= t);
        if k == 0 {
            &self.initial_counts
        } else {
            self.event_counts(k - 1)
        }
    }

    pub fn state_at(&self, t: f64) -> SimplexState {
        let shares = self.to_shares(self.counts_at(t));
        SimplexState::from_raw_unchecked(shares, self.mass)
    }

    pub fn final_state(&self) -> SimplexState {
        self.state_at(self.horizon)
    }

    fn to_shares(&self, counts: &[u64]) -> Vec<f64> {
        let unit = self.mass / self.population as f64;
        counts.iter().map(|&c| c as f64 * unit).collect()
    }
}

/// Rounds `x0` to the nearest point of `(m/N) ℕⁿ` on the simplex by largest remainders.
pub fn round_to_population(x0: &SimplexState, population: usize) -> Vec<u64> {
    let scaled: Vec<f64> = x0.entries().iter().map(|v| v / x0.mass() * population as f64).collect();
    let mut counts: Vec<u64> = scaled.iter().map(|v| v.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // Stable sort keeps ties in index order.
    order.sort_by(|&a, &b| (scaled[b] - scaled[b].floor()).total_cmp(&(scaled[a] - scaled[a].floor())));
    for &i in order.iter().take((population as u64).saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// Per-strategy payoff range seen along a deterministic run, widened by
/// [`BOX_INFLATION`] about its midpoint.
pub fn payoff_box_from(traj: &Trajectory) -> Vec<(f64, f64)> {
    let n = traj.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for k in 0..traj.len() {
        for (i, &v) in traj.p(k).iter().enumerate() {
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    lo.into_iter()
        .zip(hi)
        .map(|(a, b)| {
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a) * BOX_INFLATION;
            (mid - half, mid + half)
        })
        .collect()
}

/// Uniformization rate: the largest `Σ_{j≠i} T_ij` over a grid of payoff
/// vectors in the box (and of population states for EPT protocols), times
/// [`RATE_SAFETY_FACTOR`]. Logit rows sum to one, so its bound is exact.
pub fn choose_rate_bound(protocol: &Protocol, payoff_box: &[(f64, f64)], mass: f64) -> Result<f64> {
    let n = protocol.dim();
    check_dim(n, payoff_box.len(), "payoff box")?;
    if payoff_box.iter().any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
        return Err(Error::invalid("payoff box bounds must be finite with lower <= upper"));
    }
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::invalid(format!("mass must be positive, got {mass}")));
    }
    if protocol.family() == Family::Pbr {
        return Ok(RATE_SAFETY_FACTOR);
    }
    let per_axis = (200_000f64.powf(1.0 / n as f64) as usize).clamp(2, 21);
    let states = if protocol.family() == Family::Ept {
        lattice(n, 10, mass)
    } else {
        vec![SimplexState::barycenter(n, mass).into_vec()]
    };
    let mut r = vec![0.0; n];
    let mut row = vec![0.0; n];
    let mut idx = vec![0usize; n];
    let mut worst: f64 = 0.0;
    loop {
        for i in 0..n {
            let (a, b) = payoff_box[i];
            r[i] = a + (b - a) * idx[i] as f64 / (per_axis - 1) as f64;
        }
        for z in &states {
            for i in 0..n {
                protocol.rate_row(i, z, mass, &r, &mut row)?;
                let out: f64 = (0..n).filter(|&j| j != i).map(|j| row[j]).sum();
                worst = worst.max(out);
            }
        }
        // Odometer over the grid.
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] < per_axis {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    Ok(worst * RATE_SAFETY_FACTOR)
}

/// Simulates the jump process on `[0, T]`. `Q^N` is advanced with RK4 steps
/// of at most `step` between revision opportunities and sampled on the grid
/// `0, step, …, T`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_finite_population(
    population: usize,
    protocol: &Protocol,
    pdm: &PdmModel,
    x0: &SimplexState,
    q0: &PdmState,
    horizon: f64,
    step: f64,
    rho: f64,
    seed: u64,
) -> Result<JumpTrajectory> {
    if population == 0 {
        return Err(Error::invalid("population size must be at least 1"));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    if !(step > 0.0 && step <= horizon) {
        return Err(Error::invalid(format!("step must lie in (0, horizon], got {step}")));
    }
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::invalid(format!("rate bound must be finite and nonnegative, got {rho}")));
    }
    let n = pdm.dim();
    check_dim(n, protocol.dim(), "protocol")?;
    check_dim(n, q0.entries().len(), "PDM state")?;
    pdm.game().check_state(x0)?;
    let mass = x0.mass();

    let grid_steps = (horizon / step).round().max(1.0) as usize;
    let grid_h = horizon / grid_steps as f64;
    let mut sim = Simulator {
        n,
        pdm,
        protocol,
        unit: mass / population as f64,
        counts: round_to_population(x0, population),
        z: vec![0.0; n],
        f: vec![0.0; n],
        q: q0.entries().to_vec(),
        p: vec![0.0; n],
        row: vec![0.0; n],
        scratch: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        dynamic: pdm.kind() != PdmKind::Memoryless,
    };
    sim.refresh_state();

    let mut out = JumpTrajectory {
        n,
        population,
        mass,
        horizon,
        rho,
        initial_counts: sim.counts.clone(),
        event_times: Vec::new(),
        event_counts: Vec::new(),
        event_payoffs: Vec::new(),
        grid_times: Vec::with_capacity(grid_steps + 1),
        q_grid: Vec::with_capacity((grid_steps + 1) * n),
        attempts: 0,
    };
    out.grid_times.push(0.0);
    out.q_grid.extend_from_slice(&sim.q);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_rate = population as f64 * rho;
    let mut t = 0.0;
    let mut next_grid = 1usize;

    loop {
        let gap = if total_rate > 0.0 { -(1.0 - rng.gen::<f64>()).ln() / total_rate } else { f64::INFINITY };
        let t_next = t + gap;

        // Advance Q to min(t_next, T), sampling grid times on the way.
        while next_grid <= grid_steps && (next_grid as f64 * grid_h) <= t_next {
            let tg = next_grid as f64 * grid_h;
            sim.advance_q(tg - t, grid_h);
            t = tg;
            out.grid_times.push(tg);
            out.q_grid.extend_from_slice(&sim.q);
            next_grid += 1;
        }
        if t_next > horizon {
            break;
        }
        sim.advance_q(t_next - t, grid_h);
        t = t_next;
        out.attempts += 1;

        let u = rng.gen::<f64>();
        let i = sim.pick_strategy(u * population as f64);
        sim.output();
        sim.protocol.rate_row(i, &sim.z, mass, &sim.p, &mut sim.row)?;
        let outgoing: f64 = (0..n).filter(|&j| j != i).map(|j| sim.row[j]).sum();
        if outgoing > rho * (1.0 + RATE_GUARD_SLACK) || (rho == 0.0 && outgoing > 0.0) {
            return Err(Error::RateBoundViolated { rate: outgoing, rho, time: t });
        }
        let v = rng.gen::<f64>() * rho;
        let mut acc = 0.0;
        let mut dest = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            acc += sim.row[j];
            if v < acc {
                dest = Some(j);
                break;
            }
        }
        if let Some(j) = dest {
            out.event_payoffs.extend_from_slice(&sim.p);
            sim.counts[i] -= 1;
            sim.counts[j] += 1;
            sim.refresh_state();
            out.event_times.push(t);
            out.event_counts.extend_from_slice(&sim.counts);
        }
    }
    Ok(out)
}

struct Simulator<'a> {
    n: usize,
    pdm: &'a PdmModel,
    protocol: &'a Protocol,
    unit: f64,
    counts: Vec<u64>,
    z: Vec<f64>,
    f: Vec<f64>,
    q: Vec<f64>,
    p: Vec<f64>,
    row: Vec<f64>,
    scratch: [Vec<f64>; 5],
    dynamic: bool,
}

impl Simulator<'_> {
    fn refresh_state(&mut self) {
        for i in 0..self.n {
            self.z[i] = self.counts[i] as f64 * self.unit;
        }
        self.pdm.game().payoff_into(&self.z, &mut self.f);
        self.output();
    }

    fn output(&mut self) {
        self.pdm.output_from_payoff(&self.f, &self.q, &mut self.p);
    }

    fn pick_strategy(&self, target: f64) -> usize {
        let mut acc = 0.0;
        for i in 0..self.n {
            acc += self.counts[i] as f64;
            if target < acc {
                return i;
            }
        }
        // Rounding at the top end.
        (0..self.n).rev().find(|&i| self.counts[i] > 0).unwrap_or(0)
    }

    /// RK4 on `q̇ = α(F(X) - q)` with `X` frozen, in steps of at most `h`.
    fn advance_q(&mut self, dt: f64, h: f64) {
        if !self.dynamic || dt <= 0.0 {
            return;
        }
        let steps = (dt / h).ceil().max(1.0) as usize;
        let hs = dt / steps as f64;
        let n = self.n;
        let [k1, k2, k3, k4, tmp] = &mut self.scratch;
        for _ in 0..steps {
            self.pdm.derivative_from_payoff(&self.f, &self.q, k1);
            for i in 0..n {
                tmp[i] = self.q[i] + 0.5 * hs * k1[i];
            }
            self.pdm.derivative_from_payoff(&self.f, tmp, k2);
            for i in 0..n {
                tmp[i] = self.q[i] + 0.5 * hs * k2[i];
            }
            self.pdm.derivative_from_payoff(&self.f, tmp, k3);
            for i in 0..n {
                tmp[i] = self.q[i] + hs * k3[i];
            }
            self.pdm.derivative_from_payoff(&self.f, tmp, k4);
            for i in 0..n {
                self.q[i] += hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
}

/// `sup_k ‖X^N(t_k) - x(t_k)‖∞` over the grid of the mean trajectory.
pub fn sup_deviation(jump: &JumpTrajectory, mean: &Trajectory) -> Result<f64> {
    check_dim(mean.dim(), jump.dim(), "jump process")?;
    let scale = jump.horizon().abs().max(1.0);
    if (jump.horizon() - mean.horizon()).abs() > 1e-9 * scale {
        return Err(Error::invalid(format!(
            "horizon mismatch: jump process covers {}, mean trajectory {}",
            jump.horizon(),
            mean.horizon()
        )));
    }
    let unit = jump.mass / jump.population as f64;
    let mut event = 0usize;
    let mut counts: &[u64] = jump.initial_counts();
    let mut worst: f64 = 0.0;
    for (k, &t) in mean.times().iter().enumerate() {
        while event < jump.num_events() && jump.event_times[event] <= t {
            counts = jump.event_counts(event);
            event += 1;
        }
        for (c, x) in counts.iter().zip(mean.x(k)) {
            worst = worst.max((*c as f64 * unit - x).abs());
        }
    }
    Ok(worst)
}
