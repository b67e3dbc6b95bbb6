//! Nash equilibria and logit perturbed equilibria of stationary games.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::edm::logit_choice_into;
use crate::error::{Error, Result};
use crate::games::{PopulationGame, DEFAULT_FD_STEP};
use crate::simplex::{lattice_counts, sup_distance, SimplexState};

/// Sup-norm radius under which two equilibria are merged.
pub const DEDUP_RADIUS: f64 = 1e-4;

/// Largest strategy count accepted by support enumeration.
pub const MAX_ENUMERATION_DIM: usize = 10;

/// Smallest step size tried by [`perturbed_equilibrium`] before giving up on a start.
pub const MIN_DAMPING: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    Nash,
    Perturbed,
}

#[derive(Debug, Clone)]
pub struct EquilibriumSet {
    points: Vec<SimplexState>,
    kind: EquilibriumKind,
    tolerance: f64,
    diagnostic: Option<String>,
}

impl EquilibriumSet {
    pub fn points(&self) -> &[SimplexState] {
        &self.points
    }

    pub fn kind(&self) -> EquilibriumKind {
        self.kind
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Set when the search found nothing or had to fall back.
    pub fn diagnostic(&self) -> Option<&str> {
        self.diagnostic.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Sup-norm distance from `z` to the nearest point; infinite for an empty set.
    pub fn distance(&self, z: &[f64]) -> f64 {
        self.points.iter().map(|p| sup_distance(p.entries(), z)).fold(f64::INFINITY, f64::min)
    }

    fn from_candidates(mut points: Vec<SimplexState>, kind: EquilibriumKind, tolerance: f64) -> Self {
        points.sort_by(|a, b| {
            a.entries()
                .iter()
                .zip(b.entries())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut kept: Vec<SimplexState> = Vec::new();
        for p in points {
            if kept.iter().all(|k| sup_distance(k.entries(), p.entries()) > DEDUP_RADIUS) {
                kept.push(p);
            }
        }
        let diagnostic = kept.is_empty().then(|| "no equilibrium candidates found".to_string());
        Self { points: kept, kind, tolerance, diagnostic }
    }
}

/// Every strategy used above `tol` earns within `tol` of the best payoff.
pub fn is_nash(game: &PopulationGame, z: &SimplexState, tol: f64) -> Result<bool> {
    if !(tol >= 0.0) {
        return Err(Error::invalid(format!("tolerance must be nonnegative, got {tol}")));
    }
    let f = game.payoff(z)?;
    Ok(nash_raw(z.entries(), f.entries(), tol))
}

fn nash_raw(z: &[f64], f: &[f64], tol: f64) -> bool {
    let best = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    z.iter().zip(f).all(|(&zi, &fi)| zi <= tol || fi >= best - tol)
}

/// Nash equilibria by support enumeration (affine games) or lattice scan
/// plus Newton refinement on each face (other games).
///
/// The lattice stage visits every point of the barycentric grid, so its cost
/// grows like `resolution^(n-1)`; it is meant for `n = 3`.
pub fn nash_set(game: &PopulationGame, grid_resolution: usize, tol: f64) -> Result<EquilibriumSet> {
    if !(tol >= 0.0) {
        return Err(Error::invalid(format!("tolerance must be nonnegative, got {tol}")));
    }
    let n = game.dim();
    let m = game.mass();
    let mut candidates: Vec<Vec<f64>> = (0..n).map(|i| SimplexState::vertex(n, i, m).into_vec()).collect();

    if let Some((matrix, offset)) = game.affine_parts() {
        if n > MAX_ENUMERATION_DIM {
            return Err(Error::invalid(format!("support enumeration supports n <= {MAX_ENUMERATION_DIM}, got {n}")));
        }
        for mask in 1u32..(1 << n) {
            let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            if support.len() < 2 {
                continue;
            }
            if let Some(z) = solve_affine_support(matrix, offset, m, &support) {
                candidates.push(z);
            }
        }
    } else {
        if grid_resolution < 50 {
            return Err(Error::invalid(format!("grid resolution must be at least 50, got {grid_resolution}")));
        }
        candidates.extend(face_scan(game, grid_resolution)?);
    }

    let mut accepted = Vec::new();
    for z in candidates {
        if z.iter().any(|&v| v < -tol) {
            continue;
        }
        let Ok((state, _)) = SimplexState::project(&z, m) else { continue };
        if is_nash(game, &state, tol)? {
            accepted.push(state);
        }
    }
    Ok(EquilibriumSet::from_candidates(accepted, EquilibriumKind::Nash, tol))
}

/// Solves `(F z + r̄)_i = c` for `i ∈ S`, `z_j = 0` off `S`, `Σ z = m`.
fn solve_affine_support(matrix: &DMatrix<f64>, offset: &DVector<f64>, m: f64, support: &[usize]) -> Option<Vec<f64>> {
    let k = support.len();
    let mut a = DMatrix::zeros(k + 1, k + 1);
    let mut b = DVector::zeros(k + 1);
    for (row, &i) in support.iter().enumerate() {
        for (col, &j) in support.iter().enumerate() {
            a[(row, col)] = matrix[(i, j)];
        }
        a[(row, k)] = -1.0;
        b[row] = -offset[i];
    }
    for col in 0..k {
        a[(k, col)] = 1.0;
    }
    b[k] = m;
    let sol = solve_checked(a, b)?;
    let mut z = vec![0.0; matrix.nrows()];
    for (idx, &i) in support.iter().enumerate() {
        z[i] = sol[idx];
    }
    Some(z)
}

fn solve_checked(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.abs().max().max(1.0);
    let svd = a.clone().svd(false, false);
    let smallest = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if smallest <= 1e-12 * scale {
        return None;
    }
    let x = a.lu().solve(&b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Local minima of the payoff spread over the support, per face of the grid,
/// each refined by Newton's method on the equal-payoff system.
fn face_scan(game: &PopulationGame, resolution: usize) -> Result<Vec<Vec<f64>>> {
    let n = game.dim();
    let m = game.mass();
    let h = m / resolution as f64;
    let counts = lattice_counts(n, resolution);
    let index: std::collections::HashMap<Vec<usize>, usize> =
        counts.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();

    let mut f = vec![0.0; n];
    let spread: Vec<f64> = counts
        .iter()
        .map(|c| {
            let z: Vec<f64> = c.iter().map(|&k| k as f64 * h).collect();
            game.payoff_into(&z, &mut f);
            let (lo, hi) = c
                .iter()
                .zip(&f)
                .filter(|(&k, _)| k > 0)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .collect();

    let mut out = Vec::new();
    let mut neighbor = vec![0usize; n];
    for (idx, c) in counts.iter().enumerate() {
        let support: Vec<usize> = (0..n).filter(|&i| c[i] > 0).collect();
        if support.len() < 2 {
            continue;
        }
        let mut is_min = true;
        'outer: for &i in &support {
            for &j in &support {
                // Neighbors that stay on the same face.
                if i == j || c[i] < 2 {
                    continue;
                }
                neighbor.copy_from_slice(c);
                neighbor[i] -= 1;
                neighbor[j] += 1;
                if spread[index[&neighbor]] < spread[idx] {
                    is_min = false;
                    break 'outer;
                }
            }
        }
        if !is_min {
            continue;
        }
        let start: Vec<f64> = c.iter().map(|&k| k as f64 * h).collect();
        if let Some(z) = newton_equal_payoff(game, &start, &support)? {
            out.push(z);
        }
    }
    Ok(out)
}

fn newton_equal_payoff(game: &PopulationGame, start: &[f64], support: &[usize]) -> Result<Option<Vec<f64>>> {
    let n = game.dim();
    let k = support.len();
    let m = game.mass();
    let mut z = start.to_vec();
    let mut f = vec![0.0; n];
    game.payoff_into(&z, &mut f);
    let mut c = support.iter().map(|&i| f[i]).sum::<f64>() / k as f64;

    for _ in 0..100 {
        game.payoff_into(&z, &mut f);
        let mut res = DVector::zeros(k + 1);
        for (row, &i) in support.iter().enumerate() {
            res[row] = f[i] - c;
        }
        res[k] = support.iter().map(|&i| z[i]).sum::<f64>() - m;
        let scale = 1.0 + f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if res.amax() <= 1e-13 * scale {
            return Ok(Some(z));
        }
        let jac = game.jacobian_raw(&z, DEFAULT_FD_STEP)?;
        let mut a = DMatrix::zeros(k + 1, k + 1);
        for (row, &i) in support.iter().enumerate() {
            for (col, &j) in support.iter().enumerate() {
                a[(row, col)] = jac[(i, j)];
            }
            a[(row, k)] = -1.0;
        }
        for col in 0..k {
            a[(k, col)] = 1.0;
        }
        let Some(step) = solve_checked(a, -res) else { return Ok(None) };
        for (idx, &i) in support.iter().enumerate() {
            z[i] += step[idx];
        }
        c += step[k];
        // Leaving the face means this candidate belongs to another support.
        if support.iter().any(|&i| z[i] < -1e-9 || z[i] > m + 1e-9) || !c.is_finite() {
            return Ok(None);
        }
    }
    Ok(None)
}

/// Fixed-point residual `‖z - m·C(F(z))‖∞` of the logit perturbed equilibrium.
pub fn perturbed_residual(game: &PopulationGame, z: &SimplexState, eta: f64) -> Result<f64> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid(format!("noise level must be positive, got {eta}")));
    }
    let f = game.payoff(z)?;
    let mut c = vec![0.0; game.dim()];
    logit_choice_into(f.entries(), eta, &mut c);
    Ok(z.entries().iter().zip(&c).fold(0.0f64, |a, (x, y)| a.max((x - game.mass() * y).abs())))
}

/// Damped fixed-point iteration `z ← (1-κ) z + κ m C(F(z))` from the
/// barycenter and from each vertex pulled toward it. A start that has not
/// converged after `max_iter` steps is retried with `κ` halved, down to
/// [`MIN_DAMPING`].
pub fn perturbed_equilibrium(
    game: &PopulationGame,
    eta: f64,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumSet> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid(format!("noise level must be positive, got {eta}")));
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::invalid(format!("damping must lie in (0, 1], got {damping}")));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::invalid("tolerance and iteration budget must be positive"));
    }
    let n = game.dim();
    let m = game.mass();
    let bary = SimplexState::barycenter(n, m);
    let mut starts = vec![bary.entries().to_vec()];
    for i in 0..n {
        let v = SimplexState::vertex(n, i, m);
        starts.push(v.entries().iter().zip(bary.entries()).map(|(a, b)| 0.8 * a + 0.2 * b).collect());
    }

    let mut found = Vec::new();
    let mut unconverged = 0;
    for start in &starts {
        let mut kappa = damping;
        let mut result = None;
        while kappa >= MIN_DAMPING {
            if let Some(z) = damped_logit_iteration(game, start, eta, kappa, tol, max_iter) {
                result = Some(z);
                break;
            }
            kappa *= 0.5;
        }
        match result {
            Some(z) => found.push(SimplexState::from_raw_unchecked(z, m)),
            None => unconverged += 1,
        }
    }
    let mut set = EquilibriumSet::from_candidates(found, EquilibriumKind::Perturbed, tol);
    if unconverged > 0 {
        let note = format!("{unconverged} of {} starts did not converge", starts.len());
        set.diagnostic = Some(match set.diagnostic {
            Some(d) => format!("{d}; {note}"),
            None => note,
        });
    }
    Ok(set)
}

fn damped_logit_iteration(
    game: &PopulationGame,
    start: &[f64],
    eta: f64,
    kappa: f64,
    tol: f64,
    max_iter: usize,
) -> Option<Vec<f64>> {
    let n = game.dim();
    let m = game.mass();
    let mut z = start.to_vec();
    let mut f = vec![0.0; n];
    let mut c = vec![0.0; n];
    for _ in 0..=max_iter {
        game.payoff_into(&z, &mut f);
        logit_choice_into(&f, eta, &mut c);
        let residual = z.iter().zip(&c).fold(0.0f64, |a, (x, y)| a.max((x - m * y).abs()));
        if !residual.is_finite() {
            return None;
        }
        if residual <= tol {
            return Some(z);
        }
        for i in 0..n {
            z[i] = (1.0 - kappa) * z[i] + kappa * m * c[i];
        }
    }
    None
}
