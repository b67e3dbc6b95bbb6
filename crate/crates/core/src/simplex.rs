//! Population states on the mass-`m` simplex, payoff vectors and tangent vectors.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the total mass of a [`SimplexState`].
pub const MASS_TOL: f64 = 1e-9;

/// Tolerance on the entry sum of a [`TangentVector`].
pub const TANGENT_TOL: f64 = 1e-9;

/// Population shares per strategy; nonnegative and summing to `mass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexState {
    entries: Vec<f64>,
    mass: f64,
}

impl SimplexState {
    pub fn new(entries: Vec<f64>, mass: f64) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::invalid(format!("mass must be positive, got {mass}")));
        }
        if entries.len() < 2 {
            return Err(Error::invalid("a population state needs at least two strategies"));
        }
        if let Some(bad) = entries.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("population share must be finite and nonnegative, got {bad}")));
        }
        let total: f64 = entries.iter().sum();
        if (total - mass).abs() > MASS_TOL {
            return Err(Error::invalid(format!("population shares sum to {total}, expected mass {mass}")));
        }
        Ok(Self { entries, mass })
    }

    /// Unit-mass state.
    pub fn unit(entries: Vec<f64>) -> Result<Self> {
        Self::new(entries, 1.0)
    }

    pub fn barycenter(n: usize, mass: f64) -> Self {
        Self { entries: vec![mass / n as f64; n], mass }
    }

    pub fn vertex(n: usize, i: usize, mass: f64) -> Self {
        let mut entries = vec![0.0; n];
        entries[i] = mass;
        Self { entries, mass }
    }

    /// Clips negative entries and rescales to `mass`. Returns the state and the
    /// sup-norm size of the correction.
    pub fn project(raw: &[f64], mass: f64) -> Result<(Self, f64)> {
        let mut entries: Vec<f64> = raw.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = entries.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::numerical("cannot project a state with no positive mass"));
        }
        let scale = mass / total;
        entries.iter_mut().for_each(|v| *v *= scale);
        let correction = raw.iter().zip(&entries).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok((Self { entries, mass }, correction))
    }

    /// Uniformly distributed state on the simplex.
    pub fn random<R: Rng + ?Sized>(n: usize, mass: f64, rng: &mut R) -> Self {
        // Normalized exponentials give the flat Dirichlet distribution.
        let mut e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = e.iter().sum();
        e.iter_mut().for_each(|v| *v *= mass / total);
        let (state, _) = Self::project(&e, mass).expect("positive exponential draws");
        state
    }

    pub(crate) fn from_raw_unchecked(entries: Vec<f64>, mass: f64) -> Self {
        Self { entries, mass }
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.entries
    }

    /// Indices with share strictly above `tol`.
    pub fn support(&self, tol: f64) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.entries[i] > tol).collect()
    }

    pub fn is_interior(&self) -> bool {
        self.entries.iter().all(|&v| v > 0.0)
    }
}

/// Reward per strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffVector(Vec<f64>);

impl PayoffVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("payoff entries must be finite"));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// A vector whose entries sum to zero: a velocity of the population state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("tangent vector entries must be finite"));
        }
        let sum: f64 = entries.iter().sum();
        let scale = entries.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        if sum.abs() > TANGENT_TOL * scale {
            return Err(Error::numerical(format!("tangent vector entries sum to {sum}")));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn euclid_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// All points of the lattice `(mass / resolution) * N^n` on the simplex, in
/// lexicographic order of the integer coordinates.
pub fn lattice(n: usize, resolution: usize, mass: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut counts = vec![0usize; n];
    lattice_rec(&mut counts, 0, resolution, &mut |c| {
        out.push(c.iter().map(|&k| mass * k as f64 / resolution as f64).collect());
    });
    out
}

/// Integer lattice coordinates (compositions of `resolution` into `n` parts).
pub fn lattice_counts(n: usize, resolution: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut counts = vec![0usize; n];
    lattice_rec(&mut counts, 0, resolution, &mut |c| out.push(c.to_vec()));
    out
}

fn lattice_rec(counts: &mut [usize], pos: usize, remaining: usize, f: &mut dyn FnMut(&[usize])) {
    let n = counts.len();
    if pos == n - 1 {
        counts[pos] = remaining;
        f(counts);
        return;
    }
    for k in (0..=remaining).rev() {
        counts[pos] = k;
        lattice_rec(counts, pos + 1, remaining - k, f);
    }
}

/// Centering projection onto the tangent space: `I - (1/n) 11ᵀ`.
pub fn centering_projection(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { (n as f64 - 1.0) / n as f64 } else { -1.0 / n as f64 })
}

/// Orthonormal basis of the tangent space `{v : Σv = 0}` as the columns of an
/// `n × (n-1)` matrix (Helmert contrasts).
pub fn tangent_basis(n: usize) -> DMatrix<f64> {
    let mut basis = DMatrix::zeros(n, n - 1);
    for k in 1..n {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            basis[(i, k - 1)] = 1.0 / norm;
        }
        basis[(k, k - 1)] = -(k as f64) / norm;
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_negative_entries_and_wrong_mass() {
        assert!(SimplexState::unit(vec![0.5, 0.6, -0.1]).is_err());
        assert!(SimplexState::unit(vec![0.5, 0.6, 0.1]).is_err());
        assert!(SimplexState::new(vec![0.5, 0.5], 0.0).is_err());
        assert!(SimplexState::new(vec![1.0, 1.0], 2.0).is_ok());
    }

    #[test]
    fn projection_reports_correction() {
        let (s, c) = SimplexState::project(&[0.5, 0.5 + 1e-12, -1e-12], 1.0).unwrap();
        assert!(c < 1e-11);
        assert_eq!(s.entries()[2], 0.0);
        assert!((s.entries().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lattice_sizes() {
        assert_eq!(lattice(3, 3, 1.0).len(), 10);
        assert_eq!(lattice(3, 200, 1.0).len(), 201 * 202 / 2);
        assert_eq!(lattice(4, 2, 1.0).len(), 10);
        for p in lattice(3, 7, 2.0) {
            assert!((p.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_basis_is_orthonormal_and_centered() {
        for n in 2..6 {
            let b = tangent_basis(n);
            let gram = b.transpose() * &b;
            assert!((gram - DMatrix::identity(n - 1, n - 1)).abs().max() < 1e-12);
            for k in 0..n - 1 {
                assert!(b.column(k).sum().abs() < 1e-12);
            }
            let phi = centering_projection(n);
            assert!((&phi * &b - &b).abs().max() < 1e-12);
        }
    }

    #[test]
    fn random_states_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let z = SimplexState::random(4, 2.0, &mut rng);
            assert!(SimplexState::new(z.entries().to_vec(), 2.0).is_ok());
        }
    }
}
