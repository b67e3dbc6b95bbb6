//! Memoryless population games `F: X -> R^n` and the three worked examples.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::simplex::{PayoffVector, SimplexState, MASS_TOL};

/// Default central finite-difference step for Jacobians.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type VectorMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type MatrixMap = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// A scalar function with an optional analytic derivative.
#[derive(Clone)]
pub struct ScalarFunction {
    value: ScalarMap,
    derivative: Option<ScalarMap>,
}

impl ScalarFunction {
    pub fn new(value: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { value: Arc::new(value), derivative: None }
    }

    pub fn with_derivative(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { value: Arc::new(value), derivative: Some(Arc::new(derivative)) }
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.value)(s)
    }

    /// Analytic derivative if declared, otherwise a central difference with `step`.
    pub fn derivative(&self, s: f64, step: f64) -> f64 {
        match &self.derivative {
            Some(d) => d(s),
            None => (self.eval(s + step) - self.eval(s - step)) / (2.0 * step),
        }
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }
}

impl fmt::Debug for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarFunction").field("analytic_derivative", &self.has_derivative()).finish()
    }
}

/// Declared structure of a payoff map.
#[derive(Clone)]
pub enum GameStructure {
    /// `F(z) = matrix · z + offset`.
    Affine { matrix: DMatrix<f64>, offset: DVector<f64> },
    /// `F_i(z) = R_i(z_i)`.
    Separable { rewards: Vec<ScalarFunction> },
    /// Arbitrary evaluator with an optional analytic Jacobian.
    General { payoff: VectorMap, jacobian: Option<MatrixMap> },
}

impl fmt::Debug for GameStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GameStructure::Affine { matrix, offset } => {
                f.debug_struct("Affine").field("matrix", matrix).field("offset", offset).finish()
            }
            GameStructure::Separable { rewards } => {
                f.debug_struct("Separable").field("rewards", &rewards.len()).finish()
            }
            GameStructure::General { jacobian, .. } => {
                f.debug_struct("General").field("analytic_jacobian", &jacobian.is_some()).finish()
            }
        }
    }
}

/// A continuous payoff map on the mass-`m` simplex. Immutable once built.
#[derive(Clone, Debug)]
pub struct PopulationGame {
    n: usize,
    mass: f64,
    structure: GameStructure,
}

impl PopulationGame {
    pub fn affine(matrix: DMatrix<f64>, offset: DVector<f64>, mass: f64) -> Result<Self> {
        let n = offset.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::invalid(format!(
                "affine game matrix is {}x{}, offset has length {n}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().chain(offset.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("affine game coefficients must be finite"));
        }
        Self::build(n, mass, GameStructure::Affine { matrix, offset })
    }

    /// Affine game from a row-major matrix.
    pub fn affine_row_major(matrix: &[f64], offset: &[f64], mass: f64) -> Result<Self> {
        let n = offset.len();
        if matrix.len() != n * n {
            return Err(Error::invalid(format!("affine game needs {} matrix entries, got {}", n * n, matrix.len())));
        }
        Self::affine(DMatrix::from_row_slice(n, n, matrix), DVector::from_column_slice(offset), mass)
    }

    /// Constant game `F ≡ offset`.
    pub fn constant(offset: &[f64], mass: f64) -> Result<Self> {
        let n = offset.len();
        Self::affine(DMatrix::zeros(n, n), DVector::from_column_slice(offset), mass)
    }

    pub fn separable(rewards: Vec<ScalarFunction>, mass: f64) -> Result<Self> {
        let n = rewards.len();
        Self::build(n, mass, GameStructure::Separable { rewards })
    }

    pub fn general(
        n: usize,
        mass: f64,
        payoff: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        jacobian: Option<MatrixMap>,
    ) -> Result<Self> {
        Self::build(n, mass, GameStructure::General { payoff: Arc::new(payoff), jacobian })
    }

    fn build(n: usize, mass: f64, structure: GameStructure) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("a population game needs at least two strategies"));
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::invalid(format!("mass must be positive, got {mass}")));
        }
        Ok(Self { n, mass, structure })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn structure(&self) -> &GameStructure {
        &self.structure
    }

    /// Matrix and offset when the game is affine.
    pub fn affine_parts(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        match &self.structure {
            GameStructure::Affine { matrix, offset } => Some((matrix, offset)),
            _ => None,
        }
    }

    /// Unchecked evaluation on a raw slice. The slice may leave the simplex
    /// slightly (finite differences); all provided structures extend to `R^n`.
    #[inline]
    pub fn payoff_into(&self, z: &[f64], out: &mut [f64]) {
        match &self.structure {
            GameStructure::Affine { matrix, offset } => {
                for i in 0..self.n {
                    let mut acc = offset[i];
                    for j in 0..self.n {
                        acc += matrix[(i, j)] * z[j];
                    }
                    out[i] = acc;
                }
            }
            GameStructure::Separable { rewards } => {
                for (i, r) in rewards.iter().enumerate() {
                    out[i] = r.eval(z[i]);
                }
            }
            GameStructure::General { payoff, .. } => payoff(z, out),
        }
    }

    pub fn payoff_vec(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.payoff_into(z, &mut out);
        out
    }

    pub fn payoff(&self, z: &SimplexState) -> Result<PayoffVector> {
        self.check_state(z)?;
        PayoffVector::new(self.payoff_vec(z.entries()))
    }

    pub(crate) fn check_state(&self, z: &SimplexState) -> Result<()> {
        check_dim(self.n, z.dim(), "population state")?;
        if (z.mass() - self.mass).abs() > MASS_TOL {
            return Err(Error::invalid(format!("state mass {} does not match game mass {}", z.mass(), self.mass)));
        }
        Ok(())
    }

    /// Jacobian `DF(z)`: analytic when the structure provides it, central
    /// differences with `fd_step` otherwise.
    pub fn jacobian(&self, z: &SimplexState, fd_step: f64) -> Result<DMatrix<f64>> {
        self.check_state(z)?;
        self.jacobian_raw(z.entries(), fd_step)
    }

    pub(crate) fn jacobian_raw(&self, z: &[f64], fd_step: f64) -> Result<DMatrix<f64>> {
        if !(fd_step > 0.0) {
            return Err(Error::invalid(format!("finite-difference step must be positive, got {fd_step}")));
        }
        let jac = match &self.structure {
            GameStructure::Affine { matrix, .. } => matrix.clone(),
            GameStructure::Separable { rewards } => {
                let d: Vec<f64> = rewards.iter().zip(z).map(|(r, &s)| r.derivative(s, fd_step)).collect();
                DMatrix::from_diagonal(&DVector::from_vec(d))
            }
            GameStructure::General { jacobian: Some(j), .. } => j(z),
            GameStructure::General { jacobian: None, .. } => return self.fd_jacobian_raw(z, fd_step),
        };
        if jac.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite Jacobian entry"));
        }
        Ok(jac)
    }

    /// Central finite-difference Jacobian using raw coordinate perturbations;
    /// consumers project onto the tangent space themselves.
    pub fn finite_difference_jacobian(&self, z: &SimplexState, fd_step: f64) -> Result<DMatrix<f64>> {
        self.check_state(z)?;
        if !(fd_step > 0.0) {
            return Err(Error::invalid(format!("finite-difference step must be positive, got {fd_step}")));
        }
        self.fd_jacobian_raw(z.entries(), fd_step)
    }

    fn fd_jacobian_raw(&self, z: &[f64], step: f64) -> Result<DMatrix<f64>> {
        let n = self.n;
        let mut jac = DMatrix::zeros(n, n);
        let mut zp = z.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            zp[j] = z[j] + step;
            self.payoff_into(&zp, &mut fp);
            zp[j] = z[j] - step;
            self.payoff_into(&zp, &mut fm);
            zp[j] = z[j];
            for i in 0..n {
                let d = (fp[i] - fm[i]) / (2.0 * step);
                if !d.is_finite() {
                    return Err(Error::numerical("non-finite payoff during finite differencing"));
                }
                jac[(i, j)] = d;
            }
        }
        Ok(jac)
    }
}

/// Three-link congestion game with delays `D_i(s) = s`, except link 2 with `2s`.
pub fn congestion_example() -> PopulationGame {
    #[rustfmt::skip]
    let matrix = [
        -3.0,  0.0, -1.0,
         0.0, -2.0, -1.0,
        -1.0, -1.0, -3.0,
    ];
    PopulationGame::affine_row_major(&matrix, &[0.0, 0.0, 0.0], 1.0).expect("valid example")
}

/// Electricity demand-response cost signal with reduction levels `(0.01, 0.1, 1)`.
pub fn demand_response_example() -> PopulationGame {
    let matrix = DMatrix::from_diagonal(&DVector::from_vec(vec![-10.0, -5.0, -1.0]));
    let offset = DVector::from_vec(vec![-0.01, -0.1, -1.0]);
    PopulationGame::affine(matrix, offset, 1.0).expect("valid example")
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Task reward `R(s) = σ(100(s - 0.2)) - σ(20(s - 0.5))`.
pub fn task_allocation_reward() -> ScalarFunction {
    ScalarFunction::with_derivative(
        |s| logistic(100.0 * (s - 0.2)) - logistic(20.0 * (s - 0.5)),
        |s| {
            let a = logistic(100.0 * (s - 0.2));
            let b = logistic(20.0 * (s - 0.5));
            100.0 * a * (1.0 - a) - 20.0 * b * (1.0 - b)
        },
    )
}

/// Three identical tasks rewarded by [`task_allocation_reward`].
pub fn task_allocation_example() -> PopulationGame {
    PopulationGame::separable(vec![task_allocation_reward(); 3], 1.0).expect("valid example")
}
