//! Storage and antistorage functions, passivity certificates and discrete
//! checks of the dissipation inequalities along sampled trajectories.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::closedloop::Trajectory;
use crate::edm::{log_sum_exp, EptRates, Family, Protocol, ProtocolKind, RateFn};
use crate::error::{check_dim, Error, Result};
use crate::games::{GameStructure, PopulationGame, ScalarFunction, DEFAULT_FD_STEP};
use crate::pdm::{PdmKind, PdmModel, PdmState};
use crate::simplex::{centering_projection, dot, euclid_norm, lattice, tangent_basis, PayoffVector, SimplexState};

/// Symmetry tolerance for `ΦFΦ`.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Step and pass threshold of [`check_storage_gradient`].
pub const GRADIENT_FD_STEP: f64 = 1e-6;
pub const GRADIENT_TOL: f64 = 1e-5;

/// Relative accuracy of the adaptive quadrature used by numeric storages.
const QUAD_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Quadrature

/// Adaptive Simpson quadrature of `f` over `[a, b]` (either orientation).
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol.max(1e-15), 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

fn rate_integral(tau: &RateFn, upper: f64) -> f64 {
    match tau {
        RateFn::PositivePart => 0.5 * upper.max(0.0).powi(2),
        RateFn::Custom(f) => adaptive_simpson(&|s| f(s), 0.0, upper, QUAD_TOL * (1.0 + upper.abs())),
    }
}

// ---------------------------------------------------------------------------
// Storage functions

#[derive(Debug, Clone)]
pub enum StorageKind {
    /// `(m/2) Σ [r̂_i]₊²`
    Bnn,
    /// `m Σ_i ∫_0^{r̂_i} τ_i`
    SeparableEpt(Vec<RateFn>),
    /// `Σ_i z_i Σ_j ∫_0^{r_j - r_i} τ_j` by quadrature.
    IpcNumeric(Vec<RateFn>),
    /// `½ Σ_i z_i Σ_j [r_j - r_i]₊²`
    Smith,
    /// Logit storage with noise level `eta`.
    PbrLogit { eta: f64 },
}

#[derive(Debug, Clone)]
pub struct StorageFunction {
    kind: StorageKind,
}

impl StorageFunction {
    pub fn new(kind: StorageKind) -> Result<Self> {
        if let StorageKind::PbrLogit { eta } = kind {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::invalid(format!("noise level must be positive, got {eta}")));
            }
        }
        Ok(Self { kind })
    }

    /// The storage function matched to a protocol.
    pub fn for_protocol(protocol: &Protocol) -> Result<Self> {
        let kind = match protocol.kind() {
            ProtocolKind::Ept(EptRates::Separable(rates)) => {
                if rates.iter().all(|r| matches!(r, RateFn::PositivePart)) {
                    StorageKind::Bnn
                } else {
                    StorageKind::SeparableEpt(rates.clone())
                }
            }
            ProtocolKind::Ept(EptRates::General(_)) => {
                return Err(Error::invalid("no storage function is available for a non-separable EPT protocol"))
            }
            ProtocolKind::Ipc(rates) => {
                if rates.iter().all(|r| matches!(r, RateFn::PositivePart)) {
                    StorageKind::Smith
                } else {
                    StorageKind::IpcNumeric(rates.clone())
                }
            }
            ProtocolKind::Logit { eta } => StorageKind::PbrLogit { eta: *eta },
        };
        Self::new(kind)
    }

    pub fn kind(&self) -> &StorageKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            StorageKind::Bnn => "bnn",
            StorageKind::SeparableEpt(_) => "separable_ept",
            StorageKind::IpcNumeric(_) => "ipc_numeric",
            StorageKind::Smith => "smith",
            StorageKind::PbrLogit { .. } => "pbr_logit",
        }
    }

    pub fn eval(&self, z: &SimplexState, r: &PayoffVector) -> Result<f64> {
        check_dim(z.dim(), r.dim(), "payoff vector")?;
        self.eval_raw(z.entries(), z.mass(), r.entries())
    }

    /// Evaluation on raw slices; `z` must be nonnegative.
    pub fn eval_raw(&self, z: &[f64], mass: f64, r: &[f64]) -> Result<f64> {
        let n = z.len();
        let value = match &self.kind {
            StorageKind::Bnn | StorageKind::SeparableEpt(_) => {
                let avg = dot(z, r) / mass;
                let mut acc = 0.0;
                for i in 0..n {
                    let rh = r[i] - avg;
                    acc += match &self.kind {
                        StorageKind::SeparableEpt(rates) => rate_integral(&rates[i], rh),
                        _ => 0.5 * rh.max(0.0).powi(2),
                    };
                }
                mass * acc
            }
            StorageKind::Smith => {
                let mut acc = 0.0;
                for i in 0..n {
                    if z[i] == 0.0 {
                        continue;
                    }
                    let inner: f64 = (0..n).map(|j| (r[j] - r[i]).max(0.0).powi(2)).sum();
                    acc += z[i] * inner;
                }
                0.5 * acc
            }
            StorageKind::IpcNumeric(rates) => {
                let mut acc = 0.0;
                for i in 0..n {
                    if z[i] == 0.0 {
                        continue;
                    }
                    let inner: f64 = (0..n).map(|j| rate_integral(&rates[j], r[j] - r[i])).sum();
                    acc += z[i] * inner;
                }
                acc
            }
            StorageKind::PbrLogit { eta } => {
                let entropy: f64 = z.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum();
                mass * log_sum_exp(r, *eta) - eta * mass * mass.ln() - dot(z, r) + eta * entropy
            }
        };
        if !value.is_finite() {
            return Err(Error::numerical("non-finite storage value"));
        }
        Ok(value)
    }
}

pub fn storage_eval(sf: &StorageFunction, z: &SimplexState, r: &PayoffVector) -> Result<f64> {
    sf.eval(z, r)
}

// ---------------------------------------------------------------------------
// Antistorage functions

/// Concave potential `f` with `∇f = F`.
#[derive(Debug, Clone)]
pub enum Potential {
    /// `½ zᵀ F z + r̄ᵀ z` with `F` symmetric negative definite.
    Quadratic { matrix: DMatrix<f64>, offset: DVector<f64> },
    /// `Σ_i ∫_0^{z_i} R_i` with every `R_i` strictly decreasing on the box.
    Separable { rewards: Vec<ScalarFunction> },
}

#[derive(Debug, Clone)]
pub enum AntistorageKind {
    ZeroMemoryless,
    /// `-c wᵀ F⁻¹ w` with `w = F z + r̄ - s`.
    AffineQuadratic {
        matrix: DMatrix<f64>,
        inverse: DMatrix<f64>,
        offset: DVector<f64>,
        scale: f64,
    },
    /// `α [f*(s) - f(z) + sᵀz]`, `f*(s) = sup_y f(y) - sᵀy`. For separable
    /// potentials the supremum is taken over the box `[lower, upper]ⁿ`.
    LegendreSmoothing {
        potential: Potential,
        alpha: f64,
        lower: f64,
        upper: f64,
    },
}

#[derive(Debug, Clone)]
pub struct AntistorageFunction {
    kind: AntistorageKind,
}

impl AntistorageFunction {
    pub fn zero_memoryless() -> Self {
        Self { kind: AntistorageKind::ZeroMemoryless }
    }

    /// `-wᵀF⁻¹w` for an affine game with symmetric negative definite matrix.
    pub fn affine_quadratic(game: &PopulationGame) -> Result<Self> {
        Self::affine_quadratic_scaled(game, 1.0)
    }

    /// Affine-quadratic antistorage scaled for a smoothing-anticipatory PDM:
    /// `c = α (μ1 + 2 μ0 + α μ2) / 2`. With this scale the rate of change of
    /// `L + ∫ṗᵀu̇` is a negative semidefinite form in `(u̇, w)` for any
    /// symmetric negative definite `F`; for pure smoothing it reduces to `α/2`.
    pub fn affine_quadratic_for_pdm(pdm: &PdmModel) -> Result<Self> {
        if pdm.kind() != PdmKind::SmoothingAnticipatory {
            return Err(Error::invalid("affine-quadratic antistorage needs a smoothing-anticipatory PDM"));
        }
        let (mu0, mu1, mu2) = pdm.mu();
        let alpha = pdm.alpha();
        Self::affine_quadratic_scaled(pdm.game(), alpha * (mu1 + 2.0 * mu0 + alpha * mu2) / 2.0)
    }

    pub fn affine_quadratic_scaled(game: &PopulationGame, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!("antistorage scale must be positive, got {scale}")));
        }
        let (matrix, offset) =
            game.affine_parts().ok_or_else(|| Error::invalid("affine-quadratic antistorage needs an affine game"))?;
        if !is_symmetric_negative_definite(matrix) {
            return Err(Error::invalid("affine-quadratic antistorage needs a symmetric negative definite matrix"));
        }
        let inverse = matrix.clone().try_inverse().ok_or_else(|| Error::invalid("payoff matrix is singular"))?;
        Ok(Self {
            kind: AntistorageKind::AffineQuadratic { matrix: matrix.clone(), inverse, offset: offset.clone(), scale },
        })
    }

    /// Legendre-type antistorage of a smoothing PDM whose game has a strictly
    /// concave potential: quadratic in closed form, separable by 1-D root
    /// finding over the box `[0, m]`.
    pub fn legendre_smoothing(pdm: &PdmModel) -> Result<Self> {
        let (mu0, mu1, mu2) = pdm.mu();
        if pdm.kind() != PdmKind::SmoothingAnticipatory || mu0 != 0.0 || mu1 != 1.0 || mu2 != 0.0 {
            return Err(Error::invalid("Legendre antistorage needs a pure smoothing PDM"));
        }
        let game = pdm.game();
        let potential = match game.structure() {
            GameStructure::Affine { matrix, offset } => {
                if !is_symmetric_negative_definite(matrix) {
                    return Err(Error::invalid("affine game has no strictly concave potential"));
                }
                Potential::Quadratic { matrix: matrix.clone(), offset: offset.clone() }
            }
            GameStructure::Separable { rewards } => {
                if !separable_strictly_decreasing(rewards, game.mass()) {
                    return Err(Error::invalid("separable game rewards are not strictly decreasing"));
                }
                Potential::Separable { rewards: rewards.clone() }
            }
            GameStructure::General { .. } => {
                return Err(Error::invalid("no potential is available for a general game"))
            }
        };
        Ok(Self {
            kind: AntistorageKind::LegendreSmoothing { potential, alpha: pdm.alpha(), lower: 0.0, upper: game.mass() },
        })
    }

    pub fn kind(&self) -> &AntistorageKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            AntistorageKind::ZeroMemoryless => "zero_memoryless",
            AntistorageKind::AffineQuadratic { .. } => "affine_quadratic",
            AntistorageKind::LegendreSmoothing { .. } => "legendre_smoothing",
        }
    }

    pub fn eval(&self, z: &SimplexState, s: &PdmState) -> Result<f64> {
        check_dim(z.dim(), s.entries().len(), "PDM state")?;
        self.eval_raw(z.entries(), s.entries())
    }

    pub fn eval_raw(&self, z: &[f64], s: &[f64]) -> Result<f64> {
        let value = match &self.kind {
            AntistorageKind::ZeroMemoryless => 0.0,
            AntistorageKind::AffineQuadratic { matrix, inverse, offset, scale } => {
                let w = matrix * DVector::from_column_slice(z) + offset - DVector::from_column_slice(s);
                -scale * w.dot(&(inverse * &w))
            }
            AntistorageKind::LegendreSmoothing { potential, alpha, lower, upper } => match potential {
                Potential::Quadratic { matrix, offset } => {
                    let w = matrix * DVector::from_column_slice(z) + offset - DVector::from_column_slice(s);
                    let inverse = matrix.clone().try_inverse().ok_or_else(|| Error::invalid("singular matrix"))?;
                    -0.5 * alpha * w.dot(&(inverse * &w))
                }
                Potential::Separable { rewards } => {
                    let mut acc = 0.0;
                    for (i, r) in rewards.iter().enumerate() {
                        let y = concave_argmax(r, s[i], *lower, *upper);
                        let f_y = integral_of(r, y);
                        let f_z = integral_of(r, z[i]);
                        acc += (f_y - s[i] * y) - (f_z - s[i] * z[i]);
                    }
                    alpha * acc
                }
            },
        };
        if !value.is_finite() {
            return Err(Error::numerical("non-finite antistorage value"));
        }
        Ok(value)
    }
}

pub fn antistorage_eval(af: &AntistorageFunction, z: &SimplexState, s: &PdmState) -> Result<f64> {
    af.eval(z, s)
}

fn integral_of(r: &ScalarFunction, upper: f64) -> f64 {
    adaptive_simpson(&|x| r.eval(x), 0.0, upper, QUAD_TOL * (1.0 + upper.abs()))
}

/// Maximizer of `∫_0^y R - s y` over `[lo, hi]` for decreasing `R`: the root of
/// `R(y) = s`, clamped to the box.
fn concave_argmax(r: &ScalarFunction, s: f64, lo: f64, hi: f64) -> f64 {
    if r.eval(lo) <= s {
        return lo;
    }
    if r.eval(hi) >= s {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if r.eval(mid) > s {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    0.5 * (a + b)
}

fn separable_strictly_decreasing(rewards: &[ScalarFunction], mass: f64) -> bool {
    const SAMPLES: usize = 1000;
    rewards.iter().all(|r| (0..=SAMPLES).all(|k| r.derivative(mass * k as f64 / SAMPLES as f64, DEFAULT_FD_STEP) < 0.0))
}

fn is_symmetric_negative_definite(m: &DMatrix<f64>) -> bool {
    let scale = m.abs().max().max(1.0);
    if (m - m.transpose()).abs().max() > SYMMETRY_TOL * scale {
        return false;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().all(|&e| e < 0.0)
}

// ---------------------------------------------------------------------------
// Certificates

/// Largest eigenvalue of `ΦFΦ`; errors when `ΦFΦ` is not symmetric.
pub fn lambda_star(matrix: &DMatrix<f64>) -> Result<f64> {
    if !matrix.is_square() {
        return Err(Error::invalid("lambda_star needs a square matrix"));
    }
    let phi = centering_projection(matrix.nrows());
    let projected = &phi * matrix * &phi;
    let scale = projected.abs().max().max(1.0);
    if (&projected - projected.transpose()).abs().max() > SYMMETRY_TOL * scale {
        return Err(Error::invalid("the projected payoff matrix is not symmetric"));
    }
    let sym = (&projected + projected.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym).eigenvalues.max())
}

/// Largest tangent-space eigenvalue of the symmetric part of `M`.
fn tangent_max_eigenvalue(m: &DMatrix<f64>, basis: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(basis.transpose() * sym * basis).eigenvalues.max()
}

fn tangent_min_eigenvalue(m: &DMatrix<f64>, basis: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(basis.transpose() * sym * basis).eigenvalues.min()
}

/// Grid estimate of the least `ν ≥ 0` with `z̃ᵀDF(z)z̃ ≤ ν z̃ᵀz̃` on the
/// tangent space, over the barycentric grid of the given resolution.
pub fn memoryless_deficit(game: &PopulationGame, grid_resolution: usize) -> Result<f64> {
    if grid_resolution == 0 {
        return Err(Error::invalid("grid resolution must be positive"));
    }
    let basis = tangent_basis(game.dim());
    if let Some((matrix, _)) = game.affine_parts() {
        return Ok(tangent_max_eigenvalue(matrix, &basis).max(0.0));
    }
    let mut worst: f64 = 0.0;
    for z in lattice(game.dim(), grid_resolution, game.mass()) {
        let jac = game.jacobian_raw(&z, DEFAULT_FD_STEP)?;
        worst = worst.max(tangent_max_eigenvalue(&jac, &basis));
    }
    Ok(worst)
}

/// Grid lower bound for the logit surplus: minimum over grid points with all
/// entries at least `1/(4·resolution)` of the smallest tangent eigenvalue of
/// `η diag(1/z)`.
pub fn pbr_surplus_bound(eta: f64, n: usize, grid_resolution: usize) -> Result<f64> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid(format!("noise level must be positive, got {eta}")));
    }
    if n < 2 || grid_resolution == 0 {
        return Err(Error::invalid("surplus bound needs n >= 2 and a positive grid resolution"));
    }
    let floor = 1.0 / (4.0 * grid_resolution as f64);
    let shrink = 1.0 - n as f64 * floor;
    let basis = tangent_basis(n);
    let mut best = f64::INFINITY;
    for z in lattice(n, grid_resolution, 1.0) {
        let d: Vec<f64> = z.iter().map(|v| eta / (shrink * v + floor)).collect();
        let hess = DMatrix::from_diagonal(&DVector::from_vec(d));
        best = best.min(tangent_min_eigenvalue(&hess, &basis));
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Passivity reports

#[derive(Debug, Clone, Serialize)]
pub struct PassivityReport {
    pub max_violation: f64,
    pub tolerance: f64,
    /// Surplus or deficit used in the inequality.
    pub parameter: f64,
    pub passed: bool,
    pub samples: usize,
}

impl PassivityReport {
    fn new(max_violation: f64, tolerance: f64, parameter: f64, samples: usize) -> Self {
        Self { max_violation, tolerance, parameter, passed: max_violation <= tolerance, samples }
    }
}

/// Compares the central-difference gradient of `S` in `r` with the mean
/// dynamic at random interior states and payoffs in `[-5, 5]ⁿ`.
pub fn check_storage_gradient<R: Rng + ?Sized>(
    sf: &StorageFunction,
    protocol: &Protocol,
    samples: usize,
    rng: &mut R,
) -> Result<PassivityReport> {
    let matched = matches!(
        (sf.kind(), protocol.family()),
        (StorageKind::Bnn | StorageKind::SeparableEpt(_), Family::Ept)
            | (StorageKind::Smith | StorageKind::IpcNumeric(_), Family::Ipc)
            | (StorageKind::PbrLogit { .. }, Family::Pbr)
    );
    if !matched {
        return Err(Error::invalid(format!("storage {} does not match protocol {}", sf.name(), protocol.name())));
    }
    let n = protocol.dim();
    let mut worst: f64 = 0.0;
    let mut v = vec![0.0; n];
    let mut r_pert = vec![0.0; n];
    for _ in 0..samples {
        let z = SimplexState::random(n, 1.0, rng);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        protocol.mean_dynamic_into(z.entries(), 1.0, &r, &mut v)?;
        for k in 0..n {
            r_pert.copy_from_slice(&r);
            r_pert[k] = r[k] + GRADIENT_FD_STEP;
            let up = sf.eval_raw(z.entries(), 1.0, &r_pert)?;
            r_pert[k] = r[k] - GRADIENT_FD_STEP;
            let down = sf.eval_raw(z.entries(), 1.0, &r_pert)?;
            let fd = (up - down) / (2.0 * GRADIENT_FD_STEP);
            worst = worst.max((fd - v[k]).abs());
        }
    }
    Ok(PassivityReport::new(worst, GRADIENT_TOL, 0.0, samples))
}

/// Quadrature tolerance `10 h² (1 + max‖ẋ‖ · max‖ṗ‖)`.
pub fn quadrature_tolerance(traj: &Trajectory) -> f64 {
    let mut xd: f64 = 0.0;
    let mut pd: f64 = 0.0;
    for k in 0..traj.len() {
        xd = xd.max(euclid_norm(traj.x_dot(k)));
        pd = pd.max(euclid_norm(traj.p_dot(k)));
    }
    10.0 * traj.step().powi(2) * (1.0 + xd * pd)
}

/// Largest increase `D(t) - D(t0)` over `t0 < t` of a sampled series.
fn max_increase(d: &[f64]) -> f64 {
    let mut running_min = f64::INFINITY;
    let mut worst: f64 = 0.0;
    for &v in d {
        worst = worst.max(v - running_min);
        running_min = running_min.min(v);
    }
    worst
}

/// Trapezoidal prefix integral of `ẋᵀṗ - c |ẋ|²`.
fn supply_prefix(traj: &Trajectory, c: f64) -> Vec<f64> {
    let h = traj.step();
    let g = |k: usize| dot(traj.x_dot(k), traj.p_dot(k)) - c * dot(traj.x_dot(k), traj.x_dot(k));
    let mut out = Vec::with_capacity(traj.len());
    let mut acc = 0.0;
    let mut prev = g(0);
    out.push(0.0);
    for k in 1..traj.len() {
        let cur = g(k);
        acc += 0.5 * h * (prev + cur);
        out.push(acc);
        prev = cur;
    }
    out
}

/// Checks `S(t) - S(t0) ≤ ∫_{t0}^{t} (ẋᵀṗ - η|ẋ|²)` over every pair of grid times.
pub fn check_delta_passivity(traj: &Trajectory, sf: &StorageFunction, eta: f64) -> Result<PassivityReport> {
    if !(eta >= 0.0) {
        return Err(Error::invalid(format!("surplus must be nonnegative, got {eta}")));
    }
    let supply = supply_prefix(traj, eta);
    let d = (0..traj.len())
        .map(|k| Ok(sf.eval_raw(traj.x(k), traj.mass(), traj.p(k))? - supply[k]))
        .collect::<Result<Vec<_>>>()?;
    Ok(PassivityReport::new(max_increase(&d), quadrature_tolerance(traj), eta, traj.len()))
}

/// Checks `L(t) - L(t0) ≤ -∫_{t0}^{t} (ṗᵀẋ - ν|ẋ|²)` over every pair of grid times.
pub fn check_delta_antipassivity(traj: &Trajectory, af: &AntistorageFunction, nu: f64) -> Result<PassivityReport> {
    if !(nu >= 0.0) {
        return Err(Error::invalid(format!("deficit must be nonnegative, got {nu}")));
    }
    let supply = supply_prefix(traj, nu);
    let e = (0..traj.len())
        .map(|k| Ok(af.eval_raw(traj.x(k), traj.q(k))? + supply[k]))
        .collect::<Result<Vec<_>>>()?;
    Ok(PassivityReport::new(max_increase(&e), quadrature_tolerance(traj), nu, traj.len()))
}

// ---------------------------------------------------------------------------
// Classification and theorem selection

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum PdmPassivity {
    Antipassive { deficit: f64 },
    WeakAntipassive { deficit: f64 },
    Unknown,
}

impl PdmPassivity {
    pub fn deficit(&self) -> Option<f64> {
        match self {
            PdmPassivity::Antipassive { deficit } | PdmPassivity::WeakAntipassive { deficit } => Some(*deficit),
            PdmPassivity::Unknown => None,
        }
    }
}

/// Tolerance under which `λ*` is treated as zero.
const LAMBDA_ZERO_TOL: f64 = 1e-10;

/// Antipassivity class of a PDM from the available sufficient conditions.
pub fn classify_pdm(pdm: &PdmModel, grid_resolution: usize) -> Result<PdmPassivity> {
    let game = pdm.game();
    if pdm.kind() == PdmKind::Memoryless {
        return Ok(PdmPassivity::Antipassive { deficit: memoryless_deficit(game, grid_resolution)? });
    }
    if let Some((matrix, _)) = game.affine_parts() {
        if is_symmetric_negative_definite(matrix) {
            return Ok(PdmPassivity::Antipassive { deficit: 0.0 });
        }
        let Ok(lambda) = lambda_star(matrix) else { return Ok(PdmPassivity::Unknown) };
        let scale = matrix.abs().max().max(1.0);
        if lambda <= LAMBDA_ZERO_TOL * scale {
            return Ok(PdmPassivity::WeakAntipassive { deficit: 0.0 });
        }
        let gain = pdm.payoff_gain();
        let deficit = if gain <= 1.0 { lambda } else { gain * lambda };
        return Ok(PdmPassivity::WeakAntipassive { deficit });
    }
    if AntistorageFunction::legendre_smoothing(pdm).is_ok() {
        return Ok(PdmPassivity::Antipassive { deficit: 0.0 });
    }
    Ok(PdmPassivity::Unknown)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Theorem {
    Thm1,
    Thm2,
    #[serde(rename = "Thm3-I")]
    Thm3I,
    #[serde(rename = "Thm3-II")]
    Thm3II,
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Conclusion {
    #[serde(rename = "GAS")]
    Gas,
    #[serde(rename = "globally_attractive")]
    GloballyAttractive,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    /// `λ*` when the game is affine with symmetric `ΦFΦ`.
    pub lambda_star: Option<f64>,
    /// PDM deficit; `None` when no sufficient condition applies.
    pub deficit: Option<f64>,
    /// Logit surplus lower bound; `None` for other protocols.
    pub surplus_bound: Option<f64>,
    pub theorem_applied: Theorem,
    pub conclusion: Conclusion,
    pub pdm_class: PdmPassivity,
    /// Set the conclusion refers to.
    pub equilibrium_set: &'static str,
    /// Never measured; it follows from the theorem when the conclusion is GAS.
    pub lyapunov_stability: &'static str,
    pub grid_resolution: usize,
}

/// Applies the convergence theorems to a protocol/PDM pair.
pub fn certify(pdm: &PdmModel, protocol: &Protocol, grid_resolution: usize) -> Result<Certificate> {
    check_dim(pdm.dim(), protocol.dim(), "protocol")?;
    let class = classify_pdm(pdm, grid_resolution)?;
    let lambda = pdm.game().affine_parts().and_then(|(m, _)| lambda_star(m).ok());
    let surplus = match protocol.eta() {
        Some(eta) => Some(pbr_surplus_bound(eta * pdm.game().mass(), pdm.dim(), grid_resolution)?),
        None => None,
    };
    let strength = |class: PdmPassivity| match class {
        PdmPassivity::Antipassive { .. } => Conclusion::Gas,
        PdmPassivity::WeakAntipassive { .. } => Conclusion::GloballyAttractive,
        PdmPassivity::Unknown => Conclusion::Inconclusive,
    };
    let deficit = class.deficit();
    let integrable_ept = matches!(protocol.kind(), ProtocolKind::Ept(EptRates::Separable(_)));
    let (theorem, conclusion) = match (protocol.family(), deficit) {
        (_, None) => (Theorem::None, Conclusion::Inconclusive),
        (Family::Ept, Some(d)) if d == 0.0 && integrable_ept => (Theorem::Thm1, strength(class)),
        (Family::Ipc, Some(0.0)) => (Theorem::Thm2, strength(class)),
        (Family::Pbr, Some(0.0)) => (Theorem::Thm3I, strength(class)),
        (Family::Pbr, Some(d)) if surplus.is_some_and(|s| s > d) => (Theorem::Thm3II, strength(class)),
        _ => (Theorem::None, Conclusion::Inconclusive),
    };
    let equilibrium_set = match protocol.family() {
        Family::Pbr => "perturbed",
        _ => "nash",
    };
    let lyapunov_stability = match conclusion {
        Conclusion::Gas => "by Theorem",
        _ => "not established",
    };
    Ok(Certificate {
        lambda_star: lambda,
        deficit,
        surplus_bound: surplus,
        theorem_applied: theorem,
        conclusion,
        pdm_class: class,
        equilibrium_set,
        lyapunov_stability,
        grid_resolution,
    })
}
