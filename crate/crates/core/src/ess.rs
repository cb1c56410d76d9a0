//! Evolutionary stable strategies of the limit problem.
//!
//! For `R(z) = 1 - g z^2` every equilibrium is a finite sum of Dirac masses
//! whose support is the zero set of the fitness
//!
//! ```text
//! F(z) = 1 - g z^2 - rho0 + tau * sum_i (a_i / rho0) H(z - z_i),
//! ```
//!
//! and `F <= 0` everywhere. Which morphism occurs is controlled by
//! `mu = tau / (2g)` through two kernel-only thresholds `mu1 < mu2`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{growth, ModelParams, TransferKernel};
use crate::roots;

/// Kernel-only constants that organise the equilibria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    /// Positive root of `G(z) = 2H(z) - z(1 + H'(z))`; the gap between
    /// the two dimorphic traits.
    pub d1: f64,
    /// `1 - H'(d1)`.
    pub c1: f64,
    /// `1 / max H''`.
    pub c2: f64,
    /// Monomorphic/dimorphic threshold `d1 / c1`.
    pub mu1: f64,
    /// Dimorphic/trimorphic threshold.
    pub mu2: f64,
    /// Trait at which the third mass emerges for `mu = mu2`.
    pub z3: f64,
}

/// `G(z) = 2H(z) - z(1 + H'(z))`.
pub fn gap_function(kernel: &TransferKernel, z: f64) -> f64 {
    2.0 * kernel.h(z) - z * (1.0 + kernel.dh(z))
}

fn gap_function_slope(kernel: &TransferKernel, z: f64) -> f64 {
    kernel.dh(z) - 1.0 - z * kernel.d2h(z)
}

/// Positive root of [`gap_function`]: bisection on `(z_H, 40]` followed by
/// a few Newton steps.
pub fn find_d1(kernel: &TransferKernel) -> Result<f64> {
    let lo = kernel.z_h();
    let hi = 40.0;
    let g = |z| gap_function(kernel, z);
    if g(lo) <= 0.0 || g(hi) >= 0.0 {
        return Err(Error::Kernel(format!(
            "{}: G has no sign change on (z_H, 40]",
            kernel.name()
        )));
    }
    let mut d1 = roots::bisect(g, lo, hi, 1e-12)?;
    for _ in 0..3 {
        let step = gap_function(kernel, d1) / gap_function_slope(kernel, d1);
        if !step.is_finite() || step.abs() > 1e-9 {
            break;
        }
        d1 -= step;
    }
    Ok(d1)
}

/// Compute all kernel constants, including the `mu2` search.
pub fn compute_constants(kernel: &TransferKernel) -> Result<KernelConstants> {
    let d1 = find_d1(kernel)?;
    let c1 = 1.0 - kernel.dh(d1);
    let mu1 = d1 / c1;
    // H'' is odd with critical points at +-z_H, so its maximum sits at -z_H.
    let c2 = 1.0 / kernel.d2h(-kernel.z_h());
    let mut constants = KernelConstants {
        d1,
        c1,
        c2,
        mu1,
        mu2: f64::NAN,
        z3: f64::NAN,
    };
    let (mu2, z3) = find_mu2(kernel, &constants)?;
    constants.mu2 = mu2;
    constants.z3 = z3;
    Ok(constants)
}

/// Dimorphic traits and weight fractions as functions of `mu` alone.
#[derive(Debug, Clone, Copy)]
struct DimorphicShape {
    z1: f64,
    z2: f64,
    /// `a / rho0`
    alpha: f64,
    /// `b / rho0`
    beta: f64,
}

fn dimorphic_shape(c: &KernelConstants, mu: f64) -> DimorphicShape {
    let z1 = mu * (1.0 - c.c1 / 2.0) + c.d1 / 2.0;
    let ratio = c.mu1 / mu;
    DimorphicShape {
        z1,
        z2: z1 - c.d1,
        alpha: 0.5 * (1.0 + ratio),
        beta: 0.5 * (1.0 - ratio),
    }
}

/// The rescaled dimorphic fitness `J_{2,mu}(z) = F(z) / g`.
///
/// Only `d1`, `c1` and `mu1` of `constants` are read.
pub fn dimorphic_potential(
    kernel: &TransferKernel,
    constants: &KernelConstants,
    mu: f64,
    z: f64,
) -> f64 {
    let s = dimorphic_shape(constants, mu);
    s.z1 * s.z1 - z * z - (mu - constants.mu1) * kernel.h(constants.d1)
        + 2.0 * mu * (s.alpha * kernel.h(z - s.z1) + s.beta * kernel.h(z - s.z2))
}

const EXCLUSION_RADIUS: f64 = 0.1;
const SCAN_STEP: f64 = 1e-3;

/// Maximum of `J_{2,mu}` away from the two dimorphic traits. Returns
/// `(argmax, max)`.
fn off_support_maximum(kernel: &TransferKernel, c: &KernelConstants, mu: f64) -> (f64, f64) {
    let s = dimorphic_shape(c, mu);
    let excluded = |z: f64| (z - s.z1).abs() <= EXCLUSION_RADIUS || (z - s.z2).abs() <= EXCLUSION_RADIUS;
    let j = |z: f64| dimorphic_potential(kernel, c, mu, z);

    let lo = -2.0;
    let n = ((mu + 7.0) / SCAN_STEP).ceil() as usize;
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for i in 0..=n {
        let z = lo + i as f64 * SCAN_STEP;
        if excluded(z) {
            continue;
        }
        let v = j(z);
        if v > best.1 {
            best = (z, v);
        }
    }
    // Golden-section polish, only when the whole refinement window is
    // admissible.
    let (a, b) = (best.0 - SCAN_STEP, best.0 + SCAN_STEP);
    if !excluded(a) && !excluded(b) && !excluded(best.0) {
        let refined = roots::golden_max(j, a, b, 1e-12);
        if refined.1 > best.1 {
            best = refined;
        }
    }
    best
}

/// Locate `mu2`, the smallest `mu >= mu1` at which `J_{2,mu}` acquires a
/// third zero, together with the location `z3` of that zero.
///
/// Only `d1`, `c1` and `mu1` of `constants` are read.
pub fn find_mu2(kernel: &TransferKernel, constants: &KernelConstants) -> Result<(f64, f64)> {
    const MU_MAX: f64 = 20.0;
    const BRACKET_STEP: f64 = 0.05;
    let f = |mu: f64| off_support_maximum(kernel, constants, mu).1;

    // March to the first sign change so that bisection targets the
    // infimum rather than a later crossing.
    let mut lo = constants.mu1;
    let mut hi = None;
    while lo < MU_MAX {
        let next = (lo + BRACKET_STEP).min(MU_MAX);
        if f(next) >= 0.0 {
            hi = Some(next);
            break;
        }
        lo = next;
    }
    let hi = hi.ok_or_else(|| {
        Error::Kernel(format!(
            "{}: no third zero of the dimorphic fitness for mu <= {MU_MAX}",
            kernel.name()
        ))
    })?;
    let mu2 = roots::bisect(
        |mu| {
            // Treat the crossing as a sign change of max J.
            let v = f(mu);
            if v >= 0.0 {
                1.0
            } else {
                -1.0
            }
        },
        lo,
        hi,
        1e-9,
    )?;
    let (z3, _) = off_support_maximum(kernel, constants, mu2);
    Ok((mu2, z3))
}

/// Sign of `dJ_{2,mu}/dmu` at `z3`, by a centered difference in `mu`.
pub fn check_hypothesis_37(
    kernel: &TransferKernel,
    constants: &KernelConstants,
    mu: f64,
) -> Result<bool> {
    Ok(hypothesis_37_slope(kernel, constants, mu)? > 0.0)
}

/// `dJ_{2,mu}/dmu (z3)`, centered difference with step `1e-6`.
pub fn hypothesis_37_slope(
    kernel: &TransferKernel,
    constants: &KernelConstants,
    mu: f64,
) -> Result<f64> {
    if !(mu >= constants.mu2) {
        return Err(Error::Precondition(format!(
            "hypothesis (37) is only defined for mu >= mu2 = {}, got {mu}",
            constants.mu2
        )));
    }
    let h = 1e-6;
    let z3 = constants.z3;
    Ok((dimorphic_potential(kernel, constants, mu + h, z3)
        - dimorphic_potential(kernel, constants, mu - h, z3))
        / (2.0 * h))
}

/// A finite sum of Dirac masses `sum_i a_i delta(z - z_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteEss {
    /// Support traits, strictly decreasing.
    pub points: Vec<f64>,
    /// Masses `a_i`, aligned with `points`.
    pub weights: Vec<f64>,
    /// Total mass.
    pub rho0: f64,
    pub morphism: usize,
}

impl DiscreteEss {
    /// Build from `(trait, mass)` pairs; sorts by decreasing trait.
    pub fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (points, weights): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let rho0 = weights.iter().sum();
        let morphism = points.len();
        Self {
            points,
            weights,
            rho0,
            morphism,
        }
    }

    /// `a_i / rho0`.
    pub fn fractions(&self) -> Vec<f64> {
        self.weights.iter().map(|a| a / self.rho0).collect()
    }

    /// Transfer potential `Phi0(z) = tau sum_i (a_i/rho0) H(z - z_i)`.
    pub fn transfer_potential(&self, tau: f64, kernel: &TransferKernel, z: f64) -> f64 {
        tau * self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(&zi, &ai)| ai * kernel.h(z - zi))
            .sum::<f64>()
            / self.rho0
    }

    /// `F(z)`.
    pub fn fitness_at(&self, params: &ModelParams, kernel: &TransferKernel, z: f64) -> f64 {
        growth(params.g, z) - self.rho0 + self.transfer_potential(params.tau, kernel, z)
    }

    /// `F'(z)`, analytic.
    pub fn fitness_slope_at(&self, params: &ModelParams, kernel: &TransferKernel, z: f64) -> f64 {
        let phi_slope = params.tau
            * self
                .points
                .iter()
                .zip(&self.weights)
                .map(|(&zi, &ai)| ai * kernel.dh(z - zi))
                .sum::<f64>()
            / self.rho0;
        -2.0 * params.g * z + phi_slope
    }

    /// `(F(z_i), F'(z_i))` at each support point.
    pub fn stationarity_residuals(
        &self,
        params: &ModelParams,
        kernel: &TransferKernel,
    ) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .map(|&z| (self.fitness_at(params, kernel, z), self.fitness_slope_at(params, kernel, z)))
            .collect()
    }
}

/// Result of a closed-form equilibrium construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EssOutcome {
    Valid(DiscreteEss),
    /// The formulas were evaluated but a validity condition failed.
    Invalid {
        reason: String,
        candidate: DiscreteEss,
    },
}

impl EssOutcome {
    pub fn is_valid(&self) -> bool {
        matches!(self, EssOutcome::Valid(_))
    }

    pub fn ess(&self) -> Option<&DiscreteEss> {
        match self {
            EssOutcome::Valid(e) => Some(e),
            EssOutcome::Invalid { .. } => None,
        }
    }

    /// The evaluated formulas, valid or not.
    pub fn candidate(&self) -> &DiscreteEss {
        match self {
            EssOutcome::Valid(e) => e,
            EssOutcome::Invalid { candidate, .. } => candidate,
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            EssOutcome::Valid(_) => None,
            EssOutcome::Invalid { reason, .. } => Some(reason),
        }
    }
}

/// Single mass at `z0 = mu` with `rho0 = 1 - tau mu / 2`.
pub fn monomorphic_candidate(params: &ModelParams) -> DiscreteEss {
    let mu = params.mu();
    DiscreteEss::from_pairs(vec![(mu, 1.0 - params.tau * mu / 2.0)])
}

/// Monomorphic equilibrium; valid iff `mu <= mu1` and `tau < 2/mu`.
pub fn monomorphic_ess(params: &ModelParams, constants: &KernelConstants) -> EssOutcome {
    let mu = params.mu();
    let candidate = monomorphic_candidate(params);
    let reason = if mu > constants.mu1 {
        Some("μ > μ₁")
    } else if mu > 0.0 && params.tau >= 2.0 / mu {
        Some("τ ≥ 2/μ")
    } else {
        None
    };
    match reason {
        None => EssOutcome::Valid(candidate),
        Some(r) => EssOutcome::Invalid {
            reason: r.to_string(),
            candidate,
        },
    }
}

/// Dimorphic formulas evaluated without any validity check.
pub fn dimorphic_candidate(
    params: &ModelParams,
    kernel: &TransferKernel,
    constants: &KernelConstants,
) -> DiscreteEss {
    let mu = params.mu();
    let s = dimorphic_shape(constants, mu);
    let rho0 = 1.0 - params.g * s.z1 * s.z1
        + params.g * (mu - constants.mu1) * kernel.h(constants.d1);
    DiscreteEss {
        points: vec![s.z1, s.z2],
        weights: vec![rho0 * s.alpha, rho0 * s.beta],
        rho0,
        morphism: 2,
    }
}

/// Upper transfer-rate bound for the dimorphic equilibrium.
pub fn dimorphic_tau_bound(
    params: &ModelParams,
    kernel: &TransferKernel,
    constants: &KernelConstants,
) -> f64 {
    let mu = params.mu();
    let z1 = dimorphic_shape(constants, mu).z1;
    2.0 * mu / (z1 * z1 - (mu - constants.mu1) * kernel.h(constants.d1))
}

/// Dimorphic equilibrium; valid iff `mu1 < mu <= mu2` and `tau < tau2`.
pub fn dimorphic_ess(
    params: &ModelParams,
    kernel: &TransferKernel,
    constants: &KernelConstants,
) -> EssOutcome {
    let mu = params.mu();
    let candidate = dimorphic_candidate(params, kernel, constants);
    let reason = if mu <= constants.mu1 {
        Some("μ ≤ μ₁")
    } else if mu > constants.mu2 {
        Some("μ > μ₂")
    } else if params.tau >= dimorphic_tau_bound(params, kernel, constants) {
        Some("τ ≥ τ₂")
    } else {
        None
    };
    match reason {
        None => EssOutcome::Valid(candidate),
        Some(r) => EssOutcome::Invalid {
            reason: r.to_string(),
            candidate,
        },
    }
}

/// Unknowns of the trimorphic system: traits `z1, z2, z3`, fractions
/// `w1, w2` (`w3 = 1 - w1 - w2`) and the reduced mass `s = (rho0 - 1)/g`.
///
/// The reduced mass makes the system independent of `g`; `rho0 = 1 + g s`
/// is recovered afterwards.
type TriState = SVector<f64, 6>;

const TRI_RESIDUAL_TOL: f64 = 1e-10;
const TRI_MAX_ITER: usize = 60;
const NEGATIVE_WEIGHT_SLACK: f64 = 1e-10;

fn tri_fractions(x: &TriState) -> [f64; 3] {
    [x[3], x[4], 1.0 - x[3] - x[4]]
}

fn tri_residual(kernel: &TransferKernel, mu: f64, x: &TriState) -> TriState {
    let z = [x[0], x[1], x[2]];
    let w = tri_fractions(x);
    let mut r = TriState::zeros();
    for i in 0..3 {
        let (mut psi, mut dpsi) = (0.0, 0.0);
        for k in 0..3 {
            psi += w[k] * kernel.h(z[i] - z[k]);
            dpsi += w[k] * kernel.dh(z[i] - z[k]);
        }
        r[i] = -z[i] * z[i] + 2.0 * mu * psi - x[5];
        r[3 + i] = -z[i] + mu * dpsi;
    }
    r
}

fn tri_jacobian(kernel: &TransferKernel, mu: f64, x: &TriState) -> SMatrix<f64, 6, 6> {
    let z = [x[0], x[1], x[2]];
    let w = tri_fractions(x);
    let mut jac = SMatrix::<f64, 6, 6>::zeros();
    for i in 0..3 {
        // Derivatives of Psi(z_i) and Psi'(z_i) with respect to z_k.
        for k in 0..3 {
            if k == i {
                let (mut dpsi, mut d2psi) = (0.0, 0.0);
                for m in (0..3).filter(|&m| m != i) {
                    dpsi += w[m] * kernel.dh(z[i] - z[m]);
                    d2psi += w[m] * kernel.d2h(z[i] - z[m]);
                }
                jac[(i, k)] = -2.0 * z[i] + 2.0 * mu * dpsi;
                jac[(3 + i, k)] = -1.0 + mu * d2psi;
            } else {
                jac[(i, k)] = -2.0 * mu * w[k] * kernel.dh(z[i] - z[k]);
                jac[(3 + i, k)] = -mu * w[k] * kernel.d2h(z[i] - z[k]);
            }
        }
        // w1 and w2 are free, w3 absorbs the constraint.
        for (col, k) in [(3, 0), (4, 1)] {
            jac[(i, col)] = 2.0 * mu * (kernel.h(z[i] - z[k]) - kernel.h(z[i] - z[2]));
            jac[(3 + i, col)] = mu * (kernel.dh(z[i] - z[k]) - kernel.dh(z[i] - z[2]));
        }
        jac[(i, 5)] = -1.0;
    }
    jac
}

fn solve_trimorphic_system(kernel: &TransferKernel, mu: f64, seed: TriState) -> Result<TriState> {
    let mut x = seed;
    for _ in 0..TRI_MAX_ITER {
        let r = tri_residual(kernel, mu, &x);
        if !r.iter().all(|v| v.is_finite()) {
            break;
        }
        if r.amax() <= TRI_RESIDUAL_TOL {
            return Ok(x);
        }
        let step = tri_jacobian(kernel, mu, &x).lu().solve(&r).ok_or_else(|| Error::Numerical {
            message: format!("singular Jacobian in trimorphic Newton at mu = {mu}"),
            last_iterate: x.iter().copied().collect(),
        })?;
        x -= step;
    }
    Err(Error::Numerical {
        message: format!("trimorphic Newton did not converge at mu = {mu}"),
        last_iterate: x.iter().copied().collect(),
    })
}

fn tri_state_to_ess(x: &TriState, g: f64) -> Result<DiscreteEss> {
    let w = tri_fractions(x);
    let rho0 = 1.0 + g * x[5];
    if w.iter().any(|&wi| wi < -NEGATIVE_WEIGHT_SLACK) {
        return Err(Error::Numerical {
            message: format!("trimorphic solution has a negative weight fraction: {w:?}"),
            last_iterate: x.iter().copied().collect(),
        });
    }
    let pairs = (0..3).map(|i| (x[i], rho0 * w[i].max(0.0))).collect();
    let mut ess = DiscreteEss::from_pairs(pairs);
    // Exact total mass even after clamping a round-off negative weight.
    ess.rho0 = rho0;
    Ok(ess)
}

fn tri_state_from_ess(ess: &DiscreteEss, g: f64) -> Result<TriState> {
    if ess.morphism != 3 {
        return Err(Error::Precondition(format!(
            "trimorphic seed must have three points, got {}",
            ess.morphism
        )));
    }
    let w = ess.fractions();
    Ok(TriState::from_column_slice(&[
        ess.points[0],
        ess.points[1],
        ess.points[2],
        w[0],
        w[1],
        (ess.rho0 - 1.0) / g,
    ]))
}

/// Step of the continuation in `mu`.
pub const CONTINUATION_STEP: f64 = 0.05;
/// Offset above `mu2` where continuation starts.
pub const CONTINUATION_OFFSET: f64 = 1e-3;
const SEED_THIRD_FRACTION: f64 = 1e-3;

/// Natural-parameter continuation along the trimorphic branch that emerges
/// from the dimorphic solution at `mu2`.
#[derive(Debug, Clone)]
pub struct TrimorphicBranch<'a> {
    kernel: &'a TransferKernel,
    constants: &'a KernelConstants,
    mu: f64,
    state: TriState,
}

impl<'a> TrimorphicBranch<'a> {
    pub fn new(kernel: &'a TransferKernel, constants: &'a KernelConstants) -> Result<Self> {
        let mu = constants.mu2 + CONTINUATION_OFFSET;
        let state = solve_trimorphic_system(kernel, mu, degenerate_seed(kernel, constants, mu))?;
        Ok(Self {
            kernel,
            constants,
            mu,
            state,
        })
    }

    /// Current position on the branch.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Solve the system at `params.mu()`, continuing from the current
    /// position. Moving backwards restarts from `mu2`.
    pub fn solve(&mut self, params: &ModelParams) -> Result<DiscreteEss> {
        let target = params.mu();
        if target < self.constants.mu2 {
            return Err(Error::Precondition(format!(
                "trimorphic system requires mu >= mu2 = {}, got {target}",
                self.constants.mu2
            )));
        }
        if target < self.mu {
            *self = Self::new(self.kernel, self.constants)?;
        }
        let state = if target < self.mu {
            // Between mu2 and the continuation start.
            solve_trimorphic_system(self.kernel, target, degenerate_seed(self.kernel, self.constants, target))?
        } else {
            while self.mu + CONTINUATION_STEP < target {
                let next = self.mu + CONTINUATION_STEP;
                self.state = solve_trimorphic_system(self.kernel, next, self.state)?;
                self.mu = next;
            }
            let state = solve_trimorphic_system(self.kernel, target, self.state)?;
            self.state = state;
            self.mu = target;
            state
        };
        tri_state_to_ess(&state, params.g)
    }
}

/// Dimorphic solution plus a small third mass at the stored `z3`.
fn degenerate_seed(kernel: &TransferKernel, constants: &KernelConstants, mu: f64) -> TriState {
    let s = dimorphic_shape(constants, mu);
    let reduced_mass = -s.z1 * s.z1 + (mu - constants.mu1) * kernel.h(constants.d1);
    TriState::from_column_slice(&[
        s.z1,
        s.z2,
        constants.z3,
        s.alpha,
        s.beta - SEED_THIRD_FRACTION,
        reduced_mass,
    ])
}

/// Trimorphic equilibrium candidate: a root of the stationarity system,
/// either from `seed` or by continuation from `mu2`.
///
/// Whether it is an ESS must be checked with [`verify_ess`].
pub fn trimorphic_ess(
    params: &ModelParams,
    kernel: &TransferKernel,
    constants: &KernelConstants,
    seed: Option<&DiscreteEss>,
) -> Result<DiscreteEss> {
    let mu = params.mu();
    if mu < constants.mu2 {
        return Err(Error::Precondition(format!(
            "trimorphic system requires mu >= mu2 = {}, got {mu}",
            constants.mu2
        )));
    }
    match seed {
        Some(seed) => {
            let x0 = tri_state_from_ess(seed, params.g)?;
            tri_state_to_ess(&solve_trimorphic_system(kernel, mu, x0)?, params.g)
        }
        None => TrimorphicBranch::new(kernel, constants)?.solve(params),
    }
}

/// Residuals of the trimorphic system in its original form
/// `-z_i^2 + 2 mu Psi(z_i) - (rho0 - 1)/g` and `-z_i + mu Psi'(z_i)`.
pub fn trimorphic_residuals(ess: &DiscreteEss, params: &ModelParams, kernel: &TransferKernel) -> Vec<f64> {
    let mu = params.mu();
    let w = ess.fractions();
    let psi = |z: f64, d: fn(&TransferKernel, f64) -> f64| -> f64 {
        ess.points.iter().zip(&w).map(|(&zk, &wk)| wk * d(kernel, z - zk)).sum()
    };
    let mut out = Vec::with_capacity(2 * ess.morphism);
    for &z in &ess.points {
        out.push(-z * z + 2.0 * mu * psi(z, TransferKernel::h) - (ess.rho0 - 1.0) / params.g);
    }
    for &z in &ess.points {
        out.push(-z + mu * psi(z, TransferKernel::dh));
    }
    out
}

/// Fitness and transfer potential sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessProfile {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub transfer_potential: Vec<f64>,
}

pub fn fitness(
    ess: &DiscreteEss,
    params: &ModelParams,
    kernel: &TransferKernel,
    grid: &[f64],
) -> Result<FitnessProfile> {
    if grid.is_empty() {
        return Err(Error::Domain("fitness grid is empty".into()));
    }
    if !(ess.rho0 > 0.0) {
        return Err(Error::Domain(format!("total mass must be > 0, got {}", ess.rho0)));
    }
    let transfer_potential: Vec<f64> = grid
        .iter()
        .map(|&z| ess.transfer_potential(params.tau, kernel, z))
        .collect();
    let values = grid
        .iter()
        .zip(&transfer_potential)
        .map(|(&z, &phi)| growth(params.g, z) - ess.rho0 + phi)
        .collect();
    Ok(FitnessProfile {
        grid: grid.to_vec(),
        values,
        transfer_potential,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Scan window; `None` means `[-2, mu + 5]`.
    pub span: Option<(f64, f64)>,
    pub step: f64,
    pub tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            span: None,
            step: 1e-3,
            tol: 1e-7,
        }
    }
}

/// Outcome of [`verify_ess`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub valid: bool,
    pub violated_condition: Option<String>,
    /// `max F` over the scan grid.
    pub max_fitness_excursion: f64,
    pub argmax: f64,
    pub support_values: Vec<f64>,
    pub support_slopes: Vec<f64>,
    /// Support inside `[0, min(mu, 2 sqrt(mu))]`.
    pub support_bounds_ok: bool,
    /// Local maxima of `F` off the support with `F >= -1e-6`.
    pub extra_near_zeros: Vec<f64>,
}

pub fn verify_ess(ess: &DiscreteEss, params: &ModelParams, kernel: &TransferKernel) -> VerifyReport {
    verify_ess_with(ess, params, kernel, &VerifyOptions::default())
}

pub fn verify_ess_with(
    ess: &DiscreteEss,
    params: &ModelParams,
    kernel: &TransferKernel,
    opts: &VerifyOptions,
) -> VerifyReport {
    const NEAR_ZERO: f64 = -1e-6;
    const SUPPORT_RADIUS: f64 = 0.05;
    let mu = params.mu();
    let (lo, hi) = opts.span.unwrap_or((-2.0, mu + 5.0));
    let n = ((hi - lo) / opts.step).round() as usize;
    let f = |z: f64| ess.fitness_at(params, kernel, z);
    let values: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let z = lo + i as f64 * opts.step;
            (z, f(z))
        })
        .collect();

    let (argmax, max_f) = values
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |b, p| if p.1 > b.1 { p } else { b });

    let extra_near_zeros = values
        .windows(3)
        .filter(|w| w[1].1 >= w[0].1 && w[1].1 >= w[2].1 && w[1].1 >= NEAR_ZERO)
        .map(|w| w[1].0)
        .filter(|&z| ess.points.iter().all(|&zi| (z - zi).abs() > SUPPORT_RADIUS))
        .collect();

    let support_values: Vec<f64> = ess.points.iter().map(|&z| f(z)).collect();
    let support_slopes: Vec<f64> = ess
        .points
        .iter()
        .map(|&z| ess.fitness_slope_at(params, kernel, z))
        .collect();
    let bound = mu.min(2.0 * mu.sqrt()) + 1e-12;
    let support_bounds_ok = ess.points.iter().all(|&z| z >= -1e-12 && z <= bound);

    let violated_condition = if !(ess.rho0 > 0.0) || ess.weights.iter().any(|&a| a < 0.0) {
        Some("nonpositive mass".to_string())
    } else if max_f > opts.tol {
        Some(format!("F > 0 at z = {argmax}"))
    } else if support_values.iter().any(|v| v.abs() > opts.tol) {
        Some("F ≠ 0 on the support".to_string())
    } else if support_slopes.iter().any(|v| v.abs() > 10.0 * opts.tol) {
        Some("F' ≠ 0 on the support".to_string())
    } else if !support_bounds_ok {
        Some("support outside [0, min(μ, 2√μ)]".to_string())
    } else {
        None
    };

    VerifyReport {
        valid: violated_condition.is_none(),
        violated_condition,
        max_fitness_excursion: max_f,
        argmax,
        support_values,
        support_slopes,
        support_bounds_ok,
        extra_near_zeros,
    }
}

/// Which equilibrium family applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Mono,
    Di,
    Tri,
    None,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Mono => "mono",
            Regime::Di => "di",
            Regime::Tri => "tri",
            Regime::None => "none",
        }
    }
}

/// Equilibrium selected for a parameter set, with its verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub regime: Regime,
    /// The evaluated candidate of the family matching `mu`, if any could
    /// be computed.
    pub candidate: Option<DiscreteEss>,
    pub reason: Option<String>,
    pub verification: Option<VerifyReport>,
}

/// Pick the family by `mu`, evaluate it, and verify trimorphic candidates
/// a posteriori. `branch` lets callers reuse continuation state across a
/// sweep in increasing `mu`.
pub fn classify(
    params: &ModelParams,
    kernel: &TransferKernel,
    constants: &KernelConstants,
    branch: Option<&mut TrimorphicBranch<'_>>,
) -> Classification {
    let mu = params.mu();
    let from_outcome = |out: EssOutcome, regime: Regime| {
        let verification = Some(verify_ess(out.candidate(), params, kernel));
        Classification {
            regime: if out.is_valid() { regime } else { Regime::None },
            reason: out.reason().map(str::to_string),
            candidate: Some(out.candidate().clone()),
            verification,
        }
    };
    if mu <= constants.mu1 {
        return from_outcome(monomorphic_ess(params, constants), Regime::Mono);
    }
    if mu <= constants.mu2 {
        return from_outcome(dimorphic_ess(params, kernel, constants), Regime::Di);
    }
    let solved = match branch {
        Some(b) => b.solve(params),
        None => trimorphic_ess(params, kernel, constants, None),
    };
    match solved {
        Ok(ess) => {
            let report = verify_ess(&ess, params, kernel);
            Classification {
                regime: if report.valid { Regime::Tri } else { Regime::None },
                reason: report.violated_condition.clone(),
                candidate: Some(ess),
                verification: Some(report),
            }
        }
        Err(e) => Classification {
            regime: Regime::None,
            candidate: None,
            reason: Some(e.to_string()),
            verification: None,
        },
    }
}
