//! Asymptotic-preserving finite differences for the Hopf-Cole unknown
//! `u = eps ln n` of the time-rescaled equation
//!
//! ```text
//! d_t u - eps d_zz u = |d_z u|^2 + R(z) - rho(t) + tau * int n(y)/rho H(z - y) dy.
//! ```
//!
//! Every term except the total mass is explicit. The mass at the new time
//! level solves the scalar equation `rho = exp(-rho dt/eps) S` with
//! `S = dz sum_j exp(A_j/eps)`, where `A` is the explicit update. All
//! exponentials are evaluated on max-shifted arguments so that `u/eps`
//! may be arbitrarily large.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{growth, ModelParams, TransferKernel};
use crate::roots;

/// Uniform trait grid `z_j = z_min + j dz`, `j = 0..n_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub z_min: f64,
    pub z_max: f64,
    pub dz: f64,
    pub n_z: usize,
}

impl Grid1D {
    pub fn new(z_min: f64, z_max: f64, dz: f64) -> Result<Self> {
        if !(z_min.is_finite() && z_max.is_finite() && z_max > z_min) {
            return Err(Error::config("z_min/z_max", format!("need z_min < z_max, got [{z_min}, {z_max}]")));
        }
        if !(dz.is_finite() && dz > 0.0) {
            return Err(Error::config("dz", "must be > 0"));
        }
        let cells = (z_max - z_min) / dz;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
            return Err(Error::config(
                "dz",
                format!("(z_max - z_min)/dz must be an integer, got {cells}"),
            ));
        }
        let n_z = cells.round() as usize + 1;
        if n_z < 8 {
            return Err(Error::config("dz", format!("grid needs at least 8 nodes, got {n_z}")));
        }
        Ok(Self { z_min, z_max, dz, n_z })
    }

    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        self.z_min + j as f64 * self.dz
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_z).map(|j| self.node(j)).collect()
    }
}

/// Everything needed to run one simulation.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: ModelParams,
    pub kernel: TransferKernel,
    pub grid: Grid1D,
    pub dt: f64,
    pub t_max: f64,
    /// Peak of the initial profile `u0(z) = -A (z - z_init)^2`.
    pub z_init: f64,
    /// Curvature `A` of the initial profile.
    pub curvature: f64,
    /// Steady once `max_j |u^{i+1}_j - u^i_j| / dt` drops to this value.
    pub steady_tol: f64,
    /// Width below `max u` inside which local maxima count as support.
    /// `None` means `10 eps |ln eps|`.
    pub support_band: Option<f64>,
}

pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_DZ: f64 = 1e-2;
pub const DEFAULT_STEADY_TOL: f64 = 1e-7;

impl SimConfig {
    /// Configuration with the default initial profile (`A = 1`,
    /// `z_init = 0`) and steady tolerance.
    pub fn new(params: ModelParams, kernel: TransferKernel, grid: Grid1D, dt: f64, t_max: f64) -> Result<Self> {
        let cfg = Self {
            params,
            kernel,
            grid,
            dt,
            t_max,
            z_init: 0.0,
            curvature: 1.0,
            steady_tol: DEFAULT_STEADY_TOL,
            support_band: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", "must be > 0"));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::config("t_max", "must be > 0"));
        }
        if !(self.z_init >= self.grid.z_min && self.z_init <= self.grid.z_max) {
            return Err(Error::config(
                "z_init",
                format!("must lie in [{}, {}]", self.grid.z_min, self.grid.z_max),
            ));
        }
        if !(self.curvature.is_finite() && self.curvature > 0.0) {
            return Err(Error::config("A", "must be > 0"));
        }
        if !(self.steady_tol.is_finite() && self.steady_tol > 0.0) {
            return Err(Error::config("steady_tol", "must be > 0"));
        }
        Ok(())
    }

    pub fn support_band(&self) -> f64 {
        self.support_band.unwrap_or_else(|| {
            let eps = self.params.epsilon;
            10.0 * eps * eps.ln().abs()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeState {
    pub u: Vec<f64>,
    pub rho: f64,
    pub t_index: usize,
    pub rho_history: Vec<f64>,
}

/// `exp(x)` for `x <= 0`, skipping the call where the result is 0 anyway.
#[inline]
fn exp_nonpositive(x: f64) -> f64 {
    if x < -746.0 {
        0.0
    } else {
        x.exp()
    }
}

/// `ln sum_j exp(v_j / eps)` with the max shifted out.
fn log_sum_exp(v: &[f64], eps: f64) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m / eps + v.iter().map(|&x| exp_nonpositive((x - m) / eps)).sum::<f64>().ln()
}

/// Normalised weights `n_k dz / rho = exp((u_k - max u)/eps) / sum`.
pub fn normalized_density(u: &[f64], eps: f64) -> Vec<f64> {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = u.iter().map(|&x| exp_nonpositive((x - m) / eps)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// `u0(z) = -A (z - z_init)^2` and the matching mass `dz sum exp(u/eps)`.
pub fn init_state(config: &SimConfig) -> PdeState {
    let u: Vec<f64> = config
        .grid
        .nodes()
        .iter()
        .map(|&z| -config.curvature * (z - config.z_init).powi(2))
        .collect();
    let rho = (config.grid.dz.ln() + log_sum_exp(&u, config.params.epsilon)).exp();
    PdeState {
        u,
        rho,
        t_index: 0,
        rho_history: vec![rho],
    }
}

/// `H(z_j - z_k)` stored by offset `j - k + n - 1`.
#[derive(Debug, Clone)]
pub struct KernelTable {
    n: usize,
    values: Vec<f64>,
}

impl KernelTable {
    pub fn new(kernel: &TransferKernel, grid: &Grid1D) -> Self {
        let n = grid.n_z;
        let values = (0..2 * n - 1)
            .map(|i| kernel.h((i as f64 - (n - 1) as f64) * grid.dz))
            .collect();
        Self { n, values }
    }
}

#[inline]
fn kernel_entry(table: &KernelTable, j: usize, k: usize) -> f64 {
    table.values[j + table.n - 1 - k]
}

/// Weights below this (relative to a unit total) are dropped by the fast
/// convolution path.
pub const WEIGHT_CUTOFF: f64 = 1e-20;

/// Dense transfer term `T_j = tau sum_k H(z_j - z_k) w_k`.
pub fn transfer_term_direct(table: &KernelTable, weights: &[f64], tau: f64) -> Vec<f64> {
    let n = weights.len();
    (0..n)
        .map(|j| tau * (0..n).map(|k| kernel_entry(table, j, k) * weights[k]).sum::<f64>())
        .collect()
}

/// Transfer term over the weights above [`WEIGHT_CUTOFF`] only.
///
/// Once the density concentrates almost every weight underflows, so this
/// is `O(n * support)` instead of `O(n^2)`.
pub fn transfer_term_sparse(table: &KernelTable, weights: &[f64], tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; weights.len()];
    accumulate_transfer(table, weights.iter().copied().enumerate(), tau, &mut out);
    out
}

/// `out_j = tau sum_k H(z_j - z_k) w_k` over the weights above the cutoff,
/// accumulated one column at a time in increasing `k`.
fn accumulate_transfer(
    table: &KernelTable,
    weights: impl Iterator<Item = (usize, f64)>,
    tau: f64,
    out: &mut [f64],
) {
    let n = table.n;
    out.iter_mut().for_each(|x| *x = 0.0);
    for (k, w) in weights.filter(|&(_, w)| w > WEIGHT_CUTOFF) {
        // Column k: H(z_j - z_k) = values[j + n - 1 - k].
        let column = &table.values[n - 1 - k..2 * n - 1 - k];
        for (o, h) in out.iter_mut().zip(column) {
            *o += h * w;
        }
    }
    out.iter_mut().for_each(|x| *x *= tau);
}

/// Transfer term of the current state.
pub fn transfer_term(state: &PdeState, config: &SimConfig) -> Vec<f64> {
    let table = KernelTable::new(&config.kernel, &config.grid);
    let w = normalized_density(&state.u, config.params.epsilon);
    transfer_term_sparse(&table, &w, config.params.tau)
}

/// Cubic extrapolation one node past each end.
#[inline]
fn ghosts(u: &[f64]) -> (f64, f64) {
    let n = u.len();
    let left = 4.0 * u[0] - 6.0 * u[1] + 4.0 * u[2] - u[3];
    let right = 4.0 * u[n - 1] - 6.0 * u[n - 2] + 4.0 * u[n - 3] - u[n - 4];
    (left, right)
}

#[inline]
fn neighbours(u: &[f64], ghost: (f64, f64), j: usize) -> (f64, f64) {
    let n = u.len();
    let l = if j == 0 { ghost.0 } else { u[j - 1] };
    let r = if j + 1 == n { ghost.1 } else { u[j + 1] };
    (l, r)
}

/// Three-point second difference with ghost values at both ends.
pub fn laplacian(u: &[f64], dz: f64) -> Vec<f64> {
    assert!(u.len() >= 4, "ghost extrapolation needs at least 4 nodes");
    let g = ghosts(u);
    let inv = 1.0 / (dz * dz);
    (0..u.len())
        .map(|j| {
            let (l, r) = neighbours(u, g, j);
            (l - 2.0 * u[j] + r) * inv
        })
        .collect()
}

/// Monotone approximation of `|u'|^2` at a node from its neighbours.
///
/// The backward difference counts only when negative, the forward one only
/// when positive; the larger square wins.
#[inline]
pub fn grad_sq_at(left: f64, center: f64, right: f64, dz: f64) -> f64 {
    let back = (center - left) / dz;
    let fwd = (right - center) / dz;
    let back_sq = if back >= 0.0 { 0.0 } else { back * back };
    let fwd_sq = if fwd <= 0.0 { 0.0 } else { fwd * fwd };
    back_sq.max(fwd_sq)
}

/// [`grad_sq_at`] at every node, with ghost values at both ends.
pub fn grad_sq(u: &[f64], dz: f64) -> Vec<f64> {
    assert!(u.len() >= 4, "ghost extrapolation needs at least 4 nodes");
    let g = ghosts(u);
    (0..u.len())
        .map(|j| {
            let (l, r) = neighbours(u, g, j);
            grad_sq_at(l, u[j], r, dz)
        })
        .collect()
}

/// Which rearrangement of the mass equation Newton is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MassForm {
    /// `h(y) = y exp(y dt/eps) - S`, used near extinction.
    Exponential,
    /// `g(y) = -eps ln y - dt y + eps ln S`.
    Logarithmic,
}

/// Mass below which the exponential form is preferred.
pub const MASS_FORM_SWITCH: f64 = 0.1;

/// Solve `y exp(y dt/eps) = S` given `ln S`.
pub fn solve_mass_equation(log_s: f64, dt: f64, eps: f64, form: MassForm) -> Result<f64> {
    if !log_s.is_finite() {
        return Err(Error::numerical(format!("mass equation has non-finite ln S = {log_s}")));
    }
    let k = dt / eps;
    let s = log_s.exp();
    // Bracket: y <= S, y <= max(ln S / k, 1) when ln S > 0, and
    // ln y = ln S - k y >= ln S - k hi.
    let hi = if log_s > 0.0 { s.min((log_s / k).max(1.0)) } else { s };
    let lo = (log_s - k * hi).exp();
    if !(hi > 0.0) || !(lo > 0.0) {
        return Err(Error::numerical(format!(
            "mass bracket collapsed: ln S = {log_s}, dt/eps = {k}"
        )));
    }
    if hi - lo <= 1e-15 * hi {
        return Ok(hi);
    }
    let form = if form == MassForm::Exponential && !s.is_finite() {
        MassForm::Logarithmic
    } else {
        form
    };
    let guess = 0.5 * (lo + hi);
    let root = match form {
        MassForm::Exponential => roots::newton_bracketed(
            |y| y * (k * y).exp() - s,
            |y| (k * y).exp() * (1.0 + k * y),
            lo,
            hi,
            guess,
            1e-12,
            200,
        ),
        MassForm::Logarithmic => roots::newton_bracketed(
            |y| -eps * y.ln() - dt * y + eps * log_s,
            |y| -eps / y - dt,
            lo,
            hi,
            guess,
            1e-12,
            200,
        ),
    }?;
    Ok(root)
}

/// Total mass at the new time level from the explicit update `a`.
///
/// `prev_rho` selects the formulation: the exponential one below
/// [`MASS_FORM_SWITCH`], the logarithmic one otherwise. Without a previous
/// value `S` itself is used.
pub fn solve_rho(a: &[f64], dt: f64, eps: f64, dz: f64, prev_rho: Option<f64>) -> Result<f64> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("non-finite intermediate state in mass solve"));
    }
    let log_s = dz.ln() + log_sum_exp(a, eps);
    let reference = prev_rho.unwrap_or_else(|| log_s.exp());
    let form = if reference < MASS_FORM_SWITCH {
        MassForm::Exponential
    } else {
        MassForm::Logarithmic
    };
    solve_mass_equation(log_s, dt, eps, form)
}

/// `A_j = u_j + dt (R_j + T_j + eps lap_j + |Du_j|^2)`.
pub fn assemble_intermediate(
    u: &[f64],
    growth: &[f64],
    transfer: &[f64],
    lap: &[f64],
    grad_sq: &[f64],
    dt: f64,
    eps: f64,
) -> Vec<f64> {
    (0..u.len())
        .map(|j| u[j] + dt * (growth[j] + transfer[j] + eps * lap[j] + grad_sq[j]))
        .collect()
}

/// Precomputed tables and scratch buffers for repeated steps on one
/// configuration.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    growth: Vec<f64>,
    table: KernelTable,
    weights: Vec<f64>,
    transfer: Vec<f64>,
    intermediate: Vec<f64>,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let n = config.grid.n_z;
        let growth = config.grid.nodes().iter().map(|&z| growth(config.params.g, z)).collect();
        let table = KernelTable::new(&config.kernel, &config.grid);
        Ok(Self {
            config,
            growth,
            table,
            weights: vec![0.0; n],
            transfer: vec![0.0; n],
            intermediate: vec![0.0; n],
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn kernel_table(&self) -> &KernelTable {
        &self.table
    }

    /// Advance one time step. Returns `max_j |u^{i+1}_j - u^i_j| / dt`.
    ///
    /// Same arithmetic as [`transfer_term_sparse`], [`laplacian`],
    /// [`grad_sq`], [`assemble_intermediate`] and [`solve_rho`] composed,
    /// in one pass without allocation.
    pub fn step(&mut self, state: &mut PdeState) -> Result<f64> {
        let (dt, dz, eps, tau) = (
            self.config.dt,
            self.config.grid.dz,
            self.config.params.epsilon,
            self.config.params.tau,
        );
        if state.u.len() != self.config.grid.n_z {
            return Err(Error::Precondition(format!(
                "state has {} nodes, grid has {}",
                state.u.len(),
                self.config.grid.n_z
            )));
        }
        let u = &state.u;
        let n = u.len();

        if tau != 0.0 {
            let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (w, &x) in self.weights.iter_mut().zip(u) {
                *w = exp_nonpositive((x - m) / eps);
            }
            let total: f64 = self.weights.iter().sum();
            self.weights.iter_mut().for_each(|w| *w /= total);
            accumulate_transfer(
                &self.table,
                self.weights.iter().copied().enumerate(),
                tau,
                &mut self.transfer,
            );
        } else {
            self.transfer.iter_mut().for_each(|x| *x = 0.0);
        }

        let ghost = ghosts(u);
        let inv = 1.0 / (dz * dz);
        let mut max_grad = 0.0f64;
        for j in 0..n {
            let (l, r) = neighbours(u, ghost, j);
            let lap = (l - 2.0 * u[j] + r) * inv;
            let grad = grad_sq_at(l, u[j], r, dz);
            max_grad = max_grad.max(grad);
            self.intermediate[j] = u[j] + dt * (self.growth[j] + self.transfer[j] + eps * lap + grad);
        }

        let max_slope = max_grad.sqrt();
        if 2.0 * dt * max_slope > dz {
            return Err(self.abort(
                state,
                format!(
                    "time step too large for the gradient term: dt = {dt} > dz/(2 max|Du|) = {}",
                    dz / (2.0 * max_slope)
                ),
            ));
        }
        if 2.0 * dt * eps > dz * dz {
            return Err(self.abort(
                state,
                format!(
                    "time step too large for the diffusion term: dt = {dt} > dz^2/(2 eps) = {}",
                    dz * dz / (2.0 * eps)
                ),
            ));
        }

        let rho = solve_rho(&self.intermediate, dt, eps, dz, Some(state.rho))
            .map_err(|e| self.abort(state, format!("mass solve failed: {e}")))?;
        if !(rho.is_finite() && rho > 0.0) {
            return Err(self.abort(state, format!("mass became {rho}")));
        }

        let mut increment = 0.0f64;
        for (uj, aj) in state.u.iter_mut().zip(&self.intermediate) {
            let next = aj - dt * rho;
            increment = increment.max((next - *uj).abs());
            *uj = next;
        }
        if state.u.iter().any(|x| !x.is_finite()) {
            return Err(self.abort(state, "non-finite value in u".into()));
        }
        state.rho = rho;
        state.t_index += 1;
        state.rho_history.push(rho);
        Ok(increment / dt)
    }

    fn abort(&self, state: &PdeState, message: String) -> Error {
        Error::Numerical {
            message: format!(
                "step {} (t = {}): {message}",
                state.t_index,
                state.t_index as f64 * self.config.dt
            ),
            last_iterate: state.u.clone(),
        }
    }

    /// Iterate to `t_max` or until steady.
    pub fn run(&mut self) -> Result<SimReport> {
        let mut state = init_state(&self.config);
        let max_steps = (self.config.t_max / self.config.dt).round() as usize;
        let mut steady = false;
        let mut increment = f64::INFINITY;
        while state.t_index < max_steps {
            increment = self.step(&mut state)?;
            if increment <= self.config.steady_tol {
                steady = true;
                break;
            }
        }
        Ok(SimReport::from_state(&self.config, state, steady, increment))
    }
}

/// One explicit step on a fresh [`Simulation`].
pub fn step(state: &PdeState, config: &SimConfig) -> Result<PdeState> {
    let mut sim = Simulation::new(config.clone())?;
    let mut next = state.clone();
    sim.step(&mut next)?;
    Ok(next)
}

pub fn run(config: &SimConfig) -> Result<SimReport> {
    Simulation::new(config.clone())?.run()
}

/// Local maxima of `u` within `band` of its maximum, as trait values in
/// increasing order.
pub fn extract_support(u: &[f64], grid: &Grid1D, band: f64) -> Vec<f64> {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = u.len();
    (0..n)
        .filter(|&j| u[j] >= m - band)
        .filter(|&j| {
            let left_ok = j == 0 || u[j] > u[j - 1];
            let right_ok = j + 1 == n || u[j] >= u[j + 1];
            left_ok && right_ok
        })
        .map(|j| grid.node(j))
        .collect()
}

/// Steady-state identities of the discrete solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyDiagnostics {
    pub max_u: f64,
    /// `20 eps |ln eps|`.
    pub max_u_bound: f64,
    /// `|dz sum R n - rho^2| / rho^2`.
    pub mass_identity_residual: f64,
    pub rho: f64,
}

pub fn steady_diagnostics(u: &[f64], rho: f64, config: &SimConfig) -> SteadyDiagnostics {
    let eps = config.params.epsilon;
    let w = normalized_density(u, eps);
    let mean_growth: f64 = w
        .iter()
        .enumerate()
        .map(|(j, wj)| wj * growth(config.params.g, config.grid.node(j)))
        .sum();
    // dz sum R n = rho * sum R w.
    SteadyDiagnostics {
        max_u: u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_u_bound: 20.0 * eps * eps.ln().abs(),
        mass_identity_residual: (mean_growth - rho).abs() / rho,
        rho,
    }
}

/// Output of [`run`]. Array fields are written to CSV, not JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub params: ModelParams,
    pub kernel: String,
    pub grid: Grid1D,
    pub dt: f64,
    pub z_init: f64,
    pub curvature: f64,
    pub steady_tol: f64,
    pub support_band: f64,
    pub steady: bool,
    pub steps_taken: usize,
    pub final_time: f64,
    pub final_rho: f64,
    pub last_increment: f64,
    /// Increasing trait values.
    pub support_points: Vec<f64>,
    pub diagnostics: SteadyDiagnostics,
    /// Convolution runs on one thread.
    pub threads: usize,
    #[serde(skip)]
    pub rho_history: Vec<f64>,
    #[serde(skip)]
    pub final_u: Vec<f64>,
    #[serde(skip)]
    pub n_rescaled: Vec<f64>,
}

impl SimReport {
    fn from_state(cfg: &SimConfig, state: PdeState, steady: bool, increment: f64) -> Self {
        let eps = cfg.params.epsilon;
        let band = cfg.support_band();
        let m = state.u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n_rescaled = state.u.iter().map(|&x| exp_nonpositive((x - m) / eps)).collect();
        Self {
            params: cfg.params,
            kernel: cfg.kernel.name().to_string(),
            grid: cfg.grid,
            dt: cfg.dt,
            z_init: cfg.z_init,
            curvature: cfg.curvature,
            steady_tol: cfg.steady_tol,
            support_band: band,
            steady,
            steps_taken: state.t_index,
            final_time: state.t_index as f64 * cfg.dt,
            final_rho: state.rho,
            last_increment: increment,
            support_points: extract_support(&state.u, &cfg.grid, band),
            diagnostics: steady_diagnostics(&state.u, state.rho, cfg),
            threads: 1,
            rho_history: state.rho_history,
            final_u: state.u,
            n_rescaled,
        }
    }
}
