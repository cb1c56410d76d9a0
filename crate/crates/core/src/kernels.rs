//! Transfer kernels, the quadratic growth rate and the dimensionless
//! parameterisation of the model.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots;

/// Identifiers accepted by [`make_kernel`].
pub const SUPPORTED_KERNELS: [&str; 2] = ["tanh-kernel", "arctan-kernel"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Tanh,
    Arctan,
    Custom,
}

type ScalarFn = fn(f64) -> f64;

/// An odd sigmoid `H` together with its first three derivatives.
///
/// `z_h` is the point where `H'''` changes sign on the positive half-line.
#[derive(Clone, Copy)]
pub struct TransferKernel {
    name: &'static str,
    kind: KernelKind,
    h: ScalarFn,
    dh: ScalarFn,
    d2h: ScalarFn,
    d3h: ScalarFn,
    z_h: f64,
}

impl fmt::Debug for TransferKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransferKernel")
            .field("name", &self.name)
            .field("z_h", &self.z_h)
            .finish()
    }
}

impl TransferKernel {
    /// Assemble a kernel from hand-coded derivatives and locate `z_H` by
    /// bisection on `H'''` over `(1e-6, 10]`.
    pub fn from_parts(
        name: &'static str,
        kind: KernelKind,
        h: ScalarFn,
        dh: ScalarFn,
        d2h: ScalarFn,
        d3h: ScalarFn,
    ) -> Result<Self> {
        let z_h = roots::bisect(d3h, 1e-6, 10.0, 1e-12).map_err(|e| {
            Error::Kernel(format!("{name}: third derivative has no sign change on (0, 10]: {e}"))
        })?;
        Ok(Self::with_inflection(name, kind, h, dh, d2h, d3h, z_h))
    }

    /// Assemble a kernel with an explicitly supplied `z_H`. No checks are
    /// performed; use [`validate_h1`] to audit the result.
    pub fn with_inflection(
        name: &'static str,
        kind: KernelKind,
        h: ScalarFn,
        dh: ScalarFn,
        d2h: ScalarFn,
        d3h: ScalarFn,
        z_h: f64,
    ) -> Self {
        Self {
            name,
            kind,
            h,
            dh,
            d2h,
            d3h,
            z_h,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    #[inline]
    pub fn h(&self, z: f64) -> f64 {
        (self.h)(z)
    }

    #[inline]
    pub fn dh(&self, z: f64) -> f64 {
        (self.dh)(z)
    }

    #[inline]
    pub fn d2h(&self, z: f64) -> f64 {
        (self.d2h)(z)
    }

    #[inline]
    pub fn d3h(&self, z: f64) -> f64 {
        (self.d3h)(z)
    }

    pub fn z_h(&self) -> f64 {
        self.z_h
    }
}

#[inline]
fn sech2(z: f64) -> f64 {
    let c = z.cosh();
    1.0 / (c * c)
}

fn tanh_h(z: f64) -> f64 {
    z.tanh()
}

fn tanh_dh(z: f64) -> f64 {
    sech2(z)
}

fn tanh_d2h(z: f64) -> f64 {
    -2.0 * z.tanh() * sech2(z)
}

fn tanh_d3h(z: f64) -> f64 {
    let t = z.tanh();
    -2.0 * sech2(z) * (1.0 - 3.0 * t * t)
}

// (2/pi) atan(pi z / 2): the arctan sigmoid rescaled so that H'(0) = 1.
fn atan_h(z: f64) -> f64 {
    (FRAC_PI_2 * z).atan() / FRAC_PI_2
}

fn atan_dh(z: f64) -> f64 {
    let s = FRAC_PI_2 * z;
    1.0 / (1.0 + s * s)
}

fn atan_d2h(z: f64) -> f64 {
    let s = FRAC_PI_2 * z;
    let q = 1.0 + s * s;
    -2.0 * FRAC_PI_2 * s / (q * q)
}

fn atan_d3h(z: f64) -> f64 {
    let s = FRAC_PI_2 * z;
    let q = 1.0 + s * s;
    2.0 * FRAC_PI_2 * FRAC_PI_2 * (3.0 * s * s - 1.0) / (q * q * q)
}

/// Build one of the shipped kernels by identifier.
pub fn make_kernel(name: &str) -> Result<TransferKernel> {
    match name {
        "tanh-kernel" | "tanh" => TransferKernel::from_parts(
            "tanh-kernel",
            KernelKind::Tanh,
            tanh_h,
            tanh_dh,
            tanh_d2h,
            tanh_d3h,
        ),
        "arctan-kernel" | "arctan" => TransferKernel::from_parts(
            "arctan-kernel",
            KernelKind::Arctan,
            atan_h,
            atan_dh,
            atan_d2h,
            atan_d3h,
        ),
        other => Err(Error::config(
            "kernel",
            format!(
                "unknown kernel `{other}`; supported kernels: {}",
                SUPPORTED_KERNELS.join(", ")
            ),
        )),
    }
}

/// Uniform sample grid on `[-10, 10]` with spacing `1e-3`.
pub fn default_sample_grid() -> Vec<f64> {
    (0..=20_000).map(|i| -10.0 + i as f64 * 1e-3).collect()
}

/// Pass/fail audit of the structural kernel hypotheses on a sample grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Report {
    pub kernel: String,
    pub z_h: f64,
    /// Odd, increasing, valued in (-1, 1).
    pub clause_1: bool,
    /// `H(0) = 0`, `H'(0) = 1`, `H'' < 0` on the positive half-line.
    pub clause_2: bool,
    /// `H''' <= 0` on `(0, z_H]` and `H''' > 0` beyond.
    pub clause_3: bool,
    pub odd: bool,
    pub monotone_increasing: bool,
    pub bounded: bool,
    pub h0_zero: bool,
    pub dh0_one: bool,
    pub concave_positive: bool,
    pub third_derivative_sign: bool,
    pub derivative_consistency: bool,
    pub all_pass: bool,
}

/// Check every hypothesis clause on the supplied sample points.
///
/// The grid is expected to cover `[-10, 10]` with spacing at most `1e-3`.
pub fn validate_h1(kernel: &TransferKernel, grid: &[f64]) -> H1Report {
    let odd = grid
        .iter()
        .all(|&z| (kernel.h(-z) + kernel.h(z)).abs() <= 4.0 * f64::EPSILON);
    let monotone_increasing = grid.iter().all(|&z| kernel.dh(z) > 0.0);
    let bounded = grid.iter().all(|&z| kernel.h(z).abs() < 1.0);
    let h0_zero = kernel.h(0.0) == 0.0;
    let dh0_one = kernel.dh(0.0) == 1.0;
    let concave_positive = grid
        .iter()
        .filter(|&&z| z > 0.0)
        .all(|&z| kernel.d2h(z) < 0.0);
    let z_h = kernel.z_h();
    let third_derivative_sign = z_h > 0.0
        && grid.iter().filter(|&&z| z != 0.0).all(|&z| {
            let d3 = kernel.d3h(z);
            if z.abs() <= z_h {
                d3 <= 0.0
            } else {
                d3 > 0.0
            }
        });
    let derivative_consistency = derivative_consistency(kernel, grid);

    let clause_1 = odd && monotone_increasing && bounded;
    let clause_2 = h0_zero && dh0_one && concave_positive;
    let clause_3 = third_derivative_sign;
    H1Report {
        kernel: kernel.name().to_string(),
        z_h,
        clause_1,
        clause_2,
        clause_3,
        odd,
        monotone_increasing,
        bounded,
        h0_zero,
        dh0_one,
        concave_positive,
        third_derivative_sign,
        derivative_consistency,
        all_pass: clause_1 && clause_2 && clause_3 && derivative_consistency,
    }
}

/// Centered differences of each coded derivative reproduce the next one
/// with the expected `O(h^2)` error, for `h` in `{1e-2, 1e-3}`.
fn derivative_consistency(kernel: &TransferKernel, grid: &[f64]) -> bool {
    // Bounds on the derivative that controls each truncation error. The
    // fourth and fifth derivatives are not coded, so estimate them by
    // differencing H'''.
    let delta = 1e-2;
    let max_abs = |f: &dyn Fn(f64) -> f64| grid.iter().map(|&z| f(z).abs()).fold(0.0, f64::max);
    let m3 = max_abs(&|z| kernel.d3h(z));
    let m4 = max_abs(&|z| (kernel.d3h(z + delta) - kernel.d3h(z - delta)) / (2.0 * delta));
    let m5 = max_abs(&|z| {
        (kernel.d3h(z + delta) - 2.0 * kernel.d3h(z) + kernel.d3h(z - delta)) / (delta * delta)
    });
    // Roundoff floor of a centered difference.
    let floor = |h: f64| 1e3 * f64::EPSILON / h;

    [1e-2, 1e-3].iter().all(|&h| {
        let bound = |m: f64| 5.0 * h * h * m + floor(h);
        grid.iter().all(|&z| {
            let e1 = (kernel.dh(z) - (kernel.h(z + h) - kernel.h(z - h)) / (2.0 * h)).abs();
            let e2 = (kernel.d2h(z) - (kernel.dh(z + h) - kernel.dh(z - h)) / (2.0 * h)).abs();
            let e3 = (kernel.d3h(z) - (kernel.d2h(z + h) - kernel.d2h(z - h)) / (2.0 * h)).abs();
            e1 <= bound(m3) && e2 <= bound(m4) && e3 <= bound(m5)
        })
    })
}

/// Quadratic growth rate `R(z) = 1 - g z^2` of the rescaled model.
#[inline]
pub fn growth(g: f64, z: f64) -> f64 {
    1.0 - g * z * z
}

/// Dimensionless parameters of the rescaled model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Transfer rate. Zero switches the transfer term off.
    pub tau: f64,
    /// Selection strength.
    pub g: f64,
    /// Mutational scale; only the time-dependent solver uses it.
    pub epsilon: f64,
}

impl ModelParams {
    pub fn new(tau: f64, g: f64, epsilon: f64) -> Result<Self> {
        check_finite("tau", tau)?;
        check_finite("g", g)?;
        check_finite("epsilon", epsilon)?;
        if tau < 0.0 {
            return Err(Error::config("tau", "must be >= 0"));
        }
        if g <= 0.0 {
            return Err(Error::config("g", "must be > 0"));
        }
        if epsilon <= 0.0 {
            return Err(Error::config("epsilon", "must be > 0"));
        }
        Ok(Self { tau, g, epsilon })
    }

    /// Parameters with a prescribed ratio `mu` and selection strength `g`,
    /// i.e. `tau = 2 g mu`.
    pub fn from_mu_g(mu: f64, g: f64, epsilon: f64) -> Result<Self> {
        Self::new(2.0 * g * mu, g, epsilon)
    }

    /// Transfer-to-selection ratio `tau / (2 g)`.
    #[inline]
    pub fn mu(&self) -> f64 {
        self.tau / (2.0 * self.g)
    }
}

fn check_finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, "must be a finite number"))
    }
}

/// Parameters of the model in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Mutational variance.
    pub sigma: f64,
    /// Transfer steepness.
    pub k: f64,
    /// Maximal growth rate.
    pub r: f64,
    /// Competition intensity. Only rescales the density.
    pub kappa: f64,
    pub tau_phys: f64,
    pub g_phys: f64,
}

/// Rescale traits by `K`, time and rates by `r`.
pub fn adimensionalize(p: &PhysicalParams) -> Result<ModelParams> {
    let fields = [
        ("sigma", p.sigma),
        ("K", p.k),
        ("r", p.r),
        ("kappa", p.kappa),
        ("tau_phys", p.tau_phys),
        ("g_phys", p.g_phys),
    ];
    for (name, v) in fields {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Domain(format!("{name} must be finite and > 0, got {v}")));
        }
    }
    let k2 = p.k * p.k;
    ModelParams::new(p.tau_phys / p.r, p.g_phys / (p.r * k2), (p.sigma * k2 / p.r).sqrt())
}
