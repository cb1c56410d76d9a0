//! Principal eigenvalue of `-eps^2 d_zz - R(z)` with Dirichlet conditions.
//!
//! Sign convention: `-eps^2 N'' - R N = -lambda N`, so `lambda` is minus the
//! smallest eigenvalue of the discrete operator. With `tau = 0` it equals the
//! steady total population.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::growth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenResult {
    pub lambda: f64,
    pub epsilon: f64,
    pub g: f64,
    pub domain: (f64, f64),
    pub n_points: usize,
    /// Discrete L2 norm of `(-eps^2 D2 - R + lambda) N`.
    pub residual: f64,
    /// Values at the interior nodes, positive, unit discrete L2 norm.
    #[serde(skip)]
    pub eigenvector: Vec<f64>,
}

const MAX_ITER: usize = 2000;
const RQ_TOL: f64 = 1e-12;
const RESIDUAL_TARGET: f64 = 1e-9;

/// Tridiagonal operator `-eps^2 D2 - R` on the interior nodes.
struct Operator {
    diag: Vec<f64>,
    off: f64,
}

impl Operator {
    fn new(epsilon: f64, g: f64, a: f64, h: f64, n_interior: usize) -> Self {
        let c = epsilon * epsilon / (h * h);
        let diag = (1..=n_interior)
            .map(|j| 2.0 * c - growth(g, a + j as f64 * h))
            .collect();
        Self { diag, off: -c }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len();
        for j in 0..n {
            let mut s = self.diag[j] * v[j];
            if j > 0 {
                s += self.off * v[j - 1];
            }
            if j + 1 < n {
                s += self.off * v[j + 1];
            }
            out[j] = s;
        }
    }

    /// Solve `(A - shift) x = rhs` by Thomas elimination.
    fn solve_shifted(&self, shift: f64, rhs: &[f64], x: &mut [f64], scratch: &mut [f64]) {
        let n = rhs.len();
        let b = self.off;
        let mut denom = self.diag[0] - shift;
        scratch[0] = b / denom;
        x[0] = rhs[0] / denom;
        for j in 1..n {
            denom = self.diag[j] - shift - b * scratch[j - 1];
            scratch[j] = b / denom;
            x[j] = (rhs[j] - b * x[j - 1]) / denom;
        }
        for j in (0..n - 1).rev() {
            x[j] -= scratch[j] * x[j + 1];
        }
    }
}

fn l2(v: &[f64], h: f64) -> f64 {
    (h * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

/// Principal eigenpair on `[a, b]` discretised with `n_points` nodes
/// (boundary nodes included, values zero there).
pub fn principal_eigen(epsilon: f64, g: f64, domain: (f64, f64), n_points: usize) -> Result<EigenResult> {
    let (a, b) = domain;
    if !(epsilon > 0.0 && g > 0.0) {
        return Err(Error::Domain(format!("epsilon and g must be > 0, got {epsilon}, {g}")));
    }
    if n_points < 50 {
        return Err(Error::Precondition(format!("n_points must be >= 50, got {n_points}")));
    }
    let root = 1.0 / g.sqrt();
    if !(a <= -root && b >= root) {
        return Err(Error::Precondition(format!(
            "domain [{a}, {b}] must contain the zero set of R, [-{root}, {root}]"
        )));
    }
    let h = (b - a) / (n_points - 1) as f64;
    let n = n_points - 2;
    let op = Operator::new(epsilon, g, a, h, n);

    // The operator is bounded below by -max R = -1; shifting just under
    // that keeps A - shift positive definite and targets the bottom of the
    // spectrum.
    let shift = -1.0 - 1e-3;
    let mut v: Vec<f64> = (1..=n)
        .map(|j| {
            let z = a + j as f64 * h;
            (-(z * z) / 2.0).exp() + 1e-3
        })
        .collect();
    let norm = l2(&v, h);
    v.iter_mut().for_each(|x| *x /= norm);

    let mut next = vec![0.0; n];
    let mut av = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut rq_prev = f64::INFINITY;
    for _ in 0..MAX_ITER {
        op.solve_shifted(shift, &v, &mut next, &mut scratch);
        let norm = l2(&next, h);
        if !norm.is_finite() || norm == 0.0 {
            break;
        }
        let sign = if next.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        for (vj, nj) in v.iter_mut().zip(&next) {
            *vj = sign * nj / norm;
        }
        op.apply(&v, &mut av);
        let rq = h * v.iter().zip(&av).map(|(x, y)| x * y).sum::<f64>();
        let residual = (h * av
            .iter()
            .zip(&v)
            .map(|(y, x)| (y - rq * x).powi(2))
            .sum::<f64>())
        .sqrt();
        if (rq - rq_prev).abs() <= RQ_TOL && residual <= RESIDUAL_TARGET {
            return Ok(EigenResult {
                lambda: -rq,
                epsilon,
                g,
                domain,
                n_points,
                residual,
                eigenvector: v,
            });
        }
        rq_prev = rq;
    }
    Err(Error::Numerical {
        message: format!("inverse iteration did not converge in {MAX_ITER} iterations"),
        last_iterate: vec![-rq_prev],
    })
}

/// Default grid spacing used when only domains are given.
pub const DEFAULT_SPACING: f64 = 5e-3;

/// Whether `lambda` is nondecreasing along a strictly nested list of
/// domains (1e-10 slack).
pub fn domain_monotonicity_check(epsilon: f64, g: f64, domains: &[(f64, f64)]) -> Result<bool> {
    for w in domains.windows(2) {
        let ((a0, b0), (a1, b1)) = (w[0], w[1]);
        let nested = a1 <= a0 && b0 <= b1 && (a1 < a0 || b0 < b1);
        if !nested {
            return Err(Error::Precondition(format!(
                "domains must be strictly nested: [{a0}, {b0}] then [{a1}, {b1}]"
            )));
        }
    }
    let lambdas = domains
        .iter()
        .map(|&(a, b)| {
            let n = ((b - a) / DEFAULT_SPACING).round() as usize + 1;
            principal_eigen(epsilon, g, (a, b), n).map(|r| r.lambda)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(lambdas.windows(2).all(|w| w[1] >= w[0] - 1e-10))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_ground_state() {
        // -eps^2 N'' + g z^2 N = eps sqrt(g) N on the line.
        let r = principal_eigen(0.1, 1.0, (-10.0, 10.0), 4001).unwrap();
        assert!((r.lambda - 0.9).abs() < 1e-3, "{}", r.lambda);
        assert!(r.lambda <= 1.0 + 1e-8);
        assert!(r.residual <= 1e-8);
        assert!(r.eigenvector.iter().all(|&x| x > 0.0));
        let h = 20.0 / 4000.0;
        assert!((l2(&r.eigenvector, h) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_decreases_with_epsilon() {
        let a = principal_eigen(0.2, 1.0, (-10.0, 10.0), 4001).unwrap().lambda;
        let b = principal_eigen(0.1, 1.0, (-10.0, 10.0), 4001).unwrap().lambda;
        assert!(a <= b);
    }

    #[test]
    fn lambda_below_one_for_various_parameters() {
        for (eps, g) in [(0.4, 1.0), (0.05, 1.0), (0.1, 0.065), (0.2, 4.0)] {
            let r = principal_eigen(eps, g, (-10.0, 10.0), 4001).unwrap();
            assert!(r.lambda <= 1.0, "eps = {eps}, g = {g}: {}", r.lambda);
            assert!(r.residual <= 1e-8);
        }
    }

    #[test]
    fn rate_of_approach_to_one() {
        for eps in [0.4, 0.2, 0.1, 0.05] {
            let r = principal_eigen(eps, 1.0, (-10.0, 10.0), 4001).unwrap();
            let ratio = (1.0 - r.lambda) / eps;
            assert!((ratio - 1.0).abs() < 0.1, "eps = {eps}: ratio {ratio}");
        }
    }

    #[test]
    fn nested_domains_are_monotone() {
        let doms = [(-2.0, 2.0), (-5.0, 5.0), (-10.0, 10.0)];
        assert!(domain_monotonicity_check(0.1, 1.0, &doms).unwrap());
        assert!(domain_monotonicity_check(0.1, 1.0, &doms[..1]).unwrap());
    }

    #[test]
    fn domain_saturates_at_whole_line_value() {
        let a = principal_eigen(0.1, 1.0, (-10.0, 10.0), 4001).unwrap().lambda;
        let b = principal_eigen(0.1, 1.0, (-20.0, 20.0), 8001).unwrap().lambda;
        assert!((a - b).abs() < 1e-6);
        assert!((b - 0.9).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(principal_eigen(0.1, 1.0, (-10.0, 10.0), 10).is_err());
        assert!(principal_eigen(0.1, 1.0, (-0.5, 10.0), 1000).is_err());
        assert!(domain_monotonicity_check(0.1, 1.0, &[(-5.0, 5.0), (-2.0, 2.0)]).is_err());
    }
}
