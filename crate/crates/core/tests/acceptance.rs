//! Acceptance criteria. Every criterion prints one PASS/FAIL line; the
//! process fails if any criterion fails.
//!
//! `cargo test --test acceptance -- --include-ignored` also runs the
//! extended trimorphic simulation (several minutes).

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hgt_core::ess::{
    compute_constants, dimorphic_ess, monomorphic_ess, verify_ess, DiscreteEss, KernelConstants,
    TrimorphicBranch,
};
use hgt_core::kernels::{make_kernel, ModelParams, TransferKernel};
use hgt_core::pde::{
    self, grad_sq_at, laplacian, solve_mass_equation, Grid1D, MassForm, SimConfig, SimReport,
};
use hgt_core::spectral::principal_eigen;

/// Collects individual check failures of one criterion.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn close(&mut self, label: &str, got: f64, want: f64, tol: f64) {
        let err = (got - want).abs();
        if !(err <= tol) {
            self.failures
                .push(format!("{label}: got {got}, want {want} ± {tol} (off by {err:.4e})"));
        }
    }

    fn ok(&mut self, label: &str, cond: bool) {
        if !cond {
            self.failures.push(label.to_string());
        }
    }

    fn note(&mut self, s: String) {
        self.notes.push(s);
    }

    fn budget(&mut self, elapsed: Duration, limit: Duration) {
        self.ok(
            &format!("runtime {:.1?} exceeds {:.0?}", elapsed, limit),
            elapsed <= limit,
        );
    }
}

fn report(id: &str, title: &str, start: Instant, checks: Checks) -> bool {
    let pass = checks.failures.is_empty();
    let mut line = format!(
        "criterion {id} [{title}]: {} ({:.2?})",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed()
    );
    if !checks.notes.is_empty() {
        line.push_str(" -- ");
        line.push_str(&checks.notes.join("; "));
    }
    println!("{line}");
    for f in &checks.failures {
        println!("    failed: {f}");
    }
    pass
}

fn tanh() -> TransferKernel {
    make_kernel("tanh-kernel").unwrap()
}

// Closed-form tanh oracles, independent of the kernel module.
fn oracle_tanh_d1() -> f64 {
    let gap = |z: f64| {
        let t = z.tanh();
        2.0 * t - z * (2.0 - t * t)
    };
    let (mut lo, mut hi) = (0.7f64, 5.0f64);
    assert!(gap(lo) > 0.0 && gap(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn oracle_tanh_zh() -> f64 {
    // H''' = 2 sech^2 (2 tanh^2 - sech^2) vanishes at tanh^2 = 1/3.
    (1.0 / 3.0f64.sqrt()).atanh()
}

fn criterion_1() -> bool {
    let start = Instant::now();
    let mut c = Checks::default();
    let k = tanh();
    let d1_oracle = oracle_tanh_d1();
    let mu1_oracle = d1_oracle / d1_oracle.tanh().powi(2);
    match hgt_core::ess::find_d1(&k) {
        Ok(d1) => {
            let dh = 1.0 / d1.cosh().powi(2);
            let mu1 = d1 / (1.0 - dh);
            c.close("d1 vs oracle", d1, d1_oracle, 1e-10);
            c.close("d1", d1, 1.6061, 1e-3);
            c.close("mu1 vs oracle", mu1, mu1_oracle, 1e-9);
            c.close("mu1", mu1, 1.887, 2e-3);
            c.close("z_H vs oracle", k.z_h(), oracle_tanh_zh(), 1e-9);
            c.ok("d1 > z_H", d1 > k.z_h());
            c.ok("mu1 < 2", mu1 < 2.0);
            c.note(format!("d1 = {d1:.10}, mu1 = {mu1:.10}, z_H = {:.10}", k.z_h()));
        }
        Err(e) => c.ok(&format!("find_d1 failed: {e}"), false),
    }
    c.budget(start.elapsed(), Duration::from_secs(1));
    report("1", "kernel constants", start, c)
}

fn criterion_2(constants: &Option<KernelConstants>, elapsed: Duration) -> bool {
    let start = Instant::now() - elapsed;
    let mut c = Checks::default();
    match constants {
        Some(k) => {
            c.close("mu2", k.mu2, 4.03729, 1e-3);
            c.close("z3", k.z3, 0.513, 5e-3);
            c.note(format!("mu2 = {:.9}, z3 = {:.6}", k.mu2, k.z3));
        }
        None => c.ok("constants could not be computed", false),
    }
    c.budget(elapsed, Duration::from_secs(30));
    report("2", "mu2 and z3", start, c)
}

/// `mu, g, z1, z2, z3, a1/rho0, a2/rho0, a3/rho0, rho0`.
const TRIMORPHIC_BRANCH: [[f64; 9]; 8] = [
    [4.03729, 0.0619, 3.125, 1.52, 0.515, 0.7337, 0.2663, 0.0, 0.513],
    [4.16, 0.06, 3.181, 1.581, 0.5532, 0.723, 0.2662, 0.011, 0.52],
    [4.31, 0.058, 3.2453, 1.6521, 0.6001, 0.7119, 0.2663, 0.0218, 0.5225],
    [4.386, 0.057, 3.2791, 1.689, 0.6254, 0.7063, 0.2664, 0.0273, 0.5232],
    [5.0, 0.05, 3.5396, 1.98, 0.8439, 0.6662, 0.2675, 0.0663, 0.5255],
    [5.2632, 0.0475, 3.6641, 2.1014, 0.9424, 0.6516, 0.268, 0.0804, 0.5248],
    [6.25, 0.04, 4.0893, 2.5467, 1.3268, 0.6073, 0.2696, 0.1232, 0.5152],
    [6.3176, 0.0396, 4.1183, 2.5728, 1.3537, 0.6047, 0.2697, 0.1256, 0.5142],
];

fn row_cells(mu: f64, g: f64, e: &DiscreteEss) -> [f64; 9] {
    let f = e.fractions();
    [mu, g, e.points[0], e.points[1], e.points[2], f[0], f[1], f[2], e.rho0]
}

fn criterion_3(kernel: &TransferKernel, constants: &Option<KernelConstants>) -> bool {
    let start = Instant::now();
    let mut c = Checks::default();
    let Some(k) = constants else {
        c.ok("constants could not be computed", false);
        return report("3", "trimorphic branch regression", start, c);
    };
    let names = ["mu", "g", "z1", "z2", "z3", "a1/rho0", "a2/rho0", "a3/rho0", "rho0"];
    let tau = 0.5;
    let mut branch = TrimorphicBranch::new(kernel, k).expect("continuation start");
    let mut worst = (0.0f64, String::new());
    let mut last = None;
    for row in TRIMORPHIC_BRANCH {
        // The first row is the branch point itself; it is evaluated at the
        // computed mu2, which sits 9e-6 above the tabulated value.
        let mu = if row[0] == 4.03729 { k.mu2 } else { row[0] };
        let g = tau / (2.0 * mu);
        let params = ModelParams::new(tau, g, 1e-3).unwrap();
        match branch.solve(&params) {
            Ok(e) => {
                let got = row_cells(mu, g, &e);
                for i in 0..9 {
                    let label = format!("mu = {} {}", row[0], names[i]);
                    let err = (got[i] - row[i]).abs();
                    if err > worst.0 {
                        worst = (err, label.clone());
                    }
                    c.close(&label, got[i], row[i], 1e-2);
                }
                last = Some((params, e));
            }
            Err(err) => c.ok(&format!("mu = {}: no solution: {err}", row[0]), false),
        }
    }
    c.note(format!("largest cell deviation {:.4e} at {}", worst.0, worst.1));
    if let Some((params, e)) = last {
        let r = verify_ess(&e, &params, kernel);
        c.ok("mu = 6.3176 candidate must fail verification", !r.valid);
        let near = r.extra_near_zeros.iter().any(|z| (z - 0.7123).abs() <= 5e-2);
        c.ok(
            &format!("fourth near-zero of F near 0.7123, found {:?}", r.extra_near_zeros),
            near,
        );
        c.note(format!(
            "mu = 6.3176: max F = {:.3e} at z = {:.4}",
            r.max_fitness_excursion, r.argmax
        ));
    }
    c.budget(start.elapsed(), Duration::from_secs(120));
    report("3", "trimorphic branch regression", start, c)
}

fn criterion_4(kernel: &TransferKernel, constants: &Option<KernelConstants>) -> bool {
    let start = Instant::now();
    let mut c = Checks::default();
    let Some(k) = constants else {
        c.ok("constants could not be computed", false);
        return report("4", "ESS residuals", start, c);
    };
    let tau = 0.5;
    let mut worst = 0.0f64;
    for i in 1..=50 {
        let mu = k.mu1 + (k.mu2 - k.mu1) * i as f64 / 50.0;
        let p = ModelParams::new(tau, tau / (2.0 * mu), 1e-3).unwrap();
        let out = dimorphic_ess(&p, kernel, k);
        let Some(e) = out.ess() else {
            c.ok(&format!("mu = {mu}: dimorphic ESS rejected: {:?}", out.reason()), false);
            continue;
        };
        let (z1, z2) = (e.points[0], e.points[1]);
        let (a, b, rho0) = (e.weights[0], e.weights[1], e.rho0);
        let h = |z: f64| kernel.h(z);
        let dh = |z: f64| kernel.dh(z);
        let res = [
            1.0 - p.g * z1 * z1 - rho0 + b / rho0 * tau * h(z1 - z2),
            1.0 - p.g * z2 * z2 - rho0 + a / rho0 * tau * h(z2 - z1),
            -2.0 * p.g * z1 + a * tau / rho0 + b * tau / rho0 * dh(z1 - z2),
            -2.0 * p.g * z2 + b * tau / rho0 + a * tau / rho0 * dh(z2 - z1),
        ];
        for (j, r) in res.iter().enumerate() {
            worst = worst.max(r.abs());
            c.ok(&format!("mu = {mu}: stationarity residual {j} = {r:e}"), r.abs() <= 1e-9);
        }
        let gap = z1 - z2 - k.d1;
        c.ok(&format!("mu = {mu}: z1 - z2 - d1 = {gap:e}"), gap.abs() <= 1e-12);
    }
    for i in 1..=50 {
        let mu = k.mu1 * i as f64 / 50.0;
        let p = ModelParams::new(tau, tau / (2.0 * mu), 1e-3).unwrap();
        let out = monomorphic_ess(&p, k);
        let Some(e) = out.ess() else {
            c.ok(&format!("mu = {mu}: monomorphic ESS rejected: {:?}", out.reason()), false);
            continue;
        };
        let z0 = e.points[0];
        let f = e.fitness_at(&p, kernel, z0);
        let df = e.fitness_slope_at(&p, kernel, z0);
        worst = worst.max(f.abs()).max(df.abs());
        c.ok(&format!("mu = {mu}: F(z0) = {f:e}"), f.abs() <= 1e-9);
        c.ok(&format!("mu = {mu}: F'(z0) = {df:e}"), df.abs() <= 1e-9);
    }
    c.note(format!("largest residual {worst:.3e}"));
    c.budget(start.elapsed(), Duration::from_secs(10));
    report("4", "ESS residuals", start, c)
}

struct Run {
    label: String,
    tau: f64,
    report: SimReport,
}

fn simulate(
    label: &str,
    tau: f64,
    g: f64,
    eps: f64,
    (z_min, z_max, dz): (f64, f64, f64),
    dt: f64,
    t_max: f64,
) -> Result<Run, String> {
    let params = ModelParams::new(tau, g, eps).map_err(|e| e.to_string())?;
    let grid = Grid1D::new(z_min, z_max, dz).map_err(|e| e.to_string())?;
    let cfg = SimConfig::new(params, tanh(), grid, dt, t_max).map_err(|e| e.to_string())?;
    let report = pde::run(&cfg).map_err(|e| e.to_string())?;
    Ok(Run {
        label: label.to_string(),
        tau,
        report,
    })
}

fn check_support(c: &mut Checks, label: &str, got: &[f64], want: &[f64], tol: f64) {
    if got.len() != want.len() {
        c.ok(
            &format!("{label}: expected {} support points, got {got:?}", want.len()),
            false,
        );
        return;
    }
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        c.close(&format!("{label}: support point {i}"), *g, *w, tol);
    }
}

fn criterion_5(runs: &mut Vec<Run>) -> bool {
    let start = Instant::now();
    let mut c = Checks::default();
    let target = monomorphic_ess(
        &ModelParams::new(0.5, 1.0, 1e-3).unwrap(),
        &compute_constants(&tanh()).unwrap(),
    );
    let target = target.ess().expect("monomorphic target").clone();
    let scenarios = [
        ("monomorphic", 5e-5, 1e-2, 1e-4, 2.0 * 1e-2, 1e-2, None),
        ("monomorphic coarse", 1e-2, 2e-2, 5e-4, 5e-2, 5e-2, Some(Duration::from_secs(60))),
    ];
    for (label, eps, dz, dt, support_tol, rho_tol, budget) in scenarios {
        let t0 = Instant::now();
        match simulate(label, 0.5, 1.0, eps, (-2.0, 6.0, dz), dt, 1000.0) {
            Ok(run) => {
                let r = &run.report;
                c.ok(&format!("{label}: not steady after {} steps", r.steps_taken), r.steady);
                check_support(&mut c, label, &r.support_points, &target.points, support_tol);
                c.close(&format!("{label}: rho"), r.final_rho, target.rho0, rho_tol);
                c.note(format!(
                    "{label}: support {:?}, rho = {:.6}, {} steps, {:.1?}",
                    r.support_points,
                    r.final_rho,
                    r.steps_taken,
                    t0.elapsed()
                ));
                if let Some(limit) = budget {
                    c.budget(t0.elapsed(), limit);
                }
                runs.push(run);
            }
            Err(e) => c.ok(&format!("{label}: run failed: {e}"), false),
        }
    }
    report("5", "monomorphic cross-validation", start, c)
}

fn criterion_6(runs: &mut Vec<Run>) -> bool {
    let start = Instant::now();
    let mut c = Checks::default();
    let label = "dimorphic";
    let dz = 1e-2;
    match simulate(label, 0.5, 0.065, 5e-5, (-2.0, 6.0, dz), 1e-4, 1000.0) {
        Ok(run) => {
            let r = &run.report;
            c.ok(&format!("{label}: not steady after {} steps", r.steps_taken), r.steady);
            check_support(&mut c, label, &r.support_points, &[1.407, 3.013], 5.0 * dz);
            c.close(&format!("{label}: rho"), r.final_rho, 0.527, 2e-2);
            let h = &r.rho_history;
            let dips = (1..h.len() - 1)
                .filter(|&i| h[i] < h[i - 1] && h[i] <= h[i + 1] && h[i] < r.final_rho)
                .count();
            c.ok("rho(t) has no local minimum below its final value", dips > 0);
            c.note(format!(
                "support {:?}, rho = {:.6}, {} steps, {} local minima below final rho",
                r.support_points, r.final_rho, r.steps_taken, dips
            ));
            runs.push(run);
        }
        Err(e) => c.ok(&format!("{label}: run failed: {e}"), false),
    }
    report("6", "dimorphic cross-validation", start, c)
}

fn criterion_7(runs: &mut Vec<Run>) -> bool {
    let start = Instant::now();
    let mut c = Checks::default();
    for eps in [0.1, 0.05] {
        let label = format!("tau = 0, eps = {eps}");
        let eig = principal_eigen(eps, 1.0, (-3.0, 3.0), 1201);
        let lambda = match eig {
            Ok(e) => e.lambda,
            Err(e) => {
                c.ok(&format!("{label}: eigen solve failed: {e}"), false);
                continue;
            }
        };
        c.close(&format!("{label}: lambda vs 1 - eps"), lambda, 1.0 - eps, 1e-3);
        match simulate(&label, 0.0, 1.0, eps, (-3.0, 3.0, 1e-2), 2e-4, 1000.0) {
            Ok(run) => {
                let r = &run.report;
                c.ok(&format!("{label}: not steady"), r.steady);
                c.close(&format!("{label}: steady rho vs lambda"), r.final_rho, lambda, 1e-2);
                c.note(format!("eps = {eps}: lambda = {lambda:.6}, rho = {:.6}", r.final_rho));
                runs.push(run);
            }
            Err(e) => c.ok(&format!("{label}: run failed: {e}"), false),
        }
    }
    c.budget(start.elapsed(), Duration::from_secs(60));
    report("7", "no-transfer consistency", start, c)
}

fn criterion_8(runs: &[Run]) -> bool {
    let start = Instant::now();
    let mut c = Checks::default();
    let mut checked = 0;
    for run in runs.iter().filter(|r| r.report.steady) {
        let d = run.report.diagnostics;
        let eps = run.report.params.epsilon;
        let bound = 20.0 * eps * eps.ln().abs();
        c.ok(
            &format!("{}: |max u| = {:e} > {bound:e}", run.label, d.max_u.abs()),
            d.max_u.abs() <= bound,
        );
        c.ok(
            &format!("{}: mass identity residual {:e}", run.label, d.mass_identity_residual),
            d.mass_identity_residual <= 1e-2,
        );
        let (lo, hi) = (1.0 - run.tau - 0.05, 1.0 + run.tau + 0.05);
        c.ok(
            &format!("{}: rho = {} outside [{lo}, {hi}]", run.label, d.rho),
            d.rho >= lo && d.rho <= hi,
        );
        if run.tau == 0.0 {
            let g = run.report.params.g;
            c.note(format!(
                "{}: rho - (1 - eps sqrt(g)) = {:.2e}",
                run.label,
                d.rho - (1.0 - eps * g.sqrt())
            ));
        }
        checked += 1;
    }
    c.ok("no converged simulation to check", checked > 0);
    c.note(format!("{checked} converged runs checked"));
    report("8", "steady-state identities", start, c)
}

fn criterion_9() -> bool {
    let start = Instant::now();
    let mut c = Checks::default();
    for form in [MassForm::Exponential, MassForm::Logarithmic] {
        match solve_mass_equation(0.0, 1.0, 1.0, form) {
            Ok(y) => c.close(&format!("mass solve ({form:?})"), y, 0.567143, 1e-6),
            Err(e) => c.ok(&format!("mass solve failed: {e}"), false),
        }
    }
    let dz = 0.1;
    let z: Vec<f64> = (0..12).map(|j| -0.5 + j as f64 * dz).collect();
    let sq: Vec<f64> = z.iter().map(|x| x * x).collect();
    let cube: Vec<f64> = z.iter().map(|x| x * x * x).collect();
    for (j, v) in laplacian(&sq, dz).iter().enumerate() {
        c.close(&format!("laplacian of z^2 at node {j}"), *v, 2.0, 1e-10);
    }
    for (j, v) in laplacian(&cube, dz).iter().enumerate() {
        c.close(&format!("laplacian of z^3 at node {j}"), *v, 6.0 * z[j], 1e-10);
    }
    let table = [
        ((1.0, 0.0, 1.0), 1.0),
        ((0.0, 1.0, 2.0), 1.0),
        ((2.0, 1.0, 0.0), 1.0),
    ];
    for ((l, m, r), want) in table {
        c.close(&format!("gradient branch ({l}, {m}, {r})"), grad_sq_at(l, m, r, 1.0), want, 0.0);
    }
    c.budget(start.elapsed(), Duration::from_secs(1));
    report("9", "scheme unit oracles", start, c)
}

fn extended_trimorphic(runs: &mut Vec<Run>) -> bool {
    let start = Instant::now();
    let mut c = Checks::default();
    let label = "trimorphic";
    let dz = 1e-2;
    let row = TRIMORPHIC_BRANCH[4];
    // Horizon sized to the runtime budget; stops earlier if steady.
    match simulate(label, 0.5, 0.05, 5e-4, (-2.0, 6.0, dz), 1e-4, 300.0) {
        Ok(run) => {
            let r = &run.report;
            check_support(&mut c, label, &r.support_points, &[row[4], row[3], row[2]], 5.0 * dz);
            c.close(&format!("{label}: final rho"), r.final_rho, row[8], 2e-2);
            let h = &r.rho_history;
            let tail = &h[h.len() / 2..];
            let mean = tail.iter().sum::<f64>() / tail.len() as f64;
            let (lo, hi) = tail
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            c.note(format!(
                "support {:?}, final rho = {:.6}, steady = {}, {} steps; second half of rho(t): mean {:.4}, range [{:.3}, {:.3}]",
                r.support_points, r.final_rho, r.steady, r.steps_taken, mean, lo, hi
            ));
            runs.push(run);
        }
        Err(e) => c.ok(&format!("{label}: run failed: {e}"), false),
    }
    c.budget(start.elapsed(), Duration::from_secs(600));
    report("extended", "trimorphic simulation", start, c)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let extended = args.iter().any(|a| a == "--include-ignored" || a == "--ignored");

    let kernel = tanh();
    let mut results = vec![criterion_1()];
    let t0 = Instant::now();
    let constants = compute_constants(&kernel).ok();
    let constants_time = t0.elapsed();
    results.push(criterion_2(&constants, constants_time));
    results.push(criterion_3(&kernel, &constants));
    results.push(criterion_4(&kernel, &constants));
    let mut runs = Vec::new();
    results.push(criterion_5(&mut runs));
    results.push(criterion_6(&mut runs));
    results.push(criterion_7(&mut runs));
    if extended {
        results.push(extended_trimorphic(&mut runs));
    } else {
        println!("criterion extended [trimorphic simulation]: SKIPPED (pass --include-ignored)");
    }
    results.push(criterion_8(&runs));
    results.push(criterion_9());

    let failed = results.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
