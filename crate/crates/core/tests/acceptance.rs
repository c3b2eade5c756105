//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line; the
//! test fails if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use lpstable::admissibility::{
    self, contraction_factor, delta_bounds, fundamental_identity_residual, perturbation_constant,
    tail_integral_with, TAIL_REL_TOL,
};
use lpstable::dichotomy::{example_system, pair_grid, sharpness_probe, verify_dichotomy, DichotomyParams};
use lpstable::manifold::{solve_manifold, Solution, SolverConfig};
use lpstable::perturbation::Perturbation;
use lpstable::quad::TailMethod;
use lpstable::rates::GrowthRate;
use lpstable::verify::{self, DistanceSampling};
use lpstable::Execution;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn run(id: u32, name: &'static str, limit: Option<f64>, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (ok, mut detail) = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed.as_secs_f64() < l);
    if !in_time {
        detail.push_str(&format!("; over time limit {}s", limit.unwrap()));
    }
    Outcome {
        id,
        name,
        pass: ok && in_time,
        detail,
        elapsed,
    }
}

fn l1(t: f64) -> f64 {
    1.0 + (1.0 + t).ln()
}

fn l2(t: f64) -> f64 {
    1.0 + l1(t).ln()
}

/// Rate pairs with constants satisfying every hypothesis, plus the closed-form
/// β written out by hand.
type Family = (&'static str, DichotomyParams, f64, Box<dyn Fn(f64) -> f64>);

fn families() -> Vec<Family> {
    let q = 2.0;
    let e = GrowthRate::exponential();
    let p = GrowthRate::polynomial();
    let exp = DichotomyParams::new(1.0, -1.0, 1.0, 0.1, e.clone(), e).unwrap();
    let poly = DichotomyParams::new(1.0, -1.0, 1.0, 0.2, p.clone(), p).unwrap();
    let (lam, eps) = (4.0, 0.5);
    let log = DichotomyParams::new(1.0, -0.5, 0.5, eps, GrowthRate::log_poly(lam).unwrap(), GrowthRate::log_companion())
        .unwrap();
    let loglog = DichotomyParams::new(
        1.0,
        -0.5,
        0.5,
        eps,
        GrowthRate::loglog_poly(lam).unwrap(),
        GrowthRate::loglog_companion(),
    )
    .unwrap();
    let k = eps * (1.0 + 2.0 / q);
    vec![
        ("exponential", exp, q, Box::new(move |t: f64| 1.9f64.sqrt() * (-0.1 * 2.0 * t).exp())),
        (
            "polynomial",
            poly,
            q,
            Box::new(move |t: f64| 0.8f64.sqrt() * (1.0 + t).powf(-(0.2 * 2.0 + 0.5))),
        ),
        (
            "log",
            log,
            q,
            Box::new(move |t: f64| (lam - eps - 1.0).sqrt() * (1.0 + t).powf(-0.5) * l1(t).powf(-k - 0.5)),
        ),
        (
            "loglog",
            loglog,
            q,
            Box::new(move |t: f64| {
                (lam - eps - 1.0).sqrt() * (1.0 + t).powf(-0.5) * l1(t).powf(-0.5) * l2(t).powf(-k - 0.5)
            }),
        ),
    ]
}

fn quadrature_beta(p: &DichotomyParams, q: f64, s: f64) -> f64 {
    let i = tail_integral_with(p, q, s, TailMethod::Quadrature, TAIL_REL_TOL).unwrap();
    (p.a * p.mu.ln_eval(s) - p.eps * (1.0 + 1.0 / q) * p.nu.ln_eval(s) - i.ln_value / q).exp()
}

fn criterion_1() -> (bool, String) {
    let mut worst = 0.0f64;
    let mut worst_hand = 0.0f64;
    for (_, p, q, closed) in families() {
        for k in 0..10 {
            let s = 0.5 + 2.3 * k as f64;
            worst = worst.max(fundamental_identity_residual(&p, q, s).unwrap());
            let i = tail_integral_with(&p, q, s, TailMethod::Quadrature, TAIL_REL_TOL).unwrap();
            let prod = p.mu.eval(s).powf(-p.a * q) * p.nu.eval(s).powf(p.eps * (q + 1.0)) * closed(s).powf(q) * i.value;
            worst_hand = worst_hand.max((prod - 1.0).abs());
        }
    }
    (
        worst <= 1e-6 && worst_hand <= 1e-6,
        format!("max residual {worst:.3e} (library), {worst_hand:.3e} (hand-written β)"),
    )
}

fn criterion_2() -> (bool, String) {
    let mut worst = 0.0f64;
    for (name, p, q, closed) in families().into_iter().skip(1) {
        for t in admissibility::uniform_grid(20.0, 20) {
            let rel = (quadrature_beta(&p, q, t) / closed(t) - 1.0).abs();
            assert!(rel.is_finite(), "{name}");
            worst = worst.max(rel);
        }
    }
    (worst <= 1e-6, format!("max relative deviation {worst:.3e}"))
}

fn criterion_3() -> (bool, String) {
    let e = GrowthRate::exponential();
    let (a, b, eps) = (-1.0, 1.0, 0.5);
    let sys = example_system(a, b, eps, e.clone(), e.clone()).unwrap();
    let params = DichotomyParams::new(1.0, a, b, eps, e.clone(), e).unwrap();
    let mut grid = pair_grid(12.0 * PI, 400);
    grid.extend(lpstable::dichotomy::sharpness_pairs(&[1, 2, 3, 4, 5]));
    let cert = verify_dichotomy(&sys, &params, &grid, 1e-9, Execution::Parallel).unwrap();
    let sharp = sharpness_probe(&sys, &[1, 2, 3, 4, 5]).unwrap();
    // independent oracle: U(2kπ,(2k−1)π) = e^{−π}·e^{ε(2k−1)π}
    let mut worst = 0.0f64;
    for r in &sharp {
        let k = r.k as f64;
        let exact = (-PI + eps * (2.0 * k - 1.0) * PI).exp();
        worst = worst.max(r.residual).max((r.u - exact).abs() / exact);
    }
    (
        cert.pass && worst <= 1e-9,
        format!(
            "ratios {:.12}/{:.12}, max equality residual {worst:.3e}",
            cert.max_stable_ratio, cert.max_unstable_ratio
        ),
    )
}

fn oracle_params() -> (lpstable::dichotomy::LinearSystem, DichotomyParams) {
    let e = GrowthRate::exponential();
    let sys = example_system(-1.0, 1.0, 0.0, e.clone(), e.clone()).unwrap();
    let p = DichotomyParams::new(1.0, -1.0, 1.0, 0.0, e.clone(), e).unwrap();
    (sys, p)
}

fn oracle_cfg() -> SolverConfig {
    SolverConfig {
        delta: Some(0.02),
        big_c: Some(2.0),
        ..SolverConfig::default()
    }
}

fn oracle_run() -> Solution {
    let (sys, p) = oracle_params();
    solve_manifold(&sys, &p, &Perturbation::cubic(1.0).unwrap(), &oracle_cfg()).unwrap()
}

fn criterion_4(sol: &Solution) -> (bool, String) {
    let mut worst = 0.0f64;
    for (_, xi, phi) in sol.graph.rows() {
        if xi[0] != 0.0 {
            worst = worst.max((phi[0] + xi[0].powi(3) / 4.0).abs() / xi[0].abs().powi(3));
        }
    }
    let ok = sol.report.converged && sol.report.iterations <= 5 && worst <= 1e-2;
    (
        ok,
        format!(
            "{} iterations, {} nodes x {} slices, max |φ+ξ³/4|/|ξ|³ = {worst:.3e}",
            sol.report.iterations,
            sol.graph.nodes_per_axis(),
            sol.graph.s_grid().len()
        ),
    )
}

fn criterion_5(sol: &Solution) -> (bool, String) {
    let bound = contraction_factor(1.0, 2.0, 2.0, 1.0, 0.02) * 1.1;
    let ratios: Vec<f64> = sol.report.history.iter().filter_map(|h| h.ratio).collect();
    let max = ratios.iter().copied().fold(0.0, f64::max);
    (
        max <= bound,
        format!("max ratio {max:.3e} over {} ratios, bound {bound:.4}", ratios.len()),
    )
}

fn criterion_6(sol: &Solution) -> (bool, String) {
    let (sys, _) = oracle_params();
    let f = Perturbation::cubic(1.0).unwrap();
    let inv = verify::sample_invariance(&sol.graph, 200, 2.0, 11);
    let pairs = verify::sample_decay(&sol.graph, 200, 5.0, 12);
    let rep = verify::verify_graph(&sol.graph, &sys, &f, &inv, &pairs, 1e-3, 1e-2, 1e-3, Execution::Parallel).unwrap();
    (
        rep.invariance.pass && rep.decay.pass,
        format!(
            "max invariance residual {:.3e}, max decay ratio {:.3e}",
            rep.invariance.max_residual, rep.decay.max_ratio
        ),
    )
}

fn criterion_7() -> (bool, String) {
    let (sys, p) = oracle_params();
    let f = Perturbation::cubic(1.0).unwrap();
    let g = Perturbation::cubic(1.05).unwrap();
    let cfg = oracle_cfg();
    let smp = DistanceSampling::new(2, 1, 10.0, 11, 0.1, 7, 32, 5);
    let rep = verify::check_perturbation_bound(&sys, &p, &f, &g, &cfg, &smp).unwrap();
    let k = perturbation_constant(2.0, 2.0, 1.0, 0.02);
    // exact graphs −ξ³/4 and −1.05ξ³/4: sup |0.05ξ³/4|/|ξ| = 0.05(δβ)²/4
    let beta = 2f64.sqrt();
    let analytic = (0.02 * beta).powi(2) / 4.0;
    let rel = (rep.ratio / analytic - 1.0).abs();
    (
        rep.pass && (rep.k - k).abs() < 1e-15 && rel <= 0.05,
        format!(
            "‖φ−φ̄‖′ = {:.4e} ≤ K‖f−f̄‖′ = {:.4e}; ratio {:.4e} vs (δβ)²/4 = {analytic:.4e} ({:.2}% off)",
            rep.phi_distance,
            rep.bound,
            rep.ratio,
            100.0 * rel
        ),
    )
}

fn criterion_8() -> (bool, String) {
    let (c, q, big_c, d) = (1.0f64, 2.0f64, 2.0f64, 1.0f64);
    let lib = delta_bounds(c, q, big_c, d, 1.0).unwrap();
    let admissible = |delta: f64| {
        let dq = delta.powf(q);
        let base = c * d * dq;
        d + 4.0 * 27.0 * big_c.powi(3) * base <= big_c
            && 4.0 * 27.0 * big_c.powi(2) * base < 1.0
            && 16.0 * 9.0 * big_c.powi(2) * base < 1.0
            && 16.0 * 9.0 * big_c.powi(3) * base < 1.0
            && 2.0 * 4.0 * 27.0 * big_c.powi(2) * base < 1.0
            && 2.0 * 8.0 * 9.0 * big_c.powi(3) * base < 1.0
    };
    let step = 1e-6;
    let largest = (1..=100_000)
        .map(|i| i as f64 * step)
        .take_while(|&x| admissible(x))
        .last()
        .unwrap_or(0.0);
    let scanned = 0.99 * largest;
    let expected = 0.99 / 1152f64.sqrt();
    let ok = (lib.delta_max - expected).abs() <= 1e-6
        && (scanned - expected).abs() <= 1e-6
        && lib.binding == "outer_contraction";
    (
        ok,
        format!(
            "δ_max {:.9} (binding {}), scan {scanned:.9}, 0.99/√1152 = {expected:.9}",
            lib.delta_max, lib.binding
        ),
    )
}

#[test]
fn acceptance() {
    let mut out = Vec::new();
    out.push(run(1, "fundamental identity", Some(5.0), criterion_1));
    out.push(run(2, "closed-form beta", Some(5.0), criterion_2));
    out.push(run(3, "dichotomy sharpness", Some(2.0), criterion_3));
    let start = Instant::now();
    let sol = oracle_run();
    let solve_time = start.elapsed().as_secs_f64();
    out.push(run(4, "analytic-oracle manifold", None, || {
        let (ok, d) = criterion_4(&sol);
        (ok && solve_time < 60.0, format!("{d}, solve {solve_time:.1}s"))
    }));
    out.push(run(5, "contraction factor", None, || criterion_5(&sol)));
    out.push(run(6, "invariance and decay", Some(60.0), || criterion_6(&sol)));
    out.push(run(7, "perturbation stability", Some(120.0), criterion_7));
    out.push(run(8, "delta_max regression", None, criterion_8));
    for o in &out {
        println!(
            "criterion {} [{}] {}: {} ({:.2}s)",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.detail,
            o.elapsed.as_secs_f64()
        );
    }
    assert!(out.iter().all(|o| o.pass));
}
