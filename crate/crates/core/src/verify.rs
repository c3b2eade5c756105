//! Checks of a computed graph against the manifold's defining properties: invariance
//! of the graph under the perturbed flow, the decay estimate along it, and
//! the Lipschitz-continuous dependence of `φ` on the perturbation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admissibility;
use crate::dichotomy::{DichotomyParams, LinearSystem};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::manifold::{nonlinear_flow, solve_manifold, ManifoldGraph, SolveReport, SolverConfig};
use crate::norm::{self, euclid};
use crate::perturbation::Perturbation;

/// Floor on `‖x‖` in relative residuals.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceRow {
    pub s: f64,
    pub xi: Vec<f64>,
    pub tau: f64,
    pub x_tau: Vec<f64>,
    pub y_tau: Vec<f64>,
    pub residual: f64,
    /// `‖x_τ‖ / (δβ(s+τ))`.
    pub radius_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceSection {
    pub max_residual: f64,
    pub max_radius_ratio: f64,
    pub tol: f64,
    pub pass: bool,
    pub rows: Vec<InvarianceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub s: f64,
    pub xi: Vec<f64>,
    pub xi_bar: Vec<f64>,
    pub t: f64,
    pub observed: f64,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySection {
    pub max_ratio: f64,
    pub tol: f64,
    pub pass: bool,
    pub rows: Vec<DecayRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzSection {
    pub max_ratio: f64,
    pub at_s: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub invariance: InvarianceSection,
    pub decay: DecaySection,
    pub lipschitz: LipschitzSection,
    pub pass: bool,
}

fn check_small_ball(graph: &ManifoldGraph, s: f64, xi: &[f64]) -> Result<()> {
    if xi.len() != graph.n_e() {
        return Err(Error::Precondition("ξ has the wrong dimension".into()));
    }
    let r = graph.small_radius(s);
    if euclid(xi) > r * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "‖ξ‖ = {} outside the ball of radius (δ/C)β̃({s}) = {r}",
            euclid(xi)
        )));
    }
    Ok(())
}

fn on_graph(graph: &ManifoldGraph, s: f64, xi: &[f64]) -> Vec<f64> {
    let mut v = xi.to_vec();
    v.extend(graph.eval_phi(s, xi));
    v
}

/// Flows `(s, ξ, φ(s,ξ))` for time `τ` and measures how far the end
/// point is from the graph, relative to `max(‖x_τ‖, floor)`.
pub fn check_invariance(
    graph: &ManifoldGraph,
    system: &LinearSystem,
    pert: &Perturbation,
    samples: &[(f64, Vec<f64>, f64)],
    h: f64,
    tol: f64,
    exec: Execution,
) -> Result<InvarianceSection> {
    for (s, xi, tau) in samples {
        check_small_ball(graph, *s, xi)?;
        if !(*tau >= 0.0) {
            return Err(Error::param("tau", format!("must be nonnegative, got {tau}")));
        }
    }
    let rows = exec.try_map(samples.len(), |k| -> Result<InvarianceRow> {
        let (s, xi, tau) = &samples[k];
        let p = nonlinear_flow(system, pert, *s, &on_graph(graph, *s, xi), *tau, h)?;
        let phi = graph.eval_phi(p.t, &p.x);
        let residual = norm::dist(&p.y, &phi) / euclid(&p.x).max(RESIDUAL_FLOOR);
        Ok(InvarianceRow {
            s: *s,
            xi: xi.clone(),
            tau: *tau,
            radius_ratio: euclid(&p.x) / graph.radius(p.t),
            x_tau: p.x,
            y_tau: p.y,
            residual,
        })
    })?;
    let max_residual = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    let max_radius_ratio = rows.iter().map(|r| r.radius_ratio).fold(0.0, f64::max);
    Ok(InvarianceSection {
        max_residual,
        max_radius_ratio,
        tol,
        pass: max_residual <= tol && max_radius_ratio <= 1.0 + 1e-12,
        rows,
    })
}

/// Compares `‖Ψ_{t−s}(p_{s,ξ}) − Ψ_{t−s}(p_{s,ξ̄})‖` (sum-norm) with
/// `2C (μ(t)/μ(s))^a ν(s)^ε ‖ξ − ξ̄‖`.
pub fn check_decay(
    graph: &ManifoldGraph,
    system: &LinearSystem,
    pert: &Perturbation,
    pairs: &[(f64, Vec<f64>, Vec<f64>, f64)],
    h: f64,
    tol: f64,
    exec: Execution,
) -> Result<DecaySection> {
    for (s, xi, xb, t) in pairs {
        check_small_ball(graph, *s, xi)?;
        check_small_ball(graph, *s, xb)?;
        if t < s {
            return Err(Error::TimeOrder { t: *t, s: *s });
        }
    }
    let params = graph.params();
    let n_e = graph.n_e();
    let rows = exec.try_map(pairs.len(), |k| -> Result<DecayRow> {
        let (s, xi, xb, t) = &pairs[k];
        let a = nonlinear_flow(system, pert, *s, &on_graph(graph, *s, xi), t - s, h)?;
        let b = nonlinear_flow(system, pert, *s, &on_graph(graph, *s, xb), t - s, h)?;
        let va: Vec<f64> = a.x.iter().chain(&a.y).copied().collect();
        let vb: Vec<f64> = b.x.iter().chain(&b.y).copied().collect();
        let observed = norm::split_dist(&va, &vb, n_e);
        let bound = 2.0 * graph.big_c() * params.ln_stable_weight(*t, *s).exp() * norm::dist(xi, xb);
        let ratio = if observed == 0.0 { 0.0 } else { observed / bound };
        Ok(DecayRow {
            s: *s,
            xi: xi.clone(),
            xi_bar: xb.clone(),
            t: *t,
            observed,
            bound,
            ratio,
        })
    })?;
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(DecaySection {
        max_ratio,
        tol,
        pass: max_ratio <= 1.0 + tol,
        rows,
    })
}

pub fn lipschitz_section(graph: &ManifoldGraph, tol: f64) -> LipschitzSection {
    let (max_ratio, at_s) = graph.max_lipschitz_ratio();
    LipschitzSection {
        max_ratio,
        at_s,
        tol,
        pass: max_ratio <= 1.0 + tol,
    }
}

fn random_in_ball(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> Vec<f64> {
    if dim == 1 {
        return vec![rng.random_range(-r..=r)];
    }
    loop {
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if euclid(&p) <= 1.0 {
            return p.into_iter().map(|x| x * r).collect();
        }
    }
}

/// Random `(s, ξ, τ)` with `s` uniform over the slice range, `ξ` uniform
/// in the ball of radius `(δ/C)β̃(s)` and `τ` uniform in `[0, tau_max]`.
pub fn sample_invariance(graph: &ManifoldGraph, count: usize, tau_max: f64, seed: u64) -> Vec<(f64, Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (graph.s_grid()[0], *graph.s_grid().last().unwrap());
    (0..count)
        .map(|_| {
            let s = rng.random_range(lo..=hi);
            let xi = random_in_ball(&mut rng, graph.n_e(), graph.small_radius(s));
            let tau = rng.random_range(0.0..=tau_max);
            (s, xi, tau)
        })
        .collect()
}

/// Random `(s, ξ, ξ̄, t)` with `t − s` uniform in `[0, span]`.
pub fn sample_decay(graph: &ManifoldGraph, count: usize, span: f64, seed: u64) -> Vec<(f64, Vec<f64>, Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (graph.s_grid()[0], *graph.s_grid().last().unwrap());
    (0..count)
        .map(|_| {
            let s = rng.random_range(lo..=hi);
            let r = graph.small_radius(s);
            let xi = random_in_ball(&mut rng, graph.n_e(), r);
            let xb = random_in_ball(&mut rng, graph.n_e(), r);
            let t = s + rng.random_range(0.0..=span);
            (s, xi, xb, t)
        })
        .collect()
}

/// Sample set for `‖f − f̄‖′`: times × sum-norm radii × unit directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSampling {
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
}

impl DistanceSampling {
    /// `n_t` times in `[0, t_max]`, `n_r` radii geometrically spaced in
    /// `[r_max·10⁻³, r_max]`, and unit directions (sum-norm): the signed
    /// coordinate axes plus `n_dir` more (uniform angles in two dimensions,
    /// seeded random otherwise).
    #[allow(clippy::too_many_arguments)]
    pub fn new(n: usize, n_e: usize, t_max: f64, n_t: usize, r_max: f64, n_r: usize, n_dir: usize, seed: u64) -> Self {
        let times = admissibility::uniform_grid(t_max, n_t.max(2));
        let radii = (0..n_r.max(1))
            .map(|i| r_max * 10f64.powf(-3.0 * i as f64 / (n_r.max(2) - 1) as f64))
            .collect();
        let mut directions = Vec::new();
        for i in 0..n {
            for sign in [1.0, -1.0] {
                let mut d = vec![0.0; n];
                d[i] = sign;
                directions.push(d);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..n_dir {
            let mut d: Vec<f64> = if n == 2 {
                let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n_dir as f64;
                vec![th.cos(), th.sin()]
            } else {
                (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
            };
            let s = norm::split(&d, n_e);
            if s > 0.0 {
                d.iter_mut().for_each(|x| *x /= s);
                directions.push(d);
            }
        }
        Self {
            times,
            radii,
            directions,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len() * self.radii.len() * self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    /// Sampled sup; a lower bound of the true value.
    pub value: f64,
    pub samples: usize,
    pub argmax_t: f64,
    pub argmax_u: Vec<f64>,
}

/// `sup ‖f(t,u) − f̄(t,u)‖ / ‖u‖^{q+1}` over the sample set.
pub fn perturbation_distance(f: &Perturbation, g: &Perturbation, sampling: &DistanceSampling) -> Result<DistanceEstimate> {
    if sampling.is_empty() {
        return Err(Error::Precondition("empty sample set".into()));
    }
    if f.dim() != g.dim() || f.n_e() != g.n_e() {
        return Err(Error::Precondition("perturbations act on different spaces".into()));
    }
    if f.q() != g.q() {
        return Err(Error::Precondition(format!("class exponents differ: {} vs {}", f.q(), g.q())));
    }
    let (n_e, q) = (f.n_e(), f.q());
    let mut best = DistanceEstimate {
        value: 0.0,
        samples: sampling.len(),
        argmax_t: sampling.times[0],
        argmax_u: vec![0.0; f.dim()],
    };
    for &t in &sampling.times {
        for &r in &sampling.radii {
            for d in &sampling.directions {
                let u: Vec<f64> = d.iter().map(|x| x * r).collect();
                let nu = norm::split(&u, n_e);
                if nu == 0.0 {
                    continue;
                }
                let v = norm::split_dist(&f.eval(t, &u), &g.eval(t, &u), n_e) / nu.powf(q + 1.0);
                if v > best.value {
                    best.value = v;
                    best.argmax_t = t;
                    best.argmax_u = u;
                }
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub delta: f64,
    pub c: f64,
    pub q: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
    pub k: f64,
    pub phi_distance: f64,
    pub f_distance: f64,
    pub bound: f64,
    /// `‖φ − φ̄‖′ / ‖f − f̄‖′` (0 when both vanish).
    pub ratio: f64,
    pub pass: bool,
    pub solve_f: SolveReport,
    pub solve_f_bar: SolveReport,
}

/// Solves both manifolds at a common `δ` (from the larger class constant
/// when `cfg.delta` is automatic) and checks `‖φ−φ̄‖′ ≤ K‖f−f̄‖′`.
pub fn check_perturbation_bound(
    system: &LinearSystem,
    params: &DichotomyParams,
    f: &Perturbation,
    f_bar: &Perturbation,
    cfg: &SolverConfig,
    sampling: &DistanceSampling,
) -> Result<PerturbationReport> {
    let c = f.c().max(f_bar.c());
    let q = f.q();
    let big_c = cfg.big_c.unwrap_or(2.0 * params.d);
    let delta = match cfg.delta {
        Some(d) => d,
        None => admissibility::delta_max(c, q, big_c, params.d, cfg.delta_cap)?,
    };
    let common = SolverConfig {
        delta: Some(delta),
        big_c: Some(big_c),
        ..cfg.clone()
    };
    let f_distance = perturbation_distance(f, f_bar, sampling)?.value;
    let a = solve_manifold(system, params, f, &common)?;
    let b = solve_manifold(system, params, f_bar, &common)?;
    let phi_distance = a.graph.distance(&b.graph)?;
    let k = admissibility::perturbation_constant(q, big_c, params.d, delta);
    let bound = k * f_distance;
    let ratio = if phi_distance == 0.0 { 0.0 } else { phi_distance / f_distance };
    Ok(PerturbationReport {
        delta,
        c,
        q,
        big_c,
        k,
        phi_distance,
        f_distance,
        bound,
        ratio,
        pass: phi_distance <= bound,
        solve_f: a.report,
        solve_f_bar: b.report,
    })
}

/// Runs the invariance, decay and Lipschitz sections.
#[allow(clippy::too_many_arguments)]
pub fn verify_graph(
    graph: &ManifoldGraph,
    system: &LinearSystem,
    pert: &Perturbation,
    inv_samples: &[(f64, Vec<f64>, f64)],
    decay_pairs: &[(f64, Vec<f64>, Vec<f64>, f64)],
    h: f64,
    tol: f64,
    lipschitz_tol: f64,
    exec: Execution,
) -> Result<VerificationReport> {
    let invariance = check_invariance(graph, system, pert, inv_samples, h, tol, exec)?;
    let decay = check_decay(graph, system, pert, decay_pairs, h, tol, exec)?;
    let lipschitz = lipschitz_section(graph, lipschitz_tol);
    let pass = invariance.pass && decay.pass && lipschitz.pass;
    Ok(VerificationReport {
        invariance,
        decay,
        lipschitz,
        pass,
    })
}
