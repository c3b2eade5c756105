//! Stable-manifold graphs `φ(s, ξ)` and the nested fixed-point solver.
//!
//! For a graph `φ`, trajectories `x_φ(t, ξ)` on the stable block solve
//!
//! ```text
//! x(t) = U(t,s) ξ + ∫_s^t U(t,r) f_E(r, x(r), φ(r, x(r))) dr
//! ```
//!
//! and the outer operator is
//!
//! ```text
//! (Φφ)(s, ξ) = −∫_s^∞ V(r,s)⁻¹ f_F(r, x_φ(r), φ(r, x_φ(r))) dr.
//! ```
//!
//! Graphs live on slices `s₀ < … < s_k`; on each slice a tensor grid of
//! `(2m+1)^{n_E}` nodes covers the ball of radius `ρ(s) = δβ(s)`.

use serde::{Deserialize, Serialize};

use crate::admissibility::{self, BetaFunction, DeltaBounds};
use crate::dichotomy::{ClosedForm, DichotomyParams, LinearSystem, MatrixForm, SystemForm};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::norm::euclid;
use crate::perturbation::Perturbation;
use crate::quad::PairedMesh;

/// Solver settings. `None` for `delta` / `t_cut` / `big_c` selects the
/// automatic choice (`δ_max`, smallest certified cut-off, `2D`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub delta: Option<f64>,
    #[serde(rename = "C")]
    pub big_c: Option<f64>,
    pub s_grid: Vec<f64>,
    /// Nodes per axis (odd).
    pub nodes: usize,
    /// Absolute end time of the truncated integrals.
    pub t_cut: Option<f64>,
    /// Bound on the neglected tail of `Φ`, relative to `‖ξ‖`.
    pub tail_tol: f64,
    pub t_cut_max: f64,
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Base half-step of the time meshes.
    pub h: f64,
    /// Cap on graded half-steps (`None`: uncapped).
    pub h_max: Option<f64>,
    pub picard_tol: f64,
    pub max_picard: usize,
    pub lipschitz_tol: f64,
    pub decay_slack: f64,
    pub contraction_slack: f64,
    pub delta_cap: f64,
    pub check_admissibility: bool,
    pub exec: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta: None,
            big_c: None,
            s_grid: (0..21).map(|i| 0.5 * i as f64).collect(),
            nodes: 41,
            t_cut: None,
            tail_tol: 1e-12,
            t_cut_max: 1e15,
            outer_tol: 1e-10,
            max_outer: 20,
            h: 1e-2,
            h_max: None,
            picard_tol: 1e-10,
            max_picard: 200,
            lipschitz_tol: 1e-3,
            decay_slack: 1.05,
            contraction_slack: 1.1,
            delta_cap: admissibility::DEFAULT_DELTA_CAP,
            check_admissibility: true,
            exec: Execution::Parallel,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if self.s_grid.is_empty() {
            return Err(Error::param("s_grid", "must be nonempty"));
        }
        if self.s_grid[0] < 0.0 || self.s_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("s_grid", "must be strictly increasing and nonnegative"));
        }
        if self.nodes < 3 || self.nodes.is_multiple_of(2) {
            return Err(Error::param("nodes", format!("must be odd and >= 3, got {}", self.nodes)));
        }
        if !(self.h > 0.0) {
            return Err(Error::NonPositiveStep(self.h));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return Err(Error::param("delta", format!("must be positive, got {d}")));
            }
        }
        for (name, v) in [
            ("outer_tol", self.outer_tol),
            ("tail_tol", self.tail_tol),
            ("picard_tol", self.picard_tol),
        ] {
            if !(v > 0.0) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if self.max_outer == 0 {
            return Err(Error::param("max_outer", "must be positive"));
        }
        Ok(())
    }
}

/// Discretised graph `φ(s, ξ)`.
#[derive(Debug, Clone)]
pub struct ManifoldGraph {
    s_grid: Vec<f64>,
    m: usize,
    n_e: usize,
    n_f: usize,
    delta: f64,
    big_c: f64,
    rho: Vec<f64>,
    /// Per slice: node-major, `n_f` values per node.
    values: Vec<Vec<f64>>,
    beta: BetaFunction,
    params: DichotomyParams,
}

impl ManifoldGraph {
    /// The zero graph on the given slices.
    #[allow(clippy::too_many_arguments)]
    pub fn zero(
        s_grid: &[f64],
        nodes: usize,
        n_e: usize,
        n_f: usize,
        delta: f64,
        big_c: f64,
        beta: BetaFunction,
        params: DichotomyParams,
    ) -> Result<Self> {
        if nodes < 3 || nodes.is_multiple_of(2) {
            return Err(Error::param("nodes", format!("must be odd and >= 3, got {nodes}")));
        }
        if n_e == 0 || n_f == 0 {
            return Err(Error::param("n_E", "both blocks must be nonempty"));
        }
        let m = nodes / 2;
        let count = nodes.pow(n_e as u32);
        let rho = s_grid.iter().map(|&s| delta * beta.beta(s)).collect();
        Ok(Self {
            s_grid: s_grid.to_vec(),
            m,
            n_e,
            n_f,
            delta,
            big_c,
            rho,
            values: vec![vec![0.0; count * n_f]; s_grid.len()],
            beta,
            params,
        })
    }

    pub fn s_grid(&self) -> &[f64] {
        &self.s_grid
    }

    pub fn nodes_per_axis(&self) -> usize {
        2 * self.m + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().pow(self.n_e as u32)
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    pub fn n_f(&self) -> usize {
        self.n_f
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn big_c(&self) -> f64 {
        self.big_c
    }

    pub fn params(&self) -> &DichotomyParams {
        &self.params
    }

    pub fn beta(&self) -> &BetaFunction {
        &self.beta
    }

    /// `ρ(s) = δβ(s)` at slice `j`.
    pub fn slice_radius(&self, j: usize) -> f64 {
        self.rho[j]
    }

    /// `δβ(t)`.
    pub fn radius(&self, t: f64) -> f64 {
        self.delta * self.beta.beta(t)
    }

    /// `(δ/C) β̃(t)`, the domain of the invariance statement.
    pub fn small_radius(&self, t: f64) -> f64 {
        self.delta / self.big_c * self.beta.beta_tilde(t)
    }

    /// Node spacing in `ξ` at slice `j`.
    pub fn spacing(&self, j: usize) -> f64 {
        self.rho[j] / self.m as f64
    }

    /// Normalised node position in `[−1, 1]^{n_E}`.
    pub fn node_eta(&self, idx: usize) -> Vec<f64> {
        let base = self.nodes_per_axis();
        let mut rest = idx;
        (0..self.n_e)
            .map(|_| {
                let k = rest % base;
                rest /= base;
                (k as f64 - self.m as f64) / self.m as f64
            })
            .collect()
    }

    pub fn node_in_ball(&self, idx: usize) -> bool {
        euclid(&self.node_eta(idx)) <= 1.0 + 1e-12
    }

    /// Physical node `ξ` at slice `j`; nodes outside the ball are projected
    /// radially onto its boundary.
    pub fn node_xi(&self, j: usize, idx: usize) -> Vec<f64> {
        let eta = self.node_eta(idx);
        let r = euclid(&eta);
        let scale = if r > 1.0 { self.rho[j] / r } else { self.rho[j] };
        eta.iter().map(|e| e * scale).collect()
    }

    pub fn node_value(&self, j: usize, idx: usize) -> &[f64] {
        &self.values[j][idx * self.n_f..(idx + 1) * self.n_f]
    }

    fn slice_eval_into(&self, j: usize, x: &[f64], clamp: f64, out: &mut [f64]) {
        out.fill(0.0);
        let r = euclid(x);
        let scale = if r > clamp && r > 0.0 { clamp / r } else { 1.0 };
        let base = self.nodes_per_axis();
        let mf = self.m as f64;
        let mut cell = [0usize; 8];
        let mut frac = [0.0f64; 8];
        let mut cell_v = Vec::new();
        let mut frac_v = Vec::new();
        let (cells, fracs): (&mut [usize], &mut [f64]) = if self.n_e <= 8 {
            (&mut cell[..self.n_e], &mut frac[..self.n_e])
        } else {
            cell_v.resize(self.n_e, 0);
            frac_v.resize(self.n_e, 0.0);
            (&mut cell_v[..], &mut frac_v[..])
        };
        for a in 0..self.n_e {
            let eta = x[a] * scale / self.rho[j];
            let pos = ((eta + 1.0) * mf).clamp(0.0, 2.0 * mf);
            let k = (pos.floor() as usize).min(2 * self.m - 1);
            cells[a] = k;
            fracs[a] = pos - k as f64;
        }
        let vals = &self.values[j];
        for corner in 0..(1usize << self.n_e) {
            let mut w = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for a in 0..self.n_e {
                let hi = (corner >> a) & 1 == 1;
                w *= if hi { fracs[a] } else { 1.0 - fracs[a] };
                idx += (cells[a] + hi as usize) * stride;
                stride *= base;
            }
            if w != 0.0 {
                let v = &vals[idx * self.n_f..(idx + 1) * self.n_f];
                for (o, vi) in out.iter_mut().zip(v) {
                    *o += w * vi;
                }
            }
        }
    }

    /// `φ(t, ξ)`: multilinear in `ξ` on each slice with the radial clamp at
    /// the slice radius, linear in `t` between slices. Beyond the last
    /// slice its values are reused with clamp radius `min(δβ(t), ρ_last)`.
    pub fn eval_phi_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let k = self.s_grid.len();
        let last = k - 1;
        if t >= self.s_grid[last] {
            let clamp = self.radius(t).min(self.rho[last]);
            self.slice_eval_into(last, x, clamp, out);
            return;
        }
        let j = self.s_grid.partition_point(|&s| s <= t);
        if j == 0 {
            self.slice_eval_into(0, x, self.rho[0], out);
            return;
        }
        let (j0, j1) = (j - 1, j);
        let w = (t - self.s_grid[j0]) / (self.s_grid[j1] - self.s_grid[j0]);
        self.slice_eval_into(j0, x, self.rho[j0], out);
        if w > 0.0 {
            let mut hi = vec![0.0; self.n_f];
            self.slice_eval_into(j1, x, self.rho[j1], &mut hi);
            for (o, h) in out.iter_mut().zip(hi) {
                *o = (1.0 - w) * *o + w * h;
            }
        }
    }

    pub fn eval_phi(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_f];
        self.eval_phi_into(t, x, &mut out);
        out
    }

    fn same_layout(&self, other: &Self) -> Result<()> {
        let same = self.s_grid == other.s_grid
            && self.m == other.m
            && self.n_e == other.n_e
            && self.n_f == other.n_f
            && self.rho == other.rho;
        if same {
            Ok(())
        } else {
            Err(Error::Precondition("graphs have different node layouts".into()))
        }
    }

    /// `sup ‖φ(s,ξ) − ψ(s,ξ)‖ / ‖ξ‖` over in-ball nodes with `ξ ≠ 0`.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.same_layout(other)?;
        let mut best = 0.0f64;
        for j in 0..self.s_grid.len() {
            for idx in 0..self.node_count() {
                if !self.node_in_ball(idx) {
                    continue;
                }
                let r = euclid(&self.node_xi(j, idx));
                if r == 0.0 {
                    continue;
                }
                let d: f64 = self
                    .node_value(j, idx)
                    .iter()
                    .zip(other.node_value(j, idx))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                best = best.max(d / r);
            }
        }
        Ok(best)
    }

    /// Largest `‖φ(s,ξ) − φ(s,ξ')‖ / ‖ξ − ξ'‖` over adjacent in-ball nodes,
    /// with the slice time where it occurs.
    pub fn max_lipschitz_ratio(&self) -> (f64, f64) {
        let base = self.nodes_per_axis();
        let mut worst = (0.0f64, self.s_grid[0]);
        for j in 0..self.s_grid.len() {
            for idx in 0..self.node_count() {
                if !self.node_in_ball(idx) {
                    continue;
                }
                let mut stride = 1;
                for _ in 0..self.n_e {
                    let k = (idx / stride) % base;
                    if k + 1 < base {
                        let nb = idx + stride;
                        if self.node_in_ball(nb) {
                            let dx = crate::norm::dist(&self.node_xi(j, idx), &self.node_xi(j, nb));
                            let dv = crate::norm::dist(self.node_value(j, idx), self.node_value(j, nb));
                            let r = if dv == 0.0 { 0.0 } else { dv / dx };
                            if r > worst.0 {
                                worst = (r, self.s_grid[j]);
                            }
                        }
                    }
                    stride *= base;
                }
            }
        }
        worst
    }

    /// `(s, ξ, φ(s,ξ))` for every in-ball node, slice by slice.
    pub fn rows(&self) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        for (j, &s) in self.s_grid.iter().enumerate() {
            for idx in 0..self.node_count() {
                if self.node_in_ball(idx) {
                    out.push((s, self.node_xi(j, idx), self.node_value(j, idx).to_vec()));
                }
            }
        }
        out
    }

    fn with_values(&self, values: Vec<Vec<f64>>) -> Self {
        Self {
            values,
            ..self.clone()
        }
    }
}

/// Sampled stable-block trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    /// `max ‖x(t)‖ / (C (μ(t)/μ(s))^a ν(s)^ε ‖ξ‖)`.
    pub decay_ratio: f64,
}

/// Per-slice data shared by all nodes of the slice.
struct Slice {
    s: f64,
    mesh: PairedMesh,
    ln_u: Vec<f64>,
    ln_v: Vec<f64>,
    ln_w: Vec<f64>,
}

impl Slice {
    fn new(system: &LinearSystem, params: &DichotomyParams, s: f64, t_end: f64, h: f64, h_max: f64) -> Result<Self> {
        let graded = !params.mu.is_exponential();
        let mesh = PairedMesh::new(s, t_end.max(s + 2.0 * h), h, h_max, graded)?;
        let (ln_u, ln_v) = match system.form() {
            SystemForm::ClosedForm(cf) => (
                mesh.t.iter().map(|&t| cf.ln_u(t, s)).collect(),
                mesh.t.iter().map(|&t| cf.ln_v(t, s)).collect(),
            ),
            SystemForm::Matrix(_) => (Vec::new(), Vec::new()),
        };
        let ln_w = mesh.t.iter().map(|&t| params.ln_stable_weight(t, s)).collect();
        Ok(Self {
            s,
            mesh,
            ln_u,
            ln_v,
            ln_w,
        })
    }
}

struct Ctx<'a> {
    system: &'a LinearSystem,
    pert: &'a Perturbation,
    graph: &'a ManifoldGraph,
    picard_tol: f64,
    max_picard: usize,
    decay_slack: f64,
}

impl Ctx<'_> {
    fn n(&self) -> usize {
        self.system.dim()
    }

    /// `f(t, (x, φ(t,x)))`.
    fn forcing(&self, t: f64, x: &[f64], full: &mut [f64], out: &mut [f64]) {
        let n_e = self.graph.n_e;
        full[..n_e].copy_from_slice(x);
        self.graph.eval_phi_into(t, x, &mut full[n_e..]);
        self.pert.eval_into(t, full, out);
    }

    fn trajectory(&self, slice: &Slice, xi: &[f64]) -> Result<Trajectory> {
        let x = match self.system.form() {
            SystemForm::ClosedForm(_) => self.closed_inner(slice, xi)?,
            SystemForm::Matrix(m) => self.matrix_inner(m, slice, xi)?,
        };
        let r0 = euclid(xi);
        let mut decay = 0.0f64;
        if r0 > 0.0 {
            for (i, xi_t) in x.iter().enumerate() {
                let bound = self.graph.big_c * slice.ln_w[i].exp() * r0;
                let ratio = euclid(xi_t) / bound;
                if !ratio.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite inner trajectory at t = {}",
                        slice.mesh.t[i]
                    )));
                }
                if ratio > self.decay_slack {
                    return Err(Error::DecayViolation {
                        s: slice.s,
                        t: slice.mesh.t[i],
                        ratio,
                    });
                }
                decay = decay.max(ratio);
            }
        }
        Ok(Trajectory {
            t: slice.mesh.t.clone(),
            x,
            decay_ratio: decay,
        })
    }

    /// Variation of constants with the known `U`, Picard-iterated on the
    /// mesh (cumulative Simpson) until the weighted change is below the
    /// tolerance.
    fn closed_inner(&self, slice: &Slice, xi: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n_e = self.graph.n_e;
        let len = slice.mesh.len();
        let mut xs: Vec<Vec<f64>> = slice
            .ln_u
            .iter()
            .map(|lu| {
                let u = lu.exp();
                xi.iter().map(|v| u * v).collect()
            })
            .collect();
        let r0 = euclid(xi);
        if self.pert.e_free() || r0 == 0.0 {
            return Ok(xs);
        }
        let mut full = vec![0.0; self.n()];
        let mut fv = vec![0.0; self.n()];
        let mut comps = vec![vec![0.0; len]; n_e];
        let mut last = f64::INFINITY;
        for _ in 0..self.max_picard {
            for i in 0..len {
                self.forcing(slice.mesh.t[i], &xs[i], &mut full, &mut fv);
                let inv = (-slice.ln_u[i]).exp();
                for a in 0..n_e {
                    comps[a][i] = inv * fv[a];
                }
            }
            let cums: Vec<Vec<f64>> = comps.iter().map(|c| slice.mesh.cumulative(c)).collect();
            let mut change = 0.0f64;
            for i in 0..len {
                let u = slice.ln_u[i].exp();
                let new: Vec<f64> = (0..n_e).map(|a| u * (xi[a] + cums[a][i])).collect();
                let d = crate::norm::dist(&new, &xs[i]) / (slice.ln_w[i].exp() * r0);
                change = change.max(d);
                xs[i] = new;
            }
            if !change.is_finite() {
                return Err(Error::Numerical(format!("inner iteration diverged from s = {}", slice.s)));
            }
            last = change;
            if change <= self.picard_tol {
                return Ok(xs);
            }
        }
        Err(Error::PicardStalled {
            iters: self.max_picard,
            last,
        })
    }

    /// Classic RK4 on `x' = A_EE(t) x + f_E(t, x, φ(t,x))` over the mesh.
    fn matrix_inner(&self, m: &MatrixForm, slice: &Slice, xi: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n_e = self.graph.n_e;
        let mut xs = Vec::with_capacity(slice.mesh.len());
        xs.push(xi.to_vec());
        if euclid(xi) == 0.0 {
            xs.resize(slice.mesh.len(), xi.to_vec());
            return Ok(xs);
        }
        let mut full = vec![0.0; self.n()];
        let mut fv = vec![0.0; self.n()];
        let mut rhs = |t: f64, x: &[f64]| -> Vec<f64> {
            self.forcing(t, x, &mut full, &mut fv);
            (0..n_e)
                .map(|i| (0..n_e).map(|j| m.entry(i, j, t) * x[j]).sum::<f64>() + fv[i])
                .collect()
        };
        for w in slice.mesh.t.windows(2) {
            let (t0, dt) = (w[0], w[1] - w[0]);
            let x = xs.last().unwrap();
            let k1 = rhs(t0, x);
            let y: Vec<f64> = (0..n_e).map(|a| x[a] + 0.5 * dt * k1[a]).collect();
            let k2 = rhs(t0 + 0.5 * dt, &y);
            let y: Vec<f64> = (0..n_e).map(|a| x[a] + 0.5 * dt * k2[a]).collect();
            let k3 = rhs(t0 + 0.5 * dt, &y);
            let y: Vec<f64> = (0..n_e).map(|a| x[a] + dt * k3[a]).collect();
            let k4 = rhs(t0 + dt, &y);
            let next: Vec<f64> = (0..n_e)
                .map(|a| x[a] + dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]))
                .collect();
            xs.push(next);
        }
        Ok(xs)
    }

    /// Truncated `(Φφ)(s, ξ)`.
    fn phi_value(&self, slice: &Slice, xi: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n_e = self.graph.n_e;
        let n_f = self.graph.n_f;
        if euclid(xi) == 0.0 || self.pert.is_zero() {
            return Ok((vec![0.0; n_f], 0.0));
        }
        let traj = self.trajectory(slice, xi)?;
        let len = slice.mesh.len();
        let mut full = vec![0.0; self.n()];
        let mut fv = vec![0.0; self.n()];
        let mut g = vec![vec![0.0; len]; n_f];
        for (i, (&t, x)) in slice.mesh.t.iter().zip(&traj.x).enumerate() {
            self.forcing(t, x, &mut full, &mut fv);
            for b in 0..n_f {
                g[b][i] = fv[n_e + b];
            }
        }
        let value = match self.system.form() {
            SystemForm::ClosedForm(_) => {
                for (i, lv) in slice.ln_v.iter().enumerate() {
                    let inv = (-lv).exp();
                    for gb in g.iter_mut() {
                        gb[i] *= inv;
                    }
                }
                g.iter().map(|gb| -slice.mesh.simpson(gb)).collect()
            }
            SystemForm::Matrix(m) => backward_unstable(m, n_e, &slice.mesh, &g),
        };
        if value.iter().any(|v: &f64| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite graph value at s = {}", slice.s)));
        }
        Ok((value, traj.decay_ratio))
    }
}

/// Solves `w' = A_FF(t) w + g(t)`, `w(T) = 0` backward over mesh pairs
/// (RK4 with the pair width as step, `g` sampled on the mesh); returns
/// `w(s) = −∫_s^T T_F(s,r) g(r) dr`.
fn backward_unstable(m: &MatrixForm, n_e: usize, mesh: &PairedMesh, g: &[Vec<f64>]) -> Vec<f64> {
    let n_f = g.len();
    let f = |t: f64, w: &[f64], gi: usize| -> Vec<f64> {
        (0..n_f)
            .map(|i| (0..n_f).map(|j| m.entry(n_e + i, n_e + j, t) * w[j]).sum::<f64>() + g[i][gi])
            .collect()
    };
    let mut w = vec![0.0; n_f];
    let mut j = mesh.len() - 1;
    while j >= 2 {
        let (t2, t1, t0) = (mesh.t[j], mesh.t[j - 1], mesh.t[j - 2]);
        let dt = t0 - t2;
        let k1 = f(t2, &w, j);
        let y: Vec<f64> = (0..n_f).map(|a| w[a] + 0.5 * dt * k1[a]).collect();
        let k2 = f(t1, &y, j - 1);
        let y: Vec<f64> = (0..n_f).map(|a| w[a] + 0.5 * dt * k2[a]).collect();
        let k3 = f(t1, &y, j - 1);
        let y: Vec<f64> = (0..n_f).map(|a| w[a] + dt * k3[a]).collect();
        let k4 = f(t0, &y, j - 2);
        for a in 0..n_f {
            w[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        j -= 2;
    }
    w
}

fn check_compatible(system: &LinearSystem, pert: &Perturbation) -> Result<()> {
    if system.dim() != pert.dim() || system.n_e() != pert.n_e() {
        return Err(Error::Precondition(format!(
            "perturbation acts on R^{} with n_E = {}, system on R^{} with n_E = {}",
            pert.dim(),
            pert.n_e(),
            system.dim(),
            system.n_e()
        )));
    }
    Ok(())
}

fn check_block_diagonal(system: &LinearSystem, t_end: f64) -> Result<()> {
    if let SystemForm::Matrix(m) = system.form() {
        let (n, n_e) = (system.dim(), system.n_e());
        for k in 0..=16 {
            let t = t_end.min(1e6) * k as f64 / 16.0;
            for i in 0..n {
                for j in 0..n {
                    if (i < n_e) != (j < n_e) && m.entry(i, j, t) != 0.0 {
                        return Err(Error::Precondition(format!(
                            "A({t})[{i}][{j}] couples the stable and unstable blocks; coordinate projections need a block-diagonal A"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

fn default_h_max(cfg: &SolverConfig) -> f64 {
    cfg.h_max.unwrap_or(f64::INFINITY)
}

/// `x_φ(t, ξ)` on `[s, t_max]` with half-step `h`.
#[allow(clippy::too_many_arguments)]
pub fn inner_trajectory(
    graph: &ManifoldGraph,
    system: &LinearSystem,
    pert: &Perturbation,
    s: f64,
    xi: &[f64],
    t_max: f64,
    h: f64,
) -> Result<Trajectory> {
    check_compatible(system, pert)?;
    if xi.len() != graph.n_e {
        return Err(Error::Precondition("ξ has the wrong dimension".into()));
    }
    let rad = graph.radius(s);
    if euclid(xi) > rad * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("‖ξ‖ = {} exceeds δβ(s) = {rad}", euclid(xi))));
    }
    let cfg = SolverConfig::default();
    let slice = Slice::new(system, &graph.params, s, t_max, h, f64::INFINITY)?;
    let ctx = Ctx {
        system,
        pert,
        graph,
        picard_tol: cfg.picard_tol,
        max_picard: cfg.max_picard,
        decay_slack: cfg.decay_slack,
    };
    ctx.trajectory(&slice, xi)
}

/// Relative tail bound for truncating `Φ` at `t_cut`:
/// `3^{q+1} c C^{q+1} D δ^q (μ(T)/μ(s))^{a−b} I(T)/I(s)`.
#[allow(clippy::too_many_arguments)]
pub fn truncation_bound(
    params: &DichotomyParams,
    c: f64,
    q: f64,
    big_c: f64,
    delta: f64,
    s: f64,
    t_cut: f64,
) -> Result<f64> {
    let k = 3f64.powf(q + 1.0) * c * big_c.powf(q + 1.0) * params.d * delta.powf(q);
    if k == 0.0 {
        return Ok(0.0);
    }
    let i_s = admissibility::tail_integral(params, q, s)?;
    let i_t = admissibility::tail_integral(params, q, t_cut)?;
    let ln = k.ln()
        + (params.a - params.b) * (params.mu.ln_eval(t_cut) - params.mu.ln_eval(s))
        + i_t.ln_value
        - i_s.ln_value;
    Ok(ln.exp())
}

fn auto_t_cut(
    params: &DichotomyParams,
    c: f64,
    q: f64,
    big_c: f64,
    delta: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let per_slice = cfg.exec.try_map(cfg.s_grid.len(), |j| -> Result<f64> {
        let s = cfg.s_grid[j];
        let bound = |t: f64| truncation_bound(params, c, q, big_c, delta, s, t);
        let mut span = 1.0;
        loop {
            if bound(s + span)? <= cfg.tail_tol {
                break;
            }
            span *= 2.0;
            if s + span > cfg.t_cut_max {
                return Err(Error::TailBound {
                    bound: bound(cfg.t_cut_max)?,
                    tol: cfg.tail_tol,
                    t_cut: cfg.t_cut_max,
                });
            }
        }
        // bisection in ln(1 + span)
        let (mut lo, mut hi) = (0.0f64, span.ln_1p());
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if bound(s + mid.exp_m1())? <= cfg.tail_tol {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-6 {
                break;
            }
        }
        Ok(s + hi.exp_m1())
    })?;
    let s_last = *cfg.s_grid.last().unwrap();
    Ok(per_slice.into_iter().fold(s_last + 4.0 * cfg.h, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub distance: f64,
    pub ratio: Option<f64>,
    pub max_lipschitz: f64,
    pub max_decay_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub delta: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
    pub t_cut: f64,
    /// Worst truncation bound over slices at `t_cut`.
    pub tail_bound: f64,
    pub contraction_bound: f64,
    pub delta_bounds: DeltaBounds,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterRecord>,
    pub max_ratio: f64,
    pub max_lipschitz: f64,
    pub max_decay_ratio: f64,
    pub noise_floor: f64,
    pub beta_closed_form: Option<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub graph: ManifoldGraph,
    pub report: SolveReport,
}

/// One application of `Φ` to every node of `graph`.
pub fn apply_phi_operator(
    graph: &ManifoldGraph,
    system: &LinearSystem,
    pert: &Perturbation,
    t_cut: f64,
    cfg: &SolverConfig,
) -> Result<(ManifoldGraph, f64)> {
    check_compatible(system, pert)?;
    let slices = cfg.exec.try_map(graph.s_grid.len(), |j| {
        Slice::new(system, &graph.params, graph.s_grid[j], t_cut, cfg.h, default_h_max(cfg))
    })?;
    apply_on_slices(graph, system, pert, &slices, cfg)
}

fn apply_on_slices(
    graph: &ManifoldGraph,
    system: &LinearSystem,
    pert: &Perturbation,
    slices: &[Slice],
    cfg: &SolverConfig,
) -> Result<(ManifoldGraph, f64)> {
    let ctx = Ctx {
        system,
        pert,
        graph,
        picard_tol: cfg.picard_tol,
        max_picard: cfg.max_picard,
        decay_slack: cfg.decay_slack,
    };
    let nodes = graph.node_count();
    let results = cfg.exec.try_map(slices.len() * nodes, |k| {
        let (j, idx) = (k / nodes, k % nodes);
        ctx.phi_value(&slices[j], &graph.node_xi(j, idx))
    })?;
    let mut decay = 0.0f64;
    let mut values = vec![Vec::with_capacity(nodes * graph.n_f); slices.len()];
    for (k, (v, d)) in results.into_iter().enumerate() {
        decay = decay.max(d);
        values[k / nodes].extend(v);
    }
    Ok((graph.with_values(values), decay))
}

/// Iterates `φ_{k+1} = Φ φ_k` from `φ₀ = 0` until the node metric falls
/// below `outer_tol`.
pub fn solve_manifold(
    system: &LinearSystem,
    params: &DichotomyParams,
    pert: &Perturbation,
    cfg: &SolverConfig,
) -> Result<Solution> {
    cfg.validate()?;
    check_compatible(system, pert)?;
    let (c, q) = (pert.c(), pert.q());
    let big_c = cfg.big_c.unwrap_or(2.0 * params.d);
    let bounds = admissibility::delta_bounds(c, q, big_c, params.d, cfg.delta_cap)?;
    let delta = match cfg.delta {
        Some(d) if d > bounds.delta_max => {
            return Err(Error::Precondition(format!(
                "delta = {d} exceeds delta_max = {} ({} binding)",
                bounds.delta_max, bounds.binding
            )))
        }
        Some(d) => d,
        None => bounds.delta_max,
    };
    let mut notes = Vec::new();
    if cfg.check_admissibility {
        let s_last = *cfg.s_grid.last().unwrap();
        let grid = admissibility::uniform_grid(s_last.max(1.0), 101);
        let rep = admissibility::assess(params, c, q, Some(big_c), &grid, cfg.delta_cap, cfg.exec)?;
        if !rep.pass {
            return Err(Error::NotAdmissible(rep.notes.join("; ")));
        }
    }
    let t_cut = match cfg.t_cut {
        Some(t) => t,
        None => auto_t_cut(params, c, q, big_c, delta, cfg)?,
    };
    let s_last = *cfg.s_grid.last().unwrap();
    if t_cut <= s_last {
        return Err(Error::param("t_cut", format!("must exceed the last slice {s_last}, got {t_cut}")));
    }
    let tails = cfg.exec.try_map(cfg.s_grid.len(), |j| {
        truncation_bound(params, c, q, big_c, delta, cfg.s_grid[j], t_cut)
    })?;
    let tail_bound = tails.into_iter().fold(0.0, f64::max);
    if tail_bound > cfg.tail_tol {
        return Err(Error::TailBound {
            bound: tail_bound,
            tol: cfg.tail_tol,
            t_cut,
        });
    }
    check_block_diagonal(system, t_cut)?;

    let beta = BetaFunction::build(params, q, t_cut, cfg.exec)?;
    let closed = beta.closed_form().map(str::to_string);
    if closed.is_none() {
        notes.push("beta tabulated (no closed form); log-linear extrapolation beyond the table".into());
    }
    let mut graph = ManifoldGraph::zero(
        &cfg.s_grid,
        cfg.nodes,
        system.n_e(),
        system.n_f(),
        delta,
        big_c,
        beta,
        params.clone(),
    )?;
    let slices = cfg.exec.try_map(cfg.s_grid.len(), |j| {
        Slice::new(system, params, cfg.s_grid[j], t_cut, cfg.h, default_h_max(cfg))
    })?;

    let contraction = admissibility::contraction_factor(c, q, big_c, params.d, delta);
    let noise_floor = (1e-3 * cfg.outer_tol).max(1e-14);
    let mut history: Vec<IterRecord> = Vec::new();
    let mut converged = false;
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    let mut max_lip = 0.0f64;
    let mut max_decay = 0.0f64;
    for iter in 1..=cfg.max_outer {
        let (next, decay) = apply_on_slices(&graph, system, pert, &slices, cfg)?;
        let (lip, lip_s) = next.max_lipschitz_ratio();
        if lip > 1.0 + cfg.lipschitz_tol {
            return Err(Error::LipschitzViolation { iter, ratio: lip, s: lip_s });
        }
        let d = next.distance(&graph)?;
        let ratio = history
            .last()
            .filter(|prev| prev.distance > noise_floor)
            .map(|prev| d / prev.distance);
        if let Some(r) = ratio {
            max_ratio = max_ratio.max(r);
            if r > contraction * cfg.contraction_slack {
                violations += 1;
                notes.push(format!("iteration {iter}: ratio {r} above bound {contraction}"));
                if violations >= 2 {
                    return Err(Error::NonContraction {
                        iter,
                        ratio: r,
                        bound: contraction,
                    });
                }
            } else {
                violations = 0;
            }
        }
        max_lip = max_lip.max(lip);
        max_decay = max_decay.max(decay);
        history.push(IterRecord {
            iter,
            distance: d,
            ratio,
            max_lipschitz: lip,
            max_decay_ratio: decay,
        });
        graph = next;
        if d <= cfg.outer_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::MaxIterations {
            iters: cfg.max_outer,
            last: history.last().map_or(f64::NAN, |h| h.distance),
        });
    }
    Ok(Solution {
        graph,
        report: SolveReport {
            delta,
            big_c,
            t_cut,
            tail_bound,
            contraction_bound: contraction,
            delta_bounds: bounds,
            iterations: history.len(),
            converged,
            history,
            max_ratio,
            max_lipschitz: max_lip,
            max_decay_ratio: max_decay,
            noise_floor,
            beta_closed_form: closed,
            notes,
        },
    })
}

/// State `(t, x, y)` of the perturbed flow in split coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

const BLOW_UP: f64 = 1e8;

/// Integrates `v' = A(t)v + f(t,v)` from `(s, v_s)` over `[s, s+τ]` with
/// steps of at most `h`. Closed-form systems use the integrating factor
/// `T(t, tₙ)` on each step (exact linear part), matrix systems classic
/// RK4.
pub fn nonlinear_flow(
    system: &LinearSystem,
    pert: &Perturbation,
    s: f64,
    v_s: &[f64],
    tau: f64,
    h: f64,
) -> Result<FlowPoint> {
    check_compatible(system, pert)?;
    if !(tau >= 0.0) {
        return Err(Error::param("tau", format!("must be nonnegative, got {tau}")));
    }
    if !(h > 0.0) {
        return Err(Error::NonPositiveStep(h));
    }
    let n = system.dim();
    let n_e = system.n_e();
    if v_s.len() != n {
        return Err(Error::Precondition("state has the wrong dimension".into()));
    }
    let steps = if tau == 0.0 { 0 } else { (tau / h).ceil() as usize };
    let dt = if steps == 0 { 0.0 } else { tau / steps as f64 };
    let mut v = v_s.to_vec();
    let mut fbuf = vec![0.0; n];
    for k in 0..steps {
        let t0 = s + k as f64 * dt;
        let t1 = s + (k + 1) as f64 * dt;
        let tm = 0.5 * (t0 + t1);
        v = match system.form() {
            SystemForm::ClosedForm(cf) => lawson_step(cf, pert, n_e, t0, tm, t1, &v, &mut fbuf),
            SystemForm::Matrix(m) => rk4_step(m, pert, t0, t1 - t0, &v, &mut fbuf),
        };
        let size = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if !(size <= BLOW_UP) {
            return Err(Error::BlowUp { time: t1 });
        }
    }
    Ok(FlowPoint {
        t: s + tau,
        x: v[..n_e].to_vec(),
        y: v[n_e..].to_vec(),
    })
}

#[allow(clippy::too_many_arguments)]
fn lawson_step(
    cf: &ClosedForm,
    pert: &Perturbation,
    n_e: usize,
    t0: f64,
    tm: f64,
    t1: f64,
    v: &[f64],
    fbuf: &mut [f64],
) -> Vec<f64> {
    let n = v.len();
    let scale = |t: f64| (cf.ln_u(t, t0), cf.ln_v(t, t0));
    let mut rhs = |t: f64, w: &[f64], (lu, lv): (f64, f64)| -> Vec<f64> {
        let (u, vv) = (lu.exp(), lv.exp());
        let z: Vec<f64> = (0..n).map(|i| w[i] * if i < n_e { u } else { vv }).collect();
        pert.eval_into(t, &z, fbuf);
        (0..n).map(|i| fbuf[i] / if i < n_e { u } else { vv }).collect()
    };
    let dt = t1 - t0;
    let (sm, s1) = (scale(tm), scale(t1));
    let k1 = rhs(t0, v, (0.0, 0.0));
    let y: Vec<f64> = (0..n).map(|i| v[i] + 0.5 * dt * k1[i]).collect();
    let k2 = rhs(tm, &y, sm);
    let y: Vec<f64> = (0..n).map(|i| v[i] + 0.5 * dt * k2[i]).collect();
    let k3 = rhs(tm, &y, sm);
    let y: Vec<f64> = (0..n).map(|i| v[i] + dt * k3[i]).collect();
    let k4 = rhs(t1, &y, s1);
    let (u1, v1) = (s1.0.exp(), s1.1.exp());
    (0..n)
        .map(|i| {
            let w = v[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            w * if i < n_e { u1 } else { v1 }
        })
        .collect()
}

fn rk4_step(m: &MatrixForm, pert: &Perturbation, t0: f64, dt: f64, v: &[f64], fbuf: &mut [f64]) -> Vec<f64> {
    let n = v.len();
    let mut rhs = |t: f64, x: &[f64]| -> Vec<f64> {
        pert.eval_into(t, x, fbuf);
        (0..n)
            .map(|i| (0..n).map(|j| m.entry(i, j, t) * x[j]).sum::<f64>() + fbuf[i])
            .collect()
    };
    let k1 = rhs(t0, v);
    let y: Vec<f64> = (0..n).map(|i| v[i] + 0.5 * dt * k1[i]).collect();
    let k2 = rhs(t0 + 0.5 * dt, &y);
    let y: Vec<f64> = (0..n).map(|i| v[i] + 0.5 * dt * k2[i]).collect();
    let k3 = rhs(t0 + 0.5 * dt, &y);
    let y: Vec<f64> = (0..n).map(|i| v[i] + dt * k3[i]).collect();
    let k4 = rhs(t0 + dt, &y);
    (0..n)
        .map(|i| v[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}
