//! Linear nonautonomous systems, their evolution operators `T(t,s)`, and
//! numerical certification of the nonuniform `(μ,ν)`-dichotomy bounds
//!
//! ```text
//! ‖T(t,s)P(s)‖      ≤ D (μ(t)/μ(s))^a  ν(s)^ε
//! ‖T(t,s)⁻¹Q(t)‖    ≤ D (μ(t)/μ(s))^-b ν(t)^ε      (t ≥ s ≥ 0)
//! ```
//!
//! Projections are coordinate splittings: `P(t)` keeps the first `n_E`
//! coordinates for every `t`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::expr::Expr;
use crate::rates::GrowthRate;

/// Dichotomy constants `(D, a, b, ε)` with the rate pair `(μ, ν)`.
#[derive(Debug, Clone)]
pub struct DichotomyParams {
    pub d: f64,
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    pub mu: GrowthRate,
    pub nu: GrowthRate,
}

impl DichotomyParams {
    pub fn new(d: f64, a: f64, b: f64, eps: f64, mu: GrowthRate, nu: GrowthRate) -> Result<Self> {
        if !(d >= 1.0) {
            return Err(Error::param("D", format!("must be >= 1, got {d}")));
        }
        if !(a < 0.0) {
            return Err(Error::param("a", format!("must be negative, got {a}")));
        }
        if !(b >= 0.0) {
            return Err(Error::param("b", format!("must be >= 0, got {b}")));
        }
        if !(eps >= 0.0) {
            return Err(Error::param("eps", format!("must be >= 0, got {eps}")));
        }
        Ok(Self {
            d,
            a,
            b,
            eps,
            mu,
            nu,
        })
    }

    /// `ln[(μ(t)/μ(s))^a ν(s)^ε]`, the stable decay weight without `D`.
    pub fn ln_stable_weight(&self, t: f64, s: f64) -> f64 {
        self.a * (self.mu.ln_eval(t) - self.mu.ln_eval(s)) + self.eps * self.nu.ln_eval(s)
    }

    /// `ln[D (μ(t)/μ(s))^a ν(s)^ε]`
    pub fn ln_stable_bound(&self, t: f64, s: f64) -> f64 {
        self.d.ln() + self.ln_stable_weight(t, s)
    }

    /// `ln[D (μ(t)/μ(s))^-b ν(t)^ε]`
    pub fn ln_unstable_bound(&self, t: f64, s: f64) -> f64 {
        self.d.ln() - self.b * (self.mu.ln_eval(t) - self.mu.ln_eval(s))
            + self.eps * self.nu.ln_eval(t)
    }
}

/// The two-dimensional system with explicit evolution operator
/// `T(t,s)(u,v) = (U(t,s)u, V(t,s)v)`,
///
/// ```text
/// U(t,s) = (μ(t)/μ(s))^a  exp( ω ln ν(t)(cos t − 1) − ω ln ν(s)(cos s − 1))
/// V(t,s) = (μ(t)/μ(s))^b  exp(−ω ln ν(t)(cos t − 1) + ω ln ν(s)(cos s − 1))
/// ```
///
/// with `ω = ε/2`, whose stable bound is attained at `t = 2kπ`,
/// `s = (2k−1)π`.
#[derive(Debug, Clone)]
pub struct Oscillating {
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    pub mu: GrowthRate,
    pub nu: GrowthRate,
}

impl Oscillating {
    pub fn omega(&self) -> f64 {
        0.5 * self.eps
    }

    fn oscillation(&self, t: f64, s: f64) -> f64 {
        let w = self.omega();
        if w == 0.0 {
            return 0.0;
        }
        w * (self.nu.ln_eval(t) * (t.cos() - 1.0) - self.nu.ln_eval(s) * (s.cos() - 1.0))
    }

    pub fn ln_u(&self, t: f64, s: f64) -> f64 {
        self.a * (self.mu.ln_eval(t) - self.mu.ln_eval(s)) + self.oscillation(t, s)
    }

    pub fn ln_v(&self, t: f64, s: f64) -> f64 {
        self.b * (self.mu.ln_eval(t) - self.mu.ln_eval(s)) - self.oscillation(t, s)
    }
}

type ScalarCocycle = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Closed-form systems: `T(t,s) = diag(U(t,s) I_E, V(t,s) I_F)` with
/// positive scalar factors given through their logarithms.
#[derive(Clone)]
pub enum ClosedForm {
    Oscillating(Oscillating),
    Scalar {
        label: String,
        ln_u: ScalarCocycle,
        ln_v: ScalarCocycle,
    },
}

impl ClosedForm {
    pub fn ln_u(&self, t: f64, s: f64) -> f64 {
        match self {
            ClosedForm::Oscillating(e) => e.ln_u(t, s),
            ClosedForm::Scalar { ln_u, .. } => ln_u(t, s),
        }
    }

    pub fn ln_v(&self, t: f64, s: f64) -> f64 {
        match self {
            ClosedForm::Oscillating(e) => e.ln_v(t, s),
            ClosedForm::Scalar { ln_v, .. } => ln_v(t, s),
        }
    }
}

/// `A(t)` given entrywise as expressions in `t`, propagated with classic
/// RK4 at step `h`.
#[derive(Debug, Clone)]
pub struct MatrixForm {
    entries: Vec<Expr>,
    n: usize,
    h: f64,
}

impl MatrixForm {
    pub fn a_matrix(&self, t: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.entries[i * self.n + j].eval(&[t]))
    }

    pub fn entry(&self, i: usize, j: usize, t: f64) -> f64 {
        self.entries[i * self.n + j].eval(&[t])
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn sources(&self) -> Vec<Vec<String>> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| self.entries[i * self.n + j].source().to_string())
                    .collect()
            })
            .collect()
    }

    /// Solves `M' = A(τ)M` from `from` to `to` (either direction).
    pub fn propagate(&self, from: f64, to: f64, m0: DMatrix<f64>) -> DMatrix<f64> {
        let span = to - from;
        if span == 0.0 {
            return m0;
        }
        let steps = (span.abs() / self.h).ceil().max(1.0) as usize;
        let dt = span / steps as f64;
        let mut m = m0;
        let mut t = from;
        for i in 0..steps {
            let a0 = self.a_matrix(t);
            let am = self.a_matrix(t + 0.5 * dt);
            let a1 = self.a_matrix(t + dt);
            let k1 = &a0 * &m;
            let k2 = &am * (&m + &k1 * (0.5 * dt));
            let k3 = &am * (&m + &k2 * (0.5 * dt));
            let k4 = &a1 * (&m + &k3 * dt);
            m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            t = from + (i + 1) as f64 * dt;
        }
        m
    }
}

#[derive(Clone)]
pub enum SystemForm {
    ClosedForm(ClosedForm),
    Matrix(MatrixForm),
}

/// A linear system `v' = A(t)v` on `ℝⁿ` with coordinate splitting
/// `ℝⁿ = E ⊕ F`, `dim E = n_E`.
#[derive(Clone)]
pub struct LinearSystem {
    n: usize,
    n_e: usize,
    form: SystemForm,
}

impl fmt::Debug for LinearSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let form = match &self.form {
            SystemForm::ClosedForm(ClosedForm::Oscillating(e)) => format!("oscillating {e:?}"),
            SystemForm::ClosedForm(ClosedForm::Scalar { label, .. }) => label.clone(),
            SystemForm::Matrix(m) => format!("matrix {:?}", m.sources()),
        };
        f.debug_struct("LinearSystem")
            .field("n", &self.n)
            .field("n_e", &self.n_e)
            .field("form", &form)
            .finish()
    }
}

/// Builds the closed-form system with oscillating nonuniform part. `ε = 0`
/// is accepted and gives the uniform limit `U = (μ(t)/μ(s))^a`.
pub fn example_system(
    a: f64,
    b: f64,
    eps: f64,
    mu: GrowthRate,
    nu: GrowthRate,
) -> Result<LinearSystem> {
    if !(a < 0.0) {
        return Err(Error::param("a", format!("must be negative, got {a}")));
    }
    if !(b >= 0.0) {
        return Err(Error::param("b", format!("must be >= 0, got {b}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::param("eps", format!("must be >= 0, got {eps}")));
    }
    Ok(LinearSystem {
        n: 2,
        n_e: 1,
        form: SystemForm::ClosedForm(ClosedForm::Oscillating(Oscillating { a, b, eps, mu, nu })),
    })
}

impl LinearSystem {
    /// Closed form `diag(U I_E, V I_F)` from `ln U(t,s)` and `ln V(t,s)`.
    pub fn scalar_blocks<U, V>(n_e: usize, n_f: usize, label: &str, ln_u: U, ln_v: V) -> Result<Self>
    where
        U: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        V: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        if n_e == 0 || n_f == 0 {
            return Err(Error::param("n_E", "both blocks must be nonempty"));
        }
        Ok(Self {
            n: n_e + n_f,
            n_e,
            form: SystemForm::ClosedForm(ClosedForm::Scalar {
                label: label.to_string(),
                ln_u: Arc::new(ln_u),
                ln_v: Arc::new(ln_v),
            }),
        })
    }

    /// Matrix form from entrywise expressions in `t`.
    pub fn matrix(a_expr: &[Vec<String>], n_e: usize, h: f64) -> Result<Self> {
        let n = a_expr.len();
        if n < 2 {
            return Err(Error::param("A_expr", "dimension must be at least 2"));
        }
        if a_expr.iter().any(|row| row.len() != n) {
            return Err(Error::param("A_expr", "matrix must be square"));
        }
        if n_e == 0 || n_e >= n {
            return Err(Error::param("n_E", format!("must lie in 1..{n}, got {n_e}")));
        }
        if !(h > 0.0) {
            return Err(Error::NonPositiveStep(h));
        }
        let entries = a_expr
            .iter()
            .flatten()
            .map(|src| Expr::parse(src, &["t"]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n,
            n_e,
            form: SystemForm::Matrix(MatrixForm { entries, n, h }),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    pub fn n_f(&self) -> usize {
        self.n - self.n_e
    }

    pub fn form(&self) -> &SystemForm {
        &self.form
    }

    pub fn oscillating(&self) -> Option<&Oscillating> {
        match &self.form {
            SystemForm::ClosedForm(ClosedForm::Oscillating(e)) => Some(e),
            _ => None,
        }
    }

    pub fn projection(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| {
            if i == j && i < self.n_e {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn complement(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n) - self.projection()
    }

    fn block_diag(&self, u: f64, v: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| match (i == j, i < self.n_e) {
            (true, true) => u,
            (true, false) => v,
            _ => 0.0,
        })
    }

    /// Evolution operator `T(t,s)`, `t ≥ s`.
    pub fn transition(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        if t < s {
            return Err(Error::TimeOrder { t, s });
        }
        match &self.form {
            SystemForm::ClosedForm(cf) => {
                Ok(self.block_diag(cf.ln_u(t, s).exp(), cf.ln_v(t, s).exp()))
            }
            SystemForm::Matrix(m) => {
                if !(m.h > 0.0) {
                    return Err(Error::NonPositiveStep(m.h));
                }
                Ok(m.propagate(s, t, DMatrix::identity(self.n, self.n)))
            }
        }
    }

    /// `T(t,s)⁻¹`, `t ≥ s`. Closed forms invert the scalar factors; matrix
    /// forms invert directly unless the forward matrix is ill conditioned
    /// (or singular), in which case the inverse is propagated backward from
    /// `t` to `s`. The flag reports whether the backward route was taken.
    pub fn inverse_transition(&self, t: f64, s: f64) -> Result<(DMatrix<f64>, bool)> {
        if t < s {
            return Err(Error::TimeOrder { t, s });
        }
        match &self.form {
            SystemForm::ClosedForm(cf) => Ok((
                self.block_diag((-cf.ln_u(t, s)).exp(), (-cf.ln_v(t, s)).exp()),
                false,
            )),
            SystemForm::Matrix(m) => {
                let fwd = self.transition(t, s)?;
                if let Some(inv) = fwd.clone().try_inverse() {
                    let cond = spectral_norm(&fwd) * spectral_norm(&inv);
                    if cond.is_finite() && cond <= 1e8 {
                        return Ok((inv, false));
                    }
                }
                Ok((m.propagate(t, s, DMatrix::identity(self.n, self.n)), true))
            }
        }
    }
}

/// Spectral norm: closed form for `2×2`, power iteration on `MᵀM`
/// otherwise (at most 50 sweeps, stopping at relative change `1e-12`).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    match (m.nrows(), m.ncols()) {
        (1, 1) => m[(0, 0)].abs(),
        (2, 2) => {
            let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            let sq = a * a + b * b + c * c + d * d;
            let det = a * d - b * c;
            let disc = (sq * sq - 4.0 * det * det).max(0.0).sqrt();
            (0.5 * (sq + disc)).sqrt()
        }
        (_, n) => {
            let gram = m.transpose() * m;
            let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
            let mut lambda = 0.0;
            for _ in 0..50 {
                let w = &gram * &v;
                let norm = w.norm();
                if norm == 0.0 {
                    return 0.0;
                }
                let next = v.dot(&w);
                v = w / norm;
                let done = (next - lambda).abs() <= 1e-12 * next.abs();
                lambda = next;
                if done {
                    break;
                }
            }
            lambda.max(0.0).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDescription {
    pub pairs: usize,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyCertificate {
    pub max_stable_ratio: f64,
    pub max_unstable_ratio: f64,
    pub max_commutation_residual: f64,
    pub worst_stable_pair: (f64, f64),
    pub worst_unstable_pair: (f64, f64),
    pub grid: GridDescription,
    pub tol: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

struct PairEval {
    stable_ratio: f64,
    unstable_ratio: f64,
    commutation: f64,
    backward: bool,
}

/// Evaluates both dichotomy bounds and the commutation residual on every
/// grid pair; the certificate keeps the maxima.
pub fn verify_dichotomy(
    system: &LinearSystem,
    params: &DichotomyParams,
    grid: &[(f64, f64)],
    tol: f64,
    exec: Execution,
) -> Result<DichotomyCertificate> {
    if grid.is_empty() {
        return Err(Error::Precondition("dichotomy grid is empty".into()));
    }
    if let Some(&(t, s)) = grid.iter().find(|(t, s)| t < s || *s < 0.0) {
        return Err(Error::TimeOrder { t, s });
    }
    let p = system.projection();
    let q = system.complement();
    let evals = exec.try_map(grid.len(), |i| -> Result<PairEval> {
        let (t, s) = grid[i];
        let tm = system.transition(t, s)?;
        let (inv, backward) = system.inverse_transition(t, s)?;
        let stable = spectral_norm(&(&tm * &p));
        let unstable = spectral_norm(&(&inv * &q));
        let commutation = spectral_norm(&(&p * &tm - &tm * &p));
        Ok(PairEval {
            stable_ratio: (stable.ln() - params.ln_stable_bound(t, s)).exp(),
            unstable_ratio: (unstable.ln() - params.ln_unstable_bound(t, s)).exp(),
            commutation,
            backward,
        })
    })?;

    let argmax = |key: &dyn Fn(&PairEval) -> f64| {
        evals
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (i, e)| {
                let v = key(e);
                if v > acc.1 || v.is_nan() {
                    (i, v)
                } else {
                    acc
                }
            })
    };
    let (is, max_stable) = argmax(&|e| e.stable_ratio);
    let (iu, max_unstable) = argmax(&|e| e.unstable_ratio);
    let max_comm = evals.iter().map(|e| e.commutation).fold(0.0, f64::max);

    let mut notes = Vec::new();
    let backward = evals.iter().filter(|e| e.backward).count();
    if backward > 0 {
        notes.push(format!(
            "{backward} pair(s) used backward propagation for T(t,s)^-1 (ill-conditioned forward matrix)"
        ));
    }
    let pass = max_stable <= 1.0 + tol && max_unstable <= 1.0 + tol && max_comm <= tol;
    let t_min = grid.iter().map(|g| g.1).fold(f64::INFINITY, f64::min);
    let t_max = grid.iter().map(|g| g.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(DichotomyCertificate {
        max_stable_ratio: max_stable,
        max_unstable_ratio: max_unstable,
        max_commutation_residual: max_comm,
        worst_stable_pair: grid[is],
        worst_unstable_pair: grid[iu],
        grid: GridDescription {
            pairs: grid.len(),
            t_min,
            t_max,
        },
        tol,
        pass,
        notes,
    })
}

/// All pairs `t ≥ s` of a uniform grid on `[0, t_max]` with the fewest
/// points giving at least `count` pairs.
pub fn pair_grid(t_max: f64, count: usize) -> Vec<(f64, f64)> {
    let mut m = 1usize;
    while m * (m + 1) / 2 < count.max(1) {
        m += 1;
    }
    let pts: Vec<f64> = if m == 1 {
        vec![0.0]
    } else {
        (0..m).map(|i| t_max * i as f64 / (m - 1) as f64).collect()
    };
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for (i, &t) in pts.iter().enumerate() {
        for &s in &pts[..=i] {
            out.push((t, s));
        }
    }
    out
}

/// `(2kπ, (2k−1)π)` for each `k`.
pub fn sharpness_pairs(ks: &[u32]) -> Vec<(f64, f64)> {
    ks.iter()
        .map(|&k| (2.0 * k as f64 * PI, (2.0 * k as f64 - 1.0) * PI))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessResidual {
    pub k: u32,
    pub t: f64,
    pub s: f64,
    pub u: f64,
    pub bound: f64,
    pub residual: f64,
}

/// `|U(2kπ, (2k−1)π) − (μ(t)/μ(s))^a ν(s)^ε|` for each `k`.
pub fn sharpness_probe(system: &LinearSystem, ks: &[u32]) -> Result<Vec<SharpnessResidual>> {
    let ex = system
        .oscillating()
        .ok_or_else(|| Error::Precondition("sharpness probe needs the oscillating example system".into()))?;
    if ks.contains(&0) {
        return Err(Error::param("k", "must be positive"));
    }
    Ok(ks
        .iter()
        .zip(sharpness_pairs(ks))
        .map(|(&k, (t, s))| {
            let u = ex.ln_u(t, s).exp();
            let bound =
                (ex.a * (ex.mu.ln_eval(t) - ex.mu.ln_eval(s)) + ex.eps * ex.nu.ln_eval(s)).exp();
            SharpnessResidual {
                k,
                t,
                s,
                u,
                bound,
                residual: (u - bound).abs(),
            }
        })
        .collect())
}
