//! Hypothesis checks for the stable-manifold theorem: the limit
//! condition, convergence of `I(s) = ∫_s^∞ μ^{aq} ν^ε`, the radii
//!
//! ```text
//! β(s) = μ(s)^a / (ν(s)^{ε(1+1/q)} I(s)^{1/q}),    β̃(s) = β(s) ν(s)^{-ε}
//! ```
//!
//! their monotonicity, and the largest `δ` allowed by the contraction
//! estimates.

use serde::{Deserialize, Serialize};

use crate::dichotomy::DichotomyParams;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::quad::{generic_tail, monomial_tail, TailIntegral, TailMethod, TailStatus};
use crate::rates::{Family, LogMonomial};

/// Relative accuracy requested from tail integrals.
pub const TAIL_REL_TOL: f64 = 1e-10;

/// Default cap on `δ` when the nonlinearity is (nearly) absent.
pub const DEFAULT_DELTA_CAP: f64 = 1.0;

fn check_q(q: f64) -> Result<()> {
    if q > 1.0 && q.is_finite() {
        Ok(())
    } else {
        Err(Error::param("q", format!("must exceed 1, got {q}")))
    }
}

/// `μ^{x} ν^{y}` as a log monomial when both rates are builtins.
fn weight(params: &DichotomyParams, x: f64, y: f64) -> Option<LogMonomial> {
    Some(params.mu.shape()?.pow(x).mul(&params.nu.shape()?.pow(y)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub pass: bool,
    pub inconclusive: bool,
    /// `(t, ln g(t))` with `g = μ^{a−b} ν^ε`.
    pub samples: Vec<(f64, f64)>,
}

/// Samples `g(t) = μ(t)^{a−b} ν(t)^ε` at `t = 1, 10, …, 10⁶`. Passes when
/// `g` decreases from `t = 10³` on and `g(10⁶) < 10⁻³ g(1)`.
pub fn check_limit_condition(params: &DichotomyParams) -> LimitReport {
    let samples: Vec<(f64, f64)> = (0..=6)
        .map(|k| {
            let t = 10f64.powi(k);
            let ln_g = (params.a - params.b) * params.mu.ln_eval(t) + params.eps * params.nu.ln_eval(t);
            (t, ln_g)
        })
        .collect();
    if samples.iter().any(|(_, g)| !g.is_finite()) {
        return LimitReport {
            pass: false,
            inconclusive: true,
            samples,
        };
    }
    let eventually_decreasing = samples[3..].windows(2).all(|w| w[1].1 < w[0].1);
    let small = samples[6].1 < samples[0].1 + 1e-3f64.ln();
    LimitReport {
        pass: eventually_decreasing && small,
        inconclusive: false,
        samples,
    }
}

/// `I(s) = ∫_s^∞ μ(r)^{aq} ν(r)^ε dr`.
pub fn tail_integral(params: &DichotomyParams, q: f64, s: f64) -> Result<TailIntegral> {
    tail_integral_with(params, q, s, TailMethod::Analytic, TAIL_REL_TOL)
}

pub fn tail_integral_with(
    params: &DichotomyParams,
    q: f64,
    s: f64,
    method: TailMethod,
    rel_tol: f64,
) -> Result<TailIntegral> {
    check_q(q)?;
    let aq = params.a * q;
    match weight(params, aq, params.eps) {
        Some(m) => monomial_tail(&m, s, method, rel_tol),
        None => {
            let (mu, nu, eps) = (&params.mu, &params.nu, params.eps);
            let ln0 = aq * mu.ln_eval(s) + eps * nu.ln_eval(s);
            let g = |r: f64| (aq * mu.ln_eval(r) + eps * nu.ln_eval(r) - ln0).exp();
            let t = generic_tail(g, s, rel_tol)?;
            let ln_value = t.ln_value + ln0;
            Ok(TailIntegral {
                value: ln_value.exp(),
                ln_value,
                ..t
            })
        }
    }
}

fn ln_beta_from(params: &DichotomyParams, q: f64, s: f64, ln_i: f64) -> f64 {
    params.a * params.mu.ln_eval(s) - params.eps * (1.0 + 1.0 / q) * params.nu.ln_eval(s) - ln_i / q
}

/// `β(s)` from the tail integral.
pub fn beta(params: &DichotomyParams, q: f64, s: f64) -> Result<f64> {
    let i = tail_integral(params, q, s)?;
    if !i.ln_value.is_finite() {
        return Err(Error::Numerical(format!("I({s}) is zero or not finite")));
    }
    Ok(ln_beta_from(params, q, s, i.ln_value).exp())
}

/// `β̃(s) = β(s) ν(s)^{−ε}`.
pub fn beta_tilde(params: &DichotomyParams, q: f64, s: f64) -> Result<f64> {
    Ok(beta(params, q, s)? * (-params.eps * params.nu.ln_eval(s)).exp())
}

/// Closed-form `β = coeff · shape(t)` for the builtin rate pairs whose
/// tail integral is elementary:
///
/// * `μ = ν = e^t`: `|aq+ε|^{1/q} e^{−ε(1+2/q)t}`
/// * `μ = ν = 1+t`: `|aq+ε+1|^{1/q} (1+t)^{−ε(1+2/q)−1/q}`
/// * log family with plain-log companion, `aq = −1`:
///   `(λ−ε−1)^{1/q} (1+t)^{−1/q} L₁^{−ε(1+2/q)−1/q}`
/// * log-log family with its companion, `aq = −1`:
///   `(λ−ε−1)^{1/q} (1+t)^{−1/q} L₁^{−1/q} L₂^{−ε(1+2/q)−1/q}`
///
/// where `L₁ = 1+log(1+t)` and `L₂ = 1+log L₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormBeta {
    pub label: String,
    pub coeff: f64,
    pub shape: LogMonomial,
}

impl ClosedFormBeta {
    pub fn detect(params: &DichotomyParams, q: f64) -> Option<Self> {
        let (mf, lambda, mc) = params.mu.builtin()?;
        let (nf, _, nc) = params.nu.builtin()?;
        let (a, eps) = (params.a, params.eps);
        let aq = a * q;
        let tail_exp = -(eps * (1.0 + 2.0 / q) + 1.0 / q);
        let unit_aq = (aq + 1.0).abs() < 1e-12;
        let (label, coeff, shape) = match (mf, mc, nf, nc) {
            (Family::Exponential, _, Family::Exponential, _) if aq + eps < 0.0 => (
                "exponential",
                (aq + eps).abs().powf(1.0 / q),
                LogMonomial {
                    exp_rate: -eps * (1.0 + 2.0 / q),
                    powers: vec![],
                },
            ),
            (Family::Polynomial, _, Family::Polynomial, _) if aq + eps + 1.0 < 0.0 => (
                "polynomial",
                (aq + eps + 1.0).abs().powf(1.0 / q),
                LogMonomial {
                    exp_rate: 0.0,
                    powers: vec![tail_exp],
                },
            ),
            (Family::LogPoly, false, Family::LogPoly, true) if unit_aq && lambda - eps - 1.0 > 0.0 => (
                "log_poly",
                (lambda - eps - 1.0).powf(1.0 / q),
                LogMonomial {
                    exp_rate: 0.0,
                    powers: vec![-1.0 / q, tail_exp],
                },
            ),
            (Family::LoglogPoly, false, Family::LoglogPoly, true)
                if unit_aq && lambda - eps - 1.0 > 0.0 =>
            {
                (
                    "loglog_poly",
                    (lambda - eps - 1.0).powf(1.0 / q),
                    LogMonomial {
                        exp_rate: 0.0,
                        powers: vec![-1.0 / q, -1.0 / q, tail_exp],
                    },
                )
            }
            _ => return None,
        };
        Some(Self {
            label: label.to_string(),
            coeff,
            shape,
        })
    }

    pub fn ln_eval(&self, t: f64) -> f64 {
        self.coeff.ln() + self.shape.ln_eval(t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.ln_eval(t).exp()
    }
}

#[derive(Debug, Clone)]
enum BetaSource {
    Closed(ClosedFormBeta),
    /// `ln β` on an increasing grid; linear interpolation inside,
    /// log-linear extrapolation beyond the last node.
    Tabulated { t: Vec<f64>, ln_beta: Vec<f64> },
}

/// `β` and `β̃` as functions of time.
#[derive(Debug, Clone)]
pub struct BetaFunction {
    source: BetaSource,
    eps: f64,
    nu: crate::rates::GrowthRate,
}

impl BetaFunction {
    /// Uses the closed form when one applies, otherwise tabulates `β` on
    /// `[0, t_table]`.
    pub fn build(params: &DichotomyParams, q: f64, t_table: f64, exec: Execution) -> Result<Self> {
        check_q(q)?;
        let source = match ClosedFormBeta::detect(params, q) {
            Some(p) => BetaSource::Closed(p),
            None => {
                let n = 513;
                let u_max = t_table.max(1.0).ln_1p();
                let t: Vec<f64> = (0..n)
                    .map(|i| (u_max * i as f64 / (n - 1) as f64).exp_m1())
                    .collect();
                let ln_beta = exec.try_map(n, |i| -> Result<f64> {
                    let ti = tail_integral(params, q, t[i])?;
                    Ok(ln_beta_from(params, q, t[i], ti.ln_value))
                })?;
                if ln_beta.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical("β is not finite on the table".into()));
                }
                BetaSource::Tabulated { t, ln_beta }
            }
        };
        Ok(Self {
            source,
            eps: params.eps,
            nu: params.nu.clone(),
        })
    }

    pub fn closed_form(&self) -> Option<&str> {
        match &self.source {
            BetaSource::Closed(p) => Some(&p.label),
            BetaSource::Tabulated { .. } => None,
        }
    }

    pub fn ln_beta(&self, t: f64) -> f64 {
        match &self.source {
            BetaSource::Closed(p) => p.ln_eval(t),
            BetaSource::Tabulated { t: ts, ln_beta } => {
                let n = ts.len();
                let k = match ts.partition_point(|&x| x <= t) {
                    0 => 0,
                    k if k >= n => n - 2,
                    k => k - 1,
                };
                let w = (t - ts[k]) / (ts[k + 1] - ts[k]);
                ln_beta[k] + w * (ln_beta[k + 1] - ln_beta[k])
            }
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.ln_beta(t).exp()
    }

    pub fn beta_tilde(&self, t: f64) -> f64 {
        (self.ln_beta(t) - self.eps * self.nu.ln_eval(t)).exp()
    }
}

/// `|μ(s)^{−aq} ν(s)^{ε(q+1)} β(s)^q I(s) − 1|` with `β` from its closed
/// form (or the analytic tail) and `I` from the quadrature route.
pub fn fundamental_identity_residual(params: &DichotomyParams, q: f64, s: f64) -> Result<f64> {
    check_q(q)?;
    let ln_beta = match ClosedFormBeta::detect(params, q) {
        Some(p) => p.ln_eval(s),
        None => beta(params, q, s)?.ln(),
    };
    let i = tail_integral_with(params, q, s, TailMethod::Quadrature, TAIL_REL_TOL)?;
    let ln_prod = -params.a * q * params.mu.ln_eval(s)
        + params.eps * (q + 1.0) * params.nu.ln_eval(s)
        + q * ln_beta
        + i.ln_value;
    Ok(ln_prod.exp_m1().abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub beta_ok: bool,
    pub mu_a_over_beta_ok: bool,
    /// Largest relative increase of `β` between consecutive grid points.
    pub worst_beta: f64,
    /// Largest relative increase of `μ^a β^{-1}`.
    pub worst_mu_a_over_beta: f64,
}

/// Checks that `β` and `μ^a β^{−1}` are nonincreasing on `grid` (relative
/// slack `1e-10`).
pub fn check_monotonicity(beta: &BetaFunction, params: &DichotomyParams, grid: &[f64]) -> MonotonicityReport {
    let lb: Vec<f64> = grid.iter().map(|&t| beta.ln_beta(t)).collect();
    let lr: Vec<f64> = grid
        .iter()
        .zip(&lb)
        .map(|(&t, b)| params.a * params.mu.ln_eval(t) - b)
        .collect();
    let worst = |v: &[f64]| {
        v.windows(2)
            .map(|w| (w[1] - w[0]).exp_m1())
            .fold(0.0f64, f64::max)
    };
    let (wb, wr) = (worst(&lb), worst(&lr));
    MonotonicityReport {
        beta_ok: wb <= 1e-10,
        mu_a_over_beta_ok: wr <= 1e-10,
        worst_beta: wb,
        worst_mu_a_over_beta: wr,
    }
}

/// The five smallness conditions on `δ`, each as the largest admissible
/// `δ` (before the safety factor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBounds {
    pub inclusion: f64,
    pub inner_contraction: f64,
    pub comparison: f64,
    pub outer_contraction: f64,
    pub stability: f64,
    pub binding: String,
    pub delta_max: f64,
}

pub const DELTA_SAFETY: f64 = 0.99;

pub fn delta_bounds(c: f64, q: f64, big_c: f64, d: f64, cap: f64) -> Result<DeltaBounds> {
    check_q(q)?;
    if !(c >= 0.0) {
        return Err(Error::param("c", format!("must be nonnegative, got {c}")));
    }
    if !(d >= 1.0) {
        return Err(Error::param("D", format!("must be >= 1, got {d}")));
    }
    if !(big_c > d) {
        return Err(Error::param("C", format!("must exceed D = {d}, got {big_c}")));
    }
    if !(cap > 0.0) {
        return Err(Error::param("delta_cap", format!("must be positive, got {cap}")));
    }
    let root = |k: f64| k.powf(-1.0 / q);
    let p2 = |e: f64| 2f64.powf(e);
    let p3 = |e: f64| 3f64.powf(e);
    let k1 = p2(q) * p3(q + 1.0) * c * big_c.powf(q + 1.0) * d;
    let k2 = p2(q) * p3(q + 1.0) * c * big_c.powf(q) * d;
    let k3 = p2(q + 2.0) * p3(q) * c * big_c.powf(q) * d;
    let k4 = p2(q + 2.0) * p3(q) * c * big_c.powf(q + 1.0) * d;
    let k5 = 2.0 * p2(q + 1.0) * p3(q) * c * big_c.powf(q + 1.0) * d;
    let bounds = [
        ("inclusion", ((big_c - d) / k1).powf(1.0 / q)),
        ("inner_contraction", root(k2)),
        ("comparison", root(k3)),
        ("outer_contraction", root(k4)),
        ("stability", root(2.0 * k2).min(root(k5))),
    ];
    let (binding, min) = bounds
        .iter()
        .fold(("cap", cap / DELTA_SAFETY), |acc, &(n, v)| if v < acc.1 { (n, v) } else { acc });
    Ok(DeltaBounds {
        inclusion: bounds[0].1,
        inner_contraction: bounds[1].1,
        comparison: bounds[2].1,
        outer_contraction: bounds[3].1,
        stability: bounds[4].1,
        binding: binding.to_string(),
        delta_max: DELTA_SAFETY * min,
    })
}

/// `0.99 ×` the largest `δ` satisfying every smallness condition, capped
/// at `cap`.
pub fn delta_max(c: f64, q: f64, big_c: f64, d: f64, cap: f64) -> Result<f64> {
    Ok(delta_bounds(c, q, big_c, d, cap)?.delta_max)
}

/// Lipschitz-type contraction factor `2^{q+2} 3^q c C^{q+1} D δ^q` of the
/// outer operator.
pub fn contraction_factor(c: f64, q: f64, big_c: f64, d: f64, delta: f64) -> f64 {
    2f64.powf(q + 2.0) * 3f64.powf(q) * c * big_c.powf(q + 1.0) * d * delta.powf(q)
}

/// `K = 4·3^{q+1} C^{q+1} D δ^q` in `‖φ−φ̄‖′ ≤ K ‖f−f̄‖′`.
pub fn perturbation_constant(q: f64, big_c: f64, d: f64, delta: f64) -> f64 {
    4.0 * 3f64.powf(q + 1.0) * big_c.powf(q + 1.0) * d * delta.powf(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub limit_condition_ok: bool,
    pub limit: LimitReport,
    pub integral_convergent: bool,
    pub tail_rel_bound: f64,
    pub beta_monotone_ok: bool,
    pub mu_a_over_beta_monotone_ok: bool,
    pub monotonicity: MonotonicityReport,
    pub beta_at_zero: f64,
    pub beta_closed_form: Option<String>,
    pub delta_max: f64,
    pub delta_bounds: DeltaBounds,
    #[serde(rename = "C")]
    pub big_c: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

/// Runs every hypothesis check for `(params, c, q)`; `big_c` defaults to
/// `2D`.
pub fn assess(
    params: &DichotomyParams,
    c: f64,
    q: f64,
    big_c: Option<f64>,
    grid: &[f64],
    delta_cap: f64,
    exec: Execution,
) -> Result<AdmissibilityReport> {
    let big_c = big_c.unwrap_or(2.0 * params.d);
    let bounds = delta_bounds(c, q, big_c, params.d, delta_cap)?;
    let limit = check_limit_condition(params);
    let mut notes = Vec::new();
    if limit.inconclusive {
        notes.push("limit condition inconclusive: rate evaluation overflowed".into());
    }

    let tail = match tail_integral(params, q, 0.0) {
        Ok(t) => Some(t),
        Err(e) => {
            notes.push(format!("tail integral: {e}"));
            None
        }
    };
    let integral_convergent = tail.is_some_and(|t| t.status == TailStatus::Certified);
    if tail.is_some_and(|t| t.status == TailStatus::Inconclusive) {
        notes.push("tail integral inconclusive: truncation bound not certified".into());
    }

    let t_table = grid.iter().copied().fold(1.0, f64::max);
    let (mono, beta0, closed) = if tail.is_some() {
        let bf = BetaFunction::build(params, q, t_table, exec)?;
        let mono = check_monotonicity(&bf, params, grid);
        (mono, bf.beta(0.0), bf.closed_form().map(str::to_string))
    } else {
        let fail = MonotonicityReport {
            beta_ok: false,
            mu_a_over_beta_ok: false,
            worst_beta: f64::NAN,
            worst_mu_a_over_beta: f64::NAN,
        };
        (fail, f64::NAN, None)
    };
    if !mono.beta_ok {
        notes.push(format!("beta increases on the grid (worst relative step {:e})", mono.worst_beta));
    }
    if !mono.mu_a_over_beta_ok {
        notes.push(format!(
            "mu^a/beta increases on the grid (worst relative step {:e})",
            mono.worst_mu_a_over_beta
        ));
    }
    let pass = limit.pass && integral_convergent && mono.beta_ok && mono.mu_a_over_beta_ok;
    Ok(AdmissibilityReport {
        limit_condition_ok: limit.pass,
        limit,
        integral_convergent,
        tail_rel_bound: tail.map_or(f64::INFINITY, |t| t.rel_tail_bound),
        beta_monotone_ok: mono.beta_ok,
        mu_a_over_beta_monotone_ok: mono.mu_a_over_beta_ok,
        monotonicity: mono,
        beta_at_zero: beta0,
        beta_closed_form: closed,
        delta_max: bounds.delta_max,
        delta_bounds: bounds,
        big_c,
        pass,
        notes,
    })
}

/// Uniform grid `{0, Δ, …, t_max}` with `n` points.
pub fn uniform_grid(t_max: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::GrowthRate;

    fn exp_params(a: f64, b: f64, eps: f64) -> DichotomyParams {
        let e = GrowthRate::exponential();
        DichotomyParams::new(1.0, a, b, eps, e.clone(), e).unwrap()
    }

    fn log_pair(eps: f64) -> DichotomyParams {
        DichotomyParams::new(
            1.0,
            -0.5,
            0.5,
            eps,
            GrowthRate::log_poly(4.0).unwrap(),
            GrowthRate::log_companion(),
        )
        .unwrap()
    }

    #[test]
    fn limit_condition_cases() {
        assert!(check_limit_condition(&exp_params(-1.0, 1.0, 0.1)).pass);
        assert!(!check_limit_condition(&exp_params(-1.0, 0.0, 1.5)).pass);
        assert!(check_limit_condition(&log_pair(0.5)).pass);
        let blow = DichotomyParams::new(
            1.0,
            -1.0,
            1.0,
            0.1,
            GrowthRate::from_expr("exp(exp(t))").unwrap(),
            GrowthRate::exponential(),
        )
        .unwrap();
        let r = check_limit_condition(&blow);
        assert!(r.inconclusive && !r.pass);
    }

    #[test]
    fn tail_integral_values() {
        let i = tail_integral(&exp_params(-1.0, 1.0, 0.1), 2.0, 0.0).unwrap();
        assert!((i.value - 1.0 / 1.9).abs() < 1e-12);
        let i = tail_integral(&exp_params(-1.0, 1.0, 0.0), 2.0, 1.0).unwrap();
        assert!((i.value - (-2f64).exp() / 2.0).abs() < 1e-14);
        let p = GrowthRate::polynomial();
        let pp = DichotomyParams::new(1.0, -1.0, 1.0, 0.5, p.clone(), p).unwrap();
        let i = tail_integral(&pp, 2.0, 0.0).unwrap();
        assert!((i.value - 2.0).abs() < 1e-10);
        assert!(tail_integral(&exp_params(-1.0, 1.0, 2.5), 2.0, 0.0).is_err());
    }

    #[test]
    fn beta_values() {
        let b = beta(&exp_params(-1.0, 1.0, 0.1), 2.0, 0.0).unwrap();
        assert!((b - 1.9f64.sqrt()).abs() < 1e-10);
        assert!((b - 1.378405).abs() < 1e-6);
        for s in [0.0, 2.0, 7.5] {
            let b = beta(&exp_params(-1.0, 1.0, 0.0), 2.0, s).unwrap();
            assert!((b - 2f64.sqrt()).abs() < 1e-12);
        }
        let b = beta(&log_pair(0.5), 2.0, 0.0).unwrap();
        assert!((b - 2.5f64.sqrt()).abs() < 1e-9, "{b}");
        let bt = beta_tilde(&exp_params(-1.0, 1.0, 0.1), 2.0, 3.0).unwrap();
        assert!(bt < beta(&exp_params(-1.0, 1.0, 0.1), 2.0, 3.0).unwrap());
    }

    #[test]
    fn expression_rates_match_builtin_beta() {
        let params = DichotomyParams::new(
            1.0,
            -1.0,
            1.0,
            0.5,
            GrowthRate::from_expr("1 + t").unwrap(),
            GrowthRate::from_expr("1 + t").unwrap(),
        )
        .unwrap();
        let b = beta(&params, 2.0, 1.0).unwrap();
        let closed = 0.5f64.sqrt() * 2f64.powf(-(0.5 * 2.0 + 0.5));
        assert!((b / closed - 1.0).abs() < 1e-6, "{b} vs {closed}");
        let bf = BetaFunction::build(&params, 2.0, 20.0, Execution::Sequential).unwrap();
        assert!(bf.closed_form().is_none());
        assert!((bf.beta(3.3) / (0.5f64.sqrt() * 4.3f64.powf(-1.5)) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn fundamental_identity() {
        for s in [0.0, 1.0, 5.0] {
            assert!(fundamental_identity_residual(&exp_params(-1.0, 1.0, 0.1), 2.0, s).unwrap() <= 1e-8);
        }
        let r = fundamental_identity_residual(&exp_params(-1.0, 1.0, 0.0), 2.0, 3.0).unwrap();
        assert!(r <= 1e-12, "{r}");
        let p = DichotomyParams::new(
            1.0,
            -0.5,
            0.5,
            0.5,
            GrowthRate::loglog_poly(4.0).unwrap(),
            GrowthRate::loglog_companion(),
        )
        .unwrap();
        assert!(fundamental_identity_residual(&p, 2.0, 2.0).unwrap() <= 1e-6);
    }

    #[test]
    fn monotonicity_cases() {
        let grid = uniform_grid(20.0, 201);
        for (eps, second) in [(0.1, true), (0.6, false), (0.0, true)] {
            let p = exp_params(-1.0, 1.0, eps);
            let bf = BetaFunction::build(&p, 2.0, 20.0, Execution::Sequential).unwrap();
            let m = check_monotonicity(&bf, &p, &grid);
            assert!(m.beta_ok, "eps {eps}");
            assert_eq!(m.mu_a_over_beta_ok, second, "eps {eps} {m:?}");
        }
    }

    #[test]
    fn delta_max_cases() {
        let b = delta_bounds(1.0, 2.0, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(b.binding, "outer_contraction");
        assert!((b.delta_max - 0.99 / 1152f64.sqrt()).abs() < 1e-12);
        assert_eq!(delta_max(1e-30, 2.0, 2.0, 1.0, 0.5).unwrap(), 0.5);
        assert_eq!(delta_max(0.0, 2.0, 2.0, 1.0, 0.5).unwrap(), 0.5);
        assert!(delta_max(1.0, 2.0, 1.0, 1.0, 1.0).is_err());
        let cs = [0.1, 0.5, 1.0, 3.0, 10.0];
        for w in cs.windows(2) {
            assert!(delta_max(w[1], 2.0, 2.0, 1.0, 1.0).unwrap() <= delta_max(w[0], 2.0, 2.0, 1.0, 1.0).unwrap());
        }
        // Monotone in C once the inclusion bound stops binding (C ≥ D + 3/4);
        // below that the inclusion bound grows with C.
        let big = [1.75, 2.0, 3.0, 5.0, 20.0];
        for w in big.windows(2) {
            assert!(delta_max(1.0, 2.0, w[1], 1.0, 1.0).unwrap() <= delta_max(1.0, 2.0, w[0], 1.0, 1.0).unwrap());
        }
        assert!(delta_max(1.0, 2.0, 1.2, 1.0, 1.0).unwrap() > delta_max(1.0, 2.0, 1.1, 1.0, 1.0).unwrap());
        assert_eq!(delta_bounds(1.0, 2.0, 1.1, 1.0, 1.0).unwrap().binding, "inclusion");
    }

    #[test]
    fn factors() {
        assert!((contraction_factor(1.0, 2.0, 2.0, 1.0, 0.02) - 1152.0 * 4e-4).abs() < 1e-12);
        assert!((perturbation_constant(2.0, 2.0, 1.0, 0.02) - 864.0 * 4e-4).abs() < 1e-12);
    }

    #[test]
    fn assess_exponential() {
        let r = assess(
            &exp_params(-1.0, 1.0, 0.1),
            1.0,
            2.0,
            None,
            &uniform_grid(20.0, 101),
            DEFAULT_DELTA_CAP,
            Execution::Parallel,
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.big_c, 2.0);
        assert_eq!(r.beta_closed_form.as_deref(), Some("exponential"));
        assert!((r.beta_at_zero - 1.378405).abs() < 1e-6);
        let bad = assess(
            &exp_params(-1.0, 0.0, 1.5),
            1.0,
            2.0,
            None,
            &uniform_grid(20.0, 101),
            DEFAULT_DELTA_CAP,
            Execution::Parallel,
        )
        .unwrap();
        assert!(!bad.pass && !bad.limit_condition_ok);
    }
}
