//! Quadrature: adaptive Simpson on finite intervals, improper tail integrals
//! `∫_s^∞` with explicit bounds on the neglected tail, and composite rules
//! on paired meshes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::LogMonomial;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
    /// Set when some subinterval hit the depth limit before meeting its
    /// local tolerance.
    pub depth_limited: bool,
}

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson with Richardson correction; `tol` is absolute.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Quad {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut q = Quad {
        value: 0.0,
        error: 0.0,
        evals: 3,
        depth_limited: false,
    };
    q.value = simpson_step(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut q);
    q
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    q: &mut Quad,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    q.evals += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || depth == 0 {
        if depth == 0 && delta.abs() > 15.0 * tol {
            q.depth_limited = true;
        }
        q.error += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, q)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, q)
}

/// How `∫_s^∞` is evaluated for log-monomial integrands.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    /// Closed forms where the reduced integrand is a pure exponential,
    /// quadrature otherwise.
    #[default]
    Analytic,
    /// Always quadrature (used as the independent route against closed
    /// forms).
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailStatus {
    /// Neglected tail certified below the requested relative tolerance.
    Certified,
    /// Integral evaluated but the tail could not be certified.
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailIntegral {
    pub value: f64,
    /// `ln value`; finite even when `value` underflows.
    pub ln_value: f64,
    /// Bound on the neglected tail relative to `value`.
    pub rel_tail_bound: f64,
    pub status: TailStatus,
    pub closed_form: bool,
}

impl TailIntegral {
    fn from_ln(ln_value: f64, rel_tail_bound: f64, status: TailStatus, closed_form: bool) -> Self {
        Self {
            value: ln_value.exp(),
            ln_value,
            rel_tail_bound,
            status,
            closed_form,
        }
    }
}

const ZERO_EXP: f64 = 1e-12;
const MAX_SEGMENTS: usize = 20_000;

/// `∫_s^∞ m(r) dr` for a log monomial `m`.
///
/// While the exponential rate vanishes the substitution `z = e^w − 1` maps
/// `(1+z)^{p₀} dz` to `e^{(p₀+1) w} dw` and shifts every nested log level
/// down by one, so the integrand is reduced exactly until it carries an
/// exponential factor. The reduced integral either has a closed form (no
/// remaining log powers) or is integrated by adaptive Simpson over e-fold
/// segments until the bound
/// `∫_Z^∞ ≤ e^{αZ} g(Z) / (|α| − κ)`, with `κ = Σ max(pₖ, 0) / (1+Z)`
/// bounding the log-derivative of the power part `g`, falls below
/// `rel_tol` of the accumulated value.
pub fn monomial_tail(
    m: &LogMonomial,
    s: f64,
    method: TailMethod,
    rel_tol: f64,
) -> Result<TailIntegral> {
    if s < 0.0 || !s.is_finite() {
        return Err(Error::Precondition(format!("tail start {s} must be a finite nonnegative time")));
    }
    let mut alpha = m.exp_rate;
    let mut powers: Vec<f64> = m.powers.clone();
    let mut z0 = s;
    loop {
        while powers.last().is_some_and(|p| p.abs() < ZERO_EXP) {
            powers.pop();
        }
        if alpha.abs() < ZERO_EXP {
            if powers.is_empty() {
                return Err(Error::Divergent("integrand is asymptotically constant".into()));
            }
            alpha = powers.remove(0) + 1.0;
            z0 = z0.ln_1p();
            continue;
        }
        if alpha > 0.0 {
            return Err(Error::Divergent(format!(
                "reduced integrand grows like e^({alpha} z)"
            )));
        }
        break;
    }

    let rate = -alpha;
    if powers.is_empty() && method == TailMethod::Analytic {
        return Ok(TailIntegral::from_ln(
            alpha * z0 - rate.ln(),
            0.0,
            TailStatus::Certified,
            true,
        ));
    }

    let reduced = LogMonomial {
        exp_rate: alpha,
        powers: powers.clone(),
    };
    let ln_h0 = reduced.ln_eval(z0);
    let h = |z: f64| (reduced.ln_eval(z) - ln_h0).exp();
    let positive_mass: f64 = powers.iter().map(|p| p.max(0.0)).sum();
    let seg = 1.0 / rate;

    let mut total = 0.0;
    let mut a = z0;
    let mut rel_bound = f64::INFINITY;
    for _ in 0..MAX_SEGMENTS {
        let b = a + seg;
        let rough = seg / 6.0 * (h(a) + 4.0 * h(0.5 * (a + b)) + h(b));
        let q = adaptive_simpson(h, a, b, 1e-3 * rel_tol * rough.abs().max(f64::MIN_POSITIVE));
        total += q.value;
        a = b;
        let kappa = positive_mass / (1.0 + a);
        if kappa < rate && total > 0.0 {
            let tail = h(a) / (rate - kappa);
            rel_bound = tail / total;
            if rel_bound <= 1e-2 * rel_tol {
                break;
            }
        }
    }
    let status = if rel_bound <= rel_tol {
        TailStatus::Certified
    } else {
        TailStatus::Inconclusive
    };
    Ok(TailIntegral::from_ln(ln_h0 + total.ln(), rel_bound, status, false))
}

/// `∫_s^∞ g(r) dr` for an arbitrary positive integrand. The cut-off
/// `T = s + 2ᵏ` doubles; at each stage a power law `g ~ (1+r)^p` is fitted
/// on `[T, 2T]` and on `[2T, 4T]`. The first fit supplies a tail correction
/// and the gap between the two fits bounds its error. Integration stops
/// once that bound (or the last doubling's contribution, when the tail is
/// negligible) is below `rel_tol / 10` of the total. Partial integrals that
/// never settle signal divergence.
pub fn generic_tail<F: Fn(f64) -> f64>(g: F, s: f64, rel_tol: f64) -> Result<TailIntegral> {
    let mut lo = s;
    let mut hi = s + 1.0;
    let mut total = 0.0;
    let fit = |a: f64, b: f64| (g(b) / g(a)).ln() / ((1.0 + b) / (1.0 + a)).ln();
    let power_tail = |t: f64, p: f64| {
        if p < -1.0 {
            g(t) * (1.0 + t) / (-p - 1.0)
        } else {
            f64::INFINITY
        }
    };
    for _ in 0..64 {
        let rough = adaptive_simpson(&g, lo, hi, f64::INFINITY).value.abs();
        let q = adaptive_simpson(&g, lo, hi, 1e-3 * rel_tol * rough.max(f64::MIN_POSITIVE));
        if !q.value.is_finite() {
            return Err(Error::Numerical(format!("non-finite integrand on [{lo}, {hi}]")));
        }
        total += q.value;
        let t = hi;
        let (t2, t4) = (s + 2.0 * (t - s), s + 4.0 * (t - s));
        let (tail, err) = if g(t) == 0.0 {
            (0.0, 0.0)
        } else {
            let (near, far) = (power_tail(t, fit(t, t2)), power_tail(t, fit(t2, t4)));
            (near, (near - far).abs())
        };
        let settled = q.value.abs() < 0.1 * rel_tol * total.abs();
        if tail.is_finite() && (settled || err <= 0.1 * rel_tol * (total + tail)) {
            let value = total + tail;
            let rel = if settled { tail.max(err) / value } else { err / value };
            let status = if rel <= rel_tol {
                TailStatus::Certified
            } else {
                TailStatus::Inconclusive
            };
            return Ok(TailIntegral::from_ln(value.ln(), rel, status, false));
        }
        lo = hi;
        hi = t2;
    }
    Err(Error::Divergent(format!(
        "partial integrals from s = {s} are not Cauchy up to T = {lo:e}"
    )))
}

/// Time mesh made of pairs of equal steps: `t[2j+1]` is the midpoint of
/// `[t[2j], t[2j+2]]`. Composite Simpson and RK4 with doubled steps both
/// run on it without interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedMesh {
    pub t: Vec<f64>,
}

impl PairedMesh {
    /// Half-steps are `min(h·(1+t)/(1+start), h_max)` when `graded`,
    /// `h` otherwise. The final pair is shrunk to end exactly at `end`.
    pub fn new(start: f64, end: f64, h: f64, h_max: f64, graded: bool) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::NonPositiveStep(h));
        }
        if end < start {
            return Err(Error::TimeOrder { t: end, s: start });
        }
        let mut t = vec![start];
        let mut cur = start;
        while cur < end {
            let mut step = if graded {
                (h * (1.0 + cur) / (1.0 + start)).min(h_max.max(h))
            } else {
                h
            };
            if cur + 2.0 * step >= end - 1e-12 * (1.0 + end.abs()) {
                step = 0.5 * (end - cur);
                t.push(cur + step);
                t.push(end);
                break;
            }
            t.push(cur + step);
            cur += 2.0 * step;
            t.push(cur);
        }
        Ok(Self { t })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.len() <= 1
    }

    /// Composite Simpson of samples `y` (one per mesh point).
    pub fn simpson(&self, y: &[f64]) -> f64 {
        debug_assert_eq!(y.len(), self.t.len());
        let mut acc = 0.0;
        let mut j = 0;
        while j + 2 < self.t.len() {
            let width = self.t[j + 2] - self.t[j];
            acc += width / 6.0 * (y[j] + 4.0 * y[j + 1] + y[j + 2]);
            j += 2;
        }
        acc
    }

    /// Running integral `∫_{t₀}^{tᵢ}` at every mesh point: Simpson on
    /// completed pairs, the quadratic half-panel rule
    /// `h/12·(5y₀ + 8y₁ − y₂)` at midpoints.
    pub fn cumulative(&self, y: &[f64]) -> Vec<f64> {
        let n = self.t.len();
        let mut out = vec![0.0; n];
        let mut j = 0;
        while j + 2 < n {
            let half = self.t[j + 1] - self.t[j];
            out[j + 1] = out[j] + half / 12.0 * (5.0 * y[j] + 8.0 * y[j + 1] - y[j + 2]);
            out[j + 2] = out[j] + half / 3.0 * (y[j] + 4.0 * y[j + 1] + y[j + 2]);
            j += 2;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::GrowthRate;

    fn weight(mu: &GrowthRate, nu: &GrowthRate, x: f64, y: f64) -> LogMonomial {
        mu.shape().unwrap().pow(x).mul(&nu.shape().unwrap().pow(y))
    }

    #[test]
    fn simpson_polynomial_exact() {
        let q = adaptive_simpson(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12);
        assert!((q.value - 0.0).abs() < 1e-13);
        let q = adaptive_simpson(f64::exp, 0.0, 1.0, 1e-13);
        assert!((q.value - (std::f64::consts::E - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn exponential_tail_values() {
        let e = GrowthRate::exponential();
        for method in [TailMethod::Analytic, TailMethod::Quadrature] {
            // ∫₀^∞ e^{-1.9 r} dr
            let t = monomial_tail(&weight(&e, &e, -2.0, 0.1), 0.0, method, 1e-11).unwrap();
            assert!((t.value - 1.0 / 1.9).abs() < 1e-10 / 1.9, "{method:?} {}", t.value);
            assert_eq!(t.status, TailStatus::Certified);
            // ∫₁^∞ e^{-2 r} dr = e^{-2}/2
            let t = monomial_tail(&weight(&e, &e, -2.0, 0.0), 1.0, method, 1e-11).unwrap();
            let exact = (-2.0f64).exp() / 2.0;
            assert!(((t.value - exact) / exact).abs() < 1e-9);
        }
    }

    #[test]
    fn polynomial_tail_value() {
        let p = GrowthRate::polynomial();
        for method in [TailMethod::Analytic, TailMethod::Quadrature] {
            let t = monomial_tail(&weight(&p, &p, -2.0, 0.5), 0.0, method, 1e-11).unwrap();
            assert!((t.value - 2.0).abs() < 2e-9, "{}", t.value);
        }
    }

    #[test]
    fn log_families_reduce_to_closed_forms() {
        // aq = -1, λ = 4, ε = 0.5: ∫_s^∞ = ℓ₁(s)^{ε-λ+1} / (λ-ε-1)
        let mu = GrowthRate::log_poly(4.0).unwrap();
        let nu = GrowthRate::log_companion();
        let w = weight(&mu, &nu, -1.0, 0.5);
        for &s in &[0.0, 2.0, 1e3] {
            let exact = crate::rates::log_level(s, 1).powf(-2.5) / 2.5;
            let a = monomial_tail(&w, s, TailMethod::Analytic, 1e-11).unwrap();
            let q = monomial_tail(&w, s, TailMethod::Quadrature, 1e-11).unwrap();
            assert!(a.closed_form && !q.closed_form);
            assert!(((a.value - exact) / exact).abs() < 1e-12);
            assert!(((q.value - exact) / exact).abs() < 1e-9);
        }
        let mu = GrowthRate::loglog_poly(4.0).unwrap();
        let nu = GrowthRate::loglog_companion();
        let w = weight(&mu, &nu, -1.0, 0.5);
        let s = 2.0;
        let exact = crate::rates::log_level(s, 2).powf(-2.5) / 2.5;
        let q = monomial_tail(&w, s, TailMethod::Quadrature, 1e-11).unwrap();
        assert!(((q.value - exact) / exact).abs() < 1e-9);
    }

    #[test]
    fn mixed_powers_need_quadrature() {
        // aq = -2 with log factors: no closed form; compare against a direct
        // truncated integral plus its comparison tail.
        let mu = GrowthRate::log_poly(2.0).unwrap();
        let nu = GrowthRate::log_companion();
        let w = weight(&mu, &nu, -2.0, 0.5);
        let t = monomial_tail(&w, 0.0, TailMethod::Analytic, 1e-10).unwrap();
        assert!(!t.closed_form);
        let direct = adaptive_simpson(|r| w.eval(r), 0.0, 1e6, 1e-13).value;
        // ∫_{1e6}^∞ (1+r)^{-2} ℓ₁^{-3.5} ≤ (1+1e6)^{-1} ℓ₁(1e6)^{-3.5}
        let tail = 1.0 / (1.0 + 1e6) * crate::rates::log_level(1e6, 1).powf(-3.5);
        assert!(t.value >= direct - 1e-9 && t.value <= direct + tail + 1e-9);
    }

    #[test]
    fn divergence_detected() {
        let p = GrowthRate::polynomial();
        assert!(matches!(
            monomial_tail(&weight(&p, &p, -1.0, 0.0), 0.0, TailMethod::Analytic, 1e-10),
            Err(Error::Divergent(_))
        ));
        let e = GrowthRate::exponential();
        assert!(monomial_tail(&weight(&e, &e, -1.0, 1.5), 0.0, TailMethod::Analytic, 1e-10).is_err());
        assert!(generic_tail(|r| 1.0 / (1.0 + r), 0.0, 1e-8).is_err());
    }

    #[test]
    fn generic_tail_matches_closed_forms() {
        let t = generic_tail(|r| (-1.9 * r).exp(), 0.0, 1e-9).unwrap();
        assert!((t.value - 1.0 / 1.9).abs() < 1e-8);
        assert_eq!(t.status, TailStatus::Certified);
        let t = generic_tail(|r| (1.0 + r).powf(-3.0), 0.0, 1e-9).unwrap();
        assert!((t.value - 0.5).abs() < 1e-7, "{}", t.value);
    }

    #[test]
    fn paired_mesh_rules() {
        let m = PairedMesh::new(0.0, 1.0, 0.01, 0.01, false).unwrap();
        assert_eq!(*m.t.last().unwrap(), 1.0);
        assert_eq!(m.len() % 2, 1);
        let y: Vec<f64> = m.t.iter().map(|t| t.exp()).collect();
        assert!((m.simpson(&y) - (1f64.exp() - 1.0)).abs() < 1e-10);
        let c = m.cumulative(&y);
        for (t, ci) in m.t.iter().zip(&c) {
            assert!((ci - (t.exp() - 1.0)).abs() < 1e-8);
        }
        let g = PairedMesh::new(2.0, 500.0, 0.01, 0.5, true).unwrap();
        assert_eq!(*g.t.last().unwrap(), 500.0);
        assert!(g.t.windows(3).step_by(2).all(|w| ((w[1] - w[0]) - (w[2] - w[1])).abs() < 1e-9));
        let y: Vec<f64> = g.t.iter().map(|t| (1.0 + t).powf(-2.0)).collect();
        let exact = 1.0 / 3.0 - 1.0 / 501.0;
        assert!((g.simpson(&y) - exact).abs() < 1e-9);
    }

    #[test]
    fn mesh_rejects_bad_input() {
        assert!(PairedMesh::new(0.0, 1.0, 0.0, 1.0, false).is_err());
        assert!(PairedMesh::new(2.0, 1.0, 0.1, 1.0, false).is_err());
        let m = PairedMesh::new(1.0, 1.0, 0.1, 1.0, false).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.simpson(&[3.0]), 0.0);
    }
}
