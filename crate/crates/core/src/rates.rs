//! Growth rates: nondecreasing functions `[0, ∞) → [1, ∞)` with value 1 at
//! the origin and unbounded growth.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;

/// Builtin families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `e^t`
    Exponential,
    /// `1 + t`
    Polynomial,
    /// `(1+t)(1+log(1+t))^λ`; companion `1+log(1+t)`
    LogPoly,
    /// `(1+t)(1+log(1+t))(1+log(1+log(1+t)))^λ`; companion `1+log(1+log(1+t))`
    LoglogPoly,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "exponential" => Family::Exponential,
            "polynomial" => Family::Polynomial,
            "log_poly" => Family::LogPoly,
            "loglog_poly" => Family::LoglogPoly,
            other => return Err(Error::UnknownFamily(other.to_string())),
        })
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Exponential => "exponential",
            Family::Polynomial => "polynomial",
            Family::LogPoly => "log_poly",
            Family::LoglogPoly => "loglog_poly",
        })
    }
}

/// Nested logarithmic levels: `ℓ₀(t) = 1+t`, `ℓₖ(t) = 1 + ln ℓₖ₋₁(t)`.
pub fn log_level(t: f64, k: usize) -> f64 {
    let mut x = t;
    for _ in 0..k {
        x = x.ln_1p();
    }
    1.0 + x
}

/// `e^{α t} · Π ℓₖ(t)^{pₖ}`. Every product of powers of builtin rates has
/// this form, which is what the tail-integral machinery works on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMonomial {
    pub exp_rate: f64,
    pub powers: Vec<f64>,
}

impl LogMonomial {
    pub fn one() -> Self {
        Self {
            exp_rate: 0.0,
            powers: Vec::new(),
        }
    }

    pub fn pow(&self, k: f64) -> Self {
        Self {
            exp_rate: self.exp_rate * k,
            powers: self.powers.iter().map(|p| p * k).collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let n = self.powers.len().max(other.powers.len());
        let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        Self {
            exp_rate: self.exp_rate + other.exp_rate,
            powers: (0..n)
                .map(|i| get(&self.powers, i) + get(&other.powers, i))
                .collect(),
        }
    }

    pub fn ln_eval(&self, t: f64) -> f64 {
        let mut acc = self.exp_rate * t;
        // ln ℓₖ = ln(1 + xₖ) with x₀ = t, xₖ₊₁ = ln ℓₖ
        let mut x = t;
        for p in &self.powers {
            x = x.ln_1p();
            if *p != 0.0 {
                acc += p * x;
            }
        }
        acc
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.ln_eval(t).exp()
    }
}

#[derive(Clone)]
enum Kind {
    Builtin {
        family: Family,
        lambda: f64,
        companion: bool,
    },
    Expr(Arc<Expr>),
}

/// A growth rate. Immutable; cheap to clone and safe to share across
/// worker threads.
#[derive(Clone)]
pub struct GrowthRate {
    label: String,
    kind: Kind,
    params: Vec<(String, f64)>,
}

impl fmt::Debug for GrowthRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrowthRate")
            .field("label", &self.label)
            .field("params", &self.params)
            .finish()
    }
}

/// Builds a builtin rate. `λ` is required (and must be positive) for the
/// two log families unless `nu_companion` is set; the companion of the
/// exponential and polynomial families is the family itself.
pub fn builtin_rate(
    family: Family,
    params: &BTreeMap<String, f64>,
    nu_companion: bool,
) -> Result<GrowthRate> {
    let needs_lambda = matches!(family, Family::LogPoly | Family::LoglogPoly) && !nu_companion;
    let lambda = match params.get("lambda") {
        Some(&l) if needs_lambda && !(l > 0.0 && l.is_finite()) => {
            return Err(Error::param("lambda", format!("must be positive, got {l}")))
        }
        Some(&l) => l,
        None if needs_lambda => {
            return Err(Error::param("lambda", format!("required by {family}")))
        }
        None => 0.0,
    };
    let label = match (family, nu_companion) {
        (Family::LogPoly, true) => "1+log(1+t)".to_string(),
        (Family::LoglogPoly, true) => "1+log(1+log(1+t))".to_string(),
        (Family::LogPoly | Family::LoglogPoly, false) => format!("{family}(lambda={lambda})"),
        (f, _) => f.to_string(),
    };
    let params = if needs_lambda {
        vec![("lambda".to_string(), lambda)]
    } else {
        Vec::new()
    };
    Ok(GrowthRate {
        label,
        kind: Kind::Builtin {
            family,
            lambda,
            companion: nu_companion,
        },
        params,
    })
}

impl GrowthRate {
    pub fn exponential() -> Self {
        builtin_rate(Family::Exponential, &BTreeMap::new(), false).expect("no params needed")
    }

    pub fn polynomial() -> Self {
        builtin_rate(Family::Polynomial, &BTreeMap::new(), false).expect("no params needed")
    }

    pub fn log_poly(lambda: f64) -> Result<Self> {
        builtin_rate(Family::LogPoly, &lambda_map(lambda), false)
    }

    pub fn loglog_poly(lambda: f64) -> Result<Self> {
        builtin_rate(Family::LoglogPoly, &lambda_map(lambda), false)
    }

    /// `1 + log(1+t)`
    pub fn log_companion() -> Self {
        builtin_rate(Family::LogPoly, &BTreeMap::new(), true).expect("no params needed")
    }

    /// `1 + log(1+log(1+t))`
    pub fn loglog_companion() -> Self {
        builtin_rate(Family::LoglogPoly, &BTreeMap::new(), true).expect("no params needed")
    }

    /// A user rate given as an expression in `t`.
    pub fn from_expr(src: &str) -> Result<Self> {
        let expr = Expr::parse(src, &["t"])?;
        Ok(Self {
            label: src.to_string(),
            kind: Kind::Expr(Arc::new(expr)),
            params: Vec::new(),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn is_builtin(&self) -> bool {
        matches!(self.kind, Kind::Builtin { .. })
    }

    /// `(family, λ, companion)` for builtins.
    pub fn builtin(&self) -> Option<(Family, f64, bool)> {
        match self.kind {
            Kind::Builtin {
                family,
                lambda,
                companion,
            } => Some((family, lambda, companion)),
            Kind::Expr(_) => None,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match &self.kind {
            Kind::Builtin {
                family,
                lambda,
                companion,
            } => match (family, companion) {
                (Family::Exponential, _) => t.exp(),
                (Family::Polynomial, _) => 1.0 + t,
                (Family::LogPoly, true) => log_level(t, 1),
                (Family::LoglogPoly, true) => log_level(t, 2),
                (Family::LogPoly, false) => (1.0 + t) * log_level(t, 1).powf(*lambda),
                (Family::LoglogPoly, false) => {
                    (1.0 + t) * log_level(t, 1) * log_level(t, 2).powf(*lambda)
                }
            },
            Kind::Expr(e) => e.eval(&[t]),
        }
    }

    /// `ln μ(t)`, evaluated without forming `μ(t)` for builtins so that
    /// `e^t` stays usable far beyond the overflow threshold.
    pub fn ln_eval(&self, t: f64) -> f64 {
        match &self.kind {
            Kind::Builtin {
                family,
                lambda,
                companion,
            } => match (family, companion) {
                (Family::Exponential, _) => t,
                (Family::Polynomial, _) => t.ln_1p(),
                (Family::LogPoly, true) => log_level(t, 1).ln(),
                (Family::LoglogPoly, true) => log_level(t, 2).ln(),
                (Family::LogPoly, false) => t.ln_1p() + lambda * log_level(t, 1).ln(),
                (Family::LoglogPoly, false) => {
                    t.ln_1p() + log_level(t, 1).ln() + lambda * log_level(t, 2).ln()
                }
            },
            Kind::Expr(e) => e.eval(&[t]).ln(),
        }
    }

    /// Exact derivative; `None` for expression rates.
    pub fn derivative(&self, t: f64) -> Option<f64> {
        let Kind::Builtin {
            family,
            lambda,
            companion,
        } = self.kind
        else {
            return None;
        };
        let l1 = log_level(t, 1);
        let l2 = log_level(t, 2);
        Some(match (family, companion) {
            (Family::Exponential, _) => t.exp(),
            (Family::Polynomial, _) => 1.0,
            (Family::LogPoly, true) => 1.0 / (1.0 + t),
            (Family::LoglogPoly, true) => 1.0 / ((1.0 + t) * l1),
            (Family::LogPoly, false) => l1.powf(lambda) + lambda * l1.powf(lambda - 1.0),
            (Family::LoglogPoly, false) => {
                (l1 + 1.0) * l2.powf(lambda) + lambda * l2.powf(lambda - 1.0)
            }
        })
    }

    /// `d/dt ln μ(t)`: exact for builtins, central difference otherwise.
    pub fn log_derivative(&self, t: f64) -> f64 {
        match self.derivative(t) {
            Some(d) => match self.kind {
                Kind::Builtin {
                    family: Family::Exponential,
                    ..
                } => 1.0,
                _ => d / self.eval(t),
            },
            None => {
                let h = 1e-5 * (1.0 + t);
                let lo = (t - h).max(0.0);
                let hi = t + h;
                (self.ln_eval(hi) - self.ln_eval(lo)) / (hi - lo)
            }
        }
    }

    /// Log-monomial form of the rate, available for builtins.
    pub fn shape(&self) -> Option<LogMonomial> {
        let Kind::Builtin {
            family,
            lambda,
            companion,
        } = self.kind
        else {
            return None;
        };
        let (exp_rate, powers) = match (family, companion) {
            (Family::Exponential, _) => (1.0, vec![]),
            (Family::Polynomial, _) => (0.0, vec![1.0]),
            (Family::LogPoly, false) => (0.0, vec![1.0, lambda]),
            (Family::LogPoly, true) => (0.0, vec![0.0, 1.0]),
            (Family::LoglogPoly, false) => (0.0, vec![1.0, 1.0, lambda]),
            (Family::LoglogPoly, true) => (0.0, vec![0.0, 0.0, 1.0]),
        };
        Some(LogMonomial { exp_rate, powers })
    }

    /// Whether the rate grows exponentially (drives the time-mesh choice).
    pub fn is_exponential(&self) -> bool {
        matches!(
            self.kind,
            Kind::Builtin {
                family: Family::Exponential,
                ..
            }
        )
    }
}

fn lambda_map(lambda: f64) -> BTreeMap<String, f64> {
    BTreeMap::from([("lambda".to_string(), lambda)])
}

/// Finite surrogate for `μ(t) → ∞`: require `μ(T_probe) ≥ R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceProbe {
    pub t_probe: f64,
    pub threshold: f64,
}

impl Default for DivergenceProbe {
    fn default() -> Self {
        Self {
            t_probe: 1e6,
            threshold: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub label: String,
    pub unit_at_zero: bool,
    pub monotone_on_grid: bool,
    pub divergence_proxy: bool,
    /// Largest violation among `|μ(0) − 1|`, decreases between grid
    /// neighbours, and the probe shortfall `R − μ(T_probe)`.
    pub worst_violation: f64,
    /// First grid pair `(t₁, t₂)` where the rate decreased.
    pub monotone_violation_at: Option<(f64, f64)>,
}

impl AxiomReport {
    pub fn pass(&self) -> bool {
        self.unit_at_zero && self.monotone_on_grid && self.divergence_proxy
    }
}

/// Checks the growth-rate axioms on a sample grid. Violations are reported,
/// never raised.
pub fn check_growth_axioms(
    rate: &GrowthRate,
    grid: &[f64],
    probe: DivergenceProbe,
) -> AxiomReport {
    let at_zero = rate.eval(0.0);
    let unit_err = (at_zero - 1.0).abs();
    let unit_tol = if rate.is_builtin() { 0.0 } else { 1e-12 };
    let unit_at_zero = unit_err <= unit_tol;

    let mut worst = if unit_at_zero { 0.0 } else { unit_err };
    let mut violation_at = None;
    let values: Vec<f64> = grid.iter().map(|&t| rate.eval(t)).collect();
    for (w, v) in grid.windows(2).zip(values.windows(2)) {
        let drop = v[0] - v[1];
        if drop > 0.0 || v[1].is_nan() {
            if violation_at.is_none() {
                violation_at = Some((w[0], w[1]));
            }
            worst = f64::max(worst, drop);
        }
    }
    let monotone_on_grid = violation_at.is_none();

    let probe_val = rate.eval(probe.t_probe);
    let divergence_proxy = probe_val >= probe.threshold;
    if !divergence_proxy {
        worst = f64::max(worst, probe.threshold - probe_val);
    }

    AxiomReport {
        label: rate.label().to_string(),
        unit_at_zero,
        monotone_on_grid,
        divergence_proxy,
        worst_violation: worst,
        monotone_violation_at: violation_at,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{E, PI};

    fn all_builtins() -> Vec<GrowthRate> {
        vec![
            GrowthRate::exponential(),
            GrowthRate::polynomial(),
            GrowthRate::log_poly(4.0).unwrap(),
            GrowthRate::loglog_poly(2.5).unwrap(),
            GrowthRate::log_companion(),
            GrowthRate::loglog_companion(),
        ]
    }

    #[test]
    fn builtin_values() {
        assert!((GrowthRate::exponential().eval(1.0) - E).abs() < 1e-12);
        assert_eq!(GrowthRate::polynomial().eval(0.0), 1.0);
        // (1+t)(1+log(1+t))^4 at t = e-1 is e·2⁴
        let v = GrowthRate::log_poly(4.0).unwrap().eval(E - 1.0);
        assert!((v - 43.492_509_255_344_72).abs() < 1e-12, "{v}");
        assert!((v - E * 16.0).abs() < 1e-12);
    }

    #[test]
    fn unit_at_zero_exact() {
        for r in all_builtins() {
            assert_eq!(r.eval(0.0), 1.0, "{}", r.label());
        }
    }

    #[test]
    fn strictly_increasing_on_fine_grid() {
        let grid: Vec<f64> = (0..10_000).map(|i| i as f64 * 100.0 / 9_999.0).collect();
        for r in all_builtins() {
            let v: Vec<f64> = grid.iter().map(|&t| r.eval(t)).collect();
            assert!(v.windows(2).all(|w| w[1] > w[0]), "{}", r.label());
        }
    }

    #[test]
    fn family_parsing_and_lambda_validation() {
        assert_eq!("log_poly".parse::<Family>().unwrap(), Family::LogPoly);
        assert!(matches!(
            "gamma".parse::<Family>(),
            Err(Error::UnknownFamily(_))
        ));
        assert!(builtin_rate(Family::LogPoly, &BTreeMap::new(), false).is_err());
        assert!(GrowthRate::log_poly(-1.0).is_err());
        assert!(GrowthRate::loglog_poly(0.0).is_err());
        assert!(builtin_rate(Family::LoglogPoly, &BTreeMap::new(), true).is_ok());
    }

    #[test]
    fn axioms_exponential_pass() {
        let grid: Vec<f64> = (0..=10).map(f64::from).collect();
        let rep = check_growth_axioms(
            &GrowthRate::exponential(),
            &grid,
            DivergenceProbe {
                t_probe: 20.0,
                threshold: 1e3,
            },
        );
        assert!(rep.pass());
        assert_eq!(rep.worst_violation, 0.0);
    }

    #[test]
    fn axioms_detect_non_monotone() {
        let r = GrowthRate::from_expr("1 + sin(t)").unwrap();
        let rep = check_growth_axioms(&r, &[0.0, PI / 2.0, PI], DivergenceProbe::default());
        assert!(rep.unit_at_zero);
        assert!(!rep.monotone_on_grid);
        assert_eq!(rep.monotone_violation_at, Some((PI / 2.0, PI)));
        assert!(rep.worst_violation >= 1.0 - 1e-12);
    }

    #[test]
    fn axioms_log_poly_divergence_proxy() {
        let rep = check_growth_axioms(
            &GrowthRate::log_poly(4.0).unwrap(),
            &[0.0, 1.0],
            DivergenceProbe {
                t_probe: 1e6,
                threshold: 1e3,
            },
        );
        assert!(rep.divergence_proxy);
    }

    #[test]
    fn user_rate_unit_tolerance() {
        let ok = GrowthRate::from_expr("1 + t + 1e-13").unwrap();
        let bad = GrowthRate::from_expr("1.001 + t").unwrap();
        let p = DivergenceProbe::default();
        assert!(check_growth_axioms(&ok, &[0.0], p).unit_at_zero);
        assert!(!check_growth_axioms(&bad, &[0.0], p).unit_at_zero);
    }

    #[test]
    fn shape_matches_eval() {
        for r in all_builtins() {
            let s = r.shape().unwrap();
            for &t in &[0.0, 0.5, 3.0, 40.0] {
                let rel = (s.eval(t) - r.eval(t)).abs() / r.eval(t);
                assert!(rel < 1e-13);
            }
        }
    }

    proptest! {
        #[test]
        fn derivative_matches_central_difference(t in 0.0f64..50.0, which in 0usize..6) {
            let r = &all_builtins()[which];
            let h = 1e-5 * (1.0 + t);
            let fd = (r.eval(t + h) - r.eval(t - h)) / (2.0 * h);
            let d = r.derivative(t).unwrap();
            prop_assert!(((fd - d) / d).abs() < 1e-6, "{} at {}: {} vs {}", r.label(), t, fd, d);
        }

        #[test]
        fn log_derivative_consistent(t in 0.0f64..30.0, which in 0usize..6) {
            let r = &all_builtins()[which];
            let exact = r.derivative(t).unwrap() / r.eval(t);
            prop_assert!((r.log_derivative(t) - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        }
    }
}
