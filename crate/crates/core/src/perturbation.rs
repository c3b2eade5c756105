//! Nonlinear perturbations `f(t, v)` with class constants `(c, q)`:
//! `f(t,0) = 0` and `‖f(t,u) − f(t,v)‖ ≤ c‖u−v‖(‖u‖+‖v‖)^q`, all norms
//! being the split sum-norm `‖(x,y)‖ = ‖x‖ + ‖y‖`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::norm;

type CustomFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Zero,
    /// `(0, k·u³)` on `ℝ²`.
    Cubic(f64),
    /// One expression per component, in `t, x1, …, xn` (and `u, v` when
    /// `n = 2`).
    Expr(Vec<Expr>),
    Custom(CustomFn),
}

#[derive(Clone)]
pub struct Perturbation {
    label: String,
    n: usize,
    n_e: usize,
    c: f64,
    q: f64,
    kind: Kind,
    e_free: bool,
}

impl fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Perturbation")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("n_e", &self.n_e)
            .field("c", &self.c)
            .field("q", &self.q)
            .finish()
    }
}

fn check_class(c: f64, q: f64) -> Result<()> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::param("c", format!("must be nonnegative, got {c}")));
    }
    if !(q > 1.0 && q.is_finite()) {
        return Err(Error::param("q", format!("must exceed 1, got {q}")));
    }
    Ok(())
}

fn check_dims(n: usize, n_e: usize) -> Result<()> {
    if n < 2 || n_e == 0 || n_e >= n {
        return Err(Error::param("n_E", format!("need 1 <= n_E < n with n >= 2, got n_E = {n_e}, n = {n}")));
    }
    Ok(())
}

impl Perturbation {
    /// `f ≡ 0` on `ℝⁿ`.
    pub fn zero(n: usize, n_e: usize, q: f64) -> Result<Self> {
        check_dims(n, n_e)?;
        check_class(0.0, q)?;
        Ok(Self {
            label: "zero".into(),
            n,
            n_e,
            c: 0.0,
            q,
            kind: Kind::Zero,
            e_free: true,
        })
    }

    /// `f(t,(u,v)) = (0, k u³)` with `c = |k|`, `q = 2`.
    pub fn cubic(k: f64) -> Result<Self> {
        if !k.is_finite() {
            return Err(Error::param("coeff", "must be finite"));
        }
        Ok(Self {
            label: format!("cubic({k})"),
            n: 2,
            n_e: 1,
            c: k.abs(),
            q: 2.0,
            kind: Kind::Cubic(k),
            e_free: true,
        })
    }

    pub fn from_exprs(components: &[String], n_e: usize, c: f64, q: f64) -> Result<Self> {
        let n = components.len();
        check_dims(n, n_e)?;
        check_class(c, q)?;
        let mut names: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=n).map(|i| format!("x{i}")))
            .collect();
        if n == 2 {
            names.extend(["u".to_string(), "v".to_string()]);
        }
        let vars: Vec<&str> = names.iter().map(String::as_str).collect();
        let exprs = components
            .iter()
            .map(|src| Expr::parse(src, &vars))
            .collect::<Result<Vec<_>>>()?;
        let e_free = exprs[..n_e]
            .iter()
            .all(|e| (0..vars.len()).all(|i| !e.uses_var(i)) && e.eval(&vec![0.0; vars.len()]) == 0.0);
        Ok(Self {
            label: format!("expr[{}]", components.join(", ")),
            n,
            n_e,
            c,
            q,
            kind: Kind::Expr(exprs),
            e_free,
        })
    }

    /// Arbitrary `f(t, v, out)`. `e_free` declares that the stable
    /// components of `f` vanish identically.
    pub fn custom<F>(label: &str, n: usize, n_e: usize, c: f64, q: f64, e_free: bool, f: F) -> Result<Self>
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        check_dims(n, n_e)?;
        check_class(c, q)?;
        Ok(Self {
            label: label.to_string(),
            n,
            n_e,
            c,
            q,
            kind: Kind::Custom(Arc::new(f)),
            e_free,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Whether the stable components of `f` vanish identically.
    pub fn e_free(&self) -> bool {
        self.e_free
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, Kind::Zero) || matches!(self.kind, Kind::Cubic(k) if k == 0.0)
    }

    /// Writes `f(t, v)` into `out`.
    pub fn eval_into(&self, t: f64, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n);
        match &self.kind {
            Kind::Zero => out.fill(0.0),
            Kind::Cubic(k) => {
                out[0] = 0.0;
                out[1] = k * v[0] * v[0] * v[0];
            }
            Kind::Expr(exprs) => {
                let mut vars = Vec::with_capacity(self.n + 3);
                vars.push(t);
                vars.extend_from_slice(v);
                if self.n == 2 {
                    vars.extend_from_slice(v);
                }
                for (o, e) in out.iter_mut().zip(exprs) {
                    *o = e.eval(&vars);
                }
            }
            Kind::Custom(f) => f(t, v, out),
        }
    }

    pub fn eval(&self, t: f64, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.eval_into(t, v, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub samples: usize,
    /// `max ‖f(t,0)‖`.
    pub max_at_origin: f64,
    /// `max ‖f(t,u)−f(t,v)‖ / (c‖u−v‖(‖u‖+‖v‖)^q)`.
    pub max_lipschitz_ratio: f64,
    /// `max ‖f(t,u)‖ / (c‖u‖^{q+1})`.
    pub max_growth_ratio: f64,
    pub pass: bool,
}

/// Samples the class conditions on `samples` random triples with `t` in
/// `[0, t_max]` and `u, v` in the sum-norm ball of radius `radius`.
pub fn check_class_conditions(
    f: &Perturbation,
    t_max: f64,
    radius: f64,
    samples: usize,
    seed: u64,
) -> ClassReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = f.n;
    let n_e = f.n_e;
    let zero = vec![0.0; n];
    let mut max0 = 0.0f64;
    let mut lip = 0.0f64;
    let mut growth = 0.0f64;
    let point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        // radii spread over several decades
        let r = radius * 10f64.powf(-3.0 * rng.random::<f64>());
        let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = norm::split(&p, n_e).max(1e-300);
        p.iter_mut().for_each(|x| *x *= r / s);
        p
    };
    for _ in 0..samples {
        let t = rng.random_range(0.0..=t_max);
        let u = point(&mut rng);
        let v = point(&mut rng);
        let f0 = f.eval(t, &zero);
        max0 = max0.max(norm::split(&f0, n_e));
        let (fu, fv) = (f.eval(t, &u), f.eval(t, &v));
        let (nu, nv) = (norm::split(&u, n_e), norm::split(&v, n_e));
        let diff = norm::split_dist(&fu, &fv, n_e);
        let bound = f.c * norm::split_dist(&u, &v, n_e) * (nu + nv).powf(f.q);
        lip = lip.max(ratio(diff, bound));
        growth = growth.max(ratio(norm::split(&fu, n_e), f.c * nu.powf(f.q + 1.0)));
    }
    ClassReport {
        samples,
        max_at_origin: max0,
        max_lipschitz_ratio: lip,
        max_growth_ratio: growth,
        pass: max0 == 0.0 && lip <= 1.0 + 1e-9 && growth <= 1.0 + 1e-9,
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_values() {
        let f = Perturbation::cubic(2.0).unwrap();
        assert_eq!(f.eval(0.3, &[0.1, 5.0]), vec![0.0, 2.0 * 0.1f64.powi(3)]);
        assert_eq!(f.c(), 2.0);
        assert!(f.e_free());
    }

    #[test]
    fn expression_components() {
        let f = Perturbation::from_exprs(&["0".into(), "u^3 + 0*t".into()], 1, 1.0, 2.0).unwrap();
        assert!(f.e_free());
        assert_eq!(f.eval(1.0, &[-0.5, 2.0])[1], -0.125);
        let g = Perturbation::from_exprs(&["x2^2".into(), "x1^3".into()], 1, 1.0, 2.0).unwrap();
        assert!(!g.e_free());
        assert_eq!(g.eval(0.0, &[2.0, 3.0]), vec![9.0, 8.0]);
        assert!(Perturbation::from_exprs(&["y".into(), "0".into()], 1, 1.0, 2.0).is_err());
        assert!(Perturbation::from_exprs(&["0".into(), "0".into()], 2, 1.0, 2.0).is_err());
        assert!(Perturbation::from_exprs(&["0".into(), "0".into()], 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn class_conditions() {
        for k in [1.0, 2.0, -1.05] {
            let r = check_class_conditions(&Perturbation::cubic(k).unwrap(), 10.0, 0.1, 2000, 7);
            assert!(r.pass, "{r:?}");
        }
        let z = Perturbation::zero(3, 1, 2.0).unwrap();
        assert!(check_class_conditions(&z, 10.0, 0.1, 100, 1).pass);
        // understated constant
        let f = Perturbation::from_exprs(&["0".into(), "3*u^3".into()], 1, 1.0, 2.0).unwrap();
        assert!(!check_class_conditions(&f, 10.0, 0.1, 2000, 1).pass);
        // nonzero at the origin
        let g = Perturbation::from_exprs(&["0".into(), "1e-3".into()], 1, 1.0, 2.0).unwrap();
        assert!(check_class_conditions(&g, 10.0, 0.1, 10, 1).max_at_origin > 0.0);
    }
}
