//! Run configuration (JSON). Unknown keys are rejected; every omitted
//! field takes the default shown in `RunConfig::default` and is written
//! back, resolved, into the run manifest.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lpstable::dichotomy::{example_system, DichotomyParams, LinearSystem};
use lpstable::manifold::SolverConfig;
use lpstable::perturbation::Perturbation;
use lpstable::rates::{builtin_rate, DivergenceProbe, Family, GrowthRate};
use serde::{Deserialize, Serialize};

/// Tagged objects are written `{"kind": "<variant>", ...fields}`. They are
/// read through the external form `{"<variant>": {...}}` so that errors
/// keep the path of the offending field.
mod kind_tagged {
    use serde::de::{DeserializeOwned, Error as _};
    use serde::ser::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::{Map, Value};

    pub fn serialize<T: Serialize, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        let ext = serde_json::to_value(v).map_err(S::Error::custom)?;
        let Value::Object(outer) = ext else {
            return Err(S::Error::custom("tagged value is not an object"));
        };
        let (kind, fields) = outer.into_iter().next().ok_or_else(|| S::Error::custom("empty tagged value"))?;
        let mut flat = Map::new();
        flat.insert("kind".into(), Value::String(kind));
        if let Value::Object(f) = fields {
            flat.extend(f);
        }
        Value::Object(flat).serialize(s)
    }

    pub fn deserialize<'de, T: DeserializeOwned, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
        let Value::Object(mut obj) = Value::deserialize(d)? else {
            return Err(D::Error::custom("expected an object with a `kind` field"));
        };
        let kind = match obj.remove("kind") {
            Some(Value::String(k)) => k,
            Some(_) => return Err(D::Error::custom("`kind` must be a string")),
            None => return Err(D::Error::custom("missing field `kind`")),
        };
        let ext = Value::Object(Map::from_iter([(kind, Value::Object(obj))]));
        serde_path_to_error::deserialize(ext).map_err(|e| {
            let path = e.path().to_string();
            match path.split_once('.') {
                Some((_, field)) => D::Error::custom(format!("field `{field}`: {}", e.inner())),
                None => D::Error::custom(e.inner()),
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSpec {
    Builtin {
        family: Family,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
        /// The `ν` companion of the log families.
        #[serde(default)]
        companion: bool,
    },
    Expr {
        expr: String,
    },
}

impl RateSpec {
    pub fn build(&self) -> lpstable::Result<GrowthRate> {
        match self {
            RateSpec::Builtin {
                family,
                lambda,
                companion,
            } => {
                let params = lambda.iter().map(|&l| ("lambda".to_string(), l)).collect();
                builtin_rate(*family, &params, *companion)
            }
            RateSpec::Expr { expr } => GrowthRate::from_expr(expr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSpec {
    #[serde(with = "kind_tagged")]
    pub mu: RateSpec,
    #[serde(with = "kind_tagged")]
    pub nu: RateSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DichotomySpec {
    #[serde(rename = "D")]
    pub d: f64,
    pub a: f64,
    pub b: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Two-dimensional closed-form system built from the rates, with its
    /// own exponents.
    Example { a: f64, b: f64, eps: f64 },
    /// `A(t)` by entrywise expressions in `t`; stable block first.
    Matrix {
        a: Vec<Vec<String>>,
        n_e: usize,
        #[serde(default = "default_matrix_h")]
        h: f64,
    },
}

fn default_matrix_h() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSpec {
    /// `(0, coeff·u³)`
    Cubic { coeff: f64 },
    Zero { n: usize, n_e: usize, q: f64 },
    /// One expression per component in `t, x1..xn` (and `u, v` when `n = 2`).
    Expr {
        components: Vec<String>,
        n_e: usize,
        c: f64,
        q: f64,
    },
}

impl PerturbationSpec {
    pub fn build(&self) -> lpstable::Result<Perturbation> {
        match self {
            PerturbationSpec::Cubic { coeff } => Perturbation::cubic(*coeff),
            PerturbationSpec::Zero { n, n_e, q } => Perturbation::zero(*n, *n_e, *q),
            PerturbationSpec::Expr { components, n_e, c, q } => Perturbation::from_exprs(components, *n_e, *c, *q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationSpec {
    /// Seed of the ChaCha8 generator used for every random sample.
    pub seed: u64,
    pub invariance_samples: usize,
    pub decay_samples: usize,
    pub tau_max: f64,
    pub decay_span: f64,
    pub flow_h: f64,
    pub tol: f64,
    pub class_samples: usize,
    pub dichotomy_pairs: usize,
    pub dichotomy_t_max: f64,
    pub dichotomy_tol: f64,
    /// `k` values of the equality probe `(2kπ, (2k−1)π)`; empty to skip.
    pub sharpness_ks: Vec<u32>,
    pub rate_grid_max: f64,
    pub rate_grid_points: usize,
    pub mu_probe: DivergenceProbe,
    pub nu_probe: DivergenceProbe,
    pub beta_grid_max: f64,
    pub beta_grid_points: usize,
}

impl Default for VerificationSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            invariance_samples: 200,
            decay_samples: 200,
            tau_max: 2.0,
            decay_span: 5.0,
            flow_h: 1e-3,
            tol: 1e-2,
            class_samples: 2000,
            dichotomy_pairs: 200,
            dichotomy_t_max: 8.0 * PI,
            dichotomy_tol: 1e-9,
            sharpness_ks: Vec::new(),
            rate_grid_max: 50.0,
            rate_grid_points: 501,
            mu_probe: DivergenceProbe::default(),
            nu_probe: DivergenceProbe::default(),
            beta_grid_max: 20.0,
            beta_grid_points: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    #[serde(with = "kind_tagged")]
    pub f_bar: PerturbationSpec,
    #[serde(default = "d_times")]
    pub times: usize,
    #[serde(default = "d_t_max")]
    pub t_max: f64,
    #[serde(default = "d_radii")]
    pub radii: usize,
    #[serde(default = "d_r_max")]
    pub r_max: f64,
    #[serde(default = "d_dirs")]
    pub directions: usize,
}

fn d_times() -> usize {
    11
}
fn d_t_max() -> f64 {
    10.0
}
fn d_radii() -> usize {
    7
}
fn d_r_max() -> f64 {
    0.1
}
fn d_dirs() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub rates: RatesSpec,
    pub dichotomy: DichotomySpec,
    #[serde(with = "kind_tagged")]
    pub system: SystemSpec,
    #[serde(with = "kind_tagged")]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub verification: VerificationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Everything built from a config.
pub struct Model {
    pub mu: GrowthRate,
    pub nu: GrowthRate,
    pub params: DichotomyParams,
    pub system: LinearSystem,
    pub pert: Perturbation,
    pub f_bar: Option<Perturbation>,
}

impl RunConfig {
    /// Reads a config, or the resolved config stored in a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
        let (value, prefix) = match value.get("resolved_config") {
            Some(inner) => (inner.clone(), "resolved_config."),
            None => (value, ""),
        };
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let mut at = e.path().to_string();
            let mut msg = e.inner().to_string();
            if let Some((field, rest)) = msg.strip_prefix("field `").and_then(|m| m.split_once("`: ")) {
                at = format!("{at}.{field}");
                msg = rest.to_string();
            }
            anyhow::anyhow!("{}: at `{prefix}{at}`: {msg}", path.display())
        })?;
        Ok(cfg)
    }

    pub fn scale_tolerances(&mut self, x: f64) {
        let s = &mut self.solver;
        s.outer_tol *= x;
        s.picard_tol *= x;
        s.tail_tol *= x;
        s.lipschitz_tol *= x;
        let v = &mut self.verification;
        v.tol *= x;
        v.dichotomy_tol *= x;
    }

    pub fn build(&self) -> Result<Model> {
        let mu = self.rates.mu.build().context("rates.mu")?;
        let nu = self.rates.nu.build().context("rates.nu")?;
        let dc = &self.dichotomy;
        let params = DichotomyParams::new(dc.d, dc.a, dc.b, dc.eps, mu.clone(), nu.clone()).context("dichotomy")?;
        let system = match &self.system {
            SystemSpec::Example { a, b, eps } => example_system(*a, *b, *eps, mu.clone(), nu.clone()),
            SystemSpec::Matrix { a, n_e, h } => LinearSystem::matrix(a, *n_e, *h),
        }
        .context("system")?;
        let pert = self.perturbation.build().context("perturbation")?;
        if pert.dim() != system.dim() || pert.n_e() != system.n_e() {
            bail!(
                "perturbation: acts on R^{} with n_E = {}, system has R^{} with n_E = {}",
                pert.dim(),
                pert.n_e(),
                system.dim(),
                system.n_e()
            );
        }
        let f_bar = match &self.compare {
            Some(c) => Some(c.f_bar.build().context("compare.f_bar")?),
            None => None,
        };
        Ok(Model {
            mu,
            nu,
            params,
            system,
            pert,
            f_bar,
        })
    }
}
