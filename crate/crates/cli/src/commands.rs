use anyhow::{anyhow, Result};
use lpstable::admissibility::{self, fundamental_identity_residual, BetaFunction};
use lpstable::dichotomy::{pair_grid, sharpness_pairs, sharpness_probe, verify_dichotomy};
use lpstable::manifold::{solve_manifold, Solution};
use lpstable::perturbation::check_class_conditions;
use lpstable::rates::check_growth_axioms;
use lpstable::verify::{self, DistanceSampling};
use serde_json::json;

use crate::config::{Model, RunConfig};
use crate::output::{names, num, OutDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    CheckRates,
    CheckDichotomy,
    Admissibility,
    SolveManifold,
    Verify,
    PerturbCompare,
    All,
}

/// Outcome of a step: `Ok(true)` all checks passed, `Ok(false)` a check
/// failed (reported), `Err` a numerical failure.
pub struct Runner<'a> {
    pub cfg: &'a RunConfig,
    pub model: Model,
    pub out: OutDir,
    pub solution: Option<Solution>,
    pub results: serde_json::Map<String, serde_json::Value>,
}

impl<'a> Runner<'a> {
    pub fn run(&mut self, cmd: Command) -> Result<bool> {
        match cmd {
            Command::CheckRates => self.check_rates(),
            Command::CheckDichotomy => self.check_dichotomy(),
            Command::Admissibility => self.admissibility(),
            Command::SolveManifold => self.solve().map(|_| true),
            Command::Verify => self.verify(),
            Command::PerturbCompare => self.perturb_compare(),
            Command::All => {
                let mut steps = vec![
                    Command::CheckRates,
                    Command::CheckDichotomy,
                    Command::Admissibility,
                    Command::SolveManifold,
                    Command::Verify,
                ];
                if self.cfg.compare.is_some() {
                    steps.push(Command::PerturbCompare);
                }
                for step in steps {
                    if !self.run(step)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }

    fn record(&mut self, step: &str, pass: bool) {
        self.results.insert(step.to_string(), json!({ "pass": pass }));
        eprintln!("{step}: {}", if pass { "pass" } else { "FAIL" });
    }

    fn check_rates(&mut self) -> Result<bool> {
        let v = &self.cfg.verification;
        let grid = admissibility::uniform_grid(v.rate_grid_max, v.rate_grid_points);
        let mu = check_growth_axioms(&self.model.mu, &grid, v.mu_probe);
        let nu = check_growth_axioms(&self.model.nu, &grid, v.nu_probe);
        let pass = mu.pass() && nu.pass();
        for (name, r, probe) in [("mu", &mu, v.mu_probe), ("nu", &nu, v.nu_probe)] {
            if let Some((t1, t2)) = r.monotone_violation_at {
                eprintln!("{name} ({}): monotonicity violated between t = {t1} and t = {t2}", r.label);
            }
            if !r.unit_at_zero {
                eprintln!("{name} ({}): value at 0 is not 1", r.label);
            }
            if !r.divergence_proxy {
                eprintln!("{name} ({}): below {} at t = {}", r.label, probe.threshold, probe.t_probe);
            }
        }
        self.out.json(
            "report-rates.json",
            &json!({ "pass": pass, "grid_points": grid.len(), "mu": mu, "nu": nu }),
        )?;
        let (m, n) = (&self.model.mu, &self.model.nu);
        self.out.csv(
            "rates.csv",
            &["t".into(), "mu".into(), "nu".into()],
            grid.iter().map(|&t| vec![num(t), num(m.eval(t)), num(n.eval(t))]),
        )?;
        self.record("check-rates", pass);
        Ok(pass)
    }

    fn check_dichotomy(&mut self) -> Result<bool> {
        let v = &self.cfg.verification;
        let mut grid = pair_grid(v.dichotomy_t_max, v.dichotomy_pairs);
        grid.extend(sharpness_pairs(&v.sharpness_ks));
        let cert = verify_dichotomy(
            &self.model.system,
            &self.model.params,
            &grid,
            v.dichotomy_tol,
            self.cfg.solver.exec,
        )?;
        let mut pass = cert.pass;
        let sharp = if v.sharpness_ks.is_empty() {
            None
        } else {
            let rows = sharpness_probe(&self.model.system, &v.sharpness_ks)?;
            let worst = rows.iter().map(|r| r.residual / r.bound).fold(0.0, f64::max);
            pass &= worst <= v.dichotomy_tol;
            self.out.csv(
                "sharpness.csv",
                &["k", "t", "s", "u", "bound", "residual"].map(String::from),
                rows.iter().map(|r| {
                    vec![r.k.to_string(), num(r.t), num(r.s), num(r.u), num(r.bound), num(r.residual)]
                }),
            )?;
            Some(json!({ "rows": rows, "max_relative_residual": worst }))
        };
        self.out
            .json("report-dichotomy.json", &json!({ "pass": pass, "certificate": cert, "sharpness": sharp }))?;
        self.record("check-dichotomy", pass);
        Ok(pass)
    }

    fn admissibility(&mut self) -> Result<bool> {
        let v = &self.cfg.verification;
        let s = &self.cfg.solver;
        let (c, q) = (self.model.pert.c(), self.model.pert.q());
        let grid = admissibility::uniform_grid(v.beta_grid_max, v.beta_grid_points);
        let rep = admissibility::assess(&self.model.params, c, q, s.big_c, &grid, s.delta_cap, s.exec)?;
        let identity = if rep.integral_convergent {
            let pts = admissibility::uniform_grid(v.beta_grid_max, 10);
            let mut worst = 0.0f64;
            for &t in &pts {
                worst = worst.max(fundamental_identity_residual(&self.model.params, q, t)?);
            }
            Some(worst)
        } else {
            None
        };
        let pass = rep.pass && identity.is_some_and(|r| r <= 1e-6);
        if rep.integral_convergent {
            let bf = BetaFunction::build(&self.model.params, q, v.beta_grid_max, s.exec)?;
            self.out.csv(
                "beta.csv",
                &["t", "beta", "beta_tilde"].map(String::from),
                grid.iter().map(|&t| vec![num(t), num(bf.beta(t)), num(bf.beta_tilde(t))]),
            )?;
        }
        for n in &rep.notes {
            eprintln!("admissibility: {n}");
        }
        self.out.json(
            "report-admissibility.json",
            &json!({ "pass": pass, "report": rep, "max_fundamental_identity_residual": identity }),
        )?;
        self.record("admissibility", pass);
        Ok(pass)
    }

    fn solve(&mut self) -> Result<()> {
        if self.solution.is_some() {
            return Ok(());
        }
        let sol = solve_manifold(&self.model.system, &self.model.params, &self.model.pert, &self.cfg.solver)?;
        let (n_e, n_f) = (sol.graph.n_e(), sol.graph.n_f());
        let mut header = vec!["s".to_string()];
        header.extend(names("xi", n_e));
        header.extend(names("phi", n_f));
        self.out.csv(
            "graph.csv",
            &header,
            sol.graph.rows().into_iter().map(|(s, xi, phi)| {
                std::iter::once(num(s)).chain(xi.into_iter().map(num)).chain(phi.into_iter().map(num)).collect()
            }),
        )?;
        self.out.csv(
            "history.csv",
            &["iter", "distance", "ratio"].map(String::from),
            sol.report
                .history
                .iter()
                .map(|h| vec![h.iter.to_string(), num(h.distance), h.ratio.map(num).unwrap_or_default()]),
        )?;
        let spacing: Vec<f64> = (0..sol.graph.s_grid().len()).map(|j| sol.graph.spacing(j)).collect();
        self.out.json("report-solve.json", &json!({ "report": sol.report, "node_spacing": spacing }))?;
        self.results.insert(
            "solve".into(),
            json!({
                "delta": sol.report.delta,
                "C": sol.report.big_c,
                "t_cut": sol.report.t_cut,
                "iterations": sol.report.iterations,
            }),
        );
        eprintln!(
            "solve-manifold: converged in {} iterations (delta {}, T_cut {})",
            sol.report.iterations, sol.report.delta, sol.report.t_cut
        );
        self.solution = Some(sol);
        Ok(())
    }

    fn verify(&mut self) -> Result<bool> {
        self.solve()?;
        let sol = self.solution.as_ref().expect("solved");
        let g = &sol.graph;
        let v = &self.cfg.verification;
        let pert = &self.model.pert;
        let s_last = *g.s_grid().last().unwrap();
        let r_max = (0..g.s_grid().len()).map(|j| g.slice_radius(j)).fold(0.0, f64::max);
        let class = check_class_conditions(pert, s_last + v.decay_span, 2.0 * r_max, v.class_samples, v.seed);
        let inv = verify::sample_invariance(g, v.invariance_samples, v.tau_max, v.seed);
        let pairs = verify::sample_decay(g, v.decay_samples, v.decay_span, v.seed.wrapping_add(1));
        let rep = verify::verify_graph(
            g,
            &self.model.system,
            pert,
            &inv,
            &pairs,
            v.flow_h,
            v.tol,
            self.cfg.solver.lipschitz_tol,
            self.cfg.solver.exec,
        )?;
        let (n_e, n_f) = (g.n_e(), g.n_f());
        let mut header = vec!["s".to_string()];
        header.extend(names("xi", n_e));
        header.push("tau".into());
        header.extend(names("x_tau", n_e));
        header.extend(names("y_tau", n_f));
        header.extend(["residual".into(), "radius_ratio".into()]);
        self.out.csv(
            "invariance.csv",
            &header,
            rep.invariance.rows.iter().map(|r| {
                let mut row = vec![num(r.s)];
                row.extend(r.xi.iter().copied().map(num));
                row.push(num(r.tau));
                row.extend(r.x_tau.iter().copied().map(num));
                row.extend(r.y_tau.iter().copied().map(num));
                row.extend([num(r.residual), num(r.radius_ratio)]);
                row
            }),
        )?;
        let mut header = vec!["s".to_string()];
        header.extend(names("xi", n_e));
        header.extend(names("xi_bar", n_e));
        header.extend(["t", "observed", "bound", "ratio"].map(String::from));
        self.out.csv(
            "decay.csv",
            &header,
            rep.decay.rows.iter().map(|r| {
                let mut row = vec![num(r.s)];
                row.extend(r.xi.iter().copied().map(num));
                row.extend(r.xi_bar.iter().copied().map(num));
                row.extend([num(r.t), num(r.observed), num(r.bound), num(r.ratio)]);
                row
            }),
        )?;
        let pass = rep.pass && class.pass;
        if !class.pass {
            eprintln!("verify: perturbation violates its class conditions: {class:?}");
        }
        let summary = json!({
            "pass": pass,
            "class_conditions": class,
            "invariance": {
                "max_residual": rep.invariance.max_residual,
                "max_radius_ratio": rep.invariance.max_radius_ratio,
                "tol": rep.invariance.tol,
                "pass": rep.invariance.pass,
                "samples": rep.invariance.rows.len(),
            },
            "decay": {
                "max_ratio": rep.decay.max_ratio,
                "tol": rep.decay.tol,
                "pass": rep.decay.pass,
                "samples": rep.decay.rows.len(),
            },
            "lipschitz": rep.lipschitz,
        });
        self.out.json("report-verify.json", &summary)?;
        self.record("verify", pass);
        Ok(pass)
    }

    fn perturb_compare(&mut self) -> Result<bool> {
        let cmp = self
            .cfg
            .compare
            .as_ref()
            .ok_or_else(|| anyhow!("perturb-compare needs a `compare` section in the config"))?;
        let f_bar = self.model.f_bar.as_ref().expect("built with compare");
        let pert = &self.model.pert;
        let sampling = DistanceSampling::new(
            pert.dim(),
            pert.n_e(),
            cmp.t_max,
            cmp.times,
            cmp.r_max,
            cmp.radii,
            cmp.directions,
            self.cfg.verification.seed,
        );
        let rep = verify::check_perturbation_bound(
            &self.model.system,
            &self.model.params,
            pert,
            f_bar,
            &self.cfg.solver,
            &sampling,
        )?;
        let pass = rep.pass;
        self.out.json(
            "report-perturb.json",
            &json!({ "pass": pass, "samples": sampling.len(), "report": rep }),
        )?;
        self.record("perturb-compare", pass);
        Ok(pass)
    }
}
