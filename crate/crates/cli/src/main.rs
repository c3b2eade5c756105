#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use commands::{Command, Runner};
use config::RunConfig;
use output::OutDir;

/// Local stable manifolds of nonuniformly hyperbolic nonautonomous
/// equations by the Lyapunov-Perron method.
#[derive(Debug, Parser)]
#[command(name = "lpstable", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Run config (JSON), or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory (default: the config's `output`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `verification.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplies every tolerance of the solver and the checks.
    #[arg(long)]
    tol_scale: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match RunConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(s) = cli.seed {
        cfg.verification.seed = s;
    }
    if let Some(x) = cli.tol_scale {
        if !(x > 0.0 && x.is_finite()) {
            eprintln!("config error: --tol-scale must be positive, got {x}");
            return ExitCode::from(2);
        }
        cfg.scale_tolerances(x);
    }
    if cli.command == Command::PerturbCompare && cfg.compare.is_none() {
        eprintln!("config error: perturb-compare needs a `compare` section");
        return ExitCode::from(2);
    }
    let model = match cfg.build() {
        Ok(m) => m,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        lpstable::exec::configure_threads(n.max(1));
    }
    let out_dir = cli.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let out = match OutDir::create(&out_dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let mut runner = Runner {
        cfg: &cfg,
        model,
        out,
        solution: None,
        results: serde_json::Map::new(),
    };
    let outcome = runner.run(cli.command);
    let (status, code) = match &outcome {
        Ok(true) => ("pass", 0),
        Ok(false) => ("fail", 1),
        Err(e) => {
            eprintln!("error: {e:#}");
            runner.results.insert("error".into(), json!(e.to_string()));
            ("error", 1)
        }
    };
    let mut artifacts = runner.out.written.clone();
    artifacts.push("manifest.json".into());
    let manifest = json!({
        "tool": "lpstable",
        "version": env!("CARGO_PKG_VERSION"),
        "command": format!("{:?}", cli.command),
        "status": status,
        "rng": "ChaCha8",
        "seed": cfg.verification.seed,
        "tol_scale": cli.tol_scale.unwrap_or(1.0),
        "threads": cli.threads,
        "results": runner.results,
        "artifacts": artifacts,
        "resolved_config": cfg,
    });
    if let Err(e) = runner.out.json("manifest.json", &manifest) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}
