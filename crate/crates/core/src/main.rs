use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use fracsing::cli::{num, run, RunConfig, Severity};

/// Fractional Laplacian, extension, capacity and moving-sphere experiments.
#[derive(Parser, Debug)]
#[command(name = "fracsing", version)]
struct Args {
    /// constants, fraclap-check, extension-check, solve, capacity,
    /// equivalence, movesphere, blowup, symmetry, poincare or full-suite
    experiment: String,
    /// JSON configuration; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// e.g. "ball(0,0;0.25)", "point(0,0)+strip(1;0.5)"
    #[arg(long)]
    set: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let file = match &args.config {
        Some(path) => match RunConfig::from_file(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    let flags = RunConfig {
        experiment: Some(args.experiment),
        n: args.n,
        sigma: args.sigma,
        k: args.k,
        set: args.set,
        levels: args.levels,
        seed: args.seed,
        output_dir: args.out,
    };
    let cfg = file.overridden_by(&flags);
    let res = match run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for d in &res.diagnostics {
        let tag = if d.severity == Severity::Error { "error" } else { "note" };
        eprintln!("{tag}: {}", d.message);
    }
    if let Some(o) = &res.outcome {
        for c in &o.checks {
            let r = &c.report;
            eprintln!(
                "{} {}/{}: measured {} vs {} (tol {})",
                if r.pass { "PASS" } else { "FAIL" },
                c.experiment,
                r.name,
                num(r.measured),
                num(r.predicted),
                num(r.tolerance)
            );
        }
    }
    let failing = res.failing();
    if !failing.is_empty() {
        eprintln!("failing checks: {}", failing.join(", "));
    }
    ExitCode::from(res.exit_code as u8)
}
