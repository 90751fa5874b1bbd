use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lmflow::harness::{
    emit_figure_data, render_checks, render_table, run_experiment, verify_all, ExperimentSpec,
    ProblemKind,
};
use lmflow::{Error, Method, RunConfig};

#[derive(Parser)]
#[command(name = "lmflow", version, about = "Lagrange multiplier descent methods and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method on one problem.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Method::Backtracking)]
        method: Method,
        /// Step size, or initial step size for the adaptive method. Defaults to 1/L for
        /// exact_lm and fixed_gd, 1 otherwise.
        #[arg(long)]
        h0: Option<f64>,
        #[arg(long, default_value_t = 1e-4)]
        c: f64,
        /// Initial trial step of the Armijo rule (problem default when omitted).
        #[arg(long)]
        armijo_h_init: Option<f64>,
    },
    /// Reproduce the step-size table for a problem.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Run the invariant suite; exits with 1 when any check fails.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Replace the advertised Lipschitz constant.
        #[arg(long)]
        lipschitz: Option<f64>,
    },
    /// Write per-method trajectories for plotting.
    Emit {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, value_enum, default_value_t = ProblemKind::Quadratic)]
    problem: ProblemKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    eta_star: f64,
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Problem dimension (problem default when omitted).
    #[arg(long)]
    n: Option<usize>,
    /// Load the instance from a JSON document.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Write the JSON summary to this path.
    #[arg(long)]
    json_summary: Option<PathBuf>,
}

impl Common {
    fn apply(&self, mut spec: ExperimentSpec) -> ExperimentSpec {
        for m in &mut spec.methods {
            m.config.alpha = self.alpha;
            m.config.eta_star = self.eta_star;
            m.config.eps = self.eps;
            m.config.max_iter = self.max_iter;
        }
        if let Some(n) = self.n {
            spec.params.n = n;
        }
        spec.instance_file = self.instance.clone();
        spec.out_dir = self.out_dir.clone();
        spec
    }
}

fn validate(spec: &ExperimentSpec) -> lmflow::Result<()> {
    for m in &spec.methods {
        let mut c = m.config;
        if c.h0.is_nan() {
            c.h0 = 1.0;
        }
        c.validate()?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Option<PathBuf>, value: &T) -> lmflow::Result<()> {
    if let Some(path) = path {
        std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> lmflow::Result<bool> {
    match cli.command {
        Command::Solve {
            common,
            method,
            h0,
            c,
            armijo_h_init,
        } => {
            let h0 = h0.unwrap_or(match method {
                Method::ExactLm | Method::FixedGd => f64::NAN,
                _ => 1.0,
            });
            let config = RunConfig {
                method,
                h0,
                c_armijo: c,
                armijo_h_init: armijo_h_init.unwrap_or(common.problem.armijo_h_init()),
                ..RunConfig::default()
            };
            let spec = common.apply(ExperimentSpec::single(common.problem, common.seed, config));
            validate(&spec)?;
            let (run, summary) = run_experiment(&spec)?;
            for (label, s) in &summary.per_method {
                println!(
                    "{label}: iterations {} avg_step {:?} avg_backtracks {:?} final_f_gap {:?} ({:?})",
                    s.iterations, s.avg_step, s.avg_backtracks, s.final_f_gap, s.termination
                );
            }
            write_json(&common.json_summary, &summary)?;
            if let Some(r) = run.runs.first() {
                if let Err(e) = &r.outcome {
                    return Err(Error::Config(e.to_string()));
                }
            }
            Ok(true)
        }
        Command::Bench { common } => {
            let spec = common.apply(ExperimentSpec::table(common.problem, common.seed));
            validate(&spec)?;
            let (_, summary) = run_experiment(&spec)?;
            print!("{}", render_table(&spec, &summary));
            write_json(&common.json_summary, &summary)?;
            Ok(true)
        }
        Command::Verify { common, lipschitz } => {
            let mut spec = common.apply(ExperimentSpec::verification(common.problem, common.seed));
            spec.lipschitz_override = lipschitz;
            validate(&spec)?;
            let bundle = verify_all(&spec)?;
            print!("{}", render_checks(&bundle));
            write_json(&common.json_summary, &bundle)?;
            Ok(bundle.all_passed())
        }
        Command::Emit { common } => {
            let spec = common.apply(ExperimentSpec::table(common.problem, common.seed));
            validate(&spec)?;
            let dir = common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            for path in emit_figure_data(&spec, &dir)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
