mod config;
mod experiment;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use manprox::diagnostics::{check_assumption_rank, check_second_order, STATIONARY_TOL};
use manprox::matrix_io;
use manprox::solvers::evaluate;
use manprox::{Algorithm, CompositeObjective};
use nalgebra::DVector;
use serde_json::json;

use config::{ProblemKind, RunSpec, Settings};
use experiment::Job;

#[derive(Parser)]
#[command(
    name = "manprox",
    version,
    about = "Riemannian proximal Newton experiments for sparse PCA"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm over a set of seeds.
    Run {
        /// TOML file with the same keys as the flags.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run several algorithms on the same instances and emit `||v_k||`
    /// against time.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Stationarity, rank and second-order checks at a point.
    Check {
        /// `n x r` matrix file, e.g. one written by `run`.
        #[arg(long)]
        point: PathBuf,
        /// Seed of the instance the point belongs to.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Write a data matrix (`.bin` or `.mpx` for binary, CSV otherwise).
    GenData {
        #[arg(long, value_enum, default_value_t = ProblemKind::Random)]
        problem: ProblemKind,
        #[arg(long, default_value_t = 50)]
        m: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, settings } => {
            let spec = RunSpec::resolve(
                Settings::layered(config.as_deref(), settings)?,
                &[Algorithm::RpnG],
            )?;
            if spec.algos.len() != 1 {
                bail!("run takes a single algorithm; use compare for several");
            }
            experiment_command(&spec, false)
        }
        Command::Compare { config, settings } => {
            let spec = RunSpec::resolve(
                Settings::layered(config.as_deref(), settings)?,
                &[Algorithm::ManPg, Algorithm::RpnG],
            )?;
            experiment_command(&spec, true)
        }
        Command::Check {
            point,
            seed,
            config,
            settings,
        } => {
            let spec = RunSpec::resolve(
                Settings::layered(config.as_deref(), settings)?,
                &[Algorithm::RpnG],
            )?;
            check_command(&spec, &point, seed)
        }
        Command::GenData {
            problem,
            m,
            n,
            seed,
            out,
        } => {
            let a = experiment::data_matrix(problem, m, n, seed)?;
            matrix_io::save(&a, &out).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "wrote {} x {} {problem} matrix to {}",
                a.nrows(),
                a.ncols(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn experiment_command(spec: &RunSpec, compare: bool) -> Result<ExitCode> {
    std::fs::create_dir_all(&spec.out)
        .with_context(|| format!("creating {}", spec.out.display()))?;
    let jobs = experiment::run_all(spec)?;
    let out = |name: &str| spec.out.join(name);
    experiment::write_traces(&jobs, &out("trace.jsonl"))?;
    let rows = experiment::summarize(spec, &jobs);
    experiment::write_summary(&rows, &out("summary.csv"))?;
    experiment::write_diagnostics(&jobs, &out("diagnostics.json"))?;
    experiment::write_points(&jobs, &spec.out)?;
    if compare {
        experiment::write_compare(&jobs, &out("compare.csv"))?;
    }
    report(&jobs, &rows);
    let all_failed = jobs.iter().all(|j| j.trace().is_none());
    Ok(if all_failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn report(jobs: &[Job], rows: &[experiment::SummaryRow]) {
    for job in jobs {
        match &job.outcome {
            Ok((_, d)) => println!(
                "{} seed {}: {} after {} iterations, rate {:?}",
                job.algo, job.seed, d.status, d.iterations, d.rate.classification
            ),
            Err(e) => println!("{} seed {}: error: {e}", job.algo, job.seed),
        }
    }
    println!("{}", experiment::SUMMARY_HEADER);
    for r in rows {
        println!(
            "{},{},{},{},{},{},{},{:.10},{:.3},{:.3e}",
            r.algo, r.n, r.r, r.mu, r.iter, r.iter_v, r.iter_u, r.f, r.sparsity, r.v_norm
        );
    }
}

fn check_command(spec: &RunSpec, point: &Path, seed: u64) -> Result<ExitCode> {
    let (problem, _) = experiment::instance(spec, seed)?;
    let cfg = experiment::solver_config(spec, &problem);
    let m = matrix_io::load(point).with_context(|| format!("loading {}", point.display()))?;
    let manifold = problem.manifold();
    if (m.nrows(), m.ncols()) != manifold.shape() {
        bail!(
            "point is {} x {}, the problem needs {} x {}",
            m.nrows(),
            m.ncols(),
            manifold.shape().0,
            manifold.shape().1
        );
    }
    let x = manifold.point(DVector::from_column_slice(m.as_slice()))?;
    let eval = evaluate(&problem, &x, cfg.t, None)?;
    let stationarity = eval.prox.v_norm();
    let stationary = stationarity <= STATIONARY_TOL;
    let rank = check_assumption_rank(&x, &eval.prox.mask)?;
    let second = if stationary {
        Some(check_second_order(&problem, &x, &eval.prox, cfg.t).map_err(|e| e.to_string()))
    } else {
        None
    };
    let second_ok = matches!(&second, Some(Ok(s)) if s.psd && s.j_nonsingular != Some(false));
    let pass = stationary && rank.ok && second_ok;
    let report = json!({
        "point": point,
        "problem": spec.problem.to_string(),
        "seed": seed,
        "mu": spec.mu,
        "t": cfg.t,
        "objective": eval.f,
        "stationarity": stationarity,
        "stationary": stationary,
        "mask": eval.prox.mask.active_indices(),
        "rank": rank,
        "second_order": match &second {
            Some(Ok(s)) => json!(s),
            Some(Err(e)) => json!({ "error": e }),
            None => json!(null),
        },
        "pass": pass,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
