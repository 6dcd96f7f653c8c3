use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use manprox::diagnostics::{
    check_assumption_rank, check_second_order, check_support_stability, estimate_trace_rate,
    RankCheck, RateEstimate, SecondOrderCheck, STATIONARY_TOL,
};
use manprox::matrix_io;
use manprox::problems::{
    gen_handcrafted, gen_random, gen_synthetic, normalize_columns, random_start, SparsePca,
};
use manprox::solvers::{evaluate, run, Status};
use manprox::{
    Algorithm, CompositeObjective, ConvergenceTrace, ManifoldPoint, Phase, SolverConfig,
    TraceRecord,
};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ProblemKind, RunSpec};

pub const SUMMARY_HEADER: &str = "algo,n,r,mu,iter,iter_v,iter_u,f,sparsity,v_norm";
pub const COMPARE_HEADER: &str = "algo,seed,k,v_norm,cpu_seconds,phase";

/// Data matrix the experiments use for `seed`.
pub fn data_matrix(problem: ProblemKind, m: usize, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    Ok(match problem {
        ProblemKind::Random => normalize_columns(&gen_random(m, n, seed)?),
        ProblemKind::Synthetic => normalize_columns(&gen_synthetic(m, n, seed)?),
        ProblemKind::Handcrafted => gen_handcrafted(seed).0,
    })
}

/// Problem and starting point for one seed.
pub fn instance(spec: &RunSpec, seed: u64) -> Result<(SparsePca, ManifoldPoint)> {
    let a = match &spec.data {
        Some(path) => {
            matrix_io::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => data_matrix(spec.problem, spec.m, spec.n, seed)?,
    };
    let problem = SparsePca::new(a, spec.mu, spec.r)?;
    let x0 = match (spec.problem, &spec.data) {
        (ProblemKind::Handcrafted, None) => gen_handcrafted(seed).1,
        _ => random_start(problem.manifold(), seed),
    };
    Ok((problem, x0))
}

pub fn solver_config(spec: &RunSpec, problem: &SparsePca) -> SolverConfig {
    SolverConfig {
        t: spec.t.unwrap_or_else(|| problem.default_step()),
        ..spec.cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunDiagnostics {
    pub algo: Algorithm,
    pub seed: u64,
    pub status: String,
    pub iterations: usize,
    pub rate: RateEstimate,
    /// First Newton iteration at which the active set changed.
    pub support_change_at: Option<usize>,
    pub stationarity: Option<f64>,
    pub rank: Option<RankCheck>,
    pub second_order: Option<SecondOrderCheck>,
    pub notes: Vec<String>,
}

pub struct Job {
    pub algo: Algorithm,
    pub seed: u64,
    pub n: usize,
    pub outcome: Result<(ConvergenceTrace, RunDiagnostics), String>,
}

impl Job {
    pub fn trace(&self) -> Option<&ConvergenceTrace> {
        match &self.outcome {
            Ok((t, _)) if !t.is_failed() => Some(t),
            _ => None,
        }
    }
}

fn status_name(s: &Status) -> String {
    match s {
        Status::Converged => "converged".into(),
        Status::MaxIter => "max-iter".into(),
        Status::Stalled => "stalled".into(),
        Status::Failed(e) => format!("failed: {e}"),
    }
}

fn diagnose(
    algo: Algorithm,
    seed: u64,
    problem: &SparsePca,
    trace: &ConvergenceTrace,
    t: f64,
) -> RunDiagnostics {
    let mut d = RunDiagnostics {
        algo,
        seed,
        status: status_name(&trace.status),
        iterations: trace.records.len().saturating_sub(1),
        rate: estimate_trace_rate(trace),
        support_change_at: check_support_stability(trace),
        stationarity: None,
        rank: None,
        second_order: None,
        notes: Vec::new(),
    };
    match evaluate(problem, &trace.x_final, t, None) {
        Ok(eval) => {
            d.stationarity = Some(eval.prox.v_norm());
            match check_assumption_rank(&trace.x_final, &eval.prox.mask) {
                Ok(r) => d.rank = Some(r),
                Err(e) => d.notes.push(format!("rank check: {e}")),
            }
            if eval.prox.v_norm() <= STATIONARY_TOL {
                match check_second_order(problem, &trace.x_final, &eval.prox, t) {
                    Ok(s) => d.second_order = Some(s),
                    Err(e) => d.notes.push(format!("second-order check: {e}")),
                }
            } else {
                d.notes
                    .push("final iterate is not stationary; second-order check skipped".into());
            }
        }
        Err(e) => d
            .notes
            .push(format!("subproblem at the final iterate: {e}")),
    }
    d
}

fn run_one(spec: &RunSpec, algo: Algorithm, seed: u64) -> Job {
    let mut n = spec.n;
    let outcome = (|| -> Result<_> {
        let (problem, x0) = instance(spec, seed)?;
        n = problem.n();
        let cfg = solver_config(spec, &problem);
        let trace = run(algo, &problem, &x0, &cfg)?;
        let diag = diagnose(algo, seed, &problem, &trace, cfg.t);
        Ok((trace, diag))
    })()
    .map_err(|e| format!("{e:#}"));
    Job {
        algo,
        seed,
        n,
        outcome,
    }
}

/// Worker count from `MANPROX_THREADS`; 0 lets rayon decide.
pub fn thread_cap() -> usize {
    std::env::var("MANPROX_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

/// Runs every (algorithm, seed) pair, in parallel across pairs. Results come
/// back in algorithm-major, seed-minor order.
pub fn run_all(spec: &RunSpec) -> Result<Vec<Job>> {
    let pairs: Vec<(Algorithm, u64)> = spec
        .algos
        .iter()
        .flat_map(|&a| spec.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap())
        .build()?;
    Ok(pool.install(|| {
        pairs
            .par_iter()
            .map(|&(a, s)| run_one(spec, a, s))
            .collect()
    }))
}

#[derive(Serialize)]
struct TraceLine<'a> {
    algo: Algorithm,
    seed: u64,
    #[serde(flatten)]
    record: &'a TraceRecord,
}

pub fn write_traces(jobs: &[Job], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for job in jobs {
        if let Ok((trace, _)) = &job.outcome {
            for record in &trace.records {
                serde_json::to_writer(
                    &mut out,
                    &TraceLine {
                        algo: job.algo,
                        seed: job.seed,
                        record,
                    },
                )?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub algo: Algorithm,
    pub n: usize,
    pub r: usize,
    pub mu: f64,
    pub iter: f64,
    pub iter_v: f64,
    pub iter_u: f64,
    pub f: f64,
    pub sparsity: f64,
    pub v_norm: f64,
}

/// Seed averages per algorithm, over runs that did not fail.
pub fn summarize(spec: &RunSpec, jobs: &[Job]) -> Vec<SummaryRow> {
    spec.algos
        .iter()
        .filter_map(|&algo| {
            let done: Vec<(&Job, &ConvergenceTrace)> = jobs
                .iter()
                .filter(|j| j.algo == algo)
                .filter_map(|j| j.trace().map(|t| (j, t)))
                .collect();
            if done.is_empty() {
                return None;
            }
            let k = done.len() as f64;
            let mean = |f: &dyn Fn(&ConvergenceTrace) -> f64| {
                done.iter().map(|(_, t)| f(t)).sum::<f64>() / k
            };
            Some(SummaryRow {
                algo,
                n: done[0].0.n,
                r: spec.r,
                mu: spec.mu,
                iter: mean(&|t| t.summary().iter as f64),
                iter_v: mean(&|t| t.summary().iter_v as f64),
                iter_u: mean(&|t| t.summary().iter_u as f64),
                f: mean(&|t| t.summary().f_final),
                sparsity: mean(&|t| t.summary().sparsity),
                v_norm: mean(&|t| t.summary().v_final),
            })
        })
        .collect()
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(SUMMARY_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics(jobs: &[Job], path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Failed<'a> {
        algo: Algorithm,
        seed: u64,
        error: &'a str,
    }
    let entries: Vec<serde_json::Value> = jobs
        .iter()
        .map(|j| match &j.outcome {
            Ok((_, d)) => serde_json::to_value(d),
            Err(e) => serde_json::to_value(Failed {
                algo: j.algo,
                seed: j.seed,
                error: e,
            }),
        })
        .collect::<std::result::Result<_, _>>()?;
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, &entries)?;
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    algo: Algorithm,
    seed: u64,
    k: usize,
    v_norm: f64,
    cpu_seconds: f64,
    phase: &'static str,
}

/// Long-format `||v_k||` against cumulative solver time. Newton-phase
/// records that fell back to a gradient step are marked separately.
pub fn write_compare(jobs: &[Job], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut rows = 0;
    for job in jobs {
        let Ok((trace, _)) = &job.outcome else {
            continue;
        };
        let mut elapsed = 0u64;
        for rec in &trace.records {
            elapsed += rec.wall_ns;
            w.serialize(CompareRow {
                algo: job.algo,
                seed: job.seed,
                k: rec.k,
                v_norm: rec.v_norm,
                cpu_seconds: elapsed as f64 * 1e-9,
                phase: match (rec.phase, rec.fallback) {
                    (Phase::Gradient, _) => "gradient",
                    (Phase::Newton, false) => "newton",
                    (Phase::Newton, true) => "newton-fallback",
                },
            })?;
            rows += 1;
        }
    }
    if rows == 0 {
        w.write_record(COMPARE_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

/// Final iterates as `n x r` matrices, one file per run.
pub fn write_points(jobs: &[Job], dir: &Path) -> Result<()> {
    for job in jobs {
        if let Ok((trace, _)) = &job.outcome {
            let path = dir.join(format!("x_{}_seed{}.csv", job.algo, job.seed));
            matrix_io::save(&trace.x_final.as_matrix(), &path)?;
        }
    }
    Ok(())
}
