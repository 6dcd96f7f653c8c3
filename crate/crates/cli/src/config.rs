//! Settings layering: command-line flags over a TOML file over built-in
//! defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use manprox::{Algorithm, SolverConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// Gaussian data with centred, unit-norm columns.
    Random,
    /// The 3 x 6 instance with optimum near e_1.
    Handcrafted,
    /// Five repeated sparse components plus noise.
    Synthetic,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Random => "random",
            ProblemKind::Handcrafted => "handcrafted",
            ProblemKind::Synthetic => "synthetic",
        })
    }
}

/// Comma separated algorithm names.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(try_from = "OneOrMany")]
pub struct AlgoList(pub Vec<Algorithm>);

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl TryFrom<OneOrMany> for AlgoList {
    type Error = String;

    fn try_from(v: OneOrMany) -> std::result::Result<Self, String> {
        match v {
            OneOrMany::One(s) => s.parse(),
            OneOrMany::Many(items) => items
                .iter()
                .map(|s| s.trim().parse::<Algorithm>().map_err(|e| e.to_string()))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(AlgoList),
        }
    }
}

impl FromStr for AlgoList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let algos = s
            .split(',')
            .map(|a| a.trim().parse::<Algorithm>().map_err(|e| e.to_string()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if algos.is_empty() {
            return Err("no algorithm given".into());
        }
        Ok(AlgoList(algos))
    }
}

/// `N` means seeds `0..N`, `a..b` a half-open range, `a,b,c` an explicit list.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(try_from = "SeedsRaw")]
pub struct Seeds(pub Vec<u64>);

#[derive(Deserialize)]
#[serde(untagged)]
enum SeedsRaw {
    Count(u64),
    List(Vec<u64>),
    Text(String),
}

impl TryFrom<SeedsRaw> for Seeds {
    type Error = String;

    fn try_from(raw: SeedsRaw) -> std::result::Result<Self, String> {
        match raw {
            SeedsRaw::Count(n) => Ok(Seeds((0..n).collect())),
            SeedsRaw::List(v) => Ok(Seeds(v)),
            SeedsRaw::Text(s) => s.parse(),
        }
    }
}

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = |t: &str| {
            t.trim()
                .parse::<u64>()
                .map_err(|e| format!("bad seed '{t}': {e}"))
        };
        let s = s.trim();
        let seeds = if let Some((lo, hi)) = s.split_once("..") {
            (num(lo)?..num(hi)?).collect()
        } else if s.contains(',') {
            s.split(',')
                .filter(|t| !t.trim().is_empty())
                .map(num)
                .collect::<std::result::Result<_, _>>()?
        } else {
            (0..num(s)?).collect()
        };
        Ok(Seeds(seeds))
    }
}

/// Every field is optional so that layers can be merged.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    #[arg(long, value_enum)]
    pub problem: Option<ProblemKind>,
    /// Algorithm, or a comma separated list for `compare`.
    #[arg(long)]
    pub algo: Option<AlgoList>,
    /// Number of data rows.
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of variables.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of components; 1 is the sphere, more is the Stiefel manifold.
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Proximal step; defaults to 1 / (2 ||A||_2^2).
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Switch to Newton steps once ||v|| <= epsilon (`inf` for pure Newton).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Stop once ||v|| <= tol.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// `N` for seeds 0..N, `a..b`, or `a,b,c`.
    #[arg(long)]
    pub seeds: Option<Seeds>,
    /// Data matrix file used instead of generated data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Settings {
    /// Fields set in `over` win.
    pub fn overlay(self, over: Settings) -> Settings {
        Settings {
            problem: over.problem.or(self.problem),
            algo: over.algo.or(self.algo),
            m: over.m.or(self.m),
            n: over.n.or(self.n),
            r: over.r.or(self.r),
            mu: over.mu.or(self.mu),
            t: over.t.or(self.t),
            rho: over.rho.or(self.rho),
            epsilon: over.epsilon.or(self.epsilon),
            tol: over.tol.or(self.tol),
            max_iter: over.max_iter.or(self.max_iter),
            seeds: over.seeds.or(self.seeds),
            data: over.data.or(self.data),
            out: over.out.or(self.out),
        }
    }

    pub fn from_toml_file(path: &Path) -> Result<Settings> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Reads the config file, if any, and puts the flags on top.
    pub fn layered(config: Option<&Path>, flags: Settings) -> Result<Settings> {
        let file = match config {
            Some(p) => Settings::from_toml_file(p)?,
            None => Settings::default(),
        };
        Ok(file.overlay(flags))
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub problem: ProblemKind,
    pub algos: Vec<Algorithm>,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub mu: f64,
    /// `None` picks the problem's default step per seed.
    pub t: Option<f64>,
    pub cfg: SolverConfig,
    pub seeds: Vec<u64>,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
}

impl RunSpec {
    pub fn resolve(s: Settings, default_algos: &[Algorithm]) -> Result<RunSpec> {
        let problem = s.problem.unwrap_or(ProblemKind::Random);
        let (m, n, mu) = match problem {
            ProblemKind::Random => (50, 1000, 1.0),
            ProblemKind::Handcrafted => (3, 6, 1.0),
            ProblemKind::Synthetic => (400, 4000, 1.2),
        };
        let spec = RunSpec {
            problem,
            algos: s.algo.map_or_else(|| default_algos.to_vec(), |a| a.0),
            m: s.m.unwrap_or(m),
            n: s.n.unwrap_or(n),
            r: s.r.unwrap_or(1),
            mu: s.mu.unwrap_or(mu),
            t: s.t,
            cfg: {
                let d = SolverConfig::default();
                SolverConfig {
                    rho: s.rho.unwrap_or(d.rho),
                    epsilon: s.epsilon.unwrap_or(d.epsilon),
                    tol_final: s.tol.unwrap_or(d.tol_final),
                    max_iter: s.max_iter.unwrap_or(d.max_iter),
                    ..d
                }
            },
            seeds: s.seeds.map_or_else(|| vec![0], |v| v.0),
            data: s.data,
            out: s.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("no seeds given");
        }
        if self.algos.is_empty() {
            bail!("no algorithm given");
        }
        if self.r == 0 || self.r > self.n {
            bail!("need 1 <= r <= n, got r = {} and n = {}", self.r, self.n);
        }
        if !(self.mu >= 0.0) {
            bail!("mu must be nonnegative, got {}", self.mu);
        }
        if self.problem == ProblemKind::Handcrafted && (self.m, self.n, self.r) != (3, 6, 1) {
            bail!("the handcrafted instance is fixed at m = 3, n = 6, r = 1");
        }
        if self.r > 1 && self.algos.contains(&Algorithm::RpnN) {
            bail!("rpn-n is only available for r = 1");
        }
        SolverConfig {
            t: self.t.unwrap_or(1.0),
            ..self.cfg
        }
        .validate()?;
        Ok(())
    }
}
