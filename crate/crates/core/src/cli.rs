//! Command-line front end. Machine output is JSON (or CSV for `sample
//! --format csv`) on `--out` or stdout; a one-line summary goes to stderr.
//!
//! Exit codes: 0 success, 1 domain error, 2 I/O, parse or usage error,
//! 3 when `verify-theorem` finds a feasible constraint.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::commutant::{commutant_basis, f_set_membership, CommutantConstraint};
use crate::constructions::{
    build_theorem_operator, rank_one_perturbation, verify_theorem_commutant_collapse, CollapseReport,
    ConstructionRecipe, RecipeFile,
};
use crate::error::{Error, Result};
use crate::ideals::{rt_criterion, support_digraph};
use crate::interchange::{parse_operator_with, MatrixFile};
use crate::norms::operator_norm;
use crate::operator::{PositiveVector, SpaceConfig, TruncatedPositiveOperator};
use crate::sampler::{typicality_report, EnsembleKind, EnsembleSpec};
use crate::spectral::{finite_spectrum, local_radius, perron_pair};

pub const SEED_ENV: &str = "POSCONE_SEED";
pub const EXIT_VIOLATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "poscone", version, about = "Positive operators on finite sections of l_q")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Io {
    /// Operator file in the matrix interchange format.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Operator norm with its certificate.
    Norm {
        #[command(flatten)]
        io: Io,
        /// Override the exponent stored in the file.
        #[arg(long)]
        q: Option<f64>,
    },
    /// Invariant ideal test on the support digraph.
    IdealCheck {
        #[command(flatten)]
        io: Io,
        /// Also write the support digraph in DOT format.
        #[arg(long, value_name = "PATH")]
        dot: Option<PathBuf>,
    },
    /// Perron pair, eigenvalues and, with --y, the local radius estimate.
    Spectral {
        #[command(flatten)]
        io: Io,
        /// Comma-separated positive vector.
        #[arg(long, value_delimiter = ',')]
        y: Option<Vec<f64>>,
        #[arg(long, default_value_t = 60)]
        horizon: usize,
    },
    /// Orthonormal basis of the commutant.
    Commutant {
        #[command(flatten)]
        io: Io,
    },
    /// Membership of the truncation in F_{i,j,eta,p}.
    FSet {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        i: usize,
        #[arg(long)]
        j: usize,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        p: usize,
    },
    /// Build an operator.
    Construct {
        #[command(subcommand)]
        what: Construct,
    },
    /// Commutant collapse check for a recipe.
    VerifyTheorem {
        #[arg(long, value_name = "PATH")]
        recipe: PathBuf,
        /// Truncation sizes to check; the recipe's own when absent.
        #[arg(long, value_delimiter = ',')]
        truncations: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Property frequencies over a random ensemble.
    Sample(SampleArgs),
}

#[derive(Debug, Subcommand)]
enum Construct {
    Theorem {
        #[arg(long, value_name = "PATH")]
        recipe: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    RankOne {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        source: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<usize>,
        #[arg(long)]
        delta: f64,
    },
    /// `P_n T P_n + lambda Q_n` at a larger dimension.
    Extend {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        lambda: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Iid,
    ColumnStochastic,
    SparseBand,
    Permutation,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Ensemble spec JSON; flags override its fields.
    #[arg(long, value_name = "PATH")]
    spec: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long, default_value_t = 0.9)]
    damping: f64,
    #[arg(long, default_value_t = 0.2)]
    density: f64,
    #[arg(long, default_value_t = 1)]
    bandwidth: usize,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Parse(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn base_space() -> Result<SpaceConfig> {
    let space = SpaceConfig::default();
    Ok(match env_seed()? {
        Some(seed) => space.with_seed(seed),
        None => space,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn load_operator(path: &Path) -> Result<TruncatedPositiveOperator> {
    parse_operator_with(&read(path)?, base_space()?)
}

fn load_recipe(path: &Path) -> Result<ConstructionRecipe> {
    serde_json::from_str::<RecipeFile>(&read(path)?)?.into_recipe()
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn emit<S: Serialize>(out: Option<&Path>, value: &S) -> Result<()> {
    emit_text(out, &serde_json::to_string_pretty(value)?)
}

fn emit_matrix(out: Option<&Path>, t: &TruncatedPositiveOperator) -> Result<()> {
    emit(out, &MatrixFile::dense(t))
}

#[derive(Serialize)]
struct SpectralOutput {
    perron: Option<crate::spectral::PerronPair>,
    perron_error: Option<String>,
    spectral_radius: f64,
    spectrum: Vec<(f64, f64)>,
    local_radius: Option<crate::spectral::LocalRadiusEstimate>,
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Norm { io, q } => {
            let mut t = load_operator(&io.input)?;
            if let Some(q) = q {
                let space = SpaceConfig { q, ..*t.space() };
                space.validate()?;
                t = t.with_space(space);
            }
            let cert = operator_norm(&t);
            eprintln!("norm_q={} ({:?}) = {}", t.q(), cert.method, cert.value);
            emit(io.out.as_deref(), &cert)?;
        }
        Command::IdealCheck { io, dot } => {
            let t = load_operator(&io.input)?;
            let report = rt_criterion(&t);
            if let Some(path) = dot {
                let g = support_digraph(&t);
                emit_text(Some(&path), &g.to_dot(report.invariant_ideal_support.as_ref()))?;
            }
            match report.failing_pair {
                Some((i, j)) => eprintln!("reducible: no path from {i} to {j}"),
                None => eprintln!("no invariant coordinate ideal (irreducible={})", report.irreducible),
            }
            emit(io.out.as_deref(), &report)?;
        }
        Command::Spectral { io, y, horizon } => {
            let t = load_operator(&io.input)?;
            let (perron, perron_error) = match perron_pair(&t) {
                Ok(p) => (Some(p), None),
                Err(e @ Error::IterationLimit(_)) => (None, Some(e.to_string())),
                Err(e) => return Err(e),
            };
            let spectrum = finite_spectrum(&t)?;
            let local = match y {
                Some(y) => Some(local_radius(&t, &PositiveVector::new(y)?, horizon)?),
                None => None,
            };
            let out = SpectralOutput {
                spectral_radius: spectrum.iter().map(|z| z.norm()).fold(0.0, f64::max),
                spectrum: spectrum.iter().map(|z| (z.re, z.im)).collect(),
                perron,
                perron_error,
                local_radius: local,
            };
            eprintln!("spectral radius {}", out.spectral_radius);
            emit(io.out.as_deref(), &out)?;
        }
        Command::Commutant { io } => {
            let t = load_operator(&io.input)?;
            let basis = commutant_basis(&t)?;
            eprintln!("commutant rank {} (dim {})", basis.rank, basis.dim);
            emit(io.out.as_deref(), &basis)?;
        }
        Command::FSet { io, i, j, eta, p } => {
            let t = load_operator(&io.input)?;
            let res = f_set_membership(&t, &CommutantConstraint::new(i, j, eta, p))?;
            eprintln!(
                "feasible={} (best rescaled entry {:e}, truncation dim {})",
                res.feasible, res.certificate.rescaled_value, res.certificate.truncation_dim
            );
            emit(io.out.as_deref(), &res)?;
        }
        Command::Construct { what } => match what {
            Construct::Theorem { recipe, out } => {
                let r = load_recipe(&recipe)?;
                let t = build_theorem_operator(&r)?;
                eprintln!("built {}x{} operator, delta = {:e}", t.dim(), t.dim(), r.delta);
                emit_matrix(out.as_deref(), &t)?;
            }
            Construct::RankOne { io, source, targets, delta } => {
                let t = load_operator(&io.input)?;
                let s = rank_one_perturbation(&t, source, &targets, delta)?;
                eprintln!("norm after perturbation {}", operator_norm(&s).value);
                emit_matrix(io.out.as_deref(), &s)?;
            }
            Construct::Extend { io, dim, lambda } => {
                let t = load_operator(&io.input)?;
                let s = t.extend_with_scalar_tail(dim, lambda)?;
                eprintln!("extended to dim {dim}, norm {}", operator_norm(&s).value);
                emit_matrix(io.out.as_deref(), &s)?;
            }
        },
        Command::VerifyTheorem { recipe, truncations, out } => {
            let r = load_recipe(&recipe)?;
            let sizes = truncations.unwrap_or_else(|| vec![r.truncation]);
            let reports = sizes
                .iter()
                .map(|&l| verify_theorem_commutant_collapse(&r.with_truncation(l)?))
                .collect::<Result<Vec<CollapseReport>>>()?;
            let code = collapse_exit_code(&reports);
            for rep in &reports {
                eprintln!(
                    "L={}: {} constraints, all infeasible: {}, commutant rank {}",
                    rep.truncation_dim,
                    rep.verdicts.len(),
                    rep.all_infeasible,
                    rep.commutant_rank
                );
            }
            if reports.len() == 1 {
                emit(out.as_deref(), &reports[0])?;
            } else {
                emit(out.as_deref(), &reports)?;
            }
            if code == EXIT_VIOLATION {
                eprintln!("theorem violation: a constraint is feasible at finite truncation");
            }
            return Ok(code);
        }
        Command::Sample(args) => {
            let (spec, threads, format, out) = sample_spec(args)?;
            let report = typicality_report(&spec, threads)?;
            eprintln!("{} trials of {:?} at dim {}", report.trials, spec.kind, spec.dim);
            match format {
                ReportFormat::Json => emit(out.as_deref(), &report)?,
                ReportFormat::Csv => emit_text(out.as_deref(), report.to_csv().trim_end())?,
            }
        }
    }
    Ok(0)
}

/// Exit status of `verify-theorem`: [`EXIT_VIOLATION`] if any report is a violation.
pub fn collapse_exit_code(reports: &[CollapseReport]) -> i32 {
    if reports.iter().any(|r| r.is_violation()) {
        EXIT_VIOLATION
    } else {
        0
    }
}

fn sample_spec(a: SampleArgs) -> Result<(EnsembleSpec, Option<usize>, ReportFormat, Option<PathBuf>)> {
    let file: Option<EnsembleSpec> = match &a.spec {
        Some(p) => Some(serde_json::from_str(&read(p)?)?),
        None => None,
    };
    let kind = match a.kind {
        Some(KindArg::Iid) => Some(EnsembleKind::IidUniformRescaled),
        Some(KindArg::ColumnStochastic) => Some(EnsembleKind::ColumnStochasticDamped { damping: a.damping }),
        Some(KindArg::SparseBand) => Some(EnsembleKind::SparseBand {
            density: a.density,
            bandwidth: a.bandwidth,
        }),
        Some(KindArg::Permutation) => Some(EnsembleKind::Permutation),
        None => None,
    };
    let missing = |name: &str| Error::InvalidConfig(format!("--{name} is required without --spec"));
    let dim = a.dim.or(file.map(|f| f.dim)).ok_or_else(|| missing("dim"))?;
    let seed = a
        .seed
        .or(env_seed()?)
        .or(file.map(|f| f.seed))
        .unwrap_or(crate::operator::DEFAULT_SEED);
    let spec = EnsembleSpec {
        dim,
        q: a.q.or(file.map(|f| f.q)).unwrap_or(2.0),
        kind: kind.or(file.map(|f| f.kind)).unwrap_or(EnsembleKind::IidUniformRescaled),
        count: a.count.or(file.map(|f| f.count)).unwrap_or(100),
        seed,
    };
    Ok((spec, a.threads, a.format, a.out))
}
