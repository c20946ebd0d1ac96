use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use swmas::experiments::{
    circulant_family_graphs, contour, contour_csv, default_sequences, probability_grid, span,
    span_aggregate_csv, span_csv, span_draws_csv, verify, ContourConfig, SpanConfig, VerifyConfig,
};
use swmas::format::{self, ModelFile};
use swmas::report::{certificate_report, family_summary, list, spectra_csv, Header};
use swmas_core::graphs::GraphFamily;
use swmas_core::lmi::{solve_bound, BoundInstance, LmiError};
use swmas_core::model::{consensus_variant, ConsensusVariant, DecomposableMatrices};
use swmas_core::montecarlo::McConfig;
use swmas_core::sdp::SolveOptions;

const EXIT_USAGE: u8 = 1;
const EXIT_NO_CERTIFICATE: u8 = 2;
const EXIT_VERIFY_FAILED: u8 = 3;

/// H2 performance bounds and simulations for multi-agent systems over
/// switching graphs with packet loss.
#[derive(Parser)]
#[command(name = "swmas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify an H2 bound for one model.
    Analyze(AnalyzeArgs),
    /// Bound over a grid of spectral intervals (CSV).
    Contour(ContourArgs),
    /// Bound and Monte-Carlo estimates over a grid of transmission probabilities (CSV).
    Span(SpanArgs),
    /// Run the built-in small-instance checks.
    Verify(VerifyArgs),
    /// Laplacian spectra of a graph family (CSV) and a bound check.
    Spectrum(SpectrumArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Consensus,
    Swapped,
}

impl From<Variant> for ConsensusVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Consensus => ConsensusVariant::Standard,
            Variant::Swapped => ConsensusVariant::Swapped,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Model file (graph family plus `blocks` section).
    #[arg(long, conflicts_with = "consensus")]
    model: Option<PathBuf>,
    /// Use the scalar consensus agents instead of a model file.
    #[arg(long)]
    consensus: bool,
    #[arg(long, value_enum, default_value = "consensus")]
    variant: Variant,
    /// Number of agents (consensus only).
    #[arg(short = 'N', long = "agents", default_value_t = 20)]
    n_agents: usize,
    #[arg(long, default_value_t = 0.1)]
    kappa: f64,
    /// Transmission probability.
    #[arg(short, default_value_t = 0.5)]
    p: f64,
    /// Lower spectral bound; overrides the model file.
    #[arg(long)]
    lo: Option<f64>,
    /// Upper spectral bound; overrides the model file.
    #[arg(long)]
    hi: Option<f64>,
    /// Analyse the disagreement dynamics only (needed when A^d is not Schur stable).
    #[arg(long)]
    deflate: bool,
    /// Also write the full certificate report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ContourArgs {
    #[arg(long, value_enum, default_value = "consensus")]
    variant: Variant,
    #[arg(short = 'N', long = "agents", default_value_t = 20)]
    n_agents: usize,
    #[arg(long, default_value_t = 0.1)]
    kappa: f64,
    #[arg(short, default_value_t = 0.5)]
    p: f64,
    /// Grid points per axis on (0, N].
    #[arg(long, default_value_t = 50)]
    resolution: usize,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpanArgs {
    /// Graph family file; defaults to circulant graphs.
    #[arg(long)]
    family: Option<PathBuf>,
    /// Vertices of the default circulant family.
    #[arg(short = 'N', long = "agents", default_value_t = 20)]
    n_agents: usize,
    /// Largest neighbour count of the default circulant family.
    #[arg(long, default_value_t = 7)]
    circulants: usize,
    /// Spectral bounds used for the analysis; exact bounds when omitted.
    #[arg(long, requires = "hi")]
    lo: Option<f64>,
    #[arg(long, requires = "lo")]
    hi: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    kappa: f64,
    /// Number of points of the p grid 1/n, 2/n, ..., 1.
    #[arg(long, default_value_t = 20)]
    points: usize,
    /// Loss-pattern draws per input channel.
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long, default_value_t = 2000)]
    horizon: usize,
    #[arg(long, default_value_t = 1e-6)]
    tail_tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Steps per topology in the round-robin sequence.
    #[arg(long, default_value_t = 1)]
    period: usize,
    /// Number of random switching sequences.
    #[arg(long, default_value_t = 2)]
    random: u64,
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Per-sequence squared-norm estimates.
    #[arg(long)]
    aggregate_out: Option<PathBuf>,
    /// Every simulated energy.
    #[arg(long)]
    draws_out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt the loss second-moment formula to exercise the checker.
    #[arg(long)]
    mutate_loss_moments: bool,
}

#[derive(Args)]
struct SpectrumArgs {
    /// Graph family file; defaults to circulant graphs.
    #[arg(long)]
    family: Option<PathBuf>,
    #[arg(short = 'N', long = "agents", default_value_t = 20)]
    n_agents: usize,
    #[arg(long, default_value_t = 7)]
    circulants: usize,
    #[arg(long, requires = "hi")]
    lo: Option<f64>,
    #[arg(long, requires = "lo")]
    hi: Option<f64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Failure with a specific exit code.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
struct Exit {
    code: u8,
    message: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Ok(threads) = std::env::var("SWMAS_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            Err(_) => {
                eprintln!("error: SWMAS_THREADS must be a positive integer, got `{threads}`");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Contour(a) => run_contour(a),
        Command::Span(a) => run_span(a),
        Command::Verify(a) => run_verify(a),
        Command::Spectrum(a) => run_spectrum(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Exit>().map_or(EXIT_USAGE, |x| x.code);
            ExitCode::from(code)
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    format::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn check_probability(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        bail!("transmission probability must lie in (0, 1], got {p}");
    }
    Ok(())
}

/// Family from a file or the default circulants, with optional bounds
/// taken as configuration.
fn load_family(
    file: Option<&Path>,
    n: usize,
    circulants: usize,
    bounds: Option<(f64, f64)>,
) -> Result<GraphFamily> {
    let (graphs, file_bounds) = match file {
        Some(path) => {
            let m = read_model(path)?;
            (m.graphs, m.bounds)
        }
        None => (circulant_family_graphs(n, circulants)?, None),
    };
    Ok(match bounds.or(file_bounds) {
        Some((lo, hi)) => GraphFamily::with_configured_bounds(graphs, lo, hi)?,
        None => GraphFamily::with_exact_bounds(graphs)?,
    })
}

fn warn_unverified(family: &GraphFamily) -> Result<()> {
    if !family.bounds_verified() {
        let report = family.validate()?;
        if !report.pass {
            eprintln!("warning: configured spectral bounds do not hold for every graph");
            eprint!("{}", family_summary(&report));
        }
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    check_probability(a.p)?;
    let inst = if let Some(path) = &a.model {
        let m = read_model(path)?;
        let blocks = m
            .blocks
            .clone()
            .with_context(|| format!("{} has no `blocks` section", path.display()))?;
        let (lo, hi) = match (a.lo, a.hi) {
            (Some(lo), Some(hi)) => (lo, hi),
            (None, None) => {
                let family = m.family(false)?;
                warn_unverified(&family)?;
                (family.lambda_lo(), family.lambda_hi())
            }
            _ => bail!("give both --lo and --hi or neither"),
        };
        BoundInstance::new(m.n_vertices, lo, hi, a.p, blocks)?
    } else if a.consensus {
        let (Some(lo), Some(hi)) = (a.lo, a.hi) else {
            bail!("--consensus needs --lo and --hi");
        };
        let blocks: DecomposableMatrices = consensus_variant(a.kappa, a.variant.into())?;
        BoundInstance::new(a.n_agents, lo, hi, a.p, blocks)?
    } else {
        bail!("give either --model <FILE> or --consensus");
    };

    match solve_bound(&inst, a.deflate, &SolveOptions::default()) {
        Ok(cert) => {
            println!("h2_bound: {:.10}", cert.h2_bound);
            println!("gamma: {:.10}", cert.gamma);
            println!("beta: {:.10}", cert.beta);
            println!("max_residual_eigenvalue: {:e}", cert.max_residual());
            println!("strictness: {:e}", cert.strictness);
            if let Some(path) = &a.report {
                fs::write(path, certificate_report(&cert))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        Err(e @ LmiError::NoCertificate { .. }) => Err(Exit {
            code: EXIT_NO_CERTIFICATE,
            message: e.to_string(),
        }
        .into()),
        Err(e) => Err(e.into()),
    }
}

fn run_contour(a: ContourArgs) -> Result<()> {
    check_probability(a.p)?;
    if a.resolution == 0 {
        bail!("--resolution must be positive");
    }
    let cfg = ContourConfig::square(a.n_agents, a.kappa, a.p, a.variant.into(), a.resolution);
    let cells = contour(&cfg)?;
    write_output(a.out.as_deref(), &contour_csv(&cells, &cfg.header()))
}

fn run_span(a: SpanArgs) -> Result<()> {
    if a.points == 0 {
        bail!("--points must be positive");
    }
    let family = load_family(
        a.family.as_deref(),
        a.n_agents,
        a.circulants,
        a.lo.zip(a.hi),
    )?;
    warn_unverified(&family)?;
    let seeds: Vec<u64> = (1..=a.random).collect();
    let sequences = default_sequences(family.len(), a.period, &seeds, a.horizon);
    let mc = McConfig {
        n_samples: a.samples,
        horizon: a.horizon,
        tail_tolerance: a.tail_tolerance,
        seed: a.seed,
        project_disagreement: true,
    };
    let cfg = SpanConfig {
        blocks: consensus_variant(a.kappa, ConsensusVariant::Standard)?,
        family,
        p_grid: probability_grid(a.points),
        sequences,
        mc,
        deflate: true,
    };
    let header = Header::new("span")
        .with(
            "family",
            a.family.as_ref().map_or_else(
                || format!("circulant N={} k=1..{}", a.n_agents, a.circulants),
                |p| p.display().to_string(),
            ),
        )
        .with("lambda_lo", cfg.family.lambda_lo())
        .with("lambda_hi", cfg.family.lambda_hi())
        .with("kappa", a.kappa)
        .with("p_grid", list(&cfg.p_grid))
        .with(
            "sequences",
            cfg.sequences
                .iter()
                .map(|s| s.id())
                .collect::<Vec<_>>()
                .join(" "),
        )
        .with("samples", a.samples)
        .with("horizon", a.horizon)
        .with("tail_tolerance", a.tail_tolerance)
        .with("seed", a.seed);
    let points = span(&cfg)?;
    if points
        .iter()
        .any(|pt| pt.estimates.iter().any(|e| e.tail_exceeded))
    {
        eprintln!("warning: some responses had not decayed within the horizon (see tail_exceeded)");
    }
    if let Some(path) = &a.aggregate_out {
        write_output(
            Some(path),
            &span_aggregate_csv(&points, &cfg.sequences, &header),
        )?;
    }
    if let Some(path) = &a.draws_out {
        write_output(
            Some(path),
            &span_draws_csv(&points, &cfg.sequences, &header),
        )?;
    }
    write_output(a.out.as_deref(), &span_csv(&points, &header))
}

fn run_verify(a: VerifyArgs) -> Result<()> {
    let cfg = VerifyConfig {
        seed: a.seed,
        variance_coefficient: if a.mutate_loss_moments { 2.5 } else { 2.0 },
    };
    let checks = verify(&cfg)?;
    let mut failed = 0;
    for c in &checks {
        println!(
            "{} {} (residual {:e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.residual
        );
        failed += usize::from(!c.passed);
    }
    println!("{} checks, {failed} failed", checks.len());
    if failed > 0 {
        return Err(Exit {
            code: EXIT_VERIFY_FAILED,
            message: format!("{failed} verification checks failed"),
        }
        .into());
    }
    Ok(())
}

fn run_spectrum(a: SpectrumArgs) -> Result<()> {
    let family = load_family(
        a.family.as_deref(),
        a.n_agents,
        a.circulants,
        a.lo.zip(a.hi),
    )?;
    let header = Header::new("spectrum")
        .with(
            "family",
            a.family.as_ref().map_or_else(
                || format!("circulant N={} k=1..{}", a.n_agents, a.circulants),
                |p| p.display().to_string(),
            ),
        )
        .with("lambda_lo", family.lambda_lo())
        .with("lambda_hi", family.lambda_hi());
    eprint!("{}", family_summary(&family.validate()?));
    write_output(a.out.as_deref(), &spectra_csv(&family, &header)?)
}
