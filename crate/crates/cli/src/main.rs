//! `lyacert`: learn a quadratic stability certificate from a trajectory CSV
//! and emit a self-contained report, or generate synthetic trajectories.
//!
//! Exit codes are a stable contract: 0 certified, 2 no certificate found,
//! 3 training diverged, 1 usage or input error.

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lyacert_core::nalgebra::DVector;
use lyacert_core::{
    certifier, report, synth, CertifyConfig, LtiSystem, Mode, NoiseSpec, Provenance, RawTrajectory,
    ReportBundle, TrainConfig, Verdict,
};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CERTIFIED: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_NOT_FOUND: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "lyacert",
    version,
    about = "Learn quadratic stability certificates from sampled trajectory data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify a trajectory CSV and write a stability report.
    Certify(CertifyArgs),
    /// Generate a synthetic trajectory CSV.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Html,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Constant,
    Mlp,
}

#[derive(Args)]
struct CertifyArgs {
    /// Input CSV with header `t,r_0,...,x_0,...` (or `t,r,x`).
    input: PathBuf,
    /// Report output path; defaults to the input with the extension swapped.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Report format: a self-contained HTML page or the JSON bundle.
    #[arg(long, value_enum, default_value_t = OutputFormat::Html)]
    format: OutputFormat,
    /// Resampling grid step in seconds.
    #[arg(long, default_value_t = 30.0)]
    dt: f64,
    /// Decrease margin gamma.
    #[arg(long, default_value_t = 1e-3)]
    gamma: f64,
    /// Gradient-descent learning rate.
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 5000)]
    epochs: usize,
    /// Initialization seed (overridden by LYACERT_SEED when set).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Constant)]
    mode: ModeArg,
    /// Divergence threshold on the parameter max-norm.
    #[arg(long, default_value_t = 1e6)]
    theta_max: f64,
    /// Convergence threshold on the batch loss.
    #[arg(long, default_value_t = 1e-9)]
    tol_loss: f64,
    /// Reject certificates with a noise bound above this value.
    #[arg(long)]
    eps_max: Option<f64>,
    /// Odd moving-average width applied before differentiation.
    #[arg(long)]
    smooth_window: Option<usize>,
    /// Hidden layer widths for --mode mlp.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    hidden: Vec<usize>,
    /// Train on the leading fraction, holding out the rest.
    #[arg(long)]
    holdout: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    /// Damping ratio zeta of the oscillator.
    #[arg(long, default_value_t = 0.2)]
    damping: f64,
    /// Natural frequency omega of the oscillator.
    #[arg(long, default_value_t = 1.0)]
    freq: f64,
    /// Additive Gaussian noise std on the observed state.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 60.0)]
    t_end: f64,
    /// Integration and output step.
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    /// Noise seed (overridden by LYACERT_SEED when set).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generate exponential error growth instead of a stable oscillator.
    #[arg(long)]
    unstable: bool,
    /// Growth rate for --unstable: e(t) = 0.1 exp(rate t).
    #[arg(long, default_value_t = 0.5)]
    rate: f64,
    /// Output path; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Certify(args) => cmd_certify(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

/// `LYACERT_SEED` overrides `--seed` so CI can pin runs without touching
/// command lines.
fn effective_seed(flag: u64) -> Result<u64> {
    match std::env::var("LYACERT_SEED") {
        Ok(raw) if !raw.is_empty() => raw
            .parse::<u64>()
            .with_context(|| format!("LYACERT_SEED must be a u64, got `{raw}`")),
        _ => Ok(flag),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn cmd_certify(args: CertifyArgs) -> Result<u8> {
    let bytes = std::fs::read(&args.input)
        .with_context(|| format!("cannot read input file `{}`", args.input.display()))?;
    let text = String::from_utf8(bytes.clone())
        .with_context(|| format!("`{}` is not UTF-8", args.input.display()))?;
    let raw = RawTrajectory::from_csv_str(&text)
        .map_err(|e| anyhow::anyhow!("{}: {e}", args.input.display()))?;

    let seed = effective_seed(args.seed)?;
    let config = CertifyConfig {
        dt: args.dt,
        smooth_window: args.smooth_window,
        train: TrainConfig {
            gamma: args.gamma,
            learning_rate: args.lr,
            epochs: args.epochs,
            seed,
            theta_max: args.theta_max,
            tol_loss: args.tol_loss,
            mode: match args.mode {
                ModeArg::Constant => Mode::Constant,
                ModeArg::Mlp => Mode::Mlp,
            },
            hidden: args.hidden.clone(),
        },
        eps_max: args.eps_max,
        non_constancy_tol: 1e-6,
        holdout: args.holdout,
    };

    let verdict = certifier::certify(&raw, &config)?;
    let uniform = certifier::preprocess(&raw, &config)?;
    let provenance = Provenance {
        input: args.input.display().to_string(),
        input_sha256: sha256_hex(&bytes),
        seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
    };
    let bundle = ReportBundle::new(verdict.clone(), &uniform, provenance);

    let out_path = args.report.unwrap_or_else(|| {
        args.input.with_extension(match args.format {
            OutputFormat::Html => "html",
            OutputFormat::Json => "json",
        })
    });
    write_report(&bundle, args.format, &out_path)?;

    println!("{}", verdict.reason());
    println!("report written to {}", out_path.display());
    Ok(match verdict {
        Verdict::Certified(..) => EXIT_CERTIFIED,
        Verdict::NotFound(..) => EXIT_NOT_FOUND,
        Verdict::Diverged(..) => EXIT_DIVERGED,
    })
}

fn write_report(bundle: &ReportBundle, format: OutputFormat, path: &Path) -> Result<()> {
    match format {
        OutputFormat::Html => report::render_report(bundle, path)
            .with_context(|| format!("cannot write report `{}`", path.display()))?,
        OutputFormat::Json => std::fs::write(path, bundle.to_document().to_json())
            .with_context(|| format!("cannot write report `{}`", path.display()))?,
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<u8> {
    if !(args.h.is_finite() && args.h > 0.0) {
        bail!("--h must be positive, got {}", args.h);
    }
    if !(args.t_end.is_finite() && args.t_end >= args.h) {
        bail!("--t-end must be at least --h, got {}", args.t_end);
    }
    if !(args.sigma.is_finite() && args.sigma >= 0.0) {
        bail!("--sigma must be non-negative, got {}", args.sigma);
    }
    let seed = effective_seed(args.seed)?;
    let (system, xi0) = if args.unstable {
        if !args.rate.is_finite() {
            bail!("--rate must be finite");
        }
        let sys = LtiSystem::exponential_growth(args.rate)?;
        (sys, DVector::from_row_slice(&[0.1, 0.1 * args.rate]))
    } else {
        if !(args.freq.is_finite() && args.freq > 0.0) {
            bail!("--freq must be positive, got {}", args.freq);
        }
        if !(args.damping.is_finite() && args.damping >= 0.0) {
            bail!("--damping must be non-negative, got {}", args.damping);
        }
        let sys = LtiSystem::damped_oscillator(args.freq, args.damping)?;
        (sys, DVector::from_row_slice(&[1.0, 0.0]))
    };
    let clean = synth::simulate(&system, &xi0, args.t_end, args.h)?;
    let raw = synth::add_noise(
        &clean,
        &NoiseSpec {
            sigma: args.sigma,
            seed,
        },
    )?;
    let csv = raw.to_csv_string();
    match &args.out {
        Some(path) => std::fs::write(path, csv)
            .with_context(|| format!("cannot write `{}`", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(0)
}
