//! `cdp-twin`: a desk-scale stochastic digital twin for copy detection
//! patterns. Generates templates, fits and samples the pattern-conditioned
//! print channel, trains a linear denoiser, and scores the results.

mod commands;
mod config;
mod ioutil;

use clap::{Parser, Subcommand, ValueEnum};
use commands::eval::PredSpec;
use config::RunConfig;
use cdp_twin_core::channel::Direction;
use cdp_twin_core::{Error, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "cdp-twin",
    version,
    about = "Stochastic digital twin for copy detection patterns"
)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    /// Template to print (z -> x).
    Print,
    /// Print to template estimate (x -> z).
    Estimate,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Direction {
        match d {
            DirectionArg::Print => Direction::Print,
            DirectionArg::Estimate => Direction::Estimate,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate random binary templates plus a manifest.
    Gen {
        /// Number of templates to write.
        #[arg(long)]
        count: usize,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Fit a per-pattern channel model from template/print pairs.
    Fit {
        #[arg(long, value_name = "DIR")]
        templates: PathBuf,
        #[arg(long, value_name = "DIR")]
        prints: PathBuf,
        #[arg(long, value_enum, default_value_t = DirectionArg::Print)]
        direction: DirectionArg,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Simulate printed realizations of templates.
    Print {
        #[arg(long, value_name = "DIR")]
        templates: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Realizations per template; defaults to the config value.
        #[arg(long, value_name = "N")]
        k: Option<usize>,
        /// Channel model file; defaults to the config path or the synthetic channel.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Sample template estimates from printed images.
    Estimate {
        #[arg(long, value_name = "DIR")]
        prints: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_name = "N")]
        k: Option<usize>,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Fit the bucketed linear denoiser on template/print pairs.
    DdpmFit {
        #[arg(long, value_name = "DIR")]
        templates: PathBuf,
        #[arg(long, value_name = "DIR")]
        prints: PathBuf,
        #[arg(long, value_enum, default_value_t = DirectionArg::Print)]
        direction: DirectionArg,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Sample realizations with a fitted denoiser under the refinement schedule.
    DdpmSample {
        #[arg(long, value_name = "PATH")]
        denoiser: PathBuf,
        /// Conditioning inputs: templates (print) or prints (estimate).
        #[arg(long, value_name = "DIR")]
        cond: PathBuf,
        #[arg(long, value_enum, default_value_t = DirectionArg::Print)]
        direction: DirectionArg,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_name = "N")]
        k: Option<usize>,
    },
    /// Score prediction directories against reference templates and prints.
    Eval {
        #[arg(long, value_name = "DIR")]
        templates: PathBuf,
        #[arg(long, value_name = "DIR")]
        prints: PathBuf,
        /// Prediction directory as NAME=DIR, holding z_tilde/ and x_tilde/ stacks. Repeatable.
        #[arg(long = "pred", value_name = "NAME=DIR")]
        preds: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Variability analyses over realization stacks.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Pooled per-pattern statistics over template/print pairs.
    Patterns {
        #[arg(long, value_name = "DIR")]
        templates: PathBuf,
        #[arg(long, value_name = "DIR")]
        prints: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Per-pixel std maps across realizations, one per id.
    Stdmap {
        #[arg(long, value_name = "DIR")]
        prints: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Aggregation quality versus realization count.
    Ksweep {
        /// Realization stacks, `<id>_r<j>.pgm`.
        #[arg(long, value_name = "DIR")]
        stacks: PathBuf,
        /// Reference images, `<id>.pgm`.
        #[arg(long, value_name = "DIR")]
        reference: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Per-pattern agreement between a fitted model and fresh data.
    Bitflip {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long, value_name = "DIR")]
        templates: PathBuf,
        #[arg(long, value_name = "DIR")]
        prints: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("CDP_TWIN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::parameter(format!("CDP_TWIN_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::parameter(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Gen { count, out } => commands::gen::run(&cfg, count, &out),
        Command::Fit {
            templates,
            prints,
            direction,
            out,
        } => commands::sim::fit(&cfg, &templates, &prints, direction.into(), &out),
        Command::Print {
            templates,
            out,
            k,
            model,
        } => commands::sim::print(&cfg, &templates, &out, k, model.as_deref()),
        Command::Estimate {
            prints,
            out,
            k,
            model,
        } => commands::sim::estimate(&cfg, &prints, &out, k, model.as_deref()),
        Command::DdpmFit {
            templates,
            prints,
            direction,
            out,
        } => commands::ddpm::fit(&cfg, &templates, &prints, direction.into(), &out),
        Command::DdpmSample {
            denoiser,
            cond,
            direction,
            out,
            k,
        } => commands::ddpm::sample_cmd(&cfg, &denoiser, &cond, direction.into(), &out, k),
        Command::Eval {
            templates,
            prints,
            preds,
            out,
        } => {
            let preds = preds
                .iter()
                .map(|raw| PredSpec::parse(raw))
                .collect::<Result<Vec<_>>>()?;
            commands::eval::run(&cfg, &templates, &prints, &preds, &out)
        }
        Command::Analyze { what } => match what {
            AnalyzeCommand::Patterns {
                templates,
                prints,
                out,
            } => commands::analyze::patterns(&cfg, &templates, &prints, &out),
            AnalyzeCommand::Stdmap { prints, out } => commands::analyze::stdmap(&cfg, &prints, &out),
            AnalyzeCommand::Ksweep {
                stacks,
                reference,
                out,
            } => commands::analyze::ksweep(&cfg, &stacks, &reference, &out),
            AnalyzeCommand::Bitflip {
                model,
                templates,
                prints,
                out,
            } => commands::analyze::bitflip(&cfg, &model, &templates, &prints, &out),
        },
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
