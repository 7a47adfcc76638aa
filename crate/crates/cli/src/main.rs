use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gravcast::harness::{emit_report, run_experiment, write_outputs, ExperimentConfig, Method, ReportFormat};
use gravcast::metrics::R2Mode;
use gravcast::panel::{load_panel, write_panel, PanelSchema};
use gravcast::sampling::Scenario;
use gravcast::synth::{generate_panel, DgpParams};

#[derive(Parser)]
#[command(name = "gravcast", version, about = "Out-of-sample evaluation of gravity estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum R2Arg {
    PerRep,
    Pooled,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and print the metrics table.
    Run {
        /// TOML experiment configuration; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV trade panel.
        #[arg(long, conflicts_with = "synth")]
        data: Option<PathBuf>,
        /// TOML file with synthetic panel parameters.
        #[arg(long)]
        synth: Option<PathBuf>,
        /// endogenous, exogenous, small-endogenous, or "a,b".
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long)]
        reps: Option<usize>,
        /// Comma-separated method names, or "all".
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        r2_mode: Option<R2Arg>,
        /// Directory for report, per-repetition log and manifest.
        #[arg(long)]
        out: Option<PathBuf>,
        /// markdown or csv.
        #[arg(long)]
        format: Option<ReportFormat>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print a short description of a CSV panel.
    PanelSummary {
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate a synthetic panel and write it as CSV.
    Synth {
        /// TOML file with generator parameters; defaults otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_dgp(path: &PathBuf) -> Result<DgpParams> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            data,
            synth,
            scenario,
            reps,
            methods,
            seed,
            r2_mode,
            out,
            format,
            jobs,
        } => {
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(d) = data {
                cfg.data = Some(d);
                cfg.synth = None;
            }
            if let Some(p) = synth {
                cfg.synth = Some(read_dgp(&p)?);
                cfg.data = None;
            }
            if let Some(s) = scenario {
                cfg.scenario = s;
            }
            if let Some(r) = reps {
                cfg.reps = r;
            }
            if let Some(m) = methods {
                cfg.methods = Method::parse_list(&m)?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = r2_mode {
                cfg.r2_mode = match m {
                    R2Arg::PerRep => R2Mode::PerRep,
                    R2Arg::Pooled => R2Mode::Pooled,
                };
            }
            if out.is_some() {
                cfg.out = out;
            }
            if let Some(f) = format {
                cfg.format = f;
            }
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            cfg.validate()?;
            let result = run_experiment(&cfg)?;
            print!("{}", emit_report(&result.report, cfg.format));
            if let Some(dir) = &cfg.out {
                for path in write_outputs(dir, &result, &cfg)? {
                    log::info!("wrote {}", path.display());
                }
            }
        }
        Command::PanelSummary { data } => {
            let (panel, load) = load_panel(&data, &PanelSchema::default())?;
            println!("{}", panel.summary());
            println!("rows read:    {}", load.rows_read);
            println!("skipped (missing values): {}", load.rejected_missing);
        }
        Command::Synth { params, seed, out } => {
            let mut dgp = match &params {
                Some(p) => read_dgp(p)?,
                None => DgpParams::default(),
            };
            if let Some(s) = seed {
                dgp.seed = s;
            }
            let (panel, _) = generate_panel(&dgp)?;
            if panel.is_empty() {
                bail!("generator produced an empty panel");
            }
            let file = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_panel(&panel, std::io::BufWriter::new(file), &PanelSchema::default())?;
            eprintln!("wrote {} rows to {}", panel.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
