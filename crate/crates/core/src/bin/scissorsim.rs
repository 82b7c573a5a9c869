use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use scissorsim::harness::{
    reproduce_fig3, reproduce_table1, reproduce_table2, run_experiment, sweep, write_sweep_csv,
    ConfigSource, ExperimentPlan, RunMode, SweepParam, SweepRange,
};
use scissorsim::tomography::{read_counts_csv, tally, write_counts_csv};
use scissorsim::{
    analytic_model_with, reconstruct_qubit, DetectorResponse, HeraldModel, Polarization,
    SimulationOptions,
};

/// Exit status when a built-in comparison misses its tolerance.
const TOLERANCE_FAILURE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "scissorsim",
    version,
    about = "Heralded qubit amplifier simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form weights, gain and success probability.
    Analytic(AnalyticArgs),
    /// Full circuit simulation with tomography and gain estimation.
    Simulate(SimulateArgs),
    /// Reconstruct a qubit from a counts CSV.
    Tomo(TomoArgs),
    /// Sweep one parameter and emit CSV.
    Sweep(SweepArgs),
    /// Regenerate a reference table or figure and compare.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct Source {
    /// Circuit config or profile JSON; the built-in profile when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the gain g² (or pick one from a profile).
    #[arg(long)]
    g2: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Response {
    Gated,
    PhotonLoss,
}

#[derive(Args)]
struct HeraldArgs {
    /// Number-resolving herald detectors.
    #[arg(long)]
    number_resolving: bool,
    #[arg(long, value_enum, default_value = "gated")]
    detector_response: Response,
}

impl HeraldArgs {
    fn model(&self) -> HeraldModel {
        HeraldModel {
            number_resolving: self.number_resolving,
            response: match self.detector_response {
                Response::Gated => DetectorResponse::Gated,
                Response::PhotonLoss => DetectorResponse::PhotonLoss,
            },
        }
    }
}

#[derive(Args)]
struct AnalyticArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    herald: HeraldArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Sampled,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    herald: HeraldArgs,
    #[arg(long, default_value_t = 3_000_000)]
    pulses: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "exact")]
    mode: Mode,
    /// Comma-separated input polarizations.
    #[arg(long, value_delimiter = ',', default_value = "R")]
    polarizations: Vec<Polarization>,
    /// Efficiencies of D1..D4, comma-separated.
    #[arg(long, value_delimiter = ',')]
    herald_efficiencies: Option<Vec<f64>>,
    /// Also write the amplified-run counts as CSV.
    #[arg(long)]
    counts_out: Option<PathBuf>,
}

#[derive(Args)]
struct TomoArgs {
    #[arg(long)]
    counts: PathBuf,
    /// Analyzer efficiency; defaults to eps_det * eps_path of the config.
    #[arg(long)]
    efficiency: Option<f64>,
    #[command(flatten)]
    source: Source,
}

#[derive(Args)]
struct SweepArgs {
    /// One of g2, tau, delta, gamma1, v (both visibilities together).
    #[arg(long)]
    param: SweepParam,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    #[arg(long, default_value_t = 50)]
    points: usize,
    /// Space the points geometrically.
    #[arg(long)]
    log: bool,
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    herald: HeraldArgs,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Table1,
    Table2,
    Fig3,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(value_enum)]
    target: Target,
    /// Profile JSON; the built-in profile when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        eprintln!("FAIL: at least one comparison is outside its tolerance");
        ExitCode::from(TOLERANCE_FAILURE)
    }
}

fn analytic(args: &AnalyticArgs) -> Result<ExitCode> {
    let source = ConfigSource::load(args.source.config.as_deref())?;
    let herald = args.herald.model();
    let outputs = source
        .configs(args.source.g2)?
        .iter()
        .map(|c| analytic_model_with(c, &herald))
        .collect::<scissorsim::Result<Vec<_>>>()?;
    if let [single] = outputs.as_slice() {
        print_json(single)?;
    } else {
        print_json(&outputs)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let source = ConfigSource::load(args.source.config.as_deref())?;
    let config = source.config(args.source.g2)?;
    let herald_efficiencies = match &args.herald_efficiencies {
        Some(v) => Some(<[f64; 4]>::try_from(v.as_slice()).context("need four efficiencies")?),
        None => None,
    };
    let plan = ExperimentPlan {
        config,
        n_pulses: args.pulses,
        seed: args.seed,
        mode: match args.mode {
            Mode::Exact => RunMode::Exact,
            Mode::Sampled => RunMode::Sampled,
        },
        polarizations: args.polarizations.clone(),
        options: SimulationOptions {
            herald: args.herald.model(),
            herald_efficiencies,
            ..Default::default()
        },
        correction: None,
    };
    let report = run_experiment(&plan)?;
    if let Some(path) = &args.counts_out {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_counts_csv(&report.counts_amp, BufWriter::new(file))?;
    }
    print_json(&report)?;
    Ok(verdict(report.pass()))
}

fn tomo(args: &TomoArgs) -> Result<ExitCode> {
    let file =
        File::open(&args.counts).with_context(|| format!("opening {}", args.counts.display()))?;
    let records = read_counts_csv(file)?;
    let efficiency = match args.efficiency {
        Some(e) => e,
        None => {
            let c = ConfigSource::load(args.source.config.as_deref())?.config(args.source.g2)?;
            c.eps_det * c.eps_path
        }
    };
    let state = reconstruct_qubit(&tally(&records), efficiency)?;
    println!("{}", state.to_json()?);
    Ok(ExitCode::SUCCESS)
}

fn run_sweep(args: &SweepArgs) -> Result<ExitCode> {
    let config = ConfigSource::load(args.source.config.as_deref())?.config(args.source.g2)?;
    let range = SweepRange {
        from: args.from,
        to: args.to,
        points: args.points,
        log: args.log,
    };
    let options = SimulationOptions::with_herald(args.herald.model());
    let rows = sweep(args.param, &range, &config, &options)?;
    match &args.out {
        Some(path) => write_sweep_csv(&rows, BufWriter::new(File::create(path)?))?,
        None => write_sweep_csv(&rows, io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn reproduce(args: &ReproduceArgs) -> Result<ExitCode> {
    let source = ConfigSource::load(args.config.as_deref())?;
    let profile = source.profile()?;
    let pass = match args.target {
        Target::Table1 => {
            let t = reproduce_table1(profile)?;
            print_json(&t)?;
            t.pass()
        }
        Target::Table2 => {
            let t = reproduce_table2(profile)?;
            print_json(&t)?;
            t.pass()
        }
        Target::Fig3 => {
            let f = reproduce_fig3(profile)?;
            print_json(&f)?;
            f.pass()
        }
    };
    Ok(verdict(pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analytic(a) => analytic(a),
        Command::Simulate(a) => simulate(a),
        Command::Tomo(a) => tomo(a),
        Command::Sweep(a) => {
            if a.from > a.to {
                Err(anyhow::anyhow!("--from must not exceed --to"))
            } else {
                run_sweep(a)
            }
        }
        Command::Reproduce(a) => reproduce(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
