//! `coroam`: run roaming scenarios and compare handoff reports.
//!
//! ```text
//! coroam --config scenarios/paper_open.cfg --seed 1 --reps 30 --mode both --out out/
//! coroam compare out/handoffs_cr.csv out/handoffs_legacy.csv
//! ```
//!
//! Exit status: 0 on success, 1 for configuration or input errors, 2 for
//! failures while running or writing results. Log verbosity follows
//! `RUST_LOG`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use coroam::report::{compare, Report, SummaryReport};
use coroam::sim::{load_scenario, run, Mode, RunReport, ScenarioConfig};

#[derive(Parser, Debug)]
#[command(name = "coroam", version, about = "Cooperative roaming handoff simulator")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Side-by-side means of two handoff CSVs over the same topology.
    Compare { a: PathBuf, b: PathBuf },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the first repetition; repetition k uses seed + k.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    reps: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Cr,
    Legacy,
    Both,
}

impl ModeArg {
    fn modes(self) -> &'static [Mode] {
        match self {
            ModeArg::Cr => &[Mode::Cr],
            ModeArg::Legacy => &[Mode::Legacy],
            ModeArg::Both => &[Mode::Cr, Mode::Legacy],
        }
    }
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Config(_) => ExitCode::from(1),
            Failure::Runtime(_) => ExitCode::from(2),
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Some(Command::Compare { a, b }) => run_compare(&a, &b),
        None => run_scenario(&cli.run),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}

fn run_compare(a: &Path, b: &Path) -> Result<String, Failure> {
    let load = |p: &Path| -> Result<Report, Failure> {
        let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
        Report::parse_csv(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))
    };
    let (ra, rb) = (load(a)?, load(b)?);
    compare(&ra, &rb).map(|c| c.to_string()).map_err(|e| Failure::Runtime(e.to_string()))
}

fn run_scenario(args: &RunArgs) -> Result<String, Failure> {
    let path = args.config.as_deref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let cfg = load_scenario(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    info!("scenario {} with {} nodes, {} reps from seed {}", cfg.name, cfg.nodes.len(), args.reps, args.seed);

    // Everything is computed before the first file is written, so a failure
    // leaves no partial output behind.
    let mut files: Vec<(String, String)> = Vec::new();
    let mut reports = Vec::new();
    for &mode in args.mode.modes() {
        let runs = run_reps(&cfg, mode, args.seed, args.reps)?;
        let report = Report::from_runs(&runs).map_err(|e| Failure::Runtime(e.to_string()))?;
        files.push((format!("handoffs_{mode}.csv"), report.to_csv()));
        files.push((format!("{mode}_trace.log"), concat_reps(&runs, RunReport::trace_text)));
        files.push((format!("{mode}_security.log"), concat_reps(&runs, RunReport::security_text)));
        files.push((format!("{mode}_relay_audit.log"), concat_reps(&runs, RunReport::audit_text)));
        files.push((format!("{mode}_leases.txt"), concat_reps(&runs, |r| r.lease_table.clone())));
        reports.push(report);
    }
    let summary = SummaryReport::new(&reports).map_err(|e| Failure::Runtime(e.to_string()))?.to_string();
    files.push(("summary.txt".into(), summary.clone()));

    fs::create_dir_all(&args.out).map_err(|e| Failure::Runtime(format!("{}: {e}", args.out.display())))?;
    for (name, body) in &files {
        let p = args.out.join(name);
        fs::write(&p, body).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
    }
    info!("wrote {} files to {}", files.len(), args.out.display());
    Ok(summary)
}

/// Runs repetitions on worker threads; results come back in repetition order.
fn run_reps(cfg: &ScenarioConfig, mode: Mode, seed: u64, reps: u32) -> Result<Vec<RunReport>, Failure> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(reps as usize);
    let seeds: Vec<u64> = (0..reps as u64).map(|k| seed.wrapping_add(k)).collect();
    let chunk = seeds.len().div_ceil(workers);
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|&sd| run(cfg, mode, sd)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    results.into_iter().collect::<Result<Vec<_>, _>>().map_err(|e| Failure::Runtime(e.to_string()))
}

fn concat_reps(runs: &[RunReport], body: impl Fn(&RunReport) -> String) -> String {
    let mut out = String::new();
    for (k, r) in runs.iter().enumerate() {
        out.push_str(&format!("# rep={k} seed={}\n", r.seed));
        out.push_str(&body(r));
    }
    out
}
