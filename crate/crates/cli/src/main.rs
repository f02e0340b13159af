use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use flashcrowd_core::detector::{detect, DetectError, FlagConfig};
use flashcrowd_core::fchp::{export_lp, load_instance, solution_csv, solution_summary, Mode, ModelError};
use flashcrowd_core::generator::{generate, GeneratorConfig, GeneratorError};
use flashcrowd_core::ils::{solve, IlsParams};
use flashcrowd_core::sim::{compare, run_baseline, run_pipeline, RunReport, ScenarioConfig, SimError};
use flashcrowd_core::trace::{bin_records, read_clf, read_csv_trace, write_csv_trace, ContentInterner, TraceError};

#[derive(Parser)]
#[command(name = "flashcrowd", about = "Flash-crowd detection and cloud provisioning", version)]
struct Cli {
    /// Overrides every seed of the command's input.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bin a common log format access log into a count trace.
    Bin {
        log: PathBuf,
        #[arg(long, default_value_t = 1)]
        bin_width: u64,
        /// Keep only 2xx responses.
        #[arg(long)]
        only_2xx: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write the `content_id,path` table.
        #[arg(long)]
        paths: Option<PathBuf>,
    },
    /// Sample a synthetic trace from a generator config.
    Generate {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Total-correlation series and flagged events of a trace.
    Detect {
        trace: PathBuf,
        #[arg(long, default_value_t = 1)]
        bin_width: u64,
        #[arg(long, default_value_t = 1)]
        w: usize,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        gap_merge: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        /// Directory for `detection.csv` and `events.csv`.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Solve a planning instance with the iterated local search.
    Solve {
        instance: PathBuf,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        swap_frac: Option<f64>,
        /// Solution CSV; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a planning instance as an LP file.
    ExportLp {
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Literal)]
        mode: ModeArg,
        /// Largest requests * servers * periods^2 accepted.
        #[arg(long, default_value_t = 1e7)]
        cap: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a scenario under one or both policies.
    Simulate {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyArg::Both)]
        policy: PolicyArg,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run both policies on a scenario and tabulate the differences.
    Compare {
        scenario: PathBuf,
        /// Also write the CSVs of both runs and `comparison.csv`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Literal,
    Corrected,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Pipeline,
    Baseline,
    Both,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for invalid input, 3 for infeasible problems, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return match e {
                SimError::Infeasible(_) => 3,
                SimError::ScenarioInvalid(_) | SimError::Generator(_) | SimError::Detect(_) => 2,
                SimError::Model(m) => model_code(m),
                _ => 1,
            };
        }
        if let Some(m) = cause.downcast_ref::<ModelError>() {
            return model_code(m);
        }
        if cause.is::<GeneratorError>() || cause.is::<DetectError>() {
            return 2;
        }
        if let Some(t) = cause.downcast_ref::<TraceError>() {
            return if matches!(t, TraceError::Io(_)) { 1 } else { 2 };
        }
    }
    1
}

fn model_code(m: &ModelError) -> u8 {
    match m {
        ModelError::Infeasible => 3,
        ModelError::TooLarge { .. } => 1,
        _ => 2,
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path).with_context(|| format!("scenario {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
        if let Some(g) = cfg.trace.generator.as_mut() {
            g.seed = s;
        }
    }
    Ok(cfg)
}

fn save_report(r: &RunReport, dir: &Path) -> Result<()> {
    r.write_csvs(dir)?;
    write(&dir.join(format!("{}_summary.txt", r.policy)), &r.summary())
}

fn run_both(cfg: &ScenarioConfig) -> Result<(RunReport, RunReport)> {
    let (p, b) = std::thread::scope(|s| {
        let p = s.spawn(|| run_pipeline(cfg));
        let b = run_baseline(cfg);
        (p.join().expect("pipeline run panicked"), b)
    });
    Ok((p?, b?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bin { log, bin_width, only_2xx, out, paths } => {
            let file = File::open(&log).with_context(|| format!("opening {}", log.display()))?;
            let (records, skipped) = read_clf(BufReader::new(file), only_2xx)?;
            let mut interner = ContentInterner::new();
            let (trace, origin) = bin_records(&records, bin_width, &mut interner)?;
            write_csv_trace(&trace, &out)?;
            if let Some(p) = paths {
                let mut body = String::from("content_id,path\n");
                for id in 0..interner.len() as u64 {
                    let path = interner.path(flashcrowd_core::trace::ContentId(id)).unwrap_or_default();
                    body.push_str(&format!("{id},{path}\n"));
                }
                write(&p, &body)?;
            }
            println!(
                "{} records, {skipped} malformed lines skipped, {} bins from origin {origin}, {} contents",
                records.len(),
                trace.horizon(),
                trace.content_catalog.len()
            );
        }
        Command::Generate { config, out } => {
            let mut cfg = GeneratorConfig::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let trace = generate(&cfg)?;
            write_csv_trace(&trace, &out)?;
            println!("{} bins, {} accesses, {} contents", trace.horizon(), trace.total(), trace.content_catalog.len());
            if let Some((start, end)) = cfg.ground_truth() {
                println!("flash crowd: bins {start} to {end}");
            }
        }
        Command::Detect { trace, bin_width, w, k, m, gap_merge, warmup, out_dir } => {
            let trace = read_csv_trace(&trace, bin_width)?;
            let mut flag = m.map(FlagConfig::with_m).unwrap_or_default();
            flag.k = k.unwrap_or(flag.k);
            flag.gap_merge = gap_merge.unwrap_or(flag.gap_merge);
            flag.warmup = warmup.unwrap_or(flag.warmup);
            flag.validate()?;
            let series = detect(&trace, w, &flag)?;
            write(&out_dir.join("detection.csv"), &series.points_csv())?;
            write(&out_dir.join("events.csv"), &series.events_csv())?;
            println!("{} points, {} skipped bins", series.points.len(), series.skipped.len());
            for (start, end) in &series.events {
                println!("event: bins {start} to {end}");
            }
        }
        Command::Solve { instance, iters, levels, d, swap_frac, out } => {
            let inst = load_instance(&instance)?;
            let base = IlsParams::default();
            let params = IlsParams {
                iter_max: iters.unwrap_or(base.iter_max),
                level_max: levels.unwrap_or(base.level_max),
                d: d.unwrap_or(base.d),
                swap_sample_fraction: swap_frac.unwrap_or(base.swap_sample_fraction),
                seed: cli.seed.unwrap_or(base.seed),
            };
            params.validate()?;
            let (sol, cost, stats) = solve(&inst, &params)?;
            print!("{}", solution_summary(&inst, &sol, &cost));
            println!("search: {stats:?}");
            let csv = solution_csv(&inst, &sol);
            match out {
                Some(p) => write(&p, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::ExportLp { instance, mode, cap, out } => {
            let inst = load_instance(&instance)?;
            let mode = match mode {
                ModeArg::Literal => Mode::Literal,
                ModeArg::Corrected => Mode::Corrected,
            };
            write(&out, &export_lp(&inst, mode, cap)?)?;
            println!("wrote {}", out.display());
        }
        Command::Simulate { scenario, policy, out_dir } => {
            let cfg = load_scenario(&scenario, cli.seed)?;
            let reports = match policy {
                PolicyArg::Pipeline => vec![run_pipeline(&cfg)?],
                PolicyArg::Baseline => vec![run_baseline(&cfg)?],
                PolicyArg::Both => {
                    let (p, b) = run_both(&cfg)?;
                    vec![p, b]
                }
            };
            for r in &reports {
                save_report(r, &out_dir)?;
                println!("{}", r.summary());
            }
            if let [p, b] = reports.as_slice() {
                let c = compare(p, b)?;
                write(&out_dir.join("comparison.csv"), &c.csv())?;
                print!("{}", c.text());
            }
        }
        Command::Compare { scenario, out_dir } => {
            let cfg = load_scenario(&scenario, cli.seed)?;
            let (p, b) = run_both(&cfg)?;
            let c = compare(&p, &b)?;
            print!("{}", c.text());
            if let Some(dir) = out_dir {
                save_report(&p, &dir)?;
                save_report(&b, &dir)?;
                write(&dir.join("comparison.csv"), &c.csv())?;
            }
        }
    }
    Ok(())
}
