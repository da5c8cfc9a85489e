//! Command-line front end. Settings come from defaults, then `--config`,
//! then individual flags, later sources overriding earlier ones.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure,
//! 3 sweep finished with failed cells.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use splitjscc::harness::{emit, frontier, run, sweep, uniform_flops, ExperimentConfig, RunContext, Target};
use splitjscc::models::SplitPoint;
use splitjscc::report::{read_csv, to_csv, to_json, Format};
use splitjscc::Error;

#[derive(Parser, Debug)]
#[command(name = "splitjscc", version, about = "Device-edge split inference with a learned channel codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated evaluation SNRs in dB.
    #[arg(long = "snr-db", global = true, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    /// Pooling layer after which the network is cut.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=5))]
    split: Option<u8>,
    /// Fraction of device filters to prune.
    #[arg(long, global = true)]
    ratio: Option<f64>,
    /// Encoder output channels.
    #[arg(long = "c-enc", global = true)]
    c_enc: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reuse checkpoints and rows from earlier runs in the output directory.
    #[arg(long, global = true)]
    resume: bool,
    #[arg(long, global = true, value_enum)]
    format: Option<OutFormat>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Phase 1: train the unsplit backbone.
    Pretrain,
    /// Phases 1-2: prune the device-side filters.
    Prune,
    /// Phases 1-3: train the codec on frozen features.
    Codec,
    /// Phases 1-4: fine-tune everything through the channel.
    E2e,
    /// Train as needed, then evaluate every SNR and write result rows.
    Eval,
    /// Evaluate every cell of the config's sweep grid.
    Sweep,
    /// Pareto frontier of the results already in the output directory.
    Frontier,
    /// Device FLOPs and bandwidth under uniform pruning; no training.
    Flops,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Format {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

fn config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut c = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(l) = &cli.snr_db {
        c.snr_db_list = l.clone();
    }
    if let Some(s) = cli.split {
        c.split = SplitPoint::new(s as usize)?;
    }
    if let Some(r) = cli.ratio {
        c.pruning_ratio = r;
    }
    if let Some(k) = cli.c_enc {
        c.c_enc = k;
    }
    if let Some(o) = &cli.out {
        c.output_dir = o.clone();
    }
    if let Some(f) = cli.format {
        c.format = f.into();
    }
    Ok(c)
}

fn print_rows(rows: &[splitjscc::report::ResultRow], format: Format) -> Result<(), Error> {
    let text = match format {
        Format::Csv => to_csv(rows)?,
        Format::Json => to_json(rows)? + "\n",
    };
    print!("{text}");
    Ok(())
}

fn execute(cli: &Cli) -> Result<ExitCode, Error> {
    let cfg = config(cli)?;
    let mut ctx = RunContext::new(cli.resume);
    match cli.command {
        Command::Pretrain | Command::Prune | Command::Codec | Command::E2e => {
            let target = match cli.command {
                Command::Pretrain => Target::Pretrain,
                Command::Prune => Target::Prune,
                Command::Codec => Target::Codec,
                _ => Target::EndToEnd,
            };
            let out = run(&cfg, target, &mut ctx)?;
            for t in &ctx.trained {
                println!("trained {t}");
            }
            match out.bandwidth {
                Some(b) => println!("device_flops {} bandwidth {b}", out.device_flops),
                None => println!("device_flops {}", out.device_flops),
            }
        }
        Command::Eval => {
            let out = run(&cfg, Target::Eval, &mut ctx)?;
            print_rows(&out.rows, cfg.format)?;
        }
        Command::Sweep => {
            let out = sweep(&cfg, &mut ctx)?;
            print_rows(&out.rows, cfg.format)?;
            if !out.failures.is_empty() {
                for f in &out.failures {
                    eprintln!("failed cell split {} ratio {} c_enc {}: {}", f.split, f.ratio, f.c_enc, f.error);
                }
                return Ok(if out.rows.is_empty() { ExitCode::from(2) } else { ExitCode::from(3) });
            }
        }
        Command::Frontier => {
            let rows = read_csv(&cfg.results_path())?;
            emit(&rows, &cfg.output_dir, cfg.format, Some(cfg.frontier_floor))?;
            print_rows(&frontier(&rows, cfg.frontier_floor), cfg.format)?;
        }
        Command::Flops => {
            let (report, b) = uniform_flops(&cfg)?;
            match cfg.format {
                Format::Csv => {
                    println!("layer,flops");
                    for (name, f) in &report.layers {
                        println!("{name},{f}");
                    }
                    println!("device_total,{}", report.device_total);
                    println!("bandwidth,{b}");
                }
                Format::Json => {
                    let v = serde_json::json!({
                        "split": cfg.split,
                        "ratio": cfg.pruning_ratio,
                        "c_enc": cfg.c_enc,
                        "bandwidth": b,
                        "device_total": report.device_total,
                        "layers": report.layers,
                    });
                    println!("{}", serde_json::to_string_pretty(&v)?);
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Json(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
