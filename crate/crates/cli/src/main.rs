//! Command-line front end for the two-hop semantic relay simulator.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semrelay::config::SystemConfig;
use semrelay::experiment::{self, fmt_sig, Axis, ExperimentRow, RowKind, RunPoint};
use semrelay::optimizer::grid_search;
use semrelay::overhead;
use semrelay::rng::derive_seed;
use semrelay::training::{init_model, train};
use semrelay::{checkpoint, Error, Model, Result};

const ROW_COLUMNS: &str = "CSV columns (one row per trial, then one summary row per axis value):
  kind         trial | summary
  axis         swept quantity (P, SNR, v1, v2, CBR; P for run)
  axis_value   value of the swept quantity
  trial        trial index (empty on summary rows)
  seed         channel/quantization seed (empty on summary rows)
  n_images     images per group
  height       image height
  width        image width
  power_dbm    transmit power per hop
  v1, v2       source and relay compression rates
  cbr          channel bandwidth ratio of the source payload
  snr_sr_db    average SNR of the source-relay hop
  snr_rd_db    average SNR of the relay-destination hop
  psnr_db      PSNR with peak 1.0 (mean on summary rows)
  psnr_std_db  PSNR standard deviation (summary rows only)
  ms_ssim      MS-SSIM (mean on summary rows)
  ms_ssim_std  MS-SSIM standard deviation (summary rows only)
  deep_fade    1 if a hop fell below the deep-fade floor
Floats carry 9 significant digits.";

const EXIT_CODES: &str = "Exit status: 0 ok, 2 configuration or usage error, 3 data error, 4 numeric fault.";

#[derive(Parser, Debug)]
#[command(name = "semrelay", version, about = "Two-hop semantic image transmission simulator", after_help = EXIT_CODES)]
struct Cli {
    /// TOML configuration file with dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. --set channel.sr.distance_m=40
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and save it to paths.checkpoint.
    #[command(after_help = "Loss curve CSV columns: step, rate_bits, mse, total.")]
    Train {
        /// Write the loss curve here.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Transmit run.trials groups at the configured operating point.
    #[command(after_help = ROW_COLUMNS)]
    Run {
        /// CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one quantity and record every trial.
    #[command(after_help = ROW_COLUMNS)]
    Sweep {
        /// P, SNR, v1, v2 or CBR.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        /// Trials per value; defaults to run.trials.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search for the compression pair maximizing mean PSNR.
    #[command(after_help = "CSV columns: v1, v2, mean_psnr, std_psnr (one row per grid cell, row-major).")]
    Optimize {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Side-information overhead of PC-HEM, ED-HEM and HEM.
    #[command(
        after_help = "CSV columns: scheme, N, C, gamma_p, H, W, shared_index_elements, importance_elements."
    )]
    Overhead {
        /// Images per group.
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Comma-separated latent channel counts.
        #[arg(long, value_delimiter = ',', default_value = "8,16,24,32,40,48,56,60,64")]
        channels: Vec<usize>,
        #[arg(long, default_value_t = 0.5)]
        gamma_p: f64,
        /// Latent height.
        #[arg(long, default_value_t = 64)]
        height: usize,
        /// Latent width.
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a checkpoint.
    Inspect {
        /// Defaults to paths.checkpoint.
        path: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<SystemConfig> {
    let mut cfg = match &cli.config {
        Some(p) => SystemConfig::from_file(p)?,
        None => SystemConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_checkpoint(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} not found; run `semrelay train` first", path.display())));
    }
    checkpoint::load(path)
}

fn summarize(rows: &[ExperimentRow]) {
    for r in rows.iter().filter(|r| r.kind == RowKind::Summary) {
        println!(
            "{}={}: PSNR {} ± {} dB, MS-SSIM {}, CBR {}{}",
            r.axis,
            fmt_sig(r.axis_value),
            fmt_sig(r.psnr_db),
            fmt_sig(r.psnr_std_db.unwrap_or(0.0)),
            fmt_sig(r.ms_ssim),
            fmt_sig(r.cbr),
            if r.deep_fade { " (deep fade seen)" } else { "" }
        );
    }
}

fn emit_rows(rows: &[ExperimentRow], out: &Option<PathBuf>) -> Result<()> {
    experiment::write_csv(rows, sink(out)?)?;
    if let Some(p) = out {
        summarize(rows);
        println!("wrote {} rows to {}", rows.len(), p.display());
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    if let Command::Overhead { n, channels, gamma_p, height, width, out } = &cli.command {
        let rows = overhead::table(*n, channels, *gamma_p, *height, *width)?;
        return overhead::write_csv(&rows, sink(out)?);
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train { curve } => {
            let data = experiment::load_groups(&cfg)?;
            let mut model = init_model(&cfg.arch(), cfg.train.seed)?;
            let report = train(&mut model, &data, &cfg.train)?;
            checkpoint::save(&model, &cfg.checkpoint)?;
            if let Some(p) = curve {
                report.write_csv(BufWriter::new(File::create(p)?))?;
            }
            println!(
                "trained {} parameters on {} groups for {} steps: loss {} -> {}; saved {}",
                model.param_count(),
                data.len(),
                report.curve.len(),
                fmt_sig(report.initial_loss()),
                fmt_sig(report.final_loss(1)),
                cfg.checkpoint.display()
            );
            Ok(())
        }
        Command::Run { out } => {
            let model = load_checkpoint(&cfg.checkpoint)?;
            let groups = experiment::load_groups(&cfg)?;
            let rows = experiment::sweep(&model, &groups, &cfg, Axis::Power, &[cfg.power_dbm], cfg.trials)?;
            emit_rows(&rows, out)
        }
        Command::Sweep { axis, values, trials, out } => {
            let axis: Axis = axis.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
            let trials = trials.unwrap_or(cfg.trials);
            let model = load_checkpoint(&cfg.checkpoint)?;
            let groups = experiment::load_groups(&cfg)?;
            let rows = experiment::sweep(&model, &groups, &cfg, axis, values, trials)?;
            emit_rows(&rows, out)
        }
        Command::Optimize { out } => {
            let model = load_checkpoint(&cfg.checkpoint)?;
            let groups = experiment::load_groups(&cfg)?;
            let result = grid_search(
                |v1, v2, t| {
                    let point = RunPoint { power_dbm: cfg.power_dbm, v1, v2 };
                    let seed = derive_seed(cfg.seed, &[t as u64]);
                    Ok(experiment::run_pipeline(&model, &groups[t % groups.len()], &cfg, point, seed)?.psnr_db)
                },
                cfg.grid,
                cfg.trials,
            )?;
            result.write_csv(sink(out)?)?;
            if out.is_some() {
                println!(
                    "best (v1, v2) = ({}, {}) with mean PSNR {} dB over {} trials",
                    fmt_sig(result.v1_op),
                    fmt_sig(result.v2_op),
                    fmt_sig(result.best_value),
                    cfg.trials
                );
            }
            Ok(())
        }
        Command::Inspect { path } => {
            let path = path.as_ref().unwrap_or(&cfg.checkpoint);
            let model = load_checkpoint(path)?;
            let a = &model.arch;
            println!("checkpoint   {}", path.display());
            println!("images       {} x 3x{}x{}", a.n_images, a.image_height, a.image_width);
            println!("gamma_p      {}", a.gamma_p);
            println!("channels     C={} C1={} C2={}", a.latent_channels, a.shared_channels(), a.merged_channels());
            println!("widths       latent {:?}, jscc {}, hyper {}", a.lt_widths, a.jscc_hidden, a.hyper_channels);
            println!("parameters   {}", model.param_count());
            println!("finite       {}", model.is_finite());
            let flat = model.to_flat();
            for (name, off, len) in model.param_layout() {
                let rms = (flat[off..off + len].iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
                println!("  {name:<28} {len:>8}  rms {}", fmt_sig(rms));
            }
            Ok(())
        }
        Command::Overhead { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
