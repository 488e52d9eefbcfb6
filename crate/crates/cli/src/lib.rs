//! Command-line shell around prince-core: data loading, configuration,
//! orchestration and report files.

pub mod archive;
pub mod config;
pub mod fit;
pub mod load;
pub mod report;
pub mod simulate;

use anyhow::{Context, Result};
use archive::Archive;
use clap::{Parser, Subcommand, ValueEnum};
use config::{resolve_seed, RunConfig};
use prince_core::simulation::{run_study, SimConfig, Setting};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "prince", version, about = "Principal-stratification BART for count-valued intermediate treatments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SettingArg {
    Placebo,
    Confounded,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit the model to a data file and write effect tables, draws and diagnostics.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the repeated-sampling study.
    Simulate {
        #[arg(long, value_enum)]
        setting: SettingArg,
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Latent correlation between potential counts used by the sampler.
        #[arg(long)]
        rho: Option<f64>,
        /// TOML overrides of the study settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base table CSV; a synthetic table is generated when absent.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        base_seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Recompute R-hat and ESS from a stored draws archive.
    Diagnose {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render effect tables and plot-ready CSVs from stored results.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run_command(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fit { data, config, out, seed } => {
            let cfg = RunConfig::from_file(&config)?;
            let mapping = cfg.columns.clone().context("config has no [columns] mapping")?;
            let seed = resolve_seed(seed, cfg.seed)?;
            let (dataset, load) = load::load_table(&data, &mapping)?;
            let (archive, results) = fit::run_fit(&dataset, &cfg, seed, Some(load))?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            archive.write(&out)?;
            report::write_results(&results, &out)?;
            report::emit_reports(&archive, &results, &out)
        }
        Command::Simulate { setting, reps, n, seed, rho, config, base, base_seed, out } => {
            let setting = match setting {
                SettingArg::Placebo => Setting::Placebo,
                SettingArg::Confounded => Setting::Confounded,
            };
            let seed = resolve_seed(seed, None)?;
            let mut cfg = simulate::sim_config(config.as_deref(), SimConfig::desk(setting, seed))?;
            cfg.setting = setting;
            cfg.replications = reps;
            cfg.sample_size = n;
            cfg.seed = seed;
            if let Some(r) = rho {
                cfg.bart.chain.rho = r;
            }
            let (rows, source) = match &base {
                Some(p) => (simulate::load_base(p)?, format!("file {}", p.display())),
                None => (simulate::synthetic_base(base_seed)?, format!("synthetic, seed {base_seed}")),
            };
            let result = run_study(&cfg, &rows)?;
            simulate::write_outputs(&result, &source, &out)
        }
        Command::Diagnose { results, out } => {
            let res = report::read_results(&results)?;
            let archive = Archive::read(&results)?;
            let text = report::diagnostics_csv(&archive, res.big_j as usize)?;
            let dir = out.unwrap_or(results);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("diagnostics.csv");
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
        }
        Command::Report { results, out } => {
            let res = report::read_results(&results)?;
            let archive = Archive::read(&results)?;
            report::emit_reports(&archive, &res, &out.unwrap_or(results))
        }
    }
}

/// Parse `argv` and run. Returns the process exit status: 0 on success, 1 on
/// a runtime error (one line on stderr), 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            1
        }
    }
}
