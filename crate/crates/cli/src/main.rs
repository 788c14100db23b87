//! Command-line front end: layout inspection, dataset generation, training,
//! BER evaluation, decision-boundary export and single-sample LLR debugging.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hdemap::bench::{self, ExperimentConfig};
use hdemap::catalog::select;
use hdemap::demap::{bit_llrs_from_symbols, code_logprob, SymbolLogProbs};
use hdemap::neural::train::{features_of, infer_logits};
use hdemap::representation::{build_layout, LayoutMode};
use num_complex::Complex32;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "hdemap", version, about = "Shared-representation neural demapping for QAM and APSK")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the representation layout as JSON
    Layout {
        #[command(flatten)]
        common: Common,
        /// Give every constellation its own bits instead of sharing
        #[arg(long)]
        flat_all: bool,
        /// Write the report here instead of stdout
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate train/val/test datasets
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model per run seed
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Write BER curves of the neural demapper and both oracles
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Export the decision-boundary grid of one constellation
    Boundaries {
        #[command(flatten)]
        common: Common,
        /// Constellation id
        #[arg(long)]
        constellation: String,
        /// Run seed of the model to probe (first run seed by default)
        #[arg(long)]
        seed: Option<u64>,
        /// Cells per axis
        #[arg(long)]
        resolution: Option<usize>,
        /// SNR fed to the network, in dB
        #[arg(long)]
        snr_db: Option<f64>,
    },
    /// Print logits, symbol log-probabilities and bit LLRs of one sample
    Llr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        constellation: String,
        /// In-phase component
        #[arg(long, allow_hyphen_values = true)]
        i: f32,
        /// Quadrature component
        #[arg(long, allow_hyphen_values = true)]
        q: f32,
        /// Es/N0 in dB
        #[arg(long, allow_hyphen_values = true)]
        snr_db: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Options shared by every subcommand; flags override the config file.
#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Constellation catalog (JSON); bundled catalog by default
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Comma-separated training constellation ids
    #[arg(long, value_delimiter = ',')]
    constellations: Option<Vec<String>>,
    /// Comma-separated evaluation constellation ids
    #[arg(long, value_delimiter = ',')]
    eval_constellations: Option<Vec<String>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated run seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Sequences per constellation before the 80/10/10 split
    #[arg(long)]
    sequences: Option<usize>,
    /// Symbols per sequence
    #[arg(long)]
    block_size: Option<usize>,
    /// Channel RNG seed
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Cap on optimizer steps per epoch
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    /// Feed the normalized SNR to the network
    #[arg(long)]
    snr_feature: Option<bool>,
}

impl Common {
    fn config(&self) -> hdemap::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.catalog {
            cfg.catalog = Some(v.clone());
        }
        if let Some(v) = &self.constellations {
            cfg.constellations = v.clone();
        }
        if let Some(v) = &self.eval_constellations {
            cfg.eval_constellations = v.clone();
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = &self.seeds {
            cfg.run_seeds = v.clone();
        }
        if let Some(v) = self.sequences {
            cfg.channel.sequences_per_constellation = v;
        }
        if let Some(v) = self.block_size {
            cfg.channel.block_size = v;
        }
        if let Some(v) = self.rng_seed {
            cfg.channel.rng_seed = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.train.patience = v;
        }
        if let Some(v) = self.lr {
            cfg.train.optimizer.lr = v;
        }
        if let Some(v) = self.steps_per_epoch {
            cfg.train.steps_per_epoch = Some(v);
        }
        if let Some(v) = self.snr_feature {
            cfg.train.features.snr_db_normalized = v;
        }
        Ok(cfg)
    }
}

fn print_json(value: &impl serde::Serialize) -> hdemap::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> hdemap::Result<()> {
    match cli.command {
        Command::Layout { common, flat_all, output } => {
            let cfg = common.config()?;
            let catalog = cfg.load_catalog()?;
            let mode = if flat_all { LayoutMode::FlatAll } else { cfg.layout_mode };
            let layout = build_layout(&select(&catalog, &cfg.all_ids(&catalog))?, mode)?;
            let mut report = serde_json::to_value(layout.report())?;
            report["hash"] = json!(layout.hash());
            match output {
                Some(p) => std::fs::write(p, serde_json::to_string_pretty(&report)?)?,
                None => print_json(&report)?,
            }
        }
        Command::Gen { common } => {
            let cfg = common.config()?;
            let catalog = cfg.load_catalog()?;
            for p in bench::run_gen(&cfg, &catalog)? {
                println!("{}", p.display());
            }
        }
        Command::Train { common } => {
            let cfg = common.config()?;
            let catalog = cfg.load_catalog()?;
            for (seed, history) in bench::run_train(&cfg, &catalog)? {
                println!(
                    "seed {seed}: {} epochs, best epoch {} (val loss {:.6})",
                    history.epochs.len(),
                    history.best_epoch,
                    history.best_val_loss().unwrap_or(f64::NAN)
                );
            }
        }
        Command::Eval { common } => {
            let cfg = common.config()?;
            let catalog = cfg.load_catalog()?;
            for (seed, curve) in bench::run_eval(&cfg, &catalog)? {
                println!("{}", bench::ber_path(&cfg.output_dir, &curve.constellation_id, seed).display());
            }
        }
        Command::Boundaries { common, constellation, seed, resolution, snr_db } => {
            let mut cfg = common.config()?;
            if let Some(r) = resolution {
                cfg.boundary.resolution = r;
            }
            if let Some(s) = snr_db {
                cfg.boundary.snr_db = s;
            }
            let catalog = cfg.load_catalog()?;
            let seed = seed.unwrap_or(cfg.run_seeds[0]);
            let grid = bench::run_boundaries(&cfg, &catalog, &constellation, seed)?;
            println!(
                "{}: agreement {:.4}",
                bench::boundary_path(&cfg.output_dir, &constellation, seed).display(),
                grid.agreement()
            );
        }
        Command::Llr { common, constellation, i, q, snr_db, seed } => {
            let cfg = common.config()?;
            let catalog = cfg.load_catalog()?;
            let layout = cfg.layout(&catalog)?;
            let model = bench::load_run_model(&cfg, &layout, seed.unwrap_or(cfg.run_seeds[0]))?;
            let c = select(&catalog, &[&constellation])?[0];
            let entry = layout.entry(&constellation)?;
            let logits = infer_logits(&model, features_of(model.features, &[(Complex32::new(i, q), snr_db)]).view())?;
            let frame: Vec<f64> = logits.row(0).iter().map(|&v| v as f64).collect();
            let slp = SymbolLogProbs(entry.codes.iter().map(|code| code_logprob(&frame, code)).collect());
            let llrs = bit_llrs_from_symbols(&slp, c.bit_mapping())?;
            print_json(&json!({
                "constellation": constellation,
                "representation_logits": frame,
                "symbol_logprobs": slp.0,
                "argmax_symbol": slp.argmax(),
                "bit_llrs": llrs.values,
                "saturated": llrs.saturated,
                "hard_bits": llrs.hard_bits().to_string(),
            }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
