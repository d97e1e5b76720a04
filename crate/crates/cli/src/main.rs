//! Command-line front end for the contact-localization pipeline.
//!
//! Subcommands mirror the pipeline stages: `gen-data`, `train`, `infer`,
//! `eval`, `pf`, and `report`. Every run is reproducible from the resolved
//! config written next to its outputs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data/file error,
//! 4 numeric failure, 1 anything else.

use cdm_core::error::CdmError;
use cdm_core::pipeline::{
    cmd_eval, cmd_gen_data, cmd_infer, cmd_pf, cmd_report, cmd_train, RunConfig, Variant,
};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cdm",
    about = "Multi-contact localization: diffusion sampler, QP verification, PF baseline",
    version
)]
struct Cli {
    /// Run configuration file (TOML). Defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Robot preset override (planar3 | spatial7 | path to a robot TOML).
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Output directory (all artifacts land here).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate contact scenarios and write the dataset.
    GenData,
    /// Train the denoiser and classifier on the generated dataset.
    Train {
        /// Model variant: his (default) or nosdf (no pointwise FiLM path).
        #[arg(long, default_value = "his")]
        variant: String,
        /// Continue from the saved optimizer state.
        #[arg(long)]
        resume: bool,
    },
    /// Sequential-window inference over eval scenarios; dumps samples.
    Infer {
        /// Model variant: his (threads history) or null (always
        /// null-conditioned) or nosdf.
        #[arg(long, default_value = "his")]
        variant: String,
        /// Number of eval scenarios to run (0 = all).
        #[arg(long, default_value_t = 50)]
        max_scenarios: usize,
    },
    /// Evaluate metrics, ablations, and plots on the eval split.
    Eval,
    /// Particle-filter baseline on single-contact scenarios.
    Pf {
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Collate run artifacts into report.md.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &CdmError) -> u8 {
    match err {
        CdmError::InvalidConfig(_) | CdmError::InvalidArgument(_) => 2,
        CdmError::CorruptHeader(_)
        | CdmError::VersionMismatch { .. }
        | CdmError::TruncatedRecord(_)
        | CdmError::CheckpointFormat(_)
        | CdmError::Io(_) => 3,
        CdmError::NonFinite(_) => 4,
        CdmError::DimensionMismatch { .. } | CdmError::IndexOutOfRange { .. } => 4,
    }
}

fn run(cli: Cli) -> Result<(), CdmError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_toml_path(path)?,
        None => RunConfig::desk_default(
            cli.preset.as_deref().unwrap_or("planar3"),
            cli.seed.unwrap_or(42),
            cli.out.as_deref().unwrap_or_else(|| std::path::Path::new("out")),
        )?,
    };
    cfg.apply_overrides(cli.preset.as_deref(), cli.seed, cli.out.as_deref())?;

    match cli.command {
        Command::GenData => {
            let s = cmd_gen_data(&cfg)?;
            println!("scenarios: {}", s.scenarios);
            println!("windows:   {}", s.windows);
            for (state, count) in &s.counts {
                println!("  {state}: {count}");
            }
            println!("dataset:   {}", s.dataset_path.display());
        }
        Command::Train { variant, resume } => {
            let variant: Variant = variant.parse()?;
            let s = cmd_train(&cfg, variant, resume)?;
            println!("denoiser params:   {}", s.denoiser_params);
            if s.classifier_params > 0 {
                println!("classifier params: {}", s.classifier_params);
            }
            println!("steps:             {}", s.steps_run);
            println!("final loss:        {:.6}", s.final_denoiser_loss);
            println!("checkpoint:        {}", s.denoiser_ckpt.display());
        }
        Command::Infer { variant, max_scenarios } => {
            let variant: Variant = variant.parse()?;
            let s = cmd_infer(&cfg, variant, max_scenarios)?;
            println!("windows:            {}", s.windows);
            println!("mean inference ms:  {:.3}", s.mean_inference_ms);
            println!("dump:               {}", s.dump_path.display());
        }
        Command::Eval => {
            let s = cmd_eval(&cfg)?;
            println!("report: {}", s.report_path.display());
            print!("{}", s.report.to_csv());
            println!("mean inference ms: {:.3}", s.report.mean_inference_ms);
            if let Some(h) = &s.history_ablation {
                println!(
                    "history ablation over {} dual windows: his {:.3} cm vs null {:.3} cm",
                    h.windows, h.m_rmse_his_cm, h.m_rmse_null_cm
                );
            }
            if let Some(a) = &s.sdf_ablation {
                println!(
                    "sdf ablation: with {:.3} cm vs without {:.3} cm",
                    a.surface_dist_with_cm, a.surface_dist_without_cm
                );
            }
        }
        Command::Pf { trials } => {
            let s = cmd_pf(&cfg, trials)?;
            println!("trials: {}", s.trials);
            println!("within 2 cm: {}/{}", s.within_2cm, s.trials);
            println!("mean error: {:.3} cm", s.mean_error_cm);
            println!("report: {}", s.report_path.display());
        }
        Command::Report => {
            let text = cmd_report(&cfg)?;
            print!("{text}");
        }
    }
    Ok(())
}
