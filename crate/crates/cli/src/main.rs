use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use draftlab_cli::commands::{self, require_config};
use draftlab_cli::{CliError, Overrides, Result};

#[derive(Parser)]
#[command(name = "draftlab", version, about = "Residual-adapter adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `experiment.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment seed, overriding `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, out: self.out.clone() }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a configuration and write its normalized echo.
    Validate(Common),
    /// Run the configured regime end to end.
    Run(Common),
    /// Run DRAFT self-transfer for several adapter widths.
    SweepDada {
        #[command(flatten)]
        common: Common,
        /// Comma-separated adapter widths.
        #[arg(long = "d-ada", value_delimiter = ',')]
        d_ada: Vec<usize>,
        /// Only fill the parameter columns.
        #[arg(long)]
        count_only: bool,
    },
    /// Merge run summaries into a comparison table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directories holding summary records.
        dirs: Vec<PathBuf>,
    },
    /// Adapter parameter counts from the closed-form layout.
    CountParams {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "paper")]
        preset: String,
        #[arg(long = "d-ada", value_delimiter = ',')]
        d_ada: Vec<usize>,
    },
    /// Greedy decoding of a target split with a finetuned checkpoint.
    Decode {
        #[command(flatten)]
        common: Common,
        /// Defaults to `finetune.ckpt` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Score a decode file.
    Score {
        #[command(flatten)]
        common: Common,
        /// Decode file; defaults to `decode_test.tsv` in the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Validate(c) => {
            let cfg = commands::cmd_validate(require_config(c.config.as_deref())?, &c.overrides())?;
            println!("ok: {} -> {}", cfg.regime, cfg.out.display());
        }
        Cmd::Run(c) => {
            let outcome = commands::cmd_run(require_config(c.config.as_deref())?, &c.overrides())?;
            for w in &outcome.run.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}{}", draftlab_cli::Summary::header(), outcome.summary.row());
        }
        Cmd::SweepDada { common, d_ada, count_only } => {
            let t = commands::cmd_sweep_dada(require_config(common.config.as_deref())?, &common.overrides(), &d_ada, count_only)?;
            print!("{}", t.text());
        }
        Cmd::Report { common, dirs } => {
            print!("{}", commands::cmd_report(&dirs, common.out.as_deref())?.text());
        }
        Cmd::CountParams { common, preset, d_ada } => {
            let t = commands::cmd_count_params(&preset, common.config.as_deref(), &common.overrides(), &d_ada, common.out.as_deref())?;
            print!("{}", t.text());
        }
        Cmd::Decode { common, checkpoint, split } => {
            let rate = commands::cmd_decode(require_config(common.config.as_deref())?, &common.overrides(), checkpoint.as_deref(), &split)?;
            println!("{split} error rate: {rate:.6}");
        }
        Cmd::Score { common, input } => {
            let (rate, path) = commands::cmd_score(input.as_deref(), common.config.as_deref(), &common.overrides(), common.out.as_deref())?;
            println!("error rate: {rate:.6} ({})", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", err.render());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.render());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
