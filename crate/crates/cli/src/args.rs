use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "foresight", version, about = "Preference learning from interventions: training, sweeps and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Config file plus overrides, shared by every run command.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Run config (JSON). Defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set trainer.total_steps=500`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; falls back to `output_dir` in the config.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Training seeds; one run per value and seed.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train with the proxy expert; writes metrics, checkpoints and a resumable state.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from `state.json` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a policy checkpoint (or the proxy expert) on the evaluation seeds.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, required_unless_present = "expert")]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "checkpoint")]
        expert: bool,
        /// Number of evaluation episodes; defaults to the config.
        #[arg(long)]
        episodes: Option<u64>,
    },
    /// Preference method against the BC-on-interventions baseline, per seed.
    Baseline(SweepArgs),
    /// Vary the preference horizon L.
    SweepL {
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,2,4,8")]
        values: Vec<String>,
    },
    /// Vary the prediction noise level.
    SweepNoise {
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.125,0.25")]
        values: Vec<String>,
    },
    /// Objective variants and the frozen-traffic predictor at matched steps.
    Ablate {
        #[command(flatten)]
        sweep: SweepArgs,
        /// Objective kinds, plus `rule_based` for the frozen-traffic predictor.
        #[arg(long, value_delimiter = ',', default_value = "cpo,bc_only,cpo_only,imitation_on_pos,random_pos,random_neg,dpo,ipo,slic,rule_based")]
        kinds: Vec<String>,
    },
    /// Measure the distribution-shift, preference-shift and optimization terms on saved states.
    Diagnose {
        /// Trainer state files (`state.json`).
        #[arg(long = "snapshot")]
        snapshots: Vec<PathBuf>,
        /// Also take every `state.json` below these directories.
        #[arg(long = "runs")]
        runs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Human-in-the-loop session server.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Listen address; overrides `service.bind`.
        #[arg(long)]
        bind: Option<String>,
        /// Stop once the run has used all its steps.
        #[arg(long)]
        exit_when_finished: bool,
    },
    /// Re-run a recorded session from its command log.
    Replay {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        log: PathBuf,
    },
    /// SVG line chart from a CSV column pair; rows sharing x are averaged.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        /// One line per distinct value of this column.
        #[arg(long)]
        group: Option<String>,
        #[arg(long)]
        title: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
}
