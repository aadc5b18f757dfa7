//! The `foresight` command line.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;
pub mod sweep;
pub mod table;

pub use error::{CliError, Result};

use args::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume } => commands::train(&config, resume),
        Command::Eval { config, checkpoint, expert, episodes } => {
            commands::eval(&config, checkpoint.as_deref(), expert, episodes)
        }
        Command::Baseline(s) => sweep::baseline(&s),
        Command::SweepL { sweep: s, values } => sweep::sweep_l(&s, &values),
        Command::SweepNoise { sweep: s, values } => sweep::sweep_noise(&s, &values),
        Command::Ablate { sweep: s, kinds } => sweep::ablate(&s, &kinds),
        Command::Diagnose { snapshots, runs, out } => commands::diagnose(&snapshots, &runs, &out),
        Command::Serve { config, bind, exit_when_finished } => commands::serve(&config, bind, exit_when_finished),
        Command::Replay { config, log } => commands::replay(&config, &log),
        Command::Plot { csv, x, y, group, title, out } => {
            plot::plot(&csv, &x, &y, group.as_deref(), title.as_deref(), &out)
        }
    }
}
