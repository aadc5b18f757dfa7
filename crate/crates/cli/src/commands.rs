use std::fs;
use std::path::{Path, PathBuf};

use foresight_core::config::{RunConfig, TrainMode};
use foresight_core::diagnostics::diagnose as measure;
use foresight_core::env::Env;
use foresight_core::learning::PreferenceTuple;
use foresight_core::numerics::PolicyParams;
use foresight_core::trainer::{evaluate, evaluate_expert, TrainOutcome, Trainer, TrainerSnapshot};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::args::ConfigArgs;
use crate::config;
use crate::error::{CliError, Result};
use crate::output::*;
use crate::table::{Col, Table};

pub const STATE_FILE: &str = "state.json";

fn save_state(dir: &Path, t: &Trainer) -> Result<()> {
    write_atomic(&dir.join(STATE_FILE), serde_json::to_string(&t.snapshot())?.as_bytes())
}

pub fn load_state(path: &Path) -> Result<TrainerSnapshot> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Runs one proxy-expert training into `dir`: policy checkpoints at every
/// evaluation point, the resumable state every `resume_every` steps and at
/// the end, then the logs.
pub fn run_training(cfg: RunConfig, dir: &Path, command: &str, resume: bool) -> Result<TrainOutcome> {
    if cfg.trainer.mode != TrainMode::ProxyExpert {
        return Err(CliError::Config("trainer.mode must be proxy_expert here; use `serve` for human runs".into()));
    }
    let state_path = dir.join(STATE_FILE);
    let mut trainer = if resume && state_path.exists() {
        let snap = load_state(&state_path)?;
        if snap.config != cfg {
            return Err(CliError::Config(format!(
                "{} was written under a different config",
                state_path.display()
            )));
        }
        log::info!("resuming from step {}", snap.step);
        Trainer::resume(snap)?
    } else {
        if resume {
            log::warn!("no {} yet; starting fresh", state_path.display());
        }
        Trainer::new(cfg.clone())?
    };
    prepare_dir(dir, command, &cfg, &[cfg.trainer.seed])?;
    let ckpt = dir.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    let tc = cfg.trainer.clone();
    while !trainer.is_done() {
        let report = trainer.step(&[])?;
        let step = trainer.step_index();
        if report.eval.is_some() {
            trainer.policy().save(&ckpt.join(format!("policy_step{step:08}.json")))?;
            log::info!(
                "step {step}: success {:.2}, expert steps {}",
                report.row.success_rate.unwrap_or(0.0),
                report.row.human_data_usage
            );
        }
        if tc.resume_every > 0 && step % tc.resume_every == 0 {
            save_state(dir, &trainer)?;
        }
    }
    save_state(dir, &trainer)?;
    let out = trainer.finish();
    write_outcome(dir, &out)?;
    Ok(out)
}

pub fn train(args: &ConfigArgs, resume: bool) -> Result<()> {
    let cfg = config::load(args.config.as_deref(), &args.overrides)?;
    let dir = resolve_out(args.out.as_deref(), &cfg)?;
    let out = run_training(cfg, &dir, "train", resume)?;
    let e = out.latest_eval.as_ref().expect("the last step always evaluates");
    println!(
        "{}",
        json!({"success_rate": e.success_rate, "route_completion": e.mean_route_completion,
               "human_data_usage": out.buffers.human_steps, "out": dir})
    );
    Ok(())
}

pub fn eval(args: &ConfigArgs, checkpoint: Option<&Path>, expert: bool, episodes: Option<u64>) -> Result<()> {
    let mut cfg = config::load(args.config.as_deref(), &args.overrides)?;
    if let Some(n) = episodes {
        cfg.trainer.eval_episodes = n;
        cfg.validate()?;
    }
    let env = Env::new(cfg.env.clone(), cfg.scenario.clone())?;
    let seeds = cfg.trainer.eval_seeds().seeds();
    let summary = if expert {
        evaluate_expert(&env, &cfg.expert, seeds)?
    } else {
        let path = checkpoint.expect("clap requires a checkpoint without --expert");
        let policy = PolicyParams::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        evaluate(&env, &policy, seeds)?
    };
    if let Some(dir) = args.out.as_deref().map(PathBuf::from).or_else(|| cfg.output_dir.as_ref().map(PathBuf::from)) {
        prepare_dir(&dir, "eval", &cfg, &[])?;
        write_json(&dir.join("eval.json"), &summary)?;
        let mut t = Table::new(&[
            ("seed", Col::Count),
            ("success", Col::Flag),
            ("episodic_return", Col::Number),
            ("route_completion", Col::Fraction),
            ("steps", Col::Count),
        ]);
        for (seed, m) in cfg.trainer.eval_seeds().seeds().zip(&summary.episodes) {
            t.push(vec![
                seed.to_string(),
                (m.success as u8).to_string(),
                m.episodic_return.to_string(),
                m.route_completion.to_string(),
                m.steps.to_string(),
            ])?;
        }
        t.write(&dir.join("episodes.csv"))?;
    }
    println!(
        "{}",
        json!({"success_rate": summary.success_rate, "route_completion": summary.mean_route_completion,
               "mean_return": summary.mean_return, "episodes": summary.episodes.len()})
    );
    Ok(())
}

fn find_states(root: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(root)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find_states(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == STATE_FILE) {
            found.push(p);
        }
    }
    Ok(())
}

/// The three measured terms for each saved state, plus the first and last
/// optimization error the run tracked.
pub fn diagnose(snapshots: &[PathBuf], runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut paths = snapshots.to_vec();
    for r in runs {
        find_states(r, &mut paths).map_err(|e| CliError::Config(format!("{}: {e}", r.display())))?;
    }
    if paths.is_empty() {
        return Err(CliError::Config("no snapshots given (use --snapshot or --runs)".into()));
    }
    fs::create_dir_all(out)?;
    let mut table = Table::new(&[
        ("snapshot", Col::Text),
        ("preference_horizon", Col::Count),
        ("noise_eps", Col::Number),
        ("seed", Col::Count),
        ("step", Col::Count),
        ("tuples", Col::Count),
        ("delta_dist", Col::Fraction),
        ("delta_pref", Col::Fraction),
        ("epsilon", Col::Number),
        ("pref_bins_used", Col::Count),
        ("pref_bins_excluded", Col::Count),
        ("epsilon_first", Col::Number),
        ("epsilon_last", Col::Number),
    ]);
    let mut reports = Vec::new();
    for p in &paths {
        let snap = load_state(p)?;
        let eps_first = snap.epsilon_trace.first().map(|e| e.1);
        let eps_last = snap.epsilon_trace.last().map(|e| e.1);
        let cfg = snap.config.clone();
        let step = snap.step;
        let t = Trainer::resume(snap)?;
        let tuples: Vec<&PreferenceTuple> = t.buffers().preference().iter().collect();
        let seeds: Vec<u64> = (0..cfg.diagnostics.n_rollouts as u64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.trainer.seed);
        let r = measure(
            t.env(),
            &cfg.expert,
            t.policy(),
            &cfg.diagnostics,
            cfg.learning.objective.beta,
            &seeds,
            &tuples,
            &mut rng,
        )?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        table.push(vec![
            p.display().to_string(),
            cfg.trainer.preference_horizon.to_string(),
            cfg.predictor.noise_eps.to_string(),
            cfg.trainer.seed.to_string(),
            step.to_string(),
            r.tuples.to_string(),
            f(r.delta_dist),
            f(r.delta_pref),
            f(r.epsilon),
            r.pref_bins_used.to_string(),
            r.pref_bins_excluded.to_string(),
            f(eps_first),
            f(eps_last),
        ])?;
        log::info!("{}: {:?}", p.display(), r);
        reports.push(json!({
            "snapshot": p,
            "preference_horizon": cfg.trainer.preference_horizon,
            "noise_eps": cfg.predictor.noise_eps,
            "seed": cfg.trainer.seed,
            "step": step,
            "report": r,
            "epsilon_trace": {"first": eps_first, "last": eps_last},
        }));
    }
    write_json(&out.join("diagnostics.json"), &reports)?;
    table.write(&out.join("diagnostics.csv"))?;
    Ok(())
}

pub fn serve(args: &ConfigArgs, bind: Option<String>, exit_when_finished: bool) -> Result<()> {
    let mut cfg = config::load(args.config.as_deref(), &args.overrides)?;
    cfg.trainer.mode = TrainMode::HumanViaService;
    if let Some(b) = bind {
        cfg.service.bind = b;
    }
    let dir = resolve_out(args.out.as_deref(), &cfg)?;
    prepare_dir(&dir, "serve", &cfg, &[cfg.trainer.seed])?;
    let opts = foresight_service::ServeOptions {
        record: Some(dir.join("commands.jsonl")),
        exit_when_finished,
    };
    let rt = tokio::runtime::Runtime::new()?;
    let result = rt.block_on(async {
        let server = foresight_service::start(cfg, opts).await?;
        println!("{}", json!({"listening": server.addr.to_string()}));
        if exit_when_finished {
            server.join().await
        } else {
            tokio::select! {
                r = tokio::signal::ctrl_c() => {
                    r?;
                    log::info!("interrupted; saving the session");
                    server.shutdown().await
                }
            }
        }
    })?;
    write_outcome(&dir, &result.outcome)?;
    Ok(())
}

pub fn replay(args: &ConfigArgs, log_path: &Path) -> Result<()> {
    let cfg = config::load(args.config.as_deref(), &args.overrides)?;
    let dir = resolve_out(args.out.as_deref(), &cfg)?;
    let log = foresight_service::read_command_log(log_path)?;
    prepare_dir(&dir, "replay", &cfg, &[cfg.trainer.seed])?;
    let out = foresight_service::replay(cfg, &log)?;
    write_outcome(&dir, &out)?;
    Ok(())
}
