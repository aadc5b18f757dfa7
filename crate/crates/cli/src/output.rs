//! Run directories: every command that writes results leaves the exact
//! config, a content hash of the executable and the seeds next to them.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use foresight_core::config::RunConfig;
use foresight_core::trainer::{metrics_jsonl, TrainOutcome};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::table::{Col, Table};

/// Git-style object hash of a file: SHA-256 over `blob <len>\0<bytes>`.
pub fn blob_hash(path: &Path) -> Result<String> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(&bytes);
    Ok(hex::encode(h.finalize()))
}

pub fn binary_hash() -> Result<String> {
    blob_hash(&std::env::current_exe()?)
}

pub fn resolve_out(flag: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))
}

/// Writes through a temporary file so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Creates `dir` and records `config.json` and `manifest.json` in it.
pub fn prepare_dir(dir: &Path, command: &str, cfg: &RunConfig, seeds: &[u64]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("config.json"), format!("{}\n", cfg.to_json()?).as_bytes())?;
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "binary_hash": format!("sha256:{}", binary_hash()?),
        "seeds": {
            "trainer": cfg.trainer.seed,
            "runs": seeds,
            "train_scenarios": cfg.trainer.train_seeds,
            "eval_scenarios": cfg.trainer.eval_seeds(),
        },
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn metrics_table() -> Table {
    Table::new(&[
        ("step", Col::Count),
        ("success_rate", Col::Fraction),
        ("route_completion", Col::Fraction),
        ("episodic_return", Col::Number),
        ("intervention_rate", Col::Fraction),
        ("human_data_usage", Col::Count),
        ("loss_pref", Col::Number),
        ("loss_bc", Col::Number),
        ("preference_tuples", Col::Count),
    ])
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Metrics log (JSONL and CSV), final policy, buffers and episode logs.
pub fn write_outcome(dir: &Path, out: &TrainOutcome) -> Result<()> {
    write_atomic(&dir.join("metrics.jsonl"), metrics_jsonl(&out.metrics)?.as_bytes())?;
    let mut t = metrics_table();
    for r in &out.metrics {
        t.push(vec![
            r.step.to_string(),
            opt(r.success_rate),
            opt(r.route_completion),
            opt(r.episodic_return),
            r.intervention_rate.to_string(),
            r.human_data_usage.to_string(),
            opt(r.loss_pref),
            opt(r.loss_bc),
            r.preference_tuples.to_string(),
        ])?;
    }
    t.write(&dir.join("metrics.csv"))?;

    let mut eps = Table::new(&[("step", Col::Count), ("epsilon", Col::Number)]);
    for (s, e) in &out.epsilon_trace {
        eps.push(vec![s.to_string(), e.to_string()])?;
    }
    if !out.epsilon_trace.is_empty() {
        eps.write(&dir.join("epsilon.csv"))?;
    }

    let mut ep = Table::new(&[
        ("episode", Col::Count),
        ("success", Col::Flag),
        ("episodic_return", Col::Number),
        ("route_completion", Col::Fraction),
        ("steps", Col::Count),
    ]);
    for (i, m) in out.training_episodes.iter().enumerate() {
        ep.push(vec![
            i.to_string(),
            (m.success as u8).to_string(),
            m.episodic_return.to_string(),
            m.route_completion.to_string(),
            m.steps.to_string(),
        ])?;
    }
    ep.write(&dir.join("training_episodes.csv"))?;

    out.policy.save(&dir.join("policy_final.json"))?;
    export_buffers(dir, out)?;
    if let Some(e) = &out.latest_eval {
        write_json(&dir.join("final_eval.json"), e)?;
    }
    Ok(())
}

fn export_buffers(dir: &Path, out: &TrainOutcome) -> Result<()> {
    let b = dir.join("buffers");
    fs::create_dir_all(&b)?;
    let mut human = String::new();
    for h in out.buffers.human() {
        human.push_str(&serde_json::to_string(h)?);
        human.push('\n');
    }
    write_atomic(&b.join("human.jsonl"), human.as_bytes())?;
    let mut pref = String::new();
    for p in out.buffers.preference() {
        pref.push_str(&serde_json::to_string(&p.record())?);
        pref.push('\n');
    }
    write_atomic(&b.join("preference.jsonl"), pref.as_bytes())?;
    Ok(())
}
