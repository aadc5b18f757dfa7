//! Experiment grids: one full training run per (variant, seed) cell, each
//! in its own directory. A failing cell is recorded and the grid goes on.

use std::path::Path;

use foresight_core::config::{Method, RunConfig};
use foresight_core::learning::ObjectiveKind;
use foresight_core::predictor::PredictorMode;

use crate::args::SweepArgs;
use crate::commands::run_training;
use crate::config;
use crate::error::{CliError, Result};
use crate::output::{prepare_dir, resolve_out, write_json};
use crate::table::{Col, Table};

/// One grid column value: the label as given and how it changes the config.
pub struct Variant {
    pub label: String,
    pub apply: Box<dyn Fn(&mut RunConfig)>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct CellResult {
    pub variant: String,
    pub seed: u64,
    pub ok: bool,
    pub success_rate: Option<f64>,
    pub route_completion: Option<f64>,
    pub episodic_return: Option<f64>,
    pub human_data_usage: Option<u64>,
    pub preference_tuples: Option<u64>,
    pub error: Option<String>,
}

pub fn cell_table(variant_col: &str) -> Table {
    Table::new(&[
        (variant_col, Col::Text),
        ("seed", Col::Count),
        ("status", Col::Text),
        ("success_rate", Col::Fraction),
        ("route_completion", Col::Fraction),
        ("episodic_return", Col::Number),
        ("human_data_usage", Col::Count),
        ("preference_tuples", Col::Count),
        ("error", Col::Text),
    ])
}

pub fn summary_table(variant_col: &str) -> Table {
    Table::new(&[
        (variant_col, Col::Text),
        ("cells", Col::Count),
        ("failed", Col::Count),
        ("mean_success", Col::Fraction),
        ("stderr_success", Col::Number),
        ("mean_route_completion", Col::Fraction),
        ("mean_human_data_usage", Col::Number),
    ])
}

fn mean_stderr(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (Some(m), None);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(m), Some((var / n).sqrt()))
}

fn dir_label(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// Runs the grid under `out/cells/<variant>_seed<k>/` and writes
/// `results.csv` and `summary.csv`. Exits with a runtime error afterwards
/// if any cell failed.
pub fn run_grid(
    command: &str,
    base: &RunConfig,
    out: &Path,
    variant_col: &str,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<Vec<CellResult>> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(CliError::Config("a sweep needs at least one value and one seed".into()));
    }
    prepare_dir(out, command, base, seeds)?;
    let mut results = Vec::new();
    for v in variants {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.trainer.seed = seed;
            (v.apply)(&mut cfg);
            let dir = out.join("cells").join(format!("{}_seed{seed}", dir_label(&v.label)));
            log::info!("{command}: {variant_col}={} seed={seed}", v.label);
            let r = cfg
                .validate()
                .map_err(CliError::from)
                .and_then(|_| run_training(cfg, &dir, command, false));
            results.push(match r {
                Ok(o) => {
                    let e = o.latest_eval.as_ref();
                    CellResult {
                        variant: v.label.clone(),
                        seed,
                        ok: true,
                        success_rate: e.map(|e| e.success_rate),
                        route_completion: e.map(|e| e.mean_route_completion),
                        episodic_return: e.map(|e| e.mean_return),
                        human_data_usage: Some(o.buffers.human_steps),
                        preference_tuples: Some(o.buffers.tuples_built),
                        error: None,
                    }
                }
                Err(err) => {
                    log::error!("{variant_col}={} seed={seed} failed: {err}", v.label);
                    CellResult {
                        variant: v.label.clone(),
                        seed,
                        ok: false,
                        success_rate: None,
                        route_completion: None,
                        episodic_return: None,
                        human_data_usage: None,
                        preference_tuples: None,
                        error: Some(err.to_string()),
                    }
                }
            });
        }
    }
    write_results(out, variant_col, variants, &results)?;
    let failed = results.iter().filter(|r| !r.ok).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} of {} cells failed; see results.csv", results.len())));
    }
    Ok(results)
}

fn write_results(out: &Path, variant_col: &str, variants: &[Variant], results: &[CellResult]) -> Result<()> {
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let u = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut cells = cell_table(variant_col);
    for r in results {
        cells.push(vec![
            r.variant.clone(),
            r.seed.to_string(),
            if r.ok { "ok".into() } else { "failed".into() },
            f(r.success_rate),
            f(r.route_completion),
            f(r.episodic_return),
            u(r.human_data_usage),
            u(r.preference_tuples),
            r.error.clone().unwrap_or_default().replace(['\n', '\r'], " "),
        ])?;
    }
    cells.write(&out.join("results.csv"))?;
    let mut summary = summary_table(variant_col);
    for v in variants {
        let mine: Vec<&CellResult> = results.iter().filter(|r| r.variant == v.label).collect();
        let ok: Vec<&&CellResult> = mine.iter().filter(|r| r.ok).collect();
        let (ms, se) = mean_stderr(&ok.iter().filter_map(|r| r.success_rate).collect::<Vec<_>>());
        let (mc, _) = mean_stderr(&ok.iter().filter_map(|r| r.route_completion).collect::<Vec<_>>());
        let (mh, _) = mean_stderr(&ok.iter().filter_map(|r| r.human_data_usage.map(|h| h as f64)).collect::<Vec<_>>());
        summary.push(vec![
            v.label.clone(),
            mine.len().to_string(),
            (mine.len() - ok.len()).to_string(),
            f(ms),
            f(se),
            f(mc),
            f(mh),
        ])?;
    }
    summary.write(&out.join("summary.csv"))?;
    write_json(&out.join("results.json"), &results)
}

fn base(args: &SweepArgs) -> Result<(RunConfig, std::path::PathBuf)> {
    let cfg = config::load(args.config.config.as_deref(), &args.config.overrides)?;
    let out = resolve_out(args.config.out.as_deref(), &cfg)?;
    Ok((cfg, out))
}

pub fn sweep_l(args: &SweepArgs, values: &[String]) -> Result<()> {
    let (cfg, out) = base(args)?;
    let mut variants = Vec::new();
    for v in values {
        let l: usize = v.trim().parse().map_err(|_| CliError::Config(format!("L value `{v}` is not a count")))?;
        variants.push(Variant { label: v.trim().to_string(), apply: Box::new(move |c| c.trainer.preference_horizon = l) });
    }
    run_grid("sweep-l", &cfg, &out, "l", &variants, &args.seeds).map(drop)
}

pub fn sweep_noise(args: &SweepArgs, values: &[String]) -> Result<()> {
    let (cfg, out) = base(args)?;
    let mut variants = Vec::new();
    for v in values {
        let eps: f64 = v.trim().parse().map_err(|_| CliError::Config(format!("noise value `{v}` is not a number")))?;
        variants.push(Variant { label: v.trim().to_string(), apply: Box::new(move |c| c.predictor.noise_eps = eps) });
    }
    run_grid("sweep-noise", &cfg, &out, "eps", &variants, &args.seeds).map(drop)
}

pub fn ablate(args: &SweepArgs, kinds: &[String]) -> Result<()> {
    let (cfg, out) = base(args)?;
    let mut variants = Vec::new();
    for k in kinds {
        let k = k.trim();
        let apply: Box<dyn Fn(&mut RunConfig)> = if k == "rule_based" {
            Box::new(|c| {
                c.learning.objective.kind = ObjectiveKind::Cpo;
                c.predictor.mode = PredictorMode::RuleBased;
            })
        } else {
            let kind = ObjectiveKind::parse(k).ok_or_else(|| {
                let names: Vec<&str> = ObjectiveKind::ALL.iter().map(|k| k.name()).collect();
                CliError::Config(format!("unknown kind `{k}`; expected one of {} or rule_based", names.join(", ")))
            })?;
            Box::new(move |c| c.learning.objective.kind = kind)
        };
        variants.push(Variant { label: k.to_string(), apply });
    }
    run_grid("ablate", &cfg, &out, "kind", &variants, &args.seeds).map(drop)
}

pub fn baseline(args: &SweepArgs) -> Result<()> {
    let (cfg, out) = base(args)?;
    let variants = vec![
        Variant { label: "preference".into(), apply: Box::new(|c| c.trainer.method = Method::Preference) },
        Variant { label: "bc_interventions".into(), apply: Box::new(|c| c.trainer.method = Method::BcInterventions) },
    ];
    run_grid("baseline", &cfg, &out, "method", &variants, &args.seeds).map(drop)
}
