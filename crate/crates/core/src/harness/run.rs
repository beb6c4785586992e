//! Training runs, sweeps and their CSV records.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, ResolvedRun};
use crate::encoder::EncoderParams;
use crate::error::{GdtError, Result};
use crate::eval::{evaluate, EvalMetrics};
use crate::loss::LossConfig;
use crate::rng::derive_key;
use crate::train::{train, TrainHistory};
use crate::world::{SyntheticWorld, WorldConfig};

pub const CSV_HEADER: &str =
    "preset,seed,config_hash,initial_loss,final_loss,recall_at_1,recall_at_5,knn_accuracy,dispersion,wall_time_s,error";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub preset: String,
    pub seed: u64,
    pub config_hash: String,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub metrics: Option<EvalMetrics>,
    pub wall_time_s: Option<f64>,
    pub error: Option<String>,
}

/// Decimal text with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..=15).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.prec$e}", prec = digits - 1)
    }
}

impl RunRecord {
    /// Fields in [`CSV_HEADER`] order.
    pub fn csv_fields(&self) -> Vec<String> {
        let num = |x: Option<f64>| x.map(|v| format_sig(v, 10)).unwrap_or_default();
        let m = self.metrics;
        vec![
            self.preset.clone(),
            self.seed.to_string(),
            self.config_hash.clone(),
            num(self.initial_loss),
            num(self.final_loss),
            num(m.map(|m| m.recall_at_1)),
            num(m.map(|m| m.recall_at_5)),
            num(m.map(|m| m.knn_accuracy)),
            num(m.map(|m| m.dispersion)),
            num(self.wall_time_s),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for r in records {
        w.write_record(r.csv_fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("fields are UTF-8")
}

/// A finished run with its trained parameters.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub params: EncoderParams,
    pub history: TrainHistory,
}

/// The world of a run: the configured world re-seeded by the run seed, so
/// presets sharing a seed share a world.
pub fn run_world(world: &WorldConfig, seed: u64) -> Result<SyntheticWorld> {
    SyntheticWorld::new(WorldConfig { seed: derive_key(world.seed, &[seed]), ..world.clone() })
}

pub fn execute(run: &ResolvedRun) -> Result<RunOutput> {
    let start = Instant::now();
    let world = run_world(&run.world, run.seed)?;
    let plan = run.preset.plan(&run.world, run.k_identity)?;
    let loss_cfg = LossConfig {
        temperature: run.temperature,
        weight_scheme: run.preset.weight_scheme,
        stabilize: true,
    };
    let outcome = train(&world, &plan, &loss_cfg, &run.train, run.seed)?;
    let metrics = evaluate(&outcome.params, &world)?;
    let record = RunRecord {
        preset: run.preset.name.clone(),
        seed: run.seed,
        config_hash: run.hash(),
        initial_loss: Some(outcome.history.initial_loss),
        final_loss: Some(outcome.history.final_loss()),
        metrics: Some(metrics),
        wall_time_s: Some(start.elapsed().as_secs_f64()),
        error: None,
    };
    Ok(RunOutput { record, params: outcome.params, history: outcome.history })
}

pub fn run_preset(cfg: &ExperimentConfig, preset: &str, seed: u64) -> Result<RunOutput> {
    execute(&ResolvedRun::new(cfg, preset, seed)?)
}

fn history_csv(h: &TrainHistory) -> String {
    let mut s = String::from("epoch,loss\n");
    let _ = writeln!(s, "0,{}", format_sig(h.initial_loss, 10));
    for (e, l) in h.epoch_losses.iter().enumerate() {
        let _ = writeln!(s, "{},{}", e + 1, format_sig(*l, 10));
    }
    s
}

/// Writes `metrics.csv`, `history.csv`, `params.txt` and `timing.json` into
/// `dir`. Everything except `timing.json` is a pure function of the inputs.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let timed = out.record.wall_time_s;
    let record = RunRecord { wall_time_s: None, ..out.record.clone() };
    fs::write(dir.join("metrics.csv"), records_to_csv(&[record]))?;
    fs::write(dir.join("history.csv"), history_csv(&out.history))?;
    fs::write(dir.join("params.txt"), out.params.to_text())?;
    let timing = serde_json::json!({ "wall_time_s": timed });
    fs::write(dir.join("timing.json"), format!("{timing}\n"))?;
    Ok(())
}

/// Runs every `(preset, seed)` pair. Failed runs become rows with an error
/// message; rows are in preset-then-seed order.
pub fn sweep(cfg: &ExperimentConfig, presets: &[String], seeds: &[u64]) -> Result<Vec<RunRecord>> {
    for p in presets {
        cfg.preset(p)?;
    }
    let jobs: Vec<(&String, u64)> = presets.iter().flat_map(|p| seeds.iter().map(move |&s| (p, s))).collect();
    Ok(jobs
        .par_iter()
        .map(|&(p, s)| {
            let start = Instant::now();
            let resolved = ResolvedRun::new(cfg, p, s);
            let hash = resolved.as_ref().map(|r| r.hash()).unwrap_or_default();
            match resolved.and_then(|r| execute(&r)) {
                Ok(out) => out.record,
                Err(e) => RunRecord {
                    preset: p.clone(),
                    seed: s,
                    config_hash: hash,
                    initial_loss: None,
                    final_loss: None,
                    metrics: None,
                    wall_time_s: Some(start.elapsed().as_secs_f64()),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

pub fn write_sweep(path: &Path, records: &[RunRecord]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, records_to_csv(records)).map_err(GdtError::from)
}
