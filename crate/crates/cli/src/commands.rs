use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crashcast::autodiff::Checkpoint;
use crashcast::features::{FeatureConfig, FeatureTables, VideoFeatures};
use crashcast::riskmodel::{ModelConfig, RiskModel};
use crashcast::roadnet::parse_network;
use crashcast::scenario::{read_jsonl, write_jsonl, DatasetGenerator, ScenarioRecord};
use crashcast::traineval::{risk_curve, split_by_id, write_curves_csv, EvalReport, Split, TrainConfig, TrainError, Trainer};

use crate::io::{check_fresh, hash_file, read, require_file, sibling, write_atomic, Manifest};
use crate::settings::{check_jobs, required, EvalSettings, GenSettings, SplitChoice, TrainSettings};
use crate::CliError;

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    check_jobs(jobs)?;
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn gen_data(s: &GenSettings) -> Result<(), CliError> {
    let network = required(&s.network, "network")?;
    let out = required(&s.out, "out")?;
    require_file(network, "network file")?;
    check_fresh(&[out, &sibling(out, ".manifest.json")], s.force)?;
    let pool = pool(s.jobs)?;
    let manifest = Manifest::new("gen-data", s, vec![("seed".into(), s.seed)], vec![hash_file(network)?])?;

    let text = String::from_utf8(read(network)?).map_err(|e| CliError::Config(format!("network file: {e}")))?;
    let graph = parse_network(&text).map_err(|e| CliError::Config(format!("network file: {e}")))?;
    let generator =
        DatasetGenerator::new(&graph, s.scenario.clone(), s.positive_ratio, s.seed).map_err(|e| CliError::Config(e.to_string()))?;
    let records: Vec<ScenarioRecord> = pool.install(|| {
        (0..s.count)
            .into_par_iter()
            .map(|i| generator.generate(i).map(|g| g.record))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Runtime(format!("generation failed: {e}")))
    })?;
    let mut bytes = Vec::new();
    write_jsonl(&mut bytes, &records).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(out, &bytes)?;
    manifest.finish(out, &[out])?;
    let positives = records.iter().filter(|r| r.positive).count();
    eprintln!("wrote {} scenarios ({positives} positive) to {}", records.len(), out.display());
    Ok(())
}

/// Model and feature settings stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub feature_seed: u64,
}

fn load_records(path: &Path) -> Result<Vec<ScenarioRecord>, CliError> {
    require_file(path, "dataset")?;
    read_jsonl(&read(path)?[..]).map_err(|e| CliError::Runtime(format!("dataset {}: {e}", path.display())))
}

fn build_features(records: &[ScenarioRecord], cfg: &FeatureConfig, seed: u64, jobs: usize) -> Result<Vec<VideoFeatures<f64>>, CliError> {
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let tables = FeatureTables::new(cfg.dim, seed);
    pool(jobs)?.install(|| {
        records
            .par_iter()
            .map(|r| VideoFeatures::build(r, &tables, cfg, seed))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("features: {e}")))
    })
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(m) => CliError::Config(m),
        other => CliError::Runtime(other.to_string()),
    }
}

/// Appends the body of `fresh` (a CSV with header) to `old`, or returns
/// `fresh` when there is nothing to extend.
fn append_csv(old: Option<Vec<u8>>, fresh: &str) -> Vec<u8> {
    match old {
        Some(mut o) => {
            o.extend_from_slice(fresh.split_once('\n').map_or("", |(_, body)| body).as_bytes());
            o
        }
        None => fresh.as_bytes().to_vec(),
    }
}

pub fn train(s: &TrainSettings) -> Result<(), CliError> {
    let data = required(&s.data, "data")?;
    let out = required(&s.out, "out")?;
    require_file(data, "dataset")?;
    let (cfg_path, steps_path, epochs_path) = (sibling(out, ".config.json"), sibling(out, ".steps.csv"), sibling(out, ".epochs.csv"));
    let manifest_path = sibling(out, ".manifest.json");
    let resuming = s.resume && out.exists();
    if !resuming {
        check_fresh(&[out, &cfg_path, &steps_path, &epochs_path, &manifest_path], s.force)?;
    }
    let manifest = Manifest::new("train", s, vec![("seed".into(), s.seed)], vec![hash_file(data)?])?;

    let train_cfg = TrainConfig {
        learning_rate: s.learning_rate,
        epochs: s.epochs,
        batch_size: s.batch_size,
        seed: s.seed,
        train_fraction: s.train_fraction,
        loss: s.loss,
        ..TrainConfig::default()
    };
    let (run, mut trainer) = if resuming {
        let stored: RunConfig = serde_json::from_slice(&read(&cfg_path)?).map_err(|e| CliError::Config(format!("{}: {e}", cfg_path.display())))?;
        let ck = Checkpoint::read(&read(out)?[..]).map_err(|e| CliError::Config(format!("checkpoint: {e}")))?;
        let tc = TrainConfig { epochs: s.epochs, ..stored.train.clone() };
        let t = Trainer::from_checkpoint(stored.model.clone(), tc.clone(), &ck).map_err(|e| CliError::Config(format!("checkpoint: {e}")))?;
        (RunConfig { train: tc, ..stored }, t)
    } else {
        let model = s.model.clone().unwrap_or_else(|| {
            ModelConfig::for_features(FeatureConfig { dim: s.dim, max_objects: s.max_objects, ..FeatureConfig::default() })
        });
        let m = RiskModel::new(model.clone(), s.seed).map_err(|e| CliError::Config(e.to_string()))?;
        let t = Trainer::new(m, train_cfg.clone()).map_err(train_error)?;
        (RunConfig { model, train: train_cfg, feature_seed: s.seed }, t)
    };

    let records = load_records(data)?;
    let videos = build_features(&records, &run.model.features, run.feature_seed, s.jobs)?;
    let (train_set, val_set): (Vec<_>, Vec<_>) =
        videos.into_iter().partition(|v| split_by_id(&v.id, run.train.train_fraction) == Split::Train);
    if train_set.is_empty() && trainer.epoch < run.train.epochs {
        return Err(CliError::Config("training split is empty".into()));
    }
    let log = trainer.fit(&train_set, &val_set).map_err(train_error)?;

    let old = |p: &PathBuf| if resuming { read(p).ok() } else { None };
    let steps = append_csv(old(&steps_path), &log.steps_csv());
    let epochs = append_csv(old(&epochs_path), &log.epochs_csv());
    write_atomic(out, &trainer.to_checkpoint().to_bytes())?;
    let mut cfg_text = serde_json::to_vec_pretty(&run).map_err(|e| CliError::Runtime(e.to_string()))?;
    cfg_text.push(b'\n');
    write_atomic(&cfg_path, &cfg_text)?;
    write_atomic(&steps_path, &steps)?;
    write_atomic(&epochs_path, &epochs)?;
    manifest.finish(out, &[out, &cfg_path, &steps_path, &epochs_path])?;
    if let Some(last) = log.epochs.last() {
        eprintln!("epoch {}: train loss {:.6}", last.epoch, last.train_loss);
    }
    Ok(())
}

pub fn eval(s: &EvalSettings) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&s.threshold) {
        return Err(CliError::Config(format!("threshold {} outside [0, 1]", s.threshold)));
    }
    let ckpt_path = required(&s.checkpoint, "checkpoint")?;
    let data = required(&s.data, "data")?;
    let out = required(&s.out, "out")?;
    let curves_path = s.curves.clone().unwrap_or_else(|| sibling(out, ".curves.csv"));
    require_file(ckpt_path, "checkpoint")?;
    require_file(data, "dataset")?;
    let cfg_path = sibling(ckpt_path, ".config.json");
    require_file(&cfg_path, "model config")?;
    check_fresh(&[out, &curves_path, &sibling(out, ".manifest.json")], s.force)?;
    let pool = pool(s.jobs)?;
    let inputs = vec![hash_file(ckpt_path)?, hash_file(&cfg_path)?, hash_file(data)?];
    let manifest = Manifest::new("eval", s, Vec::new(), inputs)?;

    let run: RunConfig = serde_json::from_slice(&read(&cfg_path)?).map_err(|e| CliError::Config(format!("{}: {e}", cfg_path.display())))?;
    let ck = Checkpoint::read(&read(ckpt_path)?[..]).map_err(|e| CliError::Config(format!("checkpoint: {e}")))?;
    let model = RiskModel::<f64>::from_checkpoint(run.model.clone(), &ck, "model.").map_err(|e| CliError::Config(format!("checkpoint: {e}")))?;
    let records: Vec<ScenarioRecord> = load_records(data)?
        .into_iter()
        .filter(|r| match s.split {
            SplitChoice::All => true,
            SplitChoice::Train => split_by_id(&r.id, run.train.train_fraction) == Split::Train,
            SplitChoice::Test => split_by_id(&r.id, run.train.train_fraction) == Split::Test,
        })
        .collect();
    let videos = build_features(&records, &run.model.features, run.feature_seed, s.jobs)?;
    let curves = pool.install(|| {
        videos.par_iter().map(|v| risk_curve(&model, v)).collect::<Result<Vec<_>, _>>().map_err(|e| CliError::Config(e.to_string()))
    })?;
    let ids: Vec<String> = videos.iter().map(|v| v.id.clone()).collect();
    let report = EvalReport::from_curves(&ids, &curves, s.threshold).map_err(|e| CliError::Config(e.to_string()))?;

    let mut csv = Vec::new();
    write_curves_csv(&mut csv, &ids, &curves).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut json = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    json.push(b'\n');
    write_atomic(out, &json)?;
    write_atomic(&curves_path, &csv)?;
    manifest.finish(out, &[out, &curves_path])?;
    eprintln!("AP {:.4}  mTTA {:.3} s  over {} videos", report.ap, report.mtta, ids.len());
    Ok(())
}
