//! Serialization: model JSON, artifact bundles, CSV reports.
//!
//! Models are stored as JSON (`widths`, `activation`, flat row-major
//! `weights` per layer). JSON numbers round-trip `f64` bitwise, so a loaded
//! model reproduces the original logits exactly. A trained artifact is a
//! directory: `config.json`, `teacher.json`, `s0.json`, `res_1.json` …
//! `res_n.json`, and `meta.json` with the stage count, threshold, and
//! per-stage metrics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_json;
use crate::error::{Error, Result};
use crate::infer::InferenceRecord;
use crate::matrix::Matrix;
use crate::net::{Activation, Mlp};
use crate::pipeline::{DistillConfig, StageArtifact, StageRecord, Termination};

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    widths: Vec<usize>,
    activation: Activation,
    /// One flat row-major array per layer, shape implied by `widths`.
    weights: Vec<Vec<f64>>,
}

/// Writes a model as JSON.
pub fn save_model(net: &Mlp, path: &Path) -> Result<()> {
    let file = ModelFile {
        widths: net.widths().to_vec(),
        activation: net.activation(),
        weights: net.weights().iter().map(|w| w.data().to_vec()).collect(),
    };
    write_json(&file, path)
}

/// Loads a model written by [`save_model`], validating the schema.
pub fn load_model(path: &Path) -> Result<Mlp> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(&name, e.to_string()))?;
    if file.widths.len() < 2 {
        return Err(Error::Validation(format!(
            "{name}: widths must list at least two sizes, got {:?}",
            file.widths
        )));
    }
    let mut weights = Vec::with_capacity(file.weights.len());
    for (l, flat) in file.weights.iter().enumerate() {
        let (rows, cols) = (file.widths[l + 1], file.widths[l]);
        if flat.len() != rows * cols {
            return Err(Error::Validation(format!(
                "{name}: weights[{l}] has {} entries, widths imply {rows}x{cols}",
                flat.len()
            )));
        }
        weights.push(Matrix::from_vec(rows, cols, flat.clone())?);
    }
    Mlp::from_weights(file.widths, file.activation, weights)
        .map_err(|e| Error::Validation(format!("{name}: {e}")))
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    n: usize,
    th_energy: f64,
    termination: Termination,
    stages: Vec<StageRecord>,
}

/// Writes a full artifact directory (created if missing). Stale model files
/// from a previous run are removed so the directory always matches
/// `meta.json`.
pub fn save_bundle(artifact: &StageArtifact, config: &DistillConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("res_") && name.ends_with(".json") {
            fs::remove_file(&path)?;
        }
    }
    write_json(config, &dir.join("config.json"))?;
    save_model(&artifact.teacher, &dir.join("teacher.json"))?;
    save_model(&artifact.s0, &dir.join("s0.json"))?;
    for (i, r) in artifact.res_students.iter().enumerate() {
        save_model(r, &dir.join(format!("res_{}.json", i + 1)))?;
    }
    let meta = MetaFile {
        n: artifact.res_students.len(),
        th_energy: artifact.th_energy,
        termination: artifact.termination,
        stages: artifact.stages.clone(),
    };
    write_json(&meta, &dir.join("meta.json"))
}

/// Loads an artifact directory written by [`save_bundle`].
pub fn load_bundle(dir: &Path) -> Result<(StageArtifact, DistillConfig)> {
    let name = dir.display().to_string();
    let config_text = fs::read_to_string(dir.join("config.json"))?;
    let config: DistillConfig = serde_json::from_str(&config_text)
        .map_err(|e| Error::parse(format!("{name}/config.json"), e.to_string()))?;
    let meta_text = fs::read_to_string(dir.join("meta.json"))?;
    let meta: MetaFile = serde_json::from_str(&meta_text)
        .map_err(|e| Error::parse(format!("{name}/meta.json"), e.to_string()))?;
    let teacher = load_model(&dir.join("teacher.json"))?;
    let s0 = load_model(&dir.join("s0.json"))?;
    let mut res_students = Vec::with_capacity(meta.n);
    for i in 1..=meta.n {
        res_students.push(load_model(&dir.join(format!("res_{i}.json")))?);
    }
    // meta.n must agree with the files actually present.
    if dir.join(format!("res_{}.json", meta.n + 1)).exists() {
        return Err(Error::Validation(format!(
            "{name}: meta.n = {} but res_{}.json exists",
            meta.n,
            meta.n + 1
        )));
    }
    Ok((
        StageArtifact {
            teacher,
            s0,
            res_students,
            th_energy: meta.th_energy,
            termination: meta.termination,
            stages: meta.stages,
        },
        config,
    ))
}

/// Writes per-stage training metrics as CSV.
pub fn write_stage_metrics_csv(stages: &[StageRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "stage",
        "val_energy",
        "train_accuracy",
        "val_accuracy",
        "mean_l2_to_teacher",
    ])
    .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    for s in stages {
        w.write_record([
            s.stage.to_string(),
            format!("{}", s.val_energy),
            format!("{}", s.train_accuracy),
            format!("{}", s.val_accuracy),
            format!("{}", s.mean_l2_to_teacher),
        ])
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-sample inference records as CSV. Logits are expanded into one
/// column per class; energies into one column per possible stage.
pub fn write_inference_csv(records: &[InferenceRecord], k: usize, n_stages: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string(), "truncation_stage".to_string(), "predicted_class".to_string()];
    header.extend((0..k).map(|j| format!("logit_{j}")));
    header.extend((0..=n_stages).map(|i| format!("energy_{i}")));
    w.write_record(&header)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    for r in records {
        let mut rec = vec![
            r.sample_id.to_string(),
            r.truncation_stage.to_string(),
            r.predicted_class.to_string(),
        ];
        rec.extend(r.logits.iter().map(|v| format!("{v}")));
        for i in 0..=n_stages {
            rec.push(
                r.energies
                    .get(i)
                    .map(|e| format!("{e}"))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&rec)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes threshold-sweep rows as CSV.
pub fn write_sweep_csv(rows: &[crate::infer::SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "accuracy", "mean_evaluated_stages"])
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    for r in rows {
        w.write_record([
            format!("{}", r.threshold),
            format!("{}", r.accuracy),
            format!("{}", r.mean_evaluated_stages),
        ])
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the PCA projection CSV.
#[derive(Debug, Clone, Serialize)]
pub struct PcaRow {
    pub sample_id: usize,
    pub pc1: f64,
    pub pc2: f64,
    /// `teacher` or `student_stage_<i>`.
    pub source_tag: String,
}

/// Writes PCA projections as CSV with columns `sample_id,pc1,pc2,source_tag`.
pub fn write_pca_csv(rows: &[PcaRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "pc1", "pc2", "source_tag"])
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    for r in rows {
        w.write_record([
            r.sample_id.to_string(),
            format!("{}", r.pc1),
            format!("{}", r.pc2),
            r.source_tag.clone(),
        ])
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
