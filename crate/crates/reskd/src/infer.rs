//! Sample-adaptive truncated inference.
//!
//! Each sample first pays for `S₀`; while the accumulated energy stays at or
//! below the artifact's threshold and res-students remain, the next
//! res-student is evaluated. A sample that is confident early never touches
//! the later res-students — the saved evaluations are the point, and the
//! cost report accounts for them per stage.
//!
//! Two accumulation rules are provided side by side: `additive` adds each
//! new network's own energy to a running total (which can exceed 1), while
//! `exact` re-computes the energy of the combined logits after each stage.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::energy::energy_sample;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pipeline::{accuracy, predict_class, StageArtifact};

/// How per-sample energy accumulates across stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptiveMode {
    /// `Eᵢ = Eᵢ₋₁ + Energy(Rᵢ, {x})`.
    Additive,
    /// `Eᵢ = Energy(S₀ + R₁ + … + Rᵢ, {x})`.
    Exact,
}

/// Outcome of adaptive inference on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub sample_id: usize,
    /// Truncation stage: the combined student actually used is `S_L`.
    pub truncation_stage: usize,
    /// Logits of `S_L`.
    pub logits: Vec<f64>,
    pub predicted_class: usize,
    /// Accumulated energies `E₀ … E_L`.
    pub energies: Vec<f64>,
}

/// Aggregate accounting for a batch of adaptive inferences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    pub mode: AdaptiveMode,
    pub threshold: f64,
    pub n_samples: usize,
    /// Number of res-students in the artifact.
    pub n_stages: usize,
    /// `truncation_histogram[L]` = how many samples stopped at stage `L`.
    pub truncation_histogram: Vec<usize>,
    /// For each res-student `i = 1..=n`, the fraction of samples that never
    /// evaluated it.
    pub skip_fraction: Vec<f64>,
    /// Mean number of res-students evaluated per sample.
    pub mean_evaluated_stages: f64,
    pub adaptive_accuracy: f64,
    /// Accuracy of the full chain `Sₙ` on the same data.
    pub full_accuracy: f64,
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub accuracy: f64,
    pub mean_evaluated_stages: f64,
}

fn infer_row(
    artifact: &StageArtifact,
    x: &Matrix,
    sample_id: usize,
    mode: AdaptiveMode,
    threshold: f64,
) -> Result<InferenceRecord> {
    let n = artifact.num_res_students();
    let mut logits = artifact.s0.logits(x)?.row(0).to_vec();
    let mut energy = energy_sample(&logits)?;
    let mut energies = vec![energy];
    let mut stage = 0;
    while threshold >= energy && stage < n {
        let r_logits = artifact.res_students[stage].logits(x)?;
        stage += 1;
        for (acc, r) in logits.iter_mut().zip(r_logits.row(0)) {
            *acc += r;
        }
        energy = match mode {
            AdaptiveMode::Additive => energy + energy_sample(r_logits.row(0))?,
            AdaptiveMode::Exact => energy_sample(&logits)?,
        };
        energies.push(energy);
    }
    let predicted_class = predict_class(&logits);
    Ok(InferenceRecord {
        sample_id,
        truncation_stage: stage,
        logits,
        predicted_class,
        energies,
    })
}

/// Runs the truncation loop for a single sample using the artifact's own
/// threshold. Res-students beyond the truncation stage are never evaluated.
pub fn adaptive_infer(artifact: &StageArtifact, x: &[f64], mode: AdaptiveMode) -> Result<InferenceRecord> {
    adaptive_infer_with_threshold(artifact, x, mode, artifact.th_energy)
}

/// Same as [`adaptive_infer`] with an explicit threshold override.
pub fn adaptive_infer_with_threshold(
    artifact: &StageArtifact,
    x: &[f64],
    mode: AdaptiveMode,
    threshold: f64,
) -> Result<InferenceRecord> {
    let row = Matrix::from_vec(1, x.len(), x.to_vec())?;
    infer_row(artifact, &row, 0, mode, threshold)
}

/// Adaptive inference over a dataset plus the aggregate cost report.
pub fn batch_adaptive_infer(
    artifact: &StageArtifact,
    data: &Dataset,
    mode: AdaptiveMode,
) -> Result<(Vec<InferenceRecord>, CostReport)> {
    batch_adaptive_infer_with_threshold(artifact, data, mode, artifact.th_energy)
}

/// Same as [`batch_adaptive_infer`] with an explicit threshold override.
pub fn batch_adaptive_infer_with_threshold(
    artifact: &StageArtifact,
    data: &Dataset,
    mode: AdaptiveMode,
    threshold: f64,
) -> Result<(Vec<InferenceRecord>, CostReport)> {
    if data.is_empty() {
        return Err(Error::Domain("adaptive inference over an empty dataset".into()));
    }
    let n = artifact.num_res_students();
    let mut records = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let row = data.x.select_rows(&[i]);
        let mut rec = infer_row(artifact, &row, i, mode, threshold)?;
        rec.sample_id = i;
        records.push(rec);
    }
    let mut histogram = vec![0usize; n + 1];
    let mut total_stages = 0usize;
    let mut correct = 0usize;
    for rec in &records {
        histogram[rec.truncation_stage] += 1;
        total_stages += rec.truncation_stage;
        if rec.predicted_class == data.labels[rec.sample_id] {
            correct += 1;
        }
    }
    let skip_fraction = (1..=n)
        .map(|i| {
            let skipped = records.iter().filter(|r| r.truncation_stage < i).count();
            skipped as f64 / records.len() as f64
        })
        .collect();
    let full_logits = artifact.full_logits(&data.x)?;
    let report = CostReport {
        mode,
        threshold,
        n_samples: data.len(),
        n_stages: n,
        truncation_histogram: histogram,
        skip_fraction,
        mean_evaluated_stages: total_stages as f64 / records.len() as f64,
        adaptive_accuracy: correct as f64 / records.len() as f64,
        full_accuracy: accuracy(&full_logits, &data.labels),
    };
    Ok((records, report))
}

/// Evaluates adaptive inference at each threshold (must be sorted
/// ascending). Returns one row per threshold.
pub fn threshold_sweep(
    artifact: &StageArtifact,
    data: &Dataset,
    mode: AdaptiveMode,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Domain("thresholds must be sorted ascending".into()));
    }
    thresholds
        .iter()
        .map(|&th| {
            let (_, report) = batch_adaptive_infer_with_threshold(artifact, data, mode, th)?;
            Ok(SweepRow {
                threshold: th,
                accuracy: report.adaptive_accuracy,
                mean_evaluated_stages: report.mean_evaluated_stages,
            })
        })
        .collect()
}
