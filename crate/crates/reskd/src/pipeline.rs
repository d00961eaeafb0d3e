//! Residual-guided distillation training.
//!
//! The run trains a teacher on the training remainder, distills a first
//! student `S₀` from it, then repeatedly trains lightweight res-students on
//! the successive logit residuals: the stage-`i` teacher is
//! `Tᵢ = T_{i−1} − R_{i−1}` (with `T₁ = T − S₀`), and the combined student
//! after stage `i` is `Sᵢ = S₀ + R₁ + … + Rᵢ`. The loop stops once the
//! combined student's mean validation energy exceeds a configured fraction
//! of the teacher's, or when the stage cap is hit. The finished artifact
//! also carries the energy threshold used by sample-adaptive inference.
//!
//! Everything is deterministic: all randomness (split, weight init, batch
//! shuffling) derives from the single config seed.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_validation, Dataset};
use crate::energy::energy_dataset;
use crate::error::{Error, Result};
use crate::loss::{kd_loss_with_base, CeTargetMode, KdLossParams, LossKind};
use crate::matrix::Matrix;
use crate::net::{Activation, Mlp};
use crate::optim::{sgd_step, SgdState};
use crate::rng::derive_seed;

/// Salts for per-role RNG streams.
const SALT_SPLIT: u64 = 1;
const SALT_TEACHER: u64 = 2;
const SALT_S0: u64 = 3;
const SALT_RES_BASE: u64 = 16;

fn default_energy_fraction() -> f64 {
    0.9
}
fn default_th_scale() -> f64 {
    0.9
}
fn default_lr_decay_factor() -> f64 {
    0.1
}
fn default_val_fraction() -> f64 {
    0.1
}
fn default_max_stages() -> usize {
    3
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_ce_target_mode() -> CeTargetMode {
    CeTargetMode::Combined
}

/// Everything a distillation run needs besides the dataset.
///
/// Width lists are hidden-layer widths; input and output dimensions come
/// from the data. `res_widths` is an ordered architecture pool consumed one
/// entry per residual stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    /// Match-term weight when training S₀.
    pub tau_s0: f64,
    /// Match-term weight when training res-students.
    pub tau_res: f64,
    /// Softening temperature of the distillation loss.
    pub temperature: f64,
    pub loss_kind: LossKind,
    #[serde(default = "default_ce_target_mode")]
    pub ce_target_mode: CeTargetMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs (1-based) after which the learning rate is multiplied by
    /// `lr_decay_factor`.
    #[serde(default)]
    pub lr_decay_epochs: Vec<usize>,
    #[serde(default = "default_lr_decay_factor")]
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Stop once Energy(Sᵢ, D_v) exceeds this fraction of the teacher's.
    #[serde(default = "default_energy_fraction")]
    pub energy_fraction: f64,
    /// The inference threshold is this fraction of Energy(Sₙ, D_v).
    #[serde(default = "default_th_scale")]
    pub th_scale: f64,
    #[serde(default = "default_max_stages")]
    pub max_stages: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub teacher_widths: Vec<usize>,
    pub s0_widths: Vec<usize>,
    pub res_widths: Vec<Vec<usize>>,
}

impl DistillConfig {
    /// Checks every field and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        check(
            (0.0..=1.0).contains(&self.tau_s0),
            format!("tau_s0 must be in [0,1], got {}", self.tau_s0),
        );
        check(
            (0.0..=1.0).contains(&self.tau_res),
            format!("tau_res must be in [0,1], got {}", self.tau_res),
        );
        check(
            self.temperature > 0.0 && self.temperature.is_finite(),
            format!("temperature must be > 0, got {}", self.temperature),
        );
        check(self.batch_size >= 1, "batch_size must be >= 1".into());
        check(
            self.lr > 0.0 && self.lr.is_finite(),
            format!("lr must be > 0, got {}", self.lr),
        );
        check(
            self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite(),
            format!("lr_decay_factor must be > 0, got {}", self.lr_decay_factor),
        );
        check(
            (0.0..1.0).contains(&self.momentum),
            format!("momentum must be in [0,1), got {}", self.momentum),
        );
        check(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            format!("weight_decay must be >= 0, got {}", self.weight_decay),
        );
        check(
            self.energy_fraction > 0.0 && self.energy_fraction <= 1.0,
            format!("energy_fraction must be in (0,1], got {}", self.energy_fraction),
        );
        check(
            self.th_scale > 0.0 && self.th_scale <= 1.0,
            format!("th_scale must be in (0,1], got {}", self.th_scale),
        );
        check(
            self.val_fraction > 0.0 && self.val_fraction < 1.0,
            format!("val_fraction must be in (0,1), got {}", self.val_fraction),
        );
        check(self.max_stages >= 1, "max_stages must be >= 1".into());
        check(
            self.res_widths.len() >= self.max_stages,
            format!(
                "res_widths needs at least max_stages = {} entries, got {}",
                self.max_stages,
                self.res_widths.len()
            ),
        );
        for (name, widths) in [("teacher_widths", &self.teacher_widths), ("s0_widths", &self.s0_widths)] {
            check(
                widths.iter().all(|&w| w >= 1),
                format!("{name} entries must be >= 1, got {widths:?}"),
            );
        }
        for (i, widths) in self.res_widths.iter().enumerate() {
            check(
                widths.iter().all(|&w| w >= 1),
                format!("res_widths[{i}] entries must be >= 1, got {widths:?}"),
            );
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn loss_params(&self, tau: f64) -> KdLossParams {
        KdLossParams {
            tau,
            temperature: self.temperature,
            kind: self.loss_kind,
            ce_target_mode: self.ce_target_mode,
        }
    }

    fn full_widths(&self, hidden: &[usize], d: usize, k: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(hidden.len() + 2);
        w.push(d);
        w.extend_from_slice(hidden);
        w.push(k);
        w
    }
}

/// Why the residual loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The combined student reached the configured energy fraction of the
    /// teacher.
    EnergyReached,
    /// The stage cap was hit before the energy criterion.
    StageCap,
}

/// Metrics recorded after each stage (stage 0 is S₀ alone).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    /// Mean energy of the combined student on the validation split.
    pub val_energy: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    /// Mean `‖Sᵢ(x) − T(x)‖₂` over the validation split.
    pub mean_l2_to_teacher: f64,
}

/// A trained residual-distillation ensemble.
#[derive(Debug, Clone)]
pub struct StageArtifact {
    pub teacher: Mlp,
    pub s0: Mlp,
    /// `R₁ … Rₙ` in training order.
    pub res_students: Vec<Mlp>,
    /// Per-sample energy threshold for adaptive inference.
    pub th_energy: f64,
    pub termination: Termination,
    /// Stage 0 first, then one record per res-student.
    pub stages: Vec<StageRecord>,
}

impl StageArtifact {
    /// Number of res-students `n`.
    pub fn num_res_students(&self) -> usize {
        self.res_students.len()
    }

    /// Logits of the combined student `S_L = S₀ + Σ_{i≤L} Rᵢ` on a batch.
    /// `upto = 0` is S₀ alone.
    pub fn combined_logits(&self, batch: &Matrix, upto: usize) -> Result<Matrix> {
        if upto > self.res_students.len() {
            return Err(Error::Index {
                context: "combined_logits: res-student chain".into(),
                index: upto,
                len: self.res_students.len(),
            });
        }
        let mut logits = self.s0.logits(batch)?;
        for r in &self.res_students[..upto] {
            logits.add_assign(&r.logits(batch)?)?;
        }
        Ok(logits)
    }

    /// Combined logits of the full chain `Sₙ`.
    pub fn full_logits(&self, batch: &Matrix) -> Result<Matrix> {
        self.combined_logits(batch, self.res_students.len())
    }
}

/// Element-wise logits gap `Tᵢ₊₁ = Tᵢ − Rᵢ`: the residual teacher for the
/// next stage.
pub fn residual_teacher(prev_teacher_logits: &Matrix, latest_student_logits: &Matrix) -> Result<Matrix> {
    prev_teacher_logits.sub(latest_student_logits)
}

/// Argmax with ties broken toward the lowest class index.
pub fn predict_class(logits: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = j;
        }
    }
    best
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = (0..logits.rows())
        .filter(|&i| predict_class(logits.row(i)) == labels[i])
        .count();
    correct as f64 / labels.len() as f64
}

/// Mean `‖a_row − b_row‖₂` over rows.
pub fn mean_row_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    let diff = a.sub(b)?;
    if diff.rows() == 0 {
        return Err(Error::Domain("mean distance over an empty batch".into()));
    }
    let mut total = 0.0;
    for i in 0..diff.rows() {
        total += crate::matrix::l2_norm(diff.row(i));
    }
    Ok(total / diff.rows() as f64)
}

/// Mini-batch SGD against fixed per-sample teacher logits.
///
/// `teacher_logits` holds one row per training sample (the materialized
/// provider; it is never backpropagated through). `base_logits`, when
/// present, holds the combined logits of the already-trained stages so the
/// cross-entropy term can read `base + student` in combined mode.
pub fn train_student(
    teacher_logits: &Matrix,
    base_logits: Option<&Matrix>,
    data: &Dataset,
    hidden_widths: &[usize],
    tau: f64,
    config: &DistillConfig,
    seed: u64,
) -> Result<Mlp> {
    let widths = config.full_widths(hidden_widths, data.feature_dim(), data.k);
    let mut net = Mlp::new(&widths, config.activation, seed)?;
    if teacher_logits.rows() != data.len() || teacher_logits.cols() != data.k {
        return Err(Error::shape(
            "train_student teacher logits",
            format!("{}x{}", data.len(), data.k),
            format!("{}x{}", teacher_logits.rows(), teacher_logits.cols()),
        ));
    }
    if let Some(base) = base_logits {
        if base.rows() != data.len() || base.cols() != data.k {
            return Err(Error::shape(
                "train_student base logits",
                format!("{}x{}", data.len(), data.k),
                format!("{}x{}", base.rows(), base.cols()),
            ));
        }
    }
    let params = config.loss_params(tau);
    params.validate()?;
    let mut state = SgdState::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xbabc));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut lr = config.lr;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = data.x.select_rows(chunk);
            let teacher_rows = teacher_logits.select_rows(chunk);
            let base_rows = base_logits.map(|b| b.select_rows(chunk));
            let (logits, trace) = net.forward(&batch)?;
            let mut dl = Matrix::zeros(chunk.len(), data.k);
            let mut batch_loss = 0.0;
            for (i, &sample) in chunk.iter().enumerate() {
                let base_row = base_rows.as_ref().map(|b| b.row(i));
                let (loss, grad) = kd_loss_with_base(
                    logits.row(i),
                    base_row,
                    teacher_rows.row(i),
                    data.labels[sample],
                    &params,
                )?;
                batch_loss += loss;
                dl.row_mut(i).copy_from_slice(&grad);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    role: "student".into(),
                    msg: format!("non-finite loss at epoch {epoch}"),
                });
            }
            let grads = net.backward(&trace, &dl)?;
            sgd_step(&mut net, &grads, lr, config.momentum, config.weight_decay, &mut state)
                .map_err(|e| Error::Training {
                    role: "student".into(),
                    msg: format!("epoch {epoch}: {e}"),
                })?;
        }
        if config.lr_decay_epochs.contains(&epoch) {
            lr *= config.lr_decay_factor;
        }
    }
    for w in net.weights() {
        if !w.is_finite() {
            return Err(Error::Training {
                role: "student".into(),
                msg: "non-finite weights after training".into(),
            });
        }
    }
    Ok(net)
}

/// Trains a network on hard labels only (the `τ = 0` path).
pub fn train_teacher(
    data: &Dataset,
    hidden_widths: &[usize],
    config: &DistillConfig,
    seed: u64,
) -> Result<Mlp> {
    // With τ = 0 the teacher logits are never read; pass zeros.
    let zeros = Matrix::zeros(data.len(), data.k);
    train_student(&zeros, None, data, hidden_widths, 0.0, config, seed).map_err(|e| match e {
        Error::Training { msg, .. } => Error::Training {
            role: "teacher".into(),
            msg,
        },
        other => other,
    })
}

fn annotate_stage(err: Error, role: &str) -> Error {
    match err {
        Error::Training { msg, .. } => Error::Training {
            role: role.into(),
            msg,
        },
        other => other,
    }
}

/// Re-derives the exact train/validation split a run with this config used
/// on `data`: `(train_remainder, validation)`.
pub fn validation_split(data: &Dataset, config: &DistillConfig) -> Result<(Dataset, Dataset)> {
    split_validation(data, config.val_fraction, derive_seed(config.seed, SALT_SPLIT))
}

/// Runs the full residual-distillation loop and assembles the artifact.
pub fn run_reskd(data: &Dataset, config: &DistillConfig) -> Result<StageArtifact> {
    config.validate()?;
    let (train, val) = validation_split(data, config)?;

    let teacher = train_teacher(
        &train,
        &config.teacher_widths,
        config,
        derive_seed(config.seed, SALT_TEACHER),
    )?;
    let teacher_train = teacher.logits(&train.x)?;
    let teacher_val = teacher.logits(&val.x)?;
    let teacher_energy = energy_dataset(&teacher_val)?;

    let s0 = train_student(
        &teacher_train,
        None,
        &train,
        &config.s0_widths,
        config.tau_s0,
        config,
        derive_seed(config.seed, SALT_S0),
    )
    .map_err(|e| annotate_stage(e, "s0"))?;

    let mut combined_train = s0.logits(&train.x)?;
    let mut combined_val = s0.logits(&val.x)?;
    let mut stages = vec![StageRecord {
        stage: 0,
        val_energy: energy_dataset(&combined_val)?,
        train_accuracy: accuracy(&combined_train, &train.labels),
        val_accuracy: accuracy(&combined_val, &val.labels),
        mean_l2_to_teacher: mean_row_distance(&combined_val, &teacher_val)?,
    }];

    let mut res_students = Vec::new();
    let mut termination = Termination::StageCap;
    for stage in 1..=config.max_stages {
        let residual_train = residual_teacher(&teacher_train, &combined_train)?;
        let role = format!("res_{stage}");
        let r = train_student(
            &residual_train,
            Some(&combined_train),
            &train,
            &config.res_widths[stage - 1],
            config.tau_res,
            config,
            derive_seed(config.seed, SALT_RES_BASE + stage as u64),
        )
        .map_err(|e| annotate_stage(e, &role))?;

        combined_train.add_assign(&r.logits(&train.x)?)?;
        combined_val.add_assign(&r.logits(&val.x)?)?;
        res_students.push(r);

        let val_energy = energy_dataset(&combined_val)?;
        stages.push(StageRecord {
            stage,
            val_energy,
            train_accuracy: accuracy(&combined_train, &train.labels),
            val_accuracy: accuracy(&combined_val, &val.labels),
            mean_l2_to_teacher: mean_row_distance(&combined_val, &teacher_val)?,
        });
        if val_energy > config.energy_fraction * teacher_energy {
            termination = Termination::EnergyReached;
            break;
        }
    }

    let final_energy = stages.last().unwrap().val_energy;
    Ok(StageArtifact {
        teacher,
        s0,
        res_students,
        th_energy: config.th_scale * final_energy,
        termination,
        stages,
    })
}
