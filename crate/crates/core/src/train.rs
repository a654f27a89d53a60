//! Synthetic regression data, SGD with step decay, and the stochastic versus
//! deterministic training runs.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::decomp::{kruskal_to_full, KruskalTensor};
use crate::error::{Result, TrlError};
use crate::rng::{substream, Rng, Stream};
use crate::sketch::{draw_sketch, SketchSpec};
use crate::tensor::{inner_contract, DenseTensor, Matrix};
use crate::textio::{fmt_f64, write_matrix, write_tensor, LineReader};
use crate::trl::{forward, loss_and_gradients, mse_loss, Gradients, Objective, ScaleMode, TrlModel};

/// Losses above this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub weight_shape: Vec<usize>,
    pub output_dim: usize,
    pub true_rank: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 25×25×25 weight of CP rank 15, 10 000 training and 1 000 test samples.
    fn default() -> Self {
        Self {
            weight_shape: vec![25, 25, 25],
            output_dim: 1,
            true_rank: 15,
            n_train: 10_000,
            n_test: 1_000,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// The reduced setting used for quick runs: 10×10×10, rank 5.
    pub fn desk() -> Self {
        Self {
            weight_shape: vec![10, 10, 10],
            output_dim: 1,
            true_rank: 5,
            n_train: 2_000,
            n_test: 500,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight_shape.is_empty()
            || self.weight_shape.contains(&0)
            || self.output_dim == 0
            || self.true_rank == 0
            || self.n_train == 0
            || self.n_test == 0
        {
            return Err(TrlError::Config(format!("synthetic spec needs positive sizes: {self:?}")));
        }
        Ok(())
    }
}

/// Samples on mode 0 of `x`, one target row per sample in `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DenseTensor,
    pub y: Matrix,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Text dump: the input tensor block followed by the target matrix block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write_tensor(&mut out, &self.x);
        write_matrix(&mut out, &self.y);
        out
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let mut r = LineReader::new(s);
        let x = r.tensor()?;
        let y = r.matrix()?;
        r.finish()?;
        if x.order() < 2 || x.shape()[0] != y.rows() {
            return Err(TrlError::Shape(format!(
                "inputs of shape {:?} do not match {} targets",
                x.shape(),
                y.rows()
            )));
        }
        Ok(Dataset { x, y })
    }

    /// Copies the listed samples, in order, into a new batch.
    pub fn gather(&self, idx: &[usize]) -> Dataset {
        let sample = self.x.len() / self.len();
        let o = self.y.cols();
        let mut xs = Vec::with_capacity(idx.len() * sample);
        let mut ys = Vec::with_capacity(idx.len() * o);
        for &i in idx {
            xs.extend_from_slice(&self.x.data()[i * sample..(i + 1) * sample]);
            ys.extend_from_slice(self.y.row(i));
        }
        let mut shape = self.x.shape().to_vec();
        shape[0] = idx.len();
        Dataset {
            x: DenseTensor::new(shape, xs).expect("gathered batch"),
            y: Matrix::new(idx.len(), o, ys).expect("gathered targets"),
        }
    }
}

pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    pub true_weight: KruskalTensor,
}

/// Draws a CP weight with standard normal factors, standard normal inputs, and
/// labels `y_i = ⟨X_i, W⟩`. With a single output the output factor is all-ones,
/// so `W` is exactly the Gaussian Kruskal tensor over the input modes.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut wrng = substream(spec.seed, Stream::TrueWeight);
    let mut factors: Vec<Matrix> = spec
        .weight_shape
        .iter()
        .map(|&d| Matrix::random_normal(d, spec.true_rank, 1.0, &mut wrng))
        .collect();
    factors.push(if spec.output_dim == 1 {
        Matrix::new(1, spec.true_rank, vec![1.0; spec.true_rank])?
    } else {
        Matrix::random_normal(spec.output_dim, spec.true_rank, 1.0, &mut wrng)
    });
    let true_weight = KruskalTensor::new(None, factors)?;
    let w = kruskal_to_full(&true_weight);
    let n_modes = spec.weight_shape.len();

    let make = |n: usize, stream: Stream| -> Result<Dataset> {
        let mut shape = vec![n];
        shape.extend_from_slice(&spec.weight_shape);
        let x = DenseTensor::random_normal(&shape, 1.0, &mut substream(spec.seed, stream));
        let y = Matrix::try_from(inner_contract(&x, &w, n_modes)?)?;
        Ok(Dataset { x, y })
    };
    Ok(SyntheticData {
        train: make(spec.n_train, Stream::TrainData)?,
        test: make(spec.n_test, Stream::TestData)?,
        true_weight,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Bernoulli,
    Replacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Fresh sketch per batch, `1/θ` output scaling.
    Stochastic,
    /// No sketching; mean squared error plus the CP dropout regularizer.
    Deterministic,
}

impl ObjectiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Stochastic => "stochastic",
            ObjectiveKind::Deterministic => "deterministic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_decay_factor: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub theta: f64,
    pub scheme: SchemeKind,
    pub objective: ObjectiveKind,
    pub model_rank: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// 500 epochs, batch 200, learning rate 1e-4 divided by 10 every 200 epochs.
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 200,
            lr_initial: 1e-4,
            lr_decay_factor: 0.1,
            lr_decay_epochs: vec![200, 400],
            theta: 1.0,
            scheme: SchemeKind::Bernoulli,
            objective: ObjectiveKind::Stochastic,
            model_rank: 15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 150 epochs, batch 100, learning rate 1e-4 divided by 10 at epoch 100.
    pub fn desk() -> Self {
        Self {
            epochs: 150,
            batch_size: 100,
            lr_initial: 1e-4,
            lr_decay_factor: 0.1,
            lr_decay_epochs: vec![100],
            model_rank: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrlError::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr_initial));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad(format!("decay factor must be positive, got {}", self.lr_decay_factor));
        }
        if self.model_rank == 0 {
            return bad("model rank must be positive".into());
        }
        self.sketch_spec().validate()
    }

    pub fn sketch_spec(&self) -> SketchSpec {
        match self.scheme {
            SchemeKind::Bernoulli => SketchSpec::bernoulli(self.theta, true),
            SchemeKind::Replacement => SketchSpec::replacement(self.theta, true),
        }
    }
}

/// `lr_initial · decay^(number of decay epochs ≤ epoch)`.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let steps = config.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
    config.lr_initial * config.lr_decay_factor.powi(steps as i32)
}

/// `p ← p − lr · ∇p` for every trainable parameter.
pub fn sgd_step(model: &mut TrlModel, grads: &Gradients, lr: f64) -> Result<()> {
    let grads = grads.blocks();
    let mut params = model.parameter_blocks_mut();
    if params.len() != grads.len() || params.iter().zip(&grads).any(|(p, g)| p.len() != g.len()) {
        return Err(TrlError::Shape("gradients do not match the model parameters".into()));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, &gv) in p.iter_mut().zip(g) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the per-batch training objective during the epoch.
    pub objective: f64,
    /// Eval-mode MSE on the whole training set after the epoch.
    pub train_loss: f64,
    pub test_mse: f64,
    /// Wall-clock seconds since the start of training.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub records: Vec<EpochRecord>,
}

pub const CSV_HEADER: &str = "epoch,objective,train_loss,test_mse,seconds";

impl LossCurve {
    /// CSV with 17-significant-digit floats. With `timing = false` the seconds
    /// column is written as zero so that the file depends only on the inputs.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let secs = if timing { r.seconds } else { 0.0 };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                fmt_f64(r.objective),
                fmt_f64(r.train_loss),
                fmt_f64(r.test_mse),
                fmt_f64(secs)
            );
        }
        out
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Seeded per-epoch permutations of the sample indices.
pub struct EpochShuffler {
    order: Vec<usize>,
    rng: Rng,
}

impl EpochShuffler {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            rng: substream(seed, Stream::Shuffle),
        }
    }

    pub fn next_epoch(&mut self) -> &[usize] {
        self.order.shuffle(&mut self.rng);
        &self.order
    }
}

/// Generates the data for `spec` and trains on it.
pub fn run_experiment(spec: &SyntheticSpec, config: &TrainConfig) -> Result<LossCurve> {
    let data = generate_synthetic(spec)?;
    run_experiment_on(&data.train, &data.test, config)
}

/// Trains a CP tensor regression layer on `train` with the configured objective.
///
/// The stochastic objective draws one tied sketch per batch and optimizes the
/// `1/θ`-scaled sketched loss. The deterministic objective optimizes the eval-mode
/// loss plus the CP dropout regularizer. Initialization, shuffling and mask draws
/// come from separate substreams of `config.seed`, so both objectives see the same
/// initial model and the same batch order.
pub fn run_experiment_on(train: &Dataset, test: &Dataset, config: &TrainConfig) -> Result<LossCurve> {
    Ok(train_model(train, test, config)?.0)
}

/// As [`run_experiment_on`], also returning the trained model.
pub fn train_model(train: &Dataset, test: &Dataset, config: &TrainConfig) -> Result<(LossCurve, TrlModel)> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(TrlError::Config("train and test sets must be non-empty".into()));
    }
    let input_shape = &train.x.shape()[1..];
    let output_dim = train.y.cols();
    let spec = config.sketch_spec();
    let mut model = TrlModel::init_kruskal(
        input_shape,
        output_dim,
        config.model_rank,
        spec,
        ScaleMode::Inverted,
        &mut substream(config.seed, Stream::Init),
    )?;
    let mut shuffler = EpochShuffler::new(train.len(), config.seed);
    let mut mask_rng = substream(config.seed, Stream::Masks);
    let ranks = model.ranks();

    let n = train.len();
    let mut curve = LossCurve::default();
    let start = Instant::now();
    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        let mut total = 0.0;
        for idx in shuffler.next_epoch().chunks(config.batch_size) {
            let batch = train.gather(idx);
            let (loss, grads) = match config.objective {
                ObjectiveKind::Stochastic => {
                    let draw = draw_sketch(&spec, &ranks, &mut mask_rng)?;
                    loss_and_gradients(&model, &batch.x, &batch.y, Objective::Stochastic(&draw))?
                }
                ObjectiveKind::Deterministic => loss_and_gradients(
                    &model,
                    &batch.x,
                    &batch.y,
                    Objective::Deterministic { theta: config.theta },
                )?,
            };
            check_loss(loss, epoch)?;
            if !grads.is_finite() {
                return Err(TrlError::Diverged { epoch, loss: f64::NAN });
            }
            total += loss * idx.len() as f64;
            sgd_step(&mut model, &grads, lr)?;
        }
        let train_loss = mse_loss(&forward(&model, &train.x)?, &train.y)?;
        let test_mse = mse_loss(&forward(&model, &test.x)?, &test.y)?;
        check_loss(train_loss, epoch)?;
        check_loss(test_mse, epoch)?;
        curve.records.push(EpochRecord {
            epoch,
            objective: total / n as f64,
            train_loss,
            test_mse,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((curve, model))
}

fn check_loss(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() && loss <= DIVERGENCE_LIMIT {
        Ok(())
    } else {
        Err(TrlError::Diverged { epoch, loss })
    }
}
