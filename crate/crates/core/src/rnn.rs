//! Elman recurrent network trained by feedback-driven targets through time.
//!
//! `h_t = W x_t + V z_{t−1}`, `z_t = φ(h_t)`, `o_t = U z_t` with `z_{−1} = 0`.
//! The output error `e²_t = o_t − y_t` is sent back through fixed error
//! weights `E` to form a hidden target `y¹_t = φ(h_t − β E e²_t)`, and every
//! parameter moves along its local error.
//!
//! Sequences are matrices with one time step per row.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul_nt, matmul_tn, sample_gaussian, Matrix, Rng};
use crate::nn::Activation;
use crate::optim::{self, InitScheme};

#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    /// `hidden x input`
    pub w: Matrix,
    /// `hidden x hidden`
    pub v: Matrix,
    /// `output x hidden`
    pub u: Matrix,
    /// `hidden x output`
    pub e: Matrix,
    pub activation: Activation,
}

impl RnnModel {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w: Matrix::zeros(hidden, input),
            v: Matrix::zeros(hidden, hidden),
            u: Matrix::zeros(output, hidden),
            e: Matrix::zeros(hidden, output),
            activation: Activation::Tanh,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.u.rows()
    }

    /// Initializes `W`, `V`, `U` per `scheme` and draws `E ~ N(0, feedback_std²)`.
    pub fn init(&mut self, scheme: InitScheme, feedback_std: f64, rng: &mut Rng) -> Result<()> {
        scheme.validate()?;
        for m in [&mut self.w, &mut self.v, &mut self.u] {
            let (r, c) = m.shape();
            *m = match scheme {
                InitScheme::Zeros => Matrix::zeros(r, c),
                InitScheme::Gaussian { std } => sample_gaussian(rng, r, c, 0.0, std)?,
                InitScheme::FanInUniform => crate::linalg::sample_uniform_fan_in(rng, r, c, c)?,
            };
        }
        let (r, c) = self.e.shape();
        self.e = sample_gaussian(rng, r, c, 0.0, feedback_std)?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden_dim();
        if self.v.shape() != (h, h)
            || self.u.cols() != h
            || self.e.shape() != (h, self.output_dim())
        {
            return Err(Error::shape(
                "rnn",
                format!(
                    "W {:?}, V {:?}, U {:?}, E {:?}",
                    self.w.shape(),
                    self.v.shape(),
                    self.u.shape(),
                    self.e.shape()
                ),
            ));
        }
        if !self.activation.is_elementwise() {
            return Err(Error::Config(
                "recurrent activation must be element-wise".into(),
            ));
        }
        Ok(())
    }
}

/// Hidden pre-activations, hidden states and outputs, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnTrace {
    pub inputs: Matrix,
    pub pre: Matrix,
    pub hidden: Matrix,
    pub output: Matrix,
}

impl RnnTrace {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    /// `z_{t−1}`, the zero vector at `t = 0`.
    pub fn previous_hidden(&self, t: usize) -> Vec<f64> {
        if t == 0 {
            vec![0.0; self.hidden.cols()]
        } else {
            self.hidden.row(t - 1).to_vec()
        }
    }
}

pub fn rnn_forward(model: &RnnModel, xs: &Matrix) -> Result<RnnTrace> {
    model.validate()?;
    if xs.rows() == 0 {
        return Err(Error::Argument(
            "sequence must have at least one step".into(),
        ));
    }
    if xs.cols() != model.input_dim() {
        return Err(Error::shape(
            "rnn forward",
            format!(
                "{} input columns for an input width of {}",
                xs.cols(),
                model.input_dim()
            ),
        ));
    }
    let steps = xs.rows();
    let h_dim = model.hidden_dim();
    // input contributions for all steps at once
    let wx = matmul_nt(xs, &model.w)?;
    let mut pre = Matrix::zeros(steps, h_dim);
    let mut hidden = Matrix::zeros(steps, h_dim);
    for t in 0..steps {
        let mut h = wx.row(t).to_vec();
        if t > 0 {
            let prev = hidden.row(t - 1).to_vec();
            for (i, hi) in h.iter_mut().enumerate() {
                *hi += model
                    .v
                    .row(i)
                    .iter()
                    .zip(&prev)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
        for (i, &hi) in h.iter().enumerate() {
            pre.set(t, i, hi);
            hidden.set(t, i, model.activation.apply_scalar(hi));
        }
    }
    let output = matmul_nt(&hidden, &model.u)?;
    Ok(RnnTrace {
        inputs: xs.clone(),
        pre,
        hidden,
        output,
    })
}

/// Parameter displacements, shaped like `W`, `V`, `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnUpdates {
    pub dw: Matrix,
    pub dv: Matrix,
    pub du: Matrix,
}

impl RnnUpdates {
    pub fn zeros(model: &RnnModel) -> Self {
        Self {
            dw: Matrix::zeros(model.w.rows(), model.w.cols()),
            dv: Matrix::zeros(model.v.rows(), model.v.cols()),
            du: Matrix::zeros(model.u.rows(), model.u.cols()),
        }
    }

    pub fn add_assign(&mut self, other: &RnnUpdates) -> Result<()> {
        self.dw.axpy(1.0, &other.dw)?;
        self.dv.axpy(1.0, &other.dv)?;
        self.du.axpy(1.0, &other.du)?;
        Ok(())
    }

    /// Frobenius re-projection of each matrix onto the ball of radius `c`.
    pub fn normalize(&mut self, c: f64) {
        self.dw = self.dw.normalized(c);
        self.dv = self.dv.normalized(c);
        self.du = self.du.normalized(c);
    }
}

fn check_targets(model: &RnnModel, trace: &RnnTrace, targets: &Matrix) -> Result<()> {
    if targets.cols() != model.output_dim() || targets.rows() > trace.len() {
        return Err(Error::shape(
            "rnn targets",
            format!(
                "{:?} targets for {} steps of {} outputs",
                targets.shape(),
                trace.len(),
                model.output_dim()
            ),
        ));
    }
    Ok(())
}

/// Contribution of step `t` toward its output target `y` (one row).
pub fn rnn_step_update(
    model: &RnnModel,
    trace: &RnnTrace,
    t: usize,
    y: &[f64],
    beta: f64,
) -> Result<RnnUpdates> {
    if t >= trace.len() || y.len() != model.output_dim() {
        return Err(Error::Argument(format!(
            "step {t} with a target of length {} on a trace of {} steps",
            y.len(),
            trace.len()
        )));
    }
    let row = |m: &Matrix, r: usize| Matrix::row_vector(m.row(r));
    let z = row(&trace.hidden, t);
    let h = row(&trace.pre, t);
    let e2 = row(&trace.output, t).sub(&Matrix::row_vector(y))?;
    // y¹ = φ(h − β E e²), e¹ = z − y¹
    let mut h_target = h.clone();
    h_target.axpy(-beta, &matmul_nt(&e2, &model.e)?)?;
    let e1 = z.sub(&model.activation.apply(&h_target))?;
    let local = e1.hadamard(&model.activation.derivative(&h)?)?;
    let prev = Matrix::row_vector(&trace.previous_hidden(t));
    Ok(RnnUpdates {
        dw: matmul_tn(&local, &row(&trace.inputs, t))?,
        dv: matmul_tn(&local, &prev)?,
        du: matmul_tn(&e2, &z)?,
    })
}

/// Sum of step contributions for explicit targets, one row per step from `t = 0`.
/// Steps beyond the last target row contribute nothing.
pub fn rnn_lra_updates_with_targets(
    model: &RnnModel,
    trace: &RnnTrace,
    targets: &Matrix,
    beta: f64,
) -> Result<RnnUpdates> {
    check_targets(model, trace, targets)?;
    let mut total = RnnUpdates::zeros(model);
    for t in 0..targets.rows() {
        total.add_assign(&rnn_step_update(model, trace, t, targets.row(t), beta)?)?;
    }
    Ok(total)
}

/// Next-step prediction: the output at step `t` targets the input at `t + 1`.
pub fn rnn_lra_updates(model: &RnnModel, trace: &RnnTrace, beta: f64) -> Result<RnnUpdates> {
    let steps = trace.len();
    if steps < 2 {
        return Err(Error::Argument(format!(
            "next-step prediction needs at least 2 steps, got {steps}"
        )));
    }
    if model.output_dim() != model.input_dim() {
        return Err(Error::shape(
            "rnn next-step",
            format!(
                "output width {} vs input width {}",
                model.output_dim(),
                model.input_dim()
            ),
        ));
    }
    let idx: Vec<usize> = (1..steps).collect();
    let targets = trace.inputs.select_rows(&idx);
    rnn_lra_updates_with_targets(model, trace, &targets, beta)
}

/// Mean squared next-step prediction error over every predicted step and output.
pub fn next_step_mse(model: &RnnModel, xs: &Matrix) -> Result<f64> {
    let trace = rnn_forward(model, xs)?;
    if xs.rows() < 2 {
        return Err(Error::Argument(
            "next-step error needs at least 2 steps".into(),
        ));
    }
    let mut sum = 0.0;
    for t in 0..xs.rows() - 1 {
        for (o, y) in trace.output.row(t).iter().zip(xs.row(t + 1)) {
            sum += (o - y) * (o - y);
        }
    }
    Ok(sum / ((xs.rows() - 1) * xs.cols()) as f64)
}

/// `count` sine sequences `sin(2π f t + φ)` of `length` steps with random phases.
pub fn sine_sequences(
    length: usize,
    frequency: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Matrix>> {
    if length == 0 || count == 0 {
        return Err(Error::Argument(
            "sine task needs positive length and count".into(),
        ));
    }
    if !(frequency.is_finite() && frequency > 0.0) {
        return Err(Error::Argument(format!(
            "frequency must be positive, got {frequency}"
        )));
    }
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let phase = rng.uniform() * TAU;
            let data = (0..length)
                .map(|t| (TAU * frequency * t as f64 + phase).sin())
                .collect();
            Matrix::new(length, 1, data)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnConfig {
    pub hidden: usize,
    pub length: usize,
    /// Cycles per time step.
    pub frequency: f64,
    pub sequences: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta: f64,
    /// Re-project each summed update onto this radius before the step.
    pub normalize: bool,
    pub c1: f64,
    pub feedback_std: f64,
    pub init: InitScheme,
    pub seed: u64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            length: 50,
            frequency: 0.05,
            sequences: 8,
            epochs: 20,
            learning_rate: 0.05,
            beta: 0.1,
            normalize: true,
            c1: 1.0,
            feedback_std: 1.0,
            init: InitScheme::FanInUniform,
            seed: 1,
        }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.hidden == 0 {
            bad.push("hidden must be positive".to_string());
        }
        if self.length < 2 {
            bad.push(format!("length must be at least 2, got {}", self.length));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            bad.push(format!(
                "frequency must be positive, got {}",
                self.frequency
            ));
        }
        if self.sequences == 0 {
            bad.push("sequences must be positive".to_string());
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("beta", self.beta),
            ("c1", self.c1),
        ] {
            if !(v > 0.0) {
                bad.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.feedback_std >= 0.0) {
            bad.push(format!(
                "feedback_std must be non-negative, got {}",
                self.feedback_std
            ));
        }
        if let Err(Error::Config(msg)) = self.init.validate() {
            bad.push(msg);
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Trained model and the mean next-step MSE before training and after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnRun {
    pub model: RnnModel,
    pub mse: Vec<f64>,
}

fn mean_mse(model: &RnnModel, seqs: &[Matrix]) -> Result<f64> {
    let mut sum = 0.0;
    for s in seqs {
        sum += next_step_mse(model, s)?;
    }
    Ok(sum / seqs.len() as f64)
}

/// Trains on the sine task, one update per sequence.
pub fn train_sine(cfg: &RnnConfig) -> Result<RnnRun> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let seqs = sine_sequences(cfg.length, cfg.frequency, cfg.sequences, rng.next_u64())?;
    let mut model = RnnModel::zeros(1, cfg.hidden, 1);
    model.init(cfg.init, cfg.feedback_std, &mut rng)?;
    let mut mse = vec![mean_mse(&model, &seqs)?];
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            let trace = rnn_forward(&model, &seqs[i])?;
            let mut upd = rnn_lra_updates(&model, &trace, cfg.beta)?;
            if cfg.normalize {
                upd.normalize(cfg.c1);
            }
            optim::sgd_step(&mut model.w, &upd.dw, cfg.learning_rate)?;
            optim::sgd_step(&mut model.v, &upd.dv, cfg.learning_rate)?;
            optim::sgd_step(&mut model.u, &upd.du, cfg.learning_rate)?;
        }
        mse.push(mean_mse(&model, &seqs)?);
    }
    Ok(RnnRun { model, mse })
}
