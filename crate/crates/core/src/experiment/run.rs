use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{Algorithm, DataConfig, ExperimentConfig};
use crate::credit::{
    backprop_updates, dfa_updates, fa_updates, lra_updates, lra_updates_nondiff, update_angle,
    Estimator, LraMode, UpdateSet,
};
use crate::data::{self, minibatches, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::io::{check_architecture, save_network, write_manifest};
use crate::linalg::{Matrix, Rng};
use crate::nn::{ForwardTrace, Network};
use crate::optim::{self, init_dfa_feedback, init_fa_feedback, Optimizer, OptimizerConfig};

const EVAL_CHUNK: usize = 1000;

pub const METRICS_HEADER: &str = "epoch,train_err,valid_err,test_err,mean_depth,seconds";
pub const ANGLES_HEADER: &str = "batch,degrees";

/// Training, validation and test sets of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn input_dim(&self) -> usize {
        self.train.input_dim()
    }
}

/// Loads and splits the configured dataset.
pub fn load_splits(cfg: &DataConfig, run_seed: u64) -> Result<Splits> {
    let (full, test) = match &cfg.dir {
        Some(dir) => data::load_mnist_dir(dir)?,
        None => {
            let p = |o: &Option<PathBuf>, name: &str| {
                o.clone()
                    .ok_or_else(|| Error::Config(format!("data.{name} missing")))
            };
            (
                data::load_idx(
                    p(&cfg.train_images, "train_images")?,
                    p(&cfg.train_labels, "train_labels")?,
                )?,
                data::load_idx(
                    p(&cfg.test_images, "test_images")?,
                    p(&cfg.test_labels, "test_labels")?,
                )?,
            )
        }
    };
    prepare_splits(cfg, run_seed, &full, &test)
}

/// Splits already-loaded data per `cfg` and applies its limits.
pub fn prepare_splits(
    cfg: &DataConfig,
    run_seed: u64,
    full: &Dataset,
    test: &Dataset,
) -> Result<Splits> {
    let (mut train, valid) = data::split(
        full,
        SplitSpec {
            validation_count: cfg.validation_count,
            seed: cfg.split_seed.unwrap_or(run_seed),
        },
    )?;
    if let Some(n) = cfg.train_limit {
        train = train.head(n);
    }
    let test = match cfg.test_limit {
        Some(n) => test.head(n),
        None => test.clone(),
    };
    if train.input_dim() != test.input_dim() {
        return Err(Error::shape(
            "dataset",
            format!(
                "train width {} vs test width {}",
                train.input_dim(),
                test.input_dim()
            ),
        ));
    }
    Ok(Splits { train, valid, test })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_err: f64,
    pub valid_err: f64,
    pub test_err: f64,
    pub mean_depth: f64,
    pub seconds: f64,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.3}",
            self.epoch,
            self.train_err,
            self.valid_err,
            self.test_err,
            self.mean_depth,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleRow {
    /// Minibatches processed so far, counting this one; sampled when divisible by `angle_every`.
    pub batch: usize,
    /// `NaN` when either update had zero norm.
    pub degrees: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRow>,
    pub angles: Vec<AngleRow>,
    pub network: Network,
}

/// Class probabilities for `x`; stochastic networks average `samples` forward passes.
pub fn predict_proba(net: &Network, x: &Matrix, samples: usize, rng: &mut Rng) -> Result<Matrix> {
    let Some(first) = net.layers.iter().position(|l| l.discrete.is_stochastic()) else {
        return net.predict(x, rng);
    };
    // everything up to the first sampling step is shared by all samples
    let mut z = x.clone();
    for layer in &net.layers[..first] {
        let post = layer.activate(&layer.pre_activation(&z)?);
        z = layer.discrete.apply(&post, rng)?;
    }
    let sampler = &net.layers[first];
    let p = sampler.activate(&sampler.pre_activation(&z)?);
    let mut acc = Matrix::zeros(x.rows(), net.output_dim());
    for _ in 0..samples.max(1) {
        let mut z = sampler.discrete.apply(&p, rng)?;
        let mut post = p.clone();
        for layer in &net.layers[first + 1..] {
            post = layer.activate(&layer.pre_activation(&z)?);
            z = layer.discrete.apply(&post, rng)?;
        }
        acc.axpy(1.0, &post)?;
    }
    Ok(acc.scale(1.0 / samples.max(1) as f64))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `100 · misclassified / total`, or `NaN` for an empty set.
pub fn classification_error(
    net: &Network,
    ds: &Dataset,
    samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if ds.is_empty() {
        return Ok(f64::NAN);
    }
    let mut wrong = 0usize;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let x = ds.images.select_rows(chunk);
        let probs = predict_proba(net, &x, samples, rng)?;
        for (r, &i) in chunk.iter().enumerate() {
            if argmax(probs.row(r)) != ds.labels[i] as usize {
                wrong += 1;
            }
        }
    }
    Ok(100.0 * wrong as f64 / ds.len() as f64)
}

/// Builds the configured network with initialized weights and error weights.
pub fn build_network(cfg: &ExperimentConfig, input_dim: usize, rng: &mut Rng) -> Result<Network> {
    let mut net = Network::new(input_dim, &cfg.layer_specs())?;
    optim::init(&mut net, cfg.init, &mut rng.fork())?;
    if cfg.algorithm == Algorithm::LraFdbk {
        optim::init_feedback(&mut net, cfg.feedback_std, &mut rng.fork())?;
    }
    Ok(net)
}

enum Rule {
    Bp,
    Lra(LraMode),
    Fa(Vec<Matrix>),
    Dfa(Vec<Matrix>),
    Estimator(Estimator),
}

impl Rule {
    fn updates(
        &mut self,
        cfg: &ExperimentConfig,
        net: &Network,
        trace: &ForwardTrace,
        t: &Matrix,
    ) -> Result<UpdateSet> {
        match self {
            Rule::Bp => backprop_updates(net, trace, t),
            Rule::Lra(mode) => {
                if *mode == LraMode::Fdbk && !net.is_differentiable() {
                    Ok(lra_updates_nondiff(net, trace, t, &cfg.lra)?.0)
                } else {
                    Ok(lra_updates(net, trace, t, &cfg.lra, *mode)?.0)
                }
            }
            Rule::Fa(b) => fa_updates(net, trace, t, b),
            Rule::Dfa(b) => dfa_updates(net, trace, t, b),
            Rule::Estimator(est) => est.updates(net, trace, t),
        }
    }
}

struct Writers {
    metrics: Option<File>,
    angles: Option<File>,
}

impl Writers {
    fn open(out_dir: Option<&Path>, angles: bool) -> Result<Self> {
        let Some(dir) = out_dir else {
            return Ok(Self {
                metrics: None,
                angles: None,
            });
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let start = |name: &str, header: &str| -> Result<File> {
            let p = dir.join(name);
            let mut f = File::create(&p).map_err(|e| Error::io(&p, e))?;
            writeln!(f, "{header}").map_err(|e| Error::io(&p, e))?;
            Ok(f)
        };
        Ok(Self {
            metrics: Some(start("metrics.csv", METRICS_HEADER)?),
            angles: if angles {
                Some(start("angles.csv", ANGLES_HEADER)?)
            } else {
                None
            },
        })
    }

    fn metrics(&mut self, row: &MetricsRow) -> Result<()> {
        if let Some(f) = &mut self.metrics {
            writeln!(f, "{}", row.csv()).map_err(|e| Error::io("metrics.csv", e))?;
        }
        Ok(())
    }

    fn angle(&mut self, row: &AngleRow) -> Result<()> {
        if let Some(f) = &mut self.angles {
            writeln!(f, "{},{:.6}", row.batch, row.degrees)
                .map_err(|e| Error::io("angles.csv", e))?;
        }
        Ok(())
    }
}

fn write_network(out_dir: Option<&Path>, net: &Network) -> Result<()> {
    if let Some(dir) = out_dir {
        save_network(net, dir.join("model.bin"))?;
        write_manifest(net, dir.join("model.json"))?;
    }
    Ok(())
}

struct Evaluator {
    rng: Rng,
    samples: usize,
    train_eval_limit: Option<usize>,
}

impl Evaluator {
    fn row(
        &mut self,
        net: &Network,
        splits: &Splits,
        epoch: usize,
        depth: f64,
        seconds: f64,
    ) -> Result<MetricsRow> {
        let train = match self.train_eval_limit {
            Some(n) if n < splits.train.len() => {
                classification_error(net, &splits.train.head(n), self.samples, &mut self.rng)?
            }
            _ => classification_error(net, &splits.train, self.samples, &mut self.rng)?,
        };
        Ok(MetricsRow {
            epoch,
            train_err: train,
            valid_err: classification_error(net, &splits.valid, self.samples, &mut self.rng)?,
            test_err: classification_error(net, &splits.test, self.samples, &mut self.rng)?,
            mean_depth: depth,
            seconds,
        })
    }
}

/// Trains per `cfg` on preloaded `splits`.
///
/// Writes `metrics.csv` (and `angles.csv` when angles are tracked) as the
/// run progresses, plus `model.bin` / `model.json` at the end, when
/// `out_dir` is given. `on_epoch` sees every metrics row, including the
/// initial evaluation as epoch 0.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    splits: &Splits,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&MetricsRow),
) -> Result<RunOutput> {
    cfg.validate()?;
    let mut master = Rng::new(cfg.seed);
    let mut net = build_network(cfg, splits.input_dim(), &mut master)?;
    let rule = match cfg.algorithm {
        Algorithm::Bp => Rule::Bp,
        Algorithm::LraDiff => Rule::Lra(LraMode::Diff),
        Algorithm::LraFdbk => Rule::Lra(LraMode::Fdbk),
        Algorithm::Fa => Rule::Fa(init_fa_feedback(&net, &mut master.fork())?),
        Algorithm::Dfa => Rule::Dfa(init_dfa_feedback(&net, &mut master.fork())?),
        other => Rule::Estimator(Estimator::new(
            cfg.estimator
                .with_kind(other.estimator().expect("estimator algorithm")),
        )?),
    };
    train_loop(
        cfg,
        splits,
        out_dir,
        &mut |row, _| on_epoch(row),
        &mut master,
        &mut net,
        rule,
        cfg.optimizer,
    )
}

#[allow(clippy::too_many_arguments)]
fn train_loop(
    cfg: &ExperimentConfig,
    splits: &Splits,
    out_dir: Option<&Path>,
    on_state: &mut dyn FnMut(&MetricsRow, &Network),
    master: &mut Rng,
    net: &mut Network,
    mut rule: Rule,
    optimizer: OptimizerConfig,
) -> Result<RunOutput> {
    let start = Instant::now();
    let elapsed = |s: &Instant| {
        if cfg.record_time {
            s.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };
    let mut sample_rng = master.fork();
    let mut eval = Evaluator {
        rng: master.fork(),
        samples: cfg.eval_samples,
        train_eval_limit: cfg.data.train_eval_limit,
    };
    let mut opt = Optimizer::new(optimizer, net)?;
    let mut writers = Writers::open(out_dir, cfg.angle_every.is_some())?;
    let estimator = cfg
        .algorithm
        .estimator()
        .map(|k| cfg.estimator.with_kind(k));
    if let Some(e) = &estimator {
        net.set_stochastic_slope(e.slope_at(0));
    }

    let first = eval.row(net, splits, 0, 0.0, elapsed(&start))?;
    writers.metrics(&first)?;
    on_state(&first, net);
    let mut metrics = vec![first];
    let mut angles = Vec::new();
    // 1-based count of minibatches seen so far
    let mut batch_number = 0usize;
    let reached = |row: &MetricsRow| cfg.target_test_error.is_some_and(|t| row.test_err <= t);
    let mut done = reached(&metrics[0]);

    for epoch in 1..=cfg.epochs {
        if done {
            break;
        }
        if let Some(e) = &estimator {
            net.set_stochastic_slope(e.slope_at(epoch - 1));
        }
        let shuffle = master.next_u64();
        let mut depth_sum = 0usize;
        let mut batches = 0usize;
        for batch in minibatches(&splits.train, cfg.batch_size, Some(shuffle))? {
            let trace = net.forward(&batch.x, &mut sample_rng)?;
            let updates = rule.updates(cfg, net, &trace, &batch.t)?;
            batch_number += 1;
            if let Some(every) = cfg.angle_every {
                if batch_number.is_multiple_of(every) {
                    let bp = backprop_updates(net, &trace, &batch.t)?;
                    let degrees = match update_angle(&updates, &bp) {
                        Ok(d) => d,
                        Err(Error::DegenerateAngle) => f64::NAN,
                        Err(e) => return Err(e),
                    };
                    let row = AngleRow {
                        batch: batch_number,
                        degrees,
                    };
                    writers.angle(&row)?;
                    angles.push(row);
                }
            }
            opt.apply(net, &updates)?;
            depth_sum += updates.depth;
            batches += 1;
        }
        let depth = if batches == 0 {
            0.0
        } else {
            depth_sum as f64 / batches as f64
        };
        let row = eval.row(net, splits, epoch, depth, elapsed(&start))?;
        writers.metrics(&row)?;
        on_state(&row, net);
        done = reached(&row);
        metrics.push(row);
    }
    write_network(out_dir, net)?;
    Ok(RunOutput {
        metrics,
        angles,
        network: net.clone(),
    })
}

/// Loads the configured data, then runs [`run_experiment_with`].
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let splits = load_splits(&cfg.data, cfg.seed)?;
    run_experiment_with(cfg, &splits, out_dir, &mut |_| {})
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutput {
    pub metrics: Vec<MetricsRow>,
    /// Row with the lowest validation error (earliest on ties).
    pub best: MetricsRow,
    /// Parameters at the best row.
    pub network: Network,
}

/// Continues training `pretrained` with backprop and plain SGD at the
/// configured learning rate, keeping the checkpoint with the best validation error.
///
/// Writes `metrics.csv`, `best.csv` and the best `model.bin` / `model.json`.
pub fn finetune_with(
    cfg: &ExperimentConfig,
    splits: &Splits,
    pretrained: Network,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&MetricsRow),
) -> Result<FinetuneOutput> {
    let mut bp = cfg.clone();
    bp.algorithm = Algorithm::Bp;
    bp.angle_every = None;
    bp.target_test_error = None;
    bp.validate()?;
    if splits.valid.is_empty() {
        return Err(Error::Config(
            "finetuning selects on validation error; data.validation_count must be positive".into(),
        ));
    }
    check_architecture(&pretrained, splits.input_dim(), &bp.layer_specs())?;
    let mut net = pretrained;
    let mut master = Rng::new(bp.seed);
    let sgd = OptimizerConfig::sgd(bp.optimizer.learning_rate);
    let mut best: Option<(MetricsRow, Network)> = None;
    let mut hook = |row: &MetricsRow, net: &Network| {
        if best
            .as_ref()
            .is_none_or(|(b, _)| row.valid_err < b.valid_err)
        {
            best = Some((*row, net.clone()));
        }
        on_epoch(row);
    };
    let out = train_loop(
        &bp,
        splits,
        None,
        &mut hook,
        &mut master,
        &mut net,
        Rule::Bp,
        sgd,
    )?;
    let (best_row, best_net) = best.expect("initial row is always evaluated");
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut text = format!("{METRICS_HEADER}\n");
        for row in &out.metrics {
            text.push_str(&row.csv());
            text.push('\n');
        }
        write_text(&dir.join("metrics.csv"), &text)?;
        write_text(
            &dir.join("best.csv"),
            &format!("{METRICS_HEADER}\n{}\n", best_row.csv()),
        )?;
    }
    write_network(out_dir, &best_net)?;
    Ok(FinetuneOutput {
        metrics: out.metrics,
        best: best_row,
        network: best_net,
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
