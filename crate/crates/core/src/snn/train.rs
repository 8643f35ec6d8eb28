//! Mini-batch training loops for the spiking networks (surrogate BPTT) and
//! the CNN baseline (plain backprop), plus dataset-level evaluation.

use std::fmt::Write as _;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bptt::{self, BpttConfig, Workspace};
use super::cnn::{self, Cnn};
use super::layers::{Layer, NetworkSpec};
use super::lif::LifParams;
use super::network::{argmax, SpikingNetwork};
use super::params::{Adam, Params};
use super::stats::ForwardStats;
use super::NetworkKind;
use crate::error::{Error, Result};
use crate::grid::Frames;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f32,
    pub seed: u64,
    /// Per-layer initialization gains.
    pub init_gains: Vec<f32>,
    pub lif: LifParams,
    pub bptt: BpttConfig,
    /// Keeps spiking biases ≤ 0 so silent input yields silent output.
    pub nonpositive_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 2e-3,
            lr_decay: 0.85,
            seed: 7,
            init_gains: vec![2.0, 2.0, 3.0],
            lif: LifParams::default(),
            bptt: BpttConfig::default(),
            nonpositive_bias: true,
        }
    }
}

impl TrainConfig {
    /// Defaults tuned on the synthetic digit set for each network family.
    pub fn for_kind(kind: NetworkKind) -> Self {
        match kind {
            NetworkKind::Cnn => TrainConfig {
                epochs: 15,
                lr_decay: 0.95,
                init_gains: vec![1.0],
                nonpositive_bias: false,
                ..TrainConfig::default()
            },
            NetworkKind::Snn => TrainConfig {
                init_gains: vec![2.0, 2.0],
                ..TrainConfig::default()
            },
            NetworkKind::ConvSnn => TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Params,
    pub curve: Vec<EpochRecord>,
}

/// Learning curve as CSV with a header row.
pub fn learning_curve_csv(curve: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,train_accuracy,test_accuracy\n");
    for r in curve {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6}",
            r.epoch, r.train_loss, r.train_accuracy, r.test_accuracy
        );
    }
    s
}

/// What the generic loop needs from a network family.
trait Objective: Sync {
    type Scratch: Send;
    fn scratch(&self) -> Self::Scratch;
    /// Adds the sample gradient into `grad`; returns `(loss, predicted class)`.
    fn sample(&self, params: &Params, idx: usize, grad: &mut Params, s: &mut Self::Scratch) -> (f32, usize);
    fn predict(&self, params: &Params, idx: usize, s: &mut Self::Scratch) -> usize;
    fn label(&self, idx: usize) -> usize;
    fn project(&self, _params: &mut Params) {}
}

struct SpikingObjective<'a> {
    layers: Vec<Layer>,
    lif: LifParams,
    bptt: BpttConfig,
    inputs: &'a [Frames<i8>],
    labels: &'a [usize],
    nonpositive_bias: bool,
}

impl Objective for SpikingObjective<'_> {
    type Scratch = Workspace;

    fn scratch(&self) -> Workspace {
        Workspace::default()
    }

    fn sample(&self, params: &Params, idx: usize, grad: &mut Params, ws: &mut Workspace) -> (f32, usize) {
        let r = bptt::loss_and_grad(
            &self.layers,
            params,
            &self.lif,
            &self.bptt,
            &self.inputs[idx],
            self.labels[idx],
            grad,
            ws,
        );
        (r.loss, argmax_counts(&r.counts))
    }

    fn predict(&self, params: &Params, idx: usize, ws: &mut Workspace) -> usize {
        let (_, counts) = bptt::forward_record(&self.layers, params, &self.lif, &self.bptt, &self.inputs[idx], ws);
        argmax_counts(&counts)
    }

    fn label(&self, idx: usize) -> usize {
        self.labels[idx]
    }

    fn project(&self, params: &mut Params) {
        if self.nonpositive_bias {
            for l in &mut params.layers {
                l.bias.iter_mut().for_each(|b| *b = b.min(0.0));
            }
        }
    }
}

fn argmax_counts(counts: &[u32]) -> usize {
    let scores: Vec<f32> = counts.iter().map(|&c| c as f32).collect();
    argmax(&scores)
}

struct CnnObjective<'a> {
    layers: Vec<Layer>,
    maps: &'a [Vec<f32>],
    labels: &'a [usize],
}

impl Objective for CnnObjective<'_> {
    type Scratch = Vec<Vec<f32>>;

    fn scratch(&self) -> Vec<Vec<f32>> {
        Vec::new()
    }

    fn sample(&self, params: &Params, idx: usize, grad: &mut Params, acts: &mut Vec<Vec<f32>>) -> (f32, usize) {
        let (loss, logits) = cnn::loss_and_grad(&self.layers, params, &self.maps[idx], self.labels[idx], grad, acts);
        (loss, argmax(&logits))
    }

    fn predict(&self, params: &Params, idx: usize, acts: &mut Vec<Vec<f32>>) -> usize {
        argmax(&cnn::forward_record(&self.layers, params, &self.maps[idx], acts, None))
    }

    fn label(&self, idx: usize) -> usize {
        self.labels[idx]
    }
}

fn check_split(n: usize, labels_len: usize, train: &[usize], test: &[usize], classes: usize, labels: &[usize]) -> Result<()> {
    if n != labels_len {
        return Err(Error::domain(format!("{n} inputs but {labels_len} labels")));
    }
    if train.is_empty() {
        return Err(Error::domain("empty training split"));
    }
    if let Some(&i) = train.iter().chain(test).find(|&&i| i >= n) {
        return Err(Error::domain(format!("split index {i} out of range for {n} samples")));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::domain(format!("label {l} outside 0..{classes}")));
    }
    Ok(())
}

fn fit<O: Objective>(obj: &O, layers: &[Layer], train: &[usize], test: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::domain("epochs and batch_size must be positive"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::domain("learning rate must be positive and finite"));
    }
    let gains: Vec<f32> = (0..layers.len())
        .map(|l| cfg.init_gains.get(l).or(cfg.init_gains.last()).copied().unwrap_or(1.0))
        .collect();
    let mut params = Params::init(layers, &gains, cfg.seed);
    obj.project(&mut params);
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut order = train.to_vec();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut total = Params::zeros(layers);

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::dataset::derive_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<(f32, usize, Params)> = batch
                .par_iter()
                .map_init(
                    || obj.scratch(),
                    |s, &i| {
                        let mut g = Params::zeros(layers);
                        let (loss, pred) = obj.sample(&params, i, &mut g, s);
                        (loss, pred, g)
                    },
                )
                .collect();
            total.fill(0.0);
            let mut batch_loss = 0.0f64;
            for (&i, (loss, pred, g)) in batch.iter().zip(&results) {
                batch_loss += *loss as f64;
                correct += usize::from(*pred == obj.label(i));
                total.add_scaled(g, 1.0 / batch.len() as f32);
            }
            if !batch_loss.is_finite() || !total.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: batch_loss / batch.len() as f64,
                    detail: format!("non-finite loss or gradient, |θ|max = {}", params.max_abs()),
                });
            }
            loss_sum += batch_loss;
            adam.update(&mut params, &total);
            obj.project(&mut params);
            if !params.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: batch_loss / batch.len() as f64,
                    detail: "non-finite parameters after update".into(),
                });
            }
        }
        adam.lr *= cfg.lr_decay;
        curve.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            test_accuracy: accuracy(obj, &params, test),
        });
    }
    Ok(TrainOutcome { params, curve })
}

fn accuracy<O: Objective>(obj: &O, params: &Params, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let correct: usize = idx
        .par_iter()
        .map_init(|| obj.scratch(), |s, &i| usize::from(obj.predict(params, i, s) == obj.label(i)))
        .sum();
    correct as f64 / idx.len() as f64
}

/// Trains a spiking network (plain or convolutional) with surrogate BPTT.
/// `labels` are class indices `0..9`.
pub fn train_spiking(
    spec: &NetworkSpec,
    inputs: &[Frames<i8>],
    labels: &[usize],
    train: &[usize],
    test: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let layers = spec.resolve()?;
    check_split(inputs.len(), labels.len(), train, test, spec.outputs(), labels)?;
    if !cfg.lif.is_valid() {
        return Err(Error::domain("invalid LIF parameters"));
    }
    let n_in = layers[0].input_len();
    if let Some(i) = inputs.iter().position(|f| f.frame_size() != n_in) {
        return Err(Error::domain(format!("input {i} does not match the {n_in}-element input layer")));
    }
    let obj = SpikingObjective {
        layers: layers.clone(),
        lif: cfg.lif,
        bptt: cfg.bptt,
        inputs,
        labels,
        nonpositive_bias: cfg.nonpositive_bias,
    };
    fit(&obj, &layers, train, test, cfg)
}

/// Trains the CNN baseline on accumulated pressure maps.
pub fn train_cnn(
    spec: &NetworkSpec,
    maps: &[Vec<f32>],
    labels: &[usize],
    train: &[usize],
    test: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let layers = spec.resolve()?;
    check_split(maps.len(), labels.len(), train, test, spec.outputs(), labels)?;
    let n_in = layers[0].input_len();
    if let Some(i) = maps.iter().position(|m| m.len() != n_in) {
        return Err(Error::domain(format!("map {i} does not match the {n_in}-element input layer")));
    }
    let obj = CnnObjective {
        layers: layers.clone(),
        maps,
        labels,
    };
    fit(&obj, &layers, train, test, cfg)
}

/// Accuracy, confusion matrix and aggregated forward statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub samples: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u32>>,
    pub stats: ForwardStats,
    pub predictions: Vec<usize>,
}

fn summarize(classes: usize, labels: &[usize], preds: Vec<(usize, ForwardStats)>) -> Evaluation {
    let mut confusion = vec![vec![0u32; classes]; classes];
    let mut stats = ForwardStats::default();
    let mut correct = 0;
    let mut predictions = Vec::with_capacity(preds.len());
    for (&y, (p, s)) in labels.iter().zip(preds) {
        confusion[y][p] += 1;
        correct += usize::from(y == p);
        stats.absorb(&s);
        predictions.push(p);
    }
    Evaluation {
        accuracy: if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 },
        samples: labels.len(),
        confusion,
        stats,
        predictions,
    }
}

pub fn evaluate_spiking(net: &SpikingNetwork, inputs: &[&Frames<i8>], labels: &[usize]) -> Result<Evaluation> {
    let outs = inputs
        .par_iter()
        .map(|x| net.forward(x).map(|o| (o.prediction, o.stats)))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(net.outputs(), labels, outs))
}

pub fn evaluate_cnn(net: &Cnn, maps: &[&[f32]], labels: &[usize]) -> Result<Evaluation> {
    let outs = maps
        .par_iter()
        .map(|m| net.forward(m).map(|o| (o.prediction, o.stats)))
        .collect::<Result<Vec<_>>>()?;
    let classes = net.layers.last().map(Layer::output_len).unwrap_or(0);
    Ok(summarize(classes, labels, outs))
}
