//! Two-tower relevance model.
//!
//! Items and keyphrases are embedded independently by a mean-pooled
//! embedding bag, so inference cost scales with the number of entities
//! rather than pairs. Three training objectives are supported:
//!
//! * contrastive: `y·D² + (1−y)·max(0, m−D)²` on the euclidean distance of
//!   the L2-normalized embeddings;
//! * softmax: cross-entropy of a 2-way linear head over `(u, v, |u−v|)`;
//! * in-batch negatives (IRNS): each item is classified against every
//!   keyphrase of its batch with logits `cos/τ`, the diagonal being the
//!   true class. Training input is positives only.
//!
//! Gradients are hand-written; [`grad_check`] compares them against central
//! finite differences.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TokenSeq;

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Contrastive,
    Softmax,
    Irns,
}

impl Objective {
    pub fn normalized(self) -> bool {
        !matches!(self, Objective::Softmax)
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Contrastive => "contrastive",
            Objective::Softmax => "softmax",
            Objective::Irns => "irns",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(Objective::Contrastive),
            "softmax" => Ok(Objective::Softmax),
            "irns" => Ok(Objective::Irns),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

/// Loss hyper-parameters that do not change the parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub margin: f64,
    pub temperature: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            margin: 0.5,
            temperature: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiTrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub margin: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for BiTrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Contrastive,
            epochs: 12,
            lr: 0.05,
            batch_size: 32,
            margin: 0.5,
            temperature: 0.1,
            seed: 0,
        }
    }
}

impl BiTrainConfig {
    /// Reference values of the large-scale setup (4 epochs, lr 2e-5,
    /// batch 384 per device). Far too small a step for an embedding bag
    /// trained from scratch; kept for documentation and experiments.
    pub fn large_scale(objective: Objective) -> Self {
        Self {
            objective,
            epochs: 4,
            lr: 2e-5,
            batch_size: 384,
            ..Self::default()
        }
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            margin: self.margin,
            temperature: self.temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("lr > 0, epochs >= 1 and batch_size >= 1 required".into()));
        }
        if !(self.margin > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::Config("margin and temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub item: TokenSeq,
    pub keyphrase: TokenSeq,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositivePair {
    pub item: TokenSeq,
    pub keyphrase: TokenSeq,
}

/// Labeled pairs feed the contrastive and softmax objectives; IRNS only
/// ever receives positives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BiTrainData {
    Labeled(Vec<LabeledPair>),
    Positives(Vec<PositivePair>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxHead {
    /// `3d × 2`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiEncoderModel {
    pub dim: usize,
    pub objective: Objective,
    /// `|V| × d`
    pub embeddings: Array2<f64>,
    pub head: Option<SoftmaxHead>,
    /// Pass/fail cut on [`BiEncoderModel::score_pair`]; calibrated on
    /// validation data.
    pub threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Grads {
    embeddings: Array2<f64>,
    head: Option<SoftmaxHead>,
}

impl Grads {
    fn zeros_like(model: &BiEncoderModel) -> Self {
        Self {
            embeddings: Array2::zeros(model.embeddings.raw_dim()),
            head: model.head.as_ref().map(|h| SoftmaxHead {
                weight: Array2::zeros(h.weight.raw_dim()),
                bias: Array1::zeros(h.bias.raw_dim()),
            }),
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embeddings.as_slice().expect("standard layout")];
        if let Some(h) = &self.head {
            out.push(h.weight.as_slice().expect("standard layout"));
            out.push(h.bias.as_slice().expect("standard layout"));
        }
        out
    }
}

/// Encoded sequence with what the backward pass needs.
struct Encoded {
    out: Array1<f64>,
    norm: f64,
}

impl BiEncoderModel {
    pub fn new(vocab_size: usize, dim: usize, objective: Objective, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let embeddings = Array2::from_shape_simple_fn((vocab_size, dim), || normal.sample(&mut rng));
        let mut model = Self {
            dim,
            objective,
            embeddings,
            head: None,
            threshold: 0.5,
            seed,
        };
        if objective == Objective::Softmax {
            model.head = Some(Self::init_head(dim, &mut rng));
        }
        model
    }

    fn init_head(dim: usize, rng: &mut ChaCha8Rng) -> SoftmaxHead {
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        SoftmaxHead {
            weight: Array2::from_shape_simple_fn((3 * dim, 2), || normal.sample(rng)),
            bias: Array1::zeros(2),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.nrows()
    }

    fn encode_inner(&self, seq: &TokenSeq) -> Result<Encoded> {
        if seq.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut mean = Array1::<f64>::zeros(self.dim);
        for &id in seq.ids() {
            let row = self.embeddings.row(id as usize);
            mean += &row;
        }
        mean /= seq.len() as f64;
        if self.objective.normalized() {
            let norm = mean.dot(&mean).sqrt().max(NORM_FLOOR);
            Ok(Encoded {
                out: mean / norm,
                norm,
            })
        } else {
            Ok(Encoded { out: mean, norm: 1.0 })
        }
    }

    /// Mean of the token embeddings, L2-normalized for the contrastive and
    /// IRNS objectives.
    pub fn encode(&self, seq: &TokenSeq) -> Result<Array1<f64>> {
        Ok(self.encode_inner(seq)?.out)
    }

    /// Relevance score in `[0, 1]` from two already-encoded vectors.
    pub fn score_vectors(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        match &self.head {
            Some(head) if self.objective == Objective::Softmax => {
                let p = softmax2(&head_logits(head, u, v));
                p[1]
            }
            _ => ((u.dot(&v) + 1.0) / 2.0).clamp(0.0, 1.0),
        }
    }

    pub fn score_pair(&self, item: &TokenSeq, kp: &TokenSeq) -> Result<f64> {
        let u = self.encode(item)?;
        let v = self.encode(kp)?;
        Ok(self.score_vectors(u.view(), v.view()))
    }

    pub fn passes(&self, score: f64) -> bool {
        score >= self.threshold
    }

    /// Sets the decision threshold to the F1-optimal cut on `validation`.
    pub fn calibrate(&mut self, validation: &[LabeledPair]) -> Result<f64> {
        let mut samples = Vec::with_capacity(validation.len());
        for p in validation {
            samples.push((self.score_pair(&p.item, &p.keyphrase)?, p.label));
        }
        self.threshold = crate::eval::calibrate_threshold(&samples);
        Ok(self.threshold)
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embeddings.as_slice_mut().expect("standard layout")];
        if let Some(h) = &mut self.head {
            out.push(h.weight.as_slice_mut().expect("standard layout"));
            out.push(h.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    fn accumulate(&self, grads: &mut Grads, seq: &TokenSeq, enc: &Encoded, g_out: &Array1<f64>) {
        let g_mean = if self.objective.normalized() {
            let u = &enc.out;
            (g_out - &(u * u.dot(g_out))) / enc.norm
        } else {
            g_out.clone()
        };
        let scale = 1.0 / seq.len() as f64;
        for &id in seq.ids() {
            let mut row = grads.embeddings.row_mut(id as usize);
            row.scaled_add(scale, &g_mean);
        }
    }

    /// Mean batch loss and its gradient for the model's objective.
    fn loss_and_grad(&self, batch: BatchRef<'_>, loss: &LossParams) -> Result<(f64, Grads)> {
        let mut grads = Grads::zeros_like(self);
        let value = match (self.objective, batch) {
            (Objective::Contrastive, BatchRef::Labeled(pairs)) => {
                let n = pairs.len() as f64;
                let mut total = 0.0;
                for p in pairs {
                    let eu = self.encode_inner(&p.item)?;
                    let ev = self.encode_inner(&p.keyphrase)?;
                    let diff = &eu.out - &ev.out;
                    let d = diff.dot(&diff).sqrt();
                    let g = if p.label {
                        total += d * d;
                        diff * (2.0 / n)
                    } else if d < loss.margin {
                        total += (loss.margin - d).powi(2);
                        diff * (-2.0 * (loss.margin - d) / d.max(NORM_FLOOR) / n)
                    } else {
                        continue;
                    };
                    self.accumulate(&mut grads, &p.item, &eu, &g);
                    self.accumulate(&mut grads, &p.keyphrase, &ev, &(-g));
                }
                total / n
            }
            (Objective::Softmax, BatchRef::Labeled(pairs)) => {
                let head = self.head.as_ref().ok_or_else(|| Error::Data("softmax model without head".into()))?;
                let n = pairs.len() as f64;
                let d = self.dim;
                let mut total = 0.0;
                for p in pairs {
                    let eu = self.encode_inner(&p.item)?;
                    let ev = self.encode_inner(&p.keyphrase)?;
                    let probs = softmax2(&head_logits(head, eu.out.view(), ev.out.view()));
                    let y = p.label as usize;
                    total -= probs[y].max(1e-300).ln();
                    let mut dz = probs;
                    dz[y] -= 1.0;
                    dz /= n;
                    let feats = features(eu.out.view(), ev.out.view());
                    let gh = grads.head.as_mut().expect("head grads");
                    for (r, f) in feats.iter().enumerate() {
                        gh.weight[[r, 0]] += f * dz[0];
                        gh.weight[[r, 1]] += f * dz[1];
                    }
                    gh.bias += &dz;
                    let df = head.weight.dot(&dz);
                    let sign = (&eu.out - &ev.out).mapv(f64::signum);
                    let dabs = &df.slice(s![2 * d..]) * &sign;
                    let du = &df.slice(s![..d]) + &dabs;
                    let dv = &df.slice(s![d..2 * d]) - &dabs;
                    self.accumulate(&mut grads, &p.item, &eu, &du);
                    self.accumulate(&mut grads, &p.keyphrase, &ev, &dv);
                }
                total / n
            }
            (Objective::Irns, BatchRef::Positives(pairs)) => {
                let b = pairs.len();
                let tau = loss.temperature;
                let eu: Vec<Encoded> = pairs.iter().map(|p| self.encode_inner(&p.item)).collect::<Result<_>>()?;
                let ev: Vec<Encoded> = pairs.iter().map(|p| self.encode_inner(&p.keyphrase)).collect::<Result<_>>()?;
                let u = stack(&eu, self.dim);
                let v = stack(&ev, self.dim);
                let logits = u.dot(&v.t()) / tau;
                let mut ds = Array2::<f64>::zeros((b, b));
                let mut total = 0.0;
                for i in 0..b {
                    let row = logits.row(i);
                    let max = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
                    let exps = row.mapv(|x| (x - max).exp());
                    let z = exps.sum();
                    total += max + z.ln() - row[i];
                    let mut drow = ds.row_mut(i);
                    drow.assign(&(exps / z / b as f64));
                    drow[i] -= 1.0 / b as f64;
                }
                let du = ds.dot(&v) / tau;
                let dv = ds.t().dot(&u) / tau;
                for (i, p) in pairs.iter().enumerate() {
                    self.accumulate(&mut grads, &p.item, &eu[i], &du.row(i).to_owned());
                    self.accumulate(&mut grads, &p.keyphrase, &ev[i], &dv.row(i).to_owned());
                }
                total / b as f64
            }
            (obj, _) => {
                return Err(Error::ObjectiveMismatch(format!(
                    "objective {} cannot train on this data",
                    obj.name()
                )))
            }
        };
        Ok((value, grads))
    }

    fn loss(&self, batch: BatchRef<'_>, loss: &LossParams) -> Result<f64> {
        Ok(self.loss_and_grad(batch, loss)?.0)
    }

    /// Mini-batch SGD. Returns the mean training loss of every epoch.
    pub fn train(&mut self, data: &BiTrainData, cfg: &BiTrainConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        match (cfg.objective, data) {
            (Objective::Irns, BiTrainData::Positives(_))
            | (Objective::Contrastive | Objective::Softmax, BiTrainData::Labeled(_)) => {}
            (obj, _) => {
                return Err(Error::ObjectiveMismatch(format!(
                    "{} needs {} data",
                    obj.name(),
                    if obj == Objective::Irns { "positive-only" } else { "labeled" }
                )))
            }
        }
        if self.objective != cfg.objective {
            self.objective = cfg.objective;
        }
        if self.objective == Objective::Softmax && self.head.is_none() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x4EAD);
            self.head = Some(Self::init_head(self.dim, &mut rng));
        }
        let n = match data {
            BiTrainData::Labeled(v) => v.len(),
            BiTrainData::Positives(v) => v.len(),
        };
        if n == 0 {
            return Err(Error::Data("empty training set".into()));
        }
        let loss_params = cfg.loss_params();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut trace = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                let (value, grads) = match data {
                    BiTrainData::Labeled(v) => {
                        let batch: Vec<LabeledPair> = chunk.iter().map(|&i| v[i].clone()).collect();
                        self.loss_and_grad(BatchRef::Labeled(&batch), &loss_params)?
                    }
                    BiTrainData::Positives(v) => {
                        let batch: Vec<PositivePair> = chunk.iter().map(|&i| v[i].clone()).collect();
                        self.loss_and_grad(BatchRef::Positives(&batch), &loss_params)?
                    }
                };
                if !value.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                sum += value;
                batches += 1;
                let lr = cfg.lr;
                for (p, g) in self.param_slices_mut().into_iter().zip(grads.slices()) {
                    p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
                }
            }
            let mean = sum / batches as f64;
            if !mean.is_finite() || self.embeddings.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            trace.push(mean);
        }
        Ok(trace)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BatchRef<'a> {
    Labeled(&'a [LabeledPair]),
    Positives(&'a [PositivePair]),
}

fn stack(rows: &[Encoded], dim: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), dim));
    for (mut r, e) in m.axis_iter_mut(Axis(0)).zip(rows) {
        r.assign(&e.out);
    }
    m
}

fn features(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Array1<f64> {
    let abs = (&u - &v).mapv(f64::abs);
    ndarray::concatenate![Axis(0), u, v, abs]
}

fn head_logits(head: &SoftmaxHead, u: ArrayView1<f64>, v: ArrayView1<f64>) -> Array1<f64> {
    features(u, v).dot(&head.weight) + &head.bias
}

fn softmax2(z: &Array1<f64>) -> Array1<f64> {
    let m = z[0].max(z[1]);
    let e = z.mapv(|x| (x - m).exp());
    let s = e.sum();
    e / s
}

/// Loss of `batch` under `model` with its current objective.
pub fn batch_loss(model: &BiEncoderModel, batch: BatchRef<'_>, loss: &LossParams) -> Result<f64> {
    model.loss(batch, loss)
}

/// Max symmetric relative error `|g_a − g_n| / max(1e-8, |g_a| + |g_n|)`
/// between the analytic gradient and central finite differences over every
/// parameter.
pub fn grad_check(model: &BiEncoderModel, objective: Objective, probe: BatchRef<'_>, eps: f64) -> Result<f64> {
    grad_check_scaled(model, objective, probe, eps, &LossParams::default(), 1.0)
}

/// [`grad_check`] with explicit loss parameters and the analytic gradient
/// multiplied by `analytic_scale` (1.0 for a real check; other values
/// demonstrate that a wrong backward pass is flagged).
pub fn grad_check_scaled(
    model: &BiEncoderModel,
    objective: Objective,
    probe: BatchRef<'_>,
    eps: f64,
    loss: &LossParams,
    analytic_scale: f64,
) -> Result<f64> {
    let mut m = model.clone();
    m.objective = objective;
    if objective == Objective::Softmax && m.head.is_none() {
        let mut rng = ChaCha8Rng::seed_from_u64(m.seed ^ 0x4EAD);
        m.head = Some(BiEncoderModel::init_head(m.dim, &mut rng));
    }
    let (_, grads) = m.loss_and_grad(probe, loss)?;
    let analytic: Vec<Vec<f64>> = grads.slices().into_iter().map(<[f64]>::to_vec).collect();
    let mut worst = 0.0f64;
    for (t, ga) in analytic.iter().enumerate() {
        for (i, &g) in ga.iter().enumerate() {
            let orig = m.param_slices_mut()[t][i];
            m.param_slices_mut()[t][i] = orig + eps;
            let plus = m.loss(probe, loss)?;
            m.param_slices_mut()[t][i] = orig - eps;
            let minus = m.loss(probe, loss)?;
            m.param_slices_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(g * analytic_scale, numeric));
        }
    }
    Ok(worst)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}
