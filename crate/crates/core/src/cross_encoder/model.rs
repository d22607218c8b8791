use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{CrossEncoderConfig, CrossTrainConfig};
use super::params::{CrossEncoderParams, LayerParams};
use crate::error::{Error, Result};
use crate::text::{TokenSeq, CLS};

const LN_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4;
const PREDICT_CHUNK: usize = 64;

/// The gate of tanh-approximated GELU, `0.5 * (1 + tanh(y)) = sigmoid(2y)`
/// with `y = c * (x + 0.044715 x^3)`; `gelu(x) = x * gate(x)`.
fn gelu_gate(x: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * GELU_C * (x + 0.044715 * x * x * x)).exp())
}

fn gelu_grad(x: f64, gate: f64) -> f64 {
    gate + 2.0 * x * gate * (1.0 - gate) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `softplus(z) − y·z`, the binary cross-entropy of logit `z`.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn ln_forward(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let h = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / h;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / h;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * &inv_std.view().insert_axis(Axis(1));
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

fn ln_backward(dy: &Array2<f64>, cache: &LnCache, g: &Array1<f64>, dg: &mut Array1<f64>, db: &mut Array1<f64>) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let h = dy.ncols() as f64;
    let sum_d = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
    let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
    let inner = &dxhat * h - &sum_d - &(&cache.xhat * &sum_dx);
    inner * &(&cache.inv_std / h).insert_axis(Axis(1))
}

fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = b.broadcast((x.nrows(), w.ncols())).expect("bias width").to_owned();
    ndarray::linalg::general_mat_mul(1.0, x, w, 1.0, &mut out);
    out
}

fn linear_backward(x: &Array2<f64>, dy: &Array2<f64>, w: &Array2<f64>, dw: &mut Array2<f64>, db: &mut Array1<f64>) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &x| a.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// One `t × t` matrix per (sequence, head), sequence-major.
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln2: LnCache,
    bn: Array2<f64>,
    h1: Array2<f64>,
    gate: Array2<f64>,
    act: Array2<f64>,
}

struct Forward {
    spans: Vec<(usize, usize)>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    cls: Array2<f64>,
    logits: Array1<f64>,
}

/// Transformer encoder over `[CLS] keyphrase [SEP] category [SEP] title`
/// with a sigmoid head on the CLS position.
///
/// Blocks are pre-norm (`x + attn(ln(x))`, `x + ffn(ln(x))`) with learned
/// absolute positions and tanh-approximated GELU. Batches are packed: all
/// tokens of a batch form one `n × hidden` matrix for the dense layers and
/// attention runs per sequence span, so no padding is involved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossEncoderModel {
    pub config: CrossEncoderConfig,
    pub params: CrossEncoderParams,
    /// Pass/fail cut on the output probability.
    pub threshold: f64,
}

impl CrossEncoderModel {
    pub fn new(config: CrossEncoderConfig) -> Result<Self> {
        config.validate()?;
        let params = CrossEncoderParams::init(&config);
        Ok(Self {
            config,
            params,
            threshold: 0.5,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn validate_seq(&self, seq: &TokenSeq) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::EmptyInput);
        }
        if seq.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: seq.len(),
                max: self.config.max_seq_len,
            });
        }
        if seq.ids()[0] != CLS {
            return Err(Error::MissingCls);
        }
        if let Some(&bad) = seq.ids().iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::Data(format!("token id {bad} outside vocab of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    fn forward_packed(&self, seqs: &[&TokenSeq]) -> Forward {
        let cfg = &self.config;
        let p = &self.params;
        let (hid, heads, dh) = (cfg.hidden, cfg.heads, cfg.head_dim());
        let mut spans = Vec::with_capacity(seqs.len());
        let mut n = 0;
        for s in seqs {
            spans.push((n, s.len()));
            n += s.len();
        }
        let mut x = Array2::<f64>::zeros((n, hid));
        for (seq, &(o, _)) in seqs.iter().zip(&spans) {
            for (pos, &id) in seq.ids().iter().enumerate() {
                let mut row = x.row_mut(o + pos);
                row.assign(&p.tok_emb.row(id as usize));
                row += &p.pos_emb.row(pos);
            }
        }
        let scale = 1.0 / (dh as f64).sqrt();
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in &p.layers {
            let (a, ln1) = ln_forward(&x, &l.ln1_g, &l.ln1_b);
            let q = linear(&a, &l.wq, &l.bq);
            let k = linear(&a, &l.wk, &l.bk);
            let v = linear(&a, &l.wv, &l.bv);
            let mut ctx = Array2::<f64>::zeros((n, hid));
            let mut probs = Vec::with_capacity(spans.len() * heads);
            for &(o, t) in &spans {
                for h in 0..heads {
                    let (c0, c1) = (h * dh, (h + 1) * dh);
                    let qh = q.slice(s![o..o + t, c0..c1]);
                    let kh = k.slice(s![o..o + t, c0..c1]);
                    let vh = v.slice(s![o..o + t, c0..c1]);
                    let mut sc = qh.dot(&kh.t()) * scale;
                    softmax_rows(&mut sc);
                    ctx.slice_mut(s![o..o + t, c0..c1]).assign(&sc.dot(&vh));
                    probs.push(sc);
                }
            }
            x += &linear(&ctx, &l.wo, &l.bo);
            let (bn, ln2) = ln_forward(&x, &l.ln2_g, &l.ln2_b);
            let h1 = linear(&bn, &l.w1, &l.b1);
            let gate = h1.mapv(gelu_gate);
            let act = &h1 * &gate;
            x += &linear(&act, &l.w2, &l.b2);
            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                ctx,
                ln2,
                bn,
                h1,
                gate,
                act,
            });
        }
        let cls_rows: Vec<usize> = spans.iter().map(|&(o, _)| o).collect();
        let cls_in = x.select(Axis(0), &cls_rows);
        let (cls, lnf) = ln_forward(&cls_in, &p.lnf_g, &p.lnf_b);
        let logits = cls.dot(&p.head_w) + p.head_b[0];
        Forward {
            spans,
            layers,
            lnf,
            cls,
            logits,
        }
    }

    fn backward(&self, seqs: &[&TokenSeq], fwd: &Forward, dlogits: &Array1<f64>) -> CrossEncoderParams {
        let cfg = &self.config;
        let p = &self.params;
        let (heads, dh) = (cfg.heads, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let mut g = CrossEncoderParams::zeros_like(p);

        g.head_w += &fwd.cls.t().dot(dlogits);
        g.head_b[0] += dlogits.sum();
        let dcls = dlogits.view().insert_axis(Axis(1)).dot(&p.head_w.view().insert_axis(Axis(0)));
        let dcls_in = ln_backward(&dcls, &fwd.lnf, &p.lnf_g, &mut g.lnf_g, &mut g.lnf_b);
        let n = fwd.spans.last().map(|&(o, t)| o + t).unwrap_or(0);
        let mut dx = Array2::<f64>::zeros((n, cfg.hidden));
        for (i, &(o, _)) in fwd.spans.iter().enumerate() {
            dx.row_mut(o).assign(&dcls_in.row(i));
        }

        for (li, (l, c)) in p.layers.iter().zip(&fwd.layers).enumerate().rev() {
            let gl: &mut LayerParams = &mut g.layers[li];
            // FFN sub-block
            let dact = linear_backward(&c.act, &dx, &l.w2, &mut gl.w2, &mut gl.b2);
            let mut dh1 = dact;
            Zip::from(&mut dh1)
                .and(&c.h1)
                .and(&c.gate)
                .for_each(|d, &h, &g| *d *= gelu_grad(h, g));
            let dbn = linear_backward(&c.bn, &dh1, &l.w1, &mut gl.w1, &mut gl.b1);
            dx += &ln_backward(&dbn, &c.ln2, &l.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);
            // attention sub-block
            let dctx = linear_backward(&c.ctx, &dx, &l.wo, &mut gl.wo, &mut gl.bo);
            let mut dq = Array2::<f64>::zeros(c.q.raw_dim());
            let mut dk = Array2::<f64>::zeros(c.k.raw_dim());
            let mut dv = Array2::<f64>::zeros(c.v.raw_dim());
            for (si, &(o, t)) in fwd.spans.iter().enumerate() {
                for h in 0..heads {
                    let (c0, c1) = (h * dh, (h + 1) * dh);
                    let probs = &c.probs[si * heads + h];
                    let dctx_h = dctx.slice(s![o..o + t, c0..c1]);
                    let qh = c.q.slice(s![o..o + t, c0..c1]);
                    let kh = c.k.slice(s![o..o + t, c0..c1]);
                    let vh = c.v.slice(s![o..o + t, c0..c1]);
                    let dp = dctx_h.dot(&vh.t());
                    dv.slice_mut(s![o..o + t, c0..c1]).assign(&probs.t().dot(&dctx_h));
                    let row_dot = (&dp * probs).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ds = (dp - &row_dot) * probs * scale;
                    dq.slice_mut(s![o..o + t, c0..c1]).assign(&ds.dot(&kh));
                    dk.slice_mut(s![o..o + t, c0..c1]).assign(&ds.t().dot(&qh));
                }
            }
            let mut da = linear_backward(&c.a, &dq, &l.wq, &mut gl.wq, &mut gl.bq);
            da += &linear_backward(&c.a, &dk, &l.wk, &mut gl.wk, &mut gl.bk);
            da += &linear_backward(&c.a, &dv, &l.wv, &mut gl.wv, &mut gl.bv);
            dx += &ln_backward(&da, &c.ln1, &l.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
        }

        for (seq, &(o, _)) in seqs.iter().zip(&fwd.spans) {
            for (pos, &id) in seq.ids().iter().enumerate() {
                let d = dx.row(o + pos);
                let mut te = g.tok_emb.row_mut(id as usize);
                te += &d;
                let mut pe = g.pos_emb.row_mut(pos);
                pe += &d;
            }
        }
        g
    }

    /// Probability that Search accepts the pair encoded by `seq`.
    pub fn forward(&self, seq: &TokenSeq) -> Result<f64> {
        self.validate_seq(seq)?;
        let fwd = self.forward_packed(&[seq]);
        Ok(sigmoid(fwd.logits[0]))
    }

    /// Per-element equal to [`forward`](Self::forward); sequences are packed
    /// in chunks for throughput.
    pub fn predict_batch(&self, seqs: &[TokenSeq]) -> Result<Vec<f64>> {
        for s in seqs {
            self.validate_seq(s)?;
        }
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(PREDICT_CHUNK) {
            let refs: Vec<&TokenSeq> = chunk.iter().collect();
            let fwd = self.forward_packed(&refs);
            out.extend(fwd.logits.iter().map(|&z| sigmoid(z)));
        }
        Ok(out)
    }

    pub fn passes(&self, prob: f64) -> bool {
        prob >= self.threshold
    }

    /// Attention weights of every layer and head for one sequence, layer
    /// major.
    pub fn attention_maps(&self, seq: &TokenSeq) -> Result<Vec<Array2<f64>>> {
        self.validate_seq(seq)?;
        let fwd = self.forward_packed(&[seq]);
        Ok(fwd.layers.into_iter().flat_map(|l| l.probs).collect())
    }

    /// Normalized activations (before scale and offset) of every layer norm.
    pub fn layer_norm_activations(&self, seq: &TokenSeq) -> Result<Vec<Array2<f64>>> {
        self.validate_seq(seq)?;
        let fwd = self.forward_packed(&[seq]);
        let mut out: Vec<Array2<f64>> = fwd.layers.into_iter().flat_map(|l| [l.ln1.xhat, l.ln2.xhat]).collect();
        out.push(fwd.lnf.xhat);
        Ok(out)
    }

    /// Mean binary cross-entropy and its gradient.
    pub(crate) fn loss_and_grad(&self, seqs: &[&TokenSeq], labels: &[f64]) -> (f64, CrossEncoderParams) {
        let fwd = self.forward_packed(seqs);
        let b = seqs.len() as f64;
        let mut loss = 0.0;
        let mut dlogits = Array1::<f64>::zeros(seqs.len());
        for (i, (&z, &y)) in fwd.logits.iter().zip(labels).enumerate() {
            loss += bce_with_logit(z, y);
            dlogits[i] = (sigmoid(z) - y) / b;
        }
        let grads = self.backward(seqs, &fwd, &dlogits);
        (loss / b, grads)
    }

    pub(crate) fn loss(&self, seqs: &[&TokenSeq], labels: &[f64]) -> f64 {
        let fwd = self.forward_packed(seqs);
        fwd.logits
            .iter()
            .zip(labels)
            .map(|(&z, &y)| bce_with_logit(z, y))
            .sum::<f64>()
            / seqs.len() as f64
    }

    /// Mini-batch Adam on binary cross-entropy. Returns the mean loss of
    /// each epoch.
    pub fn train(&mut self, pairs: &[(TokenSeq, bool)], cfg: &CrossTrainConfig) -> Result<Vec<f64>> {
        self.train_with(pairs, cfg, |_, _| {})
    }

    /// [`train`](Self::train) with a callback after every epoch.
    pub fn train_with(
        &mut self,
        pairs: &[(TokenSeq, bool)],
        cfg: &CrossTrainConfig,
        mut on_epoch: impl FnMut(usize, f64),
    ) -> Result<Vec<f64>> {
        cfg.validate()?;
        if pairs.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        for (s, _) in pairs {
            self.validate_seq(s)?;
        }
        let mut adam = Adam::new(&self.params, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut trace = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let (mut sum, mut batches) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let seqs: Vec<&TokenSeq> = chunk.iter().map(|&i| &pairs[i].0).collect();
                let labels: Vec<f64> = chunk.iter().map(|&i| pairs[i].1 as u8 as f64).collect();
                let (loss, grads) = self.loss_and_grad(&seqs, &labels);
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                adam.step(&mut self.params, &grads);
                sum += loss;
                batches += 1;
            }
            if !self.params.all_finite() {
                return Err(Error::Divergence { epoch });
            }
            let mean = sum / batches as f64;
            on_epoch(epoch, mean);
            trace.push(mean);
        }
        Ok(trace)
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    fn new(params: &CrossEncoderParams, cfg: &CrossTrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr: cfg.lr,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }

    fn step(&mut self, params: &mut CrossEncoderParams, grads: &CrossEncoderParams) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        let (b1, b2, lr, eps) = (self.b1, self.b2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Below this, both gradients are at finite-difference round-off level.
/// The key bias, for one, has an exactly zero gradient since softmax is
/// shift invariant.
const GRAD_FLOOR: f64 = 1e-7;

/// Max symmetric relative error between the analytic gradient and central
/// finite differences, over every parameter, for the mean BCE of `batch`.
pub fn grad_check(model: &CrossEncoderModel, batch: &[(TokenSeq, bool)], eps: f64) -> Result<f64> {
    for (s, _) in batch {
        model.validate_seq(s)?;
    }
    let seqs: Vec<&TokenSeq> = batch.iter().map(|(s, _)| s).collect();
    let labels: Vec<f64> = batch.iter().map(|&(_, y)| y as u8 as f64).collect();
    let (_, grads) = model.loss_and_grad(&seqs, &labels);
    let analytic: Vec<Vec<f64>> = grads.slices().into_iter().map(<[f64]>::to_vec).collect();
    let mut m = model.clone();
    let mut worst = 0.0f64;
    for (t, ga) in analytic.iter().enumerate() {
        for (i, &g) in ga.iter().enumerate() {
            let orig = m.params.slices()[t][i];
            m.params.slices_mut()[t][i] = orig + eps;
            let plus = m.loss(&seqs, &labels);
            m.params.slices_mut()[t][i] = orig - eps;
            let minus = m.loss(&seqs, &labels);
            m.params.slices_mut()[t][i] = orig;
            let gn = (plus - minus) / (2.0 * eps);
            worst = worst.max((g - gn).abs() / (g.abs() + gn.abs()).max(GRAD_FLOOR));
        }
    }
    Ok(worst)
}
