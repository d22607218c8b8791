use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::CrossEncoderConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossEncoderParams {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub head_w: Array1<f64>,
    pub head_b: Array1<f64>,
}

macro_rules! layer_fields {
    ($l:expr, $m:ident) => {
        [
            $l.ln1_g.$m(),
            $l.ln1_b.$m(),
            $l.wq.$m(),
            $l.bq.$m(),
            $l.wk.$m(),
            $l.bk.$m(),
            $l.wv.$m(),
            $l.bv.$m(),
            $l.wo.$m(),
            $l.bo.$m(),
            $l.ln2_g.$m(),
            $l.ln2_b.$m(),
            $l.w1.$m(),
            $l.b1.$m(),
            $l.w2.$m(),
            $l.b2.$m(),
        ]
    };
}

impl CrossEncoderParams {
    pub fn init(cfg: &CrossEncoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.init_std).expect("valid std");
        let mut mat = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || normal.sample(&mut rng));
        let (h, f) = (cfg.hidden, cfg.ffn_dim);
        let tok_emb = mat(cfg.vocab_size, h);
        let pos_emb = mat(cfg.max_seq_len, h);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                ln1_g: Array1::ones(h),
                ln1_b: Array1::zeros(h),
                wq: mat(h, h),
                bq: Array1::zeros(h),
                wk: mat(h, h),
                bk: Array1::zeros(h),
                wv: mat(h, h),
                bv: Array1::zeros(h),
                wo: mat(h, h),
                bo: Array1::zeros(h),
                ln2_g: Array1::ones(h),
                ln2_b: Array1::zeros(h),
                w1: mat(h, f),
                b1: Array1::zeros(f),
                w2: mat(f, h),
                b2: Array1::zeros(h),
            })
            .collect();
        let head_w = mat(1, h).into_shape_with_order(h).expect("row vector");
        Self {
            tok_emb,
            pos_emb,
            layers,
            lnf_g: Array1::ones(h),
            lnf_b: Array1::zeros(h),
            head_w,
            head_b: Array1::zeros(1),
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        let mut z = other.clone();
        for s in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }

    /// Tensors in a fixed order, shared by optimizer state, gradient checks
    /// and checkpoints.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.tok_emb.as_slice().unwrap(), self.pos_emb.as_slice().unwrap()];
        for l in &self.layers {
            out.extend(layer_fields!(l, as_slice).into_iter().map(Option::unwrap));
        }
        out.extend([
            self.lnf_g.as_slice().unwrap(),
            self.lnf_b.as_slice().unwrap(),
            self.head_w.as_slice().unwrap(),
            self.head_b.as_slice().unwrap(),
        ]);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.tok_emb.as_slice_mut().unwrap(),
            self.pos_emb.as_slice_mut().unwrap(),
        ];
        for l in &mut self.layers {
            out.extend(layer_fields!(l, as_slice_mut).into_iter().map(Option::unwrap));
        }
        out.extend([
            self.lnf_g.as_slice_mut().unwrap(),
            self.lnf_b.as_slice_mut().unwrap(),
            self.head_w.as_slice_mut().unwrap(),
            self.head_b.as_slice_mut().unwrap(),
        ]);
        out
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}
