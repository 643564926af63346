//! Parameter storage. Gradients and optimizer moments reuse the same
//! [`Params`] layout so every update is a zip over [`Params::tensors_mut`].

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
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

/// Two-layer evidence classifier: `gelu(h W1 + b1) . w2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    /// d_model x vocab, untied from `tok_emb`.
    pub lm_w: Array2<f64>,
    pub lm_b: Array1<f64>,
    /// d_model x 3 over the first position.
    pub qtype_w: Array2<f64>,
    pub qtype_b: Array1<f64>,
    /// d_model x 2: column 0 scores starts, column 1 ends.
    pub span_w: Array2<f64>,
    pub span_b: Array1<f64>,
    pub para: EvidenceHead,
    pub sent: EvidenceHead,
}

pub const LM_HEAD_TENSORS: [&str; 2] = ["lm_head.w", "lm_head.b"];

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| gaussian(rng) * std)
}

fn normal1(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| gaussian(rng) * std)
}

/// Box-Muller draw.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl EvidenceHead {
    fn init(d: usize, rng: &mut ChaCha8Rng, std: f64) -> Self {
        Self {
            w1: normal(rng, d, d, std),
            b1: Array1::zeros(d),
            w2: normal1(rng, d, std),
            b2: Array1::zeros(1),
        }
    }

    fn zeros(d: usize) -> Self {
        Self {
            w1: Array2::zeros((d, d)),
            b1: Array1::zeros(d),
            w2: Array1::zeros(d),
            b2: Array1::zeros(1),
        }
    }
}

impl Params {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f, n) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let std = 0.02_f64.max(1.0 / (d as f64).sqrt() * 0.5);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                ln1_g: Array1::ones(d),
                ln1_b: Array1::zeros(d),
                wq: normal(&mut rng, d, d, std),
                bq: Array1::zeros(d),
                wk: normal(&mut rng, d, d, std),
                bk: Array1::zeros(d),
                wv: normal(&mut rng, d, d, std),
                bv: Array1::zeros(d),
                wo: normal(&mut rng, d, d, std),
                bo: Array1::zeros(d),
                ln2_g: Array1::ones(d),
                ln2_b: Array1::zeros(d),
                w1: normal(&mut rng, d, f, std),
                b1: Array1::zeros(f),
                w2: normal(&mut rng, f, d, std),
                b2: Array1::zeros(d),
            })
            .collect();
        Self {
            tok_emb: normal(&mut rng, n, d, 1.0 / (d as f64).sqrt()),
            pos_emb: normal(&mut rng, cfg.max_seq_len, d, 0.5 / (d as f64).sqrt()),
            layers,
            lnf_g: Array1::ones(d),
            lnf_b: Array1::zeros(d),
            lm_w: normal(&mut rng, d, n, std),
            lm_b: Array1::zeros(n),
            qtype_w: normal(&mut rng, d, 3, std),
            qtype_b: Array1::zeros(3),
            span_w: normal(&mut rng, d, 2, std),
            span_b: Array1::zeros(2),
            para: EvidenceHead::init(d, &mut rng, std),
            sent: EvidenceHead::init(d, &mut rng, std),
        }
    }

    /// Zero tensors with the same layout as `self`.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, f, n) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let z2 = |r, c| Array2::zeros((r, c));
        let z1 = |k| Array1::zeros(k);
        Self {
            tok_emb: z2(n, d),
            pos_emb: z2(cfg.max_seq_len, d),
            layers: (0..cfg.n_layers)
                .map(|_| LayerParams {
                    ln1_g: z1(d),
                    ln1_b: z1(d),
                    wq: z2(d, d),
                    bq: z1(d),
                    wk: z2(d, d),
                    bk: z1(d),
                    wv: z2(d, d),
                    bv: z1(d),
                    wo: z2(d, d),
                    bo: z1(d),
                    ln2_g: z1(d),
                    ln2_b: z1(d),
                    w1: z2(d, f),
                    b1: z1(f),
                    w2: z2(f, d),
                    b2: z1(d),
                })
                .collect(),
            lnf_g: z1(d),
            lnf_b: z1(d),
            lm_w: z2(d, n),
            lm_b: z1(n),
            qtype_w: z2(d, 3),
            qtype_b: z1(3),
            span_w: z2(d, 2),
            span_b: z1(2),
            para: EvidenceHead::zeros(d),
            sent: EvidenceHead::zeros(d),
        }
    }

    /// Named views in declaration order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewD<'_, f64>)> = vec![
            ("tok_emb".into(), self.tok_emb.view().into_dyn()),
            ("pos_emb".into(), self.pos_emb.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.extend([
                (p("ln1_g"), l.ln1_g.view().into_dyn()),
                (p("ln1_b"), l.ln1_b.view().into_dyn()),
                (p("wq"), l.wq.view().into_dyn()),
                (p("bq"), l.bq.view().into_dyn()),
                (p("wk"), l.wk.view().into_dyn()),
                (p("bk"), l.bk.view().into_dyn()),
                (p("wv"), l.wv.view().into_dyn()),
                (p("bv"), l.bv.view().into_dyn()),
                (p("wo"), l.wo.view().into_dyn()),
                (p("bo"), l.bo.view().into_dyn()),
                (p("ln2_g"), l.ln2_g.view().into_dyn()),
                (p("ln2_b"), l.ln2_b.view().into_dyn()),
                (p("w1"), l.w1.view().into_dyn()),
                (p("b1"), l.b1.view().into_dyn()),
                (p("w2"), l.w2.view().into_dyn()),
                (p("b2"), l.b2.view().into_dyn()),
            ]);
        }
        out.extend([
            ("lnf_g".into(), self.lnf_g.view().into_dyn()),
            ("lnf_b".into(), self.lnf_b.view().into_dyn()),
            ("lm_head.w".into(), self.lm_w.view().into_dyn()),
            ("lm_head.b".into(), self.lm_b.view().into_dyn()),
            ("qtype.w".into(), self.qtype_w.view().into_dyn()),
            ("qtype.b".into(), self.qtype_b.view().into_dyn()),
            ("span.w".into(), self.span_w.view().into_dyn()),
            ("span.b".into(), self.span_b.view().into_dyn()),
            ("para.w1".into(), self.para.w1.view().into_dyn()),
            ("para.b1".into(), self.para.b1.view().into_dyn()),
            ("para.w2".into(), self.para.w2.view().into_dyn()),
            ("para.b2".into(), self.para.b2.view().into_dyn()),
            ("sent.w1".into(), self.sent.w1.view().into_dyn()),
            ("sent.b1".into(), self.sent.b1.view().into_dyn()),
            ("sent.w2".into(), self.sent.w2.view().into_dyn()),
            ("sent.b2".into(), self.sent.b2.view().into_dyn()),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out: Vec<(String, ArrayViewMutD<'_, f64>)> = vec![
            ("tok_emb".into(), self.tok_emb.view_mut().into_dyn()),
            ("pos_emb".into(), self.pos_emb.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.extend([
                (p("ln1_g"), l.ln1_g.view_mut().into_dyn()),
                (p("ln1_b"), l.ln1_b.view_mut().into_dyn()),
                (p("wq"), l.wq.view_mut().into_dyn()),
                (p("bq"), l.bq.view_mut().into_dyn()),
                (p("wk"), l.wk.view_mut().into_dyn()),
                (p("bk"), l.bk.view_mut().into_dyn()),
                (p("wv"), l.wv.view_mut().into_dyn()),
                (p("bv"), l.bv.view_mut().into_dyn()),
                (p("wo"), l.wo.view_mut().into_dyn()),
                (p("bo"), l.bo.view_mut().into_dyn()),
                (p("ln2_g"), l.ln2_g.view_mut().into_dyn()),
                (p("ln2_b"), l.ln2_b.view_mut().into_dyn()),
                (p("w1"), l.w1.view_mut().into_dyn()),
                (p("b1"), l.b1.view_mut().into_dyn()),
                (p("w2"), l.w2.view_mut().into_dyn()),
                (p("b2"), l.b2.view_mut().into_dyn()),
            ]);
        }
        out.extend([
            ("lnf_g".into(), self.lnf_g.view_mut().into_dyn()),
            ("lnf_b".into(), self.lnf_b.view_mut().into_dyn()),
            ("lm_head.w".into(), self.lm_w.view_mut().into_dyn()),
            ("lm_head.b".into(), self.lm_b.view_mut().into_dyn()),
            ("qtype.w".into(), self.qtype_w.view_mut().into_dyn()),
            ("qtype.b".into(), self.qtype_b.view_mut().into_dyn()),
            ("span.w".into(), self.span_w.view_mut().into_dyn()),
            ("span.b".into(), self.span_b.view_mut().into_dyn()),
            ("para.w1".into(), self.para.w1.view_mut().into_dyn()),
            ("para.b1".into(), self.para.b1.view_mut().into_dyn()),
            ("para.w2".into(), self.para.w2.view_mut().into_dyn()),
            ("para.b2".into(), self.para.b2.view_mut().into_dyn()),
            ("sent.w1".into(), self.sent.w1.view_mut().into_dyn()),
            ("sent.b1".into(), self.sent.b1.view_mut().into_dyn()),
            ("sent.w2".into(), self.sent.w2.view_mut().into_dyn()),
            ("sent.b2".into(), self.sent.b2.view_mut().into_dyn()),
        ]);
        out
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Params) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a += &b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, mut t) in self.tensors_mut() {
            t *= factor;
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_encoder_tensor(name: &str) -> bool {
        name == "tok_emb" || name == "pos_emb" || name.starts_with("layers.") || name.starts_with("lnf_")
    }

    /// Copies the encoder (embeddings, layers, final norm) from `other`.
    pub fn copy_encoder_from(&mut self, other: &Params) {
        self.tok_emb.assign(&other.tok_emb);
        self.pos_emb.assign(&other.pos_emb);
        self.layers.clone_from(&other.layers);
        self.lnf_g.assign(&other.lnf_g);
        self.lnf_b.assign(&other.lnf_b);
    }

    /// SHA-256 over the little-endian bytes of the selected tensors.
    pub fn hash_where(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut bytes = Vec::new();
        for (name, t) in self.tensors() {
            if keep(&name) {
                bytes.extend_from_slice(name.as_bytes());
                for v in t.iter() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        crate::io::sha256_hex(&bytes)
    }

    pub fn encoder_hash(&self) -> String {
        self.hash_where(Self::is_encoder_tensor)
    }

    pub fn lm_head_hash(&self) -> String {
        self.hash_where(|n| LM_HEAD_TENSORS.contains(&n))
    }
}
