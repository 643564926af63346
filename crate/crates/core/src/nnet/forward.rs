//! Pre-LayerNorm transformer encoder with hand-derived backward pass.
//!
//! Layer: `x += Attn(LN1(x))`, `x += FF(LN2(x))`, then a final LayerNorm.
//! Every forward returns a [`Cache`] that [`backward`] consumes.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::{EvidenceHead, Params};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// One model input window plus the marker positions the evidence heads read.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub ids: &'a [usize],
    pub para_positions: &'a [usize],
    pub sent_positions: &'a [usize],
}

impl<'a> ModelInput<'a> {
    pub fn tokens(ids: &'a [usize]) -> Self {
        Self {
            ids,
            para_positions: &[],
            sent_positions: &[],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outputs {
    pub hidden: Array2<f64>,
    /// seq x vocab, present when requested.
    pub lm_logits: Option<Array2<f64>>,
    pub qtype_logits: Array1<f64>,
    pub start_logits: Array1<f64>,
    pub end_logits: Array1<f64>,
    pub para_logits: Vec<f64>,
    pub sent_logits: Vec<f64>,
}

/// Loss gradients with respect to each output.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub lm_logits: Option<Array2<f64>>,
    pub qtype_logits: Array1<f64>,
    pub start_logits: Array1<f64>,
    pub end_logits: Array1<f64>,
    pub para_logits: Vec<f64>,
    pub sent_logits: Vec<f64>,
}

impl OutputGrads {
    pub fn zeros(seq: usize, n_para: usize, n_sent: usize) -> Self {
        Self {
            lm_logits: None,
            qtype_logits: Array1::zeros(3),
            start_logits: Array1::zeros(seq),
            end_logits: Array1::zeros(seq),
            para_logits: vec![0.0; n_para],
            sent_logits: vec![0.0; n_sent],
        }
    }
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: LnCache,
    h1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// attention probabilities per head
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    drop1: Option<Array2<f64>>,
    ln2: LnCache,
    h2: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
    drop2: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
struct HeadCache {
    u: Vec<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct Cache {
    layers: Vec<LayerCache>,
    lnf: LnCache,
    para: HeadCache,
    sent: HeadCache,
}

pub fn gelu(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.outer_iter_mut().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: &Array1<f64>,
    dg: &mut Array1<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let dxhat = dy * g;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dxh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_d = dxh.sum() / d;
        let mean_dx = dxh.dot(&xh) / d;
        let r = cache.rstd[i];
        Zip::from(dx.row_mut(i))
            .and(&dxh)
            .and(&xh)
            .for_each(|o, &a, &x| *o = r * (a - mean_d - x * mean_dx));
    }
    dx
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn(shape, |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

fn evidence_forward(head: &EvidenceHead, h: ArrayView1<f64>) -> (f64, Array1<f64>) {
    let u = h.dot(&head.w1) + &head.b1;
    let z = u.iter().zip(head.w2.iter()).map(|(&a, &w)| gelu(a) * w).sum::<f64>() + head.b2[0];
    (z, u)
}

/// Runs the encoder and every head. `train_rng` enables dropout when the
/// configured rate is positive.
pub fn forward(
    params: &Params,
    cfg: &ModelConfig,
    input: ModelInput<'_>,
    want_lm: bool,
    mut train_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Outputs, Cache)> {
    let ids = input.ids;
    let len = ids.len();
    if len > cfg.max_seq_len {
        return Err(Error::SegmentTooLong {
            len,
            max: cfg.max_seq_len,
        });
    }
    if let Some(&bad) = ids.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::InvalidConfig(format!("token id {bad} outside vocabulary")));
    }
    if let Some(&bad) = input
        .para_positions
        .iter()
        .chain(input.sent_positions)
        .find(|&&p| p >= len.max(1))
    {
        return Err(Error::InvalidConfig(format!("marker position {bad} outside segment")));
    }
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let key_ok: Vec<bool> = ids.iter().map(|&t| t != cfg.pad_id).collect();
    let dropout = cfg.dropout_rate > 0.0 && train_rng.is_some();

    let mut x = Array2::zeros((len, d));
    for (i, &t) in ids.iter().enumerate() {
        let mut row = x.row_mut(i);
        row += &params.tok_emb.row(t);
        row += &params.pos_emb.row(i);
    }

    let mut caches = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let (h1, ln1) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);
        let q = h1.dot(&lp.wq) + &lp.bq;
        let k = h1.dot(&lp.wk) + &lp.bk;
        let v = h1.dot(&lp.wv) + &lp.bv;
        let mut attn = Array2::zeros((len, d));
        let mut probs = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            masked_softmax_rows(&mut sc, &key_ok);
            attn.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
            probs.push(sc);
        }
        let mut o = attn.dot(&lp.wo) + &lp.bo;
        let drop1 = if dropout {
            let m = dropout_mask((len, d), cfg.dropout_rate, train_rng.as_deref_mut().unwrap());
            o *= &m;
            Some(m)
        } else {
            None
        };
        x += &o;
        let (h2, ln2) = layer_norm(&x, &lp.ln2_g, &lp.ln2_b);
        let u = h2.dot(&lp.w1) + &lp.b1;
        let g = u.mapv(gelu);
        let mut f = g.dot(&lp.w2) + &lp.b2;
        let drop2 = if dropout {
            let m = dropout_mask((len, d), cfg.dropout_rate, train_rng.as_deref_mut().unwrap());
            f *= &m;
            Some(m)
        } else {
            None
        };
        x += &f;
        caches.push(LayerCache {
            ln1,
            h1,
            q,
            k,
            v,
            probs,
            attn,
            drop1,
            ln2,
            h2,
            u,
            g,
            drop2,
        });
    }
    let (hidden, lnf) = layer_norm(&x, &params.lnf_g, &params.lnf_b);

    let lm_logits = want_lm.then(|| hidden.dot(&params.lm_w) + &params.lm_b);
    let qtype_logits = if len > 0 {
        hidden.row(0).dot(&params.qtype_w) + &params.qtype_b
    } else {
        params.qtype_b.clone()
    };
    let span = hidden.dot(&params.span_w) + &params.span_b;
    let start_logits = span.column(0).to_owned();
    let end_logits = span.column(1).to_owned();

    let mut para = HeadCache { u: Vec::new() };
    let para_logits = input
        .para_positions
        .iter()
        .map(|&p| {
            let (z, u) = evidence_forward(&params.para, hidden.row(p));
            para.u.push(u);
            z
        })
        .collect();
    let mut sent = HeadCache { u: Vec::new() };
    let sent_logits = input
        .sent_positions
        .iter()
        .map(|&p| {
            let (z, u) = evidence_forward(&params.sent, hidden.row(p));
            sent.u.push(u);
            z
        })
        .collect();

    Ok((
        Outputs {
            hidden,
            lm_logits,
            qtype_logits,
            start_logits,
            end_logits,
            para_logits,
            sent_logits,
        },
        Cache {
            layers: caches,
            lnf,
            para,
            sent,
        },
    ))
}

/// Row softmax over unmasked keys; rows with no valid key become all-zero.
fn masked_softmax_rows(scores: &mut Array2<f64>, key_ok: &[bool]) {
    for mut row in scores.outer_iter_mut() {
        let max = row
            .iter()
            .zip(key_ok)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for (v, &ok) in row.iter_mut().zip(key_ok) {
            *v = if ok { (*v - max).exp() } else { 0.0 };
            sum += *v;
        }
        row /= sum;
    }
}

fn evidence_backward(
    head: &EvidenceHead,
    grads: &mut EvidenceHead,
    h: ArrayView1<f64>,
    u: &Array1<f64>,
    dz: f64,
) -> Array1<f64> {
    grads.b2[0] += dz;
    let mut du = Array1::zeros(u.len());
    for j in 0..u.len() {
        grads.w2[j] += dz * gelu(u[j]);
        du[j] = dz * head.w2[j] * gelu_grad(u[j]);
    }
    outer_add(&mut grads.w1, h, du.view());
    grads.b1 += &du;
    head.w1.dot(&du)
}

fn outer_add(target: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            target.row_mut(i).scaled_add(ai, &b);
        }
    }
}

fn matmul_tn_add(target: &mut Array2<f64>, a: &ArrayView2<f64>, b: &ArrayView2<f64>) {
    // target += a^T b
    ndarray::linalg::general_mat_mul(1.0, &a.t(), b, 1.0, target);
}

/// Accumulates parameter gradients of a scalar loss into `grads`.
pub fn backward(
    params: &Params,
    cfg: &ModelConfig,
    input: ModelInput<'_>,
    outputs: &Outputs,
    cache: &Cache,
    dout: &OutputGrads,
    grads: &mut Params,
) {
    let ids = input.ids;
    let len = ids.len();
    if len == 0 {
        grads.qtype_b += &dout.qtype_logits;
        return;
    }
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let hidden = &outputs.hidden;

    let mut dh = Array2::<f64>::zeros((len, d));

    if let Some(dl) = &dout.lm_logits {
        matmul_tn_add(&mut grads.lm_w, &hidden.view(), &dl.view());
        grads.lm_b += &dl.sum_axis(Axis(0));
        ndarray::linalg::general_mat_mul(1.0, dl, &params.lm_w.t(), 1.0, &mut dh);
    }

    outer_add(&mut grads.qtype_w, hidden.row(0), dout.qtype_logits.view());
    grads.qtype_b += &dout.qtype_logits;
    {
        let dq = params.qtype_w.dot(&dout.qtype_logits);
        let mut r = dh.row_mut(0);
        r += &dq;
    }

    let mut dspan = Array2::zeros((len, 2));
    dspan.column_mut(0).assign(&dout.start_logits);
    dspan.column_mut(1).assign(&dout.end_logits);
    matmul_tn_add(&mut grads.span_w, &hidden.view(), &dspan.view());
    grads.span_b += &dspan.sum_axis(Axis(0));
    ndarray::linalg::general_mat_mul(1.0, &dspan, &params.span_w.t(), 1.0, &mut dh);

    for (k, &p) in input.para_positions.iter().enumerate() {
        let dz = dout.para_logits[k];
        if dz != 0.0 {
            let g = evidence_backward(&params.para, &mut grads.para, hidden.row(p), &cache.para.u[k], dz);
            let mut r = dh.row_mut(p);
            r += &g;
        }
    }
    for (k, &p) in input.sent_positions.iter().enumerate() {
        let dz = dout.sent_logits[k];
        if dz != 0.0 {
            let g = evidence_backward(&params.sent, &mut grads.sent, hidden.row(p), &cache.sent.u[k], dz);
            let mut r = dh.row_mut(p);
            r += &g;
        }
    }

    let mut dx = layer_norm_backward(&dh, &cache.lnf, &params.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);

    for (li, lp) in params.layers.iter().enumerate().rev() {
        let c = &cache.layers[li];
        let gl = &mut grads.layers[li];

        // feed-forward branch
        let mut df = dx.clone();
        if let Some(m) = &c.drop2 {
            df *= m;
        }
        matmul_tn_add(&mut gl.w2, &c.g.view(), &df.view());
        gl.b2 += &df.sum_axis(Axis(0));
        let dg = df.dot(&lp.w2.t());
        let mut du = dg;
        Zip::from(&mut du).and(&c.u).for_each(|a, &u| *a *= gelu_grad(u));
        matmul_tn_add(&mut gl.w1, &c.h2.view(), &du.view());
        gl.b1 += &du.sum_axis(Axis(0));
        let dh2 = du.dot(&lp.w1.t());
        dx += &layer_norm_backward(&dh2, &c.ln2, &lp.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);

        // attention branch
        let mut do_ = dx.clone();
        if let Some(m) = &c.drop1 {
            do_ *= m;
        }
        matmul_tn_add(&mut gl.wo, &c.attn.view(), &do_.view());
        gl.bo += &do_.sum_axis(Axis(0));
        let dattn = do_.dot(&lp.wo.t());
        let mut dq = Array2::zeros((len, d));
        let mut dk = Array2::zeros((len, d));
        let mut dv = Array2::zeros((len, d));
        for h in 0..cfg.n_heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let p = &c.probs[h];
            let da = dattn.slice(cols);
            let dp = da.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&da));
            let mut ds = dp;
            for (mut drow, prow) in ds.outer_iter_mut().zip(p.outer_iter()) {
                let dot = drow.dot(&prow);
                Zip::from(&mut drow).and(&prow).for_each(|a, &pv| *a = pv * (*a - dot));
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        matmul_tn_add(&mut gl.wq, &c.h1.view(), &dq.view());
        matmul_tn_add(&mut gl.wk, &c.h1.view(), &dk.view());
        matmul_tn_add(&mut gl.wv, &c.h1.view(), &dv.view());
        gl.bq += &dq.sum_axis(Axis(0));
        gl.bk += &dk.sum_axis(Axis(0));
        gl.bv += &dv.sum_axis(Axis(0));
        let mut dh1 = dq.dot(&lp.wq.t());
        ndarray::linalg::general_mat_mul(1.0, &dk, &lp.wk.t(), 1.0, &mut dh1);
        ndarray::linalg::general_mat_mul(1.0, &dv, &lp.wv.t(), 1.0, &mut dh1);
        dx += &layer_norm_backward(&dh1, &c.ln1, &lp.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
    }

    for (i, &t) in ids.iter().enumerate() {
        let r = dx.row(i);
        let mut te = grads.tok_emb.row_mut(t);
        te += &r;
        let mut pe = grads.pos_emb.row_mut(i);
        pe += &r;
    }
}
