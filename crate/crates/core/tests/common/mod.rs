#![allow(dead_code)]

pub mod criteria;

use memqa::nnet::forward::OutputGrads;
use memqa::nnet::loss::masked_lm_loss;
use memqa::nnet::{
    multitask_loss, DatasetProfile, LossWeights, ModelConfig, ModelInput, ModelState, Params,
    SegmentTargets,
};

/// d_model=8, n_layers=2, vocabulary of 40.
pub fn gradcheck_config() -> ModelConfig {
    let mut c = ModelConfig::toy(40, 39);
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 12;
    c.max_seq_len = 16;
    c
}

pub struct Case {
    pub ids: Vec<usize>,
    pub para: Vec<usize>,
    pub sent: Vec<usize>,
    pub targets: SegmentTargets,
    pub profile: DatasetProfile,
    pub weights: LossWeights,
}

impl Case {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            ids: &self.ids,
            para_positions: &self.para,
            sent_positions: &self.sent,
        }
    }

    pub fn loss(&self, state: &ModelState) -> f64 {
        let out = state.infer(self.input(), false).unwrap();
        multitask_loss(&out, &self.targets, &self.weights, self.profile)
            .unwrap()
            .0
            .total
    }

    pub fn analytic(&self, state: &ModelState) -> Params {
        let (out, cache) = state.forward(self.input(), false, None).unwrap();
        let (_, dout) = multitask_loss(&out, &self.targets, &self.weights, self.profile).unwrap();
        let mut g = state.zero_grads();
        state.accumulate_grads(self.input(), &out, &cache, &dout, &mut g);
        g
    }
}

/// Hotpot-style segment: [CLS] q q q | ctx with two paragraphs and pads.
pub fn hotpot_case() -> Case {
    let ids = vec![30, 31, 5, 6, 32, 33, 7, 34, 8, 9, 35, 33, 10, 34, 11, 35, 39][..16].to_vec();
    Case {
        ids,
        para: vec![7, 13],
        sent: vec![10, 15],
        targets: SegmentTargets {
            qtype: Some(2),
            spans: vec![(8, 9), (12, 12)],
            context: 5..16,
            para_labels: vec![true, false],
            sent_labels: vec![true, false],
        },
        profile: DatasetProfile::HpLike,
        weights: LossWeights { qtype: 10.0, span: 1.0, para: 1.0, sent: 1.0 },
    }
}

pub fn musique_case() -> Case {
    let ids = vec![30, 31, 5, 6, 32, 36, 33, 7, 34, 8, 9, 35, 36, 33, 10, 11];
    Case {
        ids,
        para: vec![5, 12],
        sent: vec![],
        targets: SegmentTargets {
            qtype: None,
            spans: vec![(9, 10)],
            context: 5..16,
            para_labels: vec![false, true],
            sent_labels: vec![],
        },
        profile: DatasetProfile::MsqLike,
        weights: LossWeights::default(),
    }
}

/// Relative error `|a - f| / max(|a|, |f|)` per parameter group, from
/// central differences with step `eps`.
pub fn finite_difference_errors(
    state: &ModelState,
    analytic: &Params,
    eps: f64,
    loss: impl Fn(&ModelState) -> f64,
) -> Vec<(String, f64, f64)> {
    let mut probe = state.clone();
    let names: Vec<String> = state.params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut report = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let len = state.params.tensors()[ti].1.len();
        let a: Vec<f64> = analytic.tensors()[ti].1.iter().copied().collect();
        let mut fd = vec![0.0; len];
        for (k, slot) in fd.iter_mut().enumerate() {
            let orig = state.params.tensors()[ti].1.iter().nth(k).copied().unwrap();
            set(&mut probe, ti, k, orig + eps);
            let up = loss(&probe);
            set(&mut probe, ti, k, orig - eps);
            let down = loss(&probe);
            set(&mut probe, ti, k, orig);
            *slot = (up - down) / (2.0 * eps);
        }
        let diff: f64 = a.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nf: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = na.max(nf);
        // key biases shift every score of a softmax row equally, so their true
        // gradient is zero; the floor keeps such groups from dividing noise by noise
        let rel = diff / scale.max(1e-5);
        report.push((name.clone(), rel, na));
    }
    report
}

fn set(state: &mut ModelState, tensor: usize, index: usize, value: f64) {
    let mut ts = state.params.tensors_mut();
    *ts[tensor].1.iter_mut().nth(index).unwrap() = value;
}

pub fn mlm_loss(state: &ModelState, ids: &[usize], positions: &[usize], targets: &[usize]) -> f64 {
    let out = state.infer(ModelInput::tokens(ids), true).unwrap();
    masked_lm_loss(out.lm_logits.as_ref().unwrap(), positions, targets).unwrap().0
}

pub fn mlm_analytic(state: &ModelState, ids: &[usize], positions: &[usize], targets: &[usize]) -> Params {
    let input = ModelInput::tokens(ids);
    let (out, cache) = state.forward(input, true, None).unwrap();
    let (_, dl) = masked_lm_loss(out.lm_logits.as_ref().unwrap(), positions, targets).unwrap();
    let mut dout = OutputGrads::zeros(ids.len(), 0, 0);
    dout.lm_logits = Some(dl);
    let mut g = state.zero_grads();
    state.accumulate_grads(input, &out, &cache, &dout, &mut g);
    g
}
