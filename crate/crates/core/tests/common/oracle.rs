//! Plain CLIP written directly on graph primitives, with its own AdamW.

use aclip::encoders::{text_forward, vit_forward};
use aclip::losses::SslKind;
use aclip::ndgrad::{Graph, Tensor, Var};
use aclip::params::ParamSet;
use aclip::trainer::{TrainConfig, Trainer};

use super::tiny_config;

pub fn plain_config() -> TrainConfig {
    TrainConfig {
        views: 1,
        keep_ratio: Some(1.0),
        ssl: SslKind::None,
        byol: false,
        weight_decay: 0.1,
        ..tiny_config()
    }
}

pub struct Oracle {
    pub params: ParamSet,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

fn unit_rows(g: &mut Graph, x: Var, proj: Var) -> Var {
    let y = g.matmul(x, proj).unwrap();
    g.normalize_rows(y).unwrap()
}

impl Oracle {
    pub fn new(trainer: &Trainer) -> Self {
        Self {
            params: trainer.params.clone(),
            m: trainer.params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect(),
            v: trainer.params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect(),
            t: 0,
        }
    }


    pub fn step(&mut self, trainer: &Trainer, step: usize) -> f64 {
        let cfg = &trainer.cfg;
        let batch = trainer.prepare(step).unwrap();
        let mut g = Graph::new();
        let vars: Vec<(String, Var)> = self
            .params
            .iter()
            .map(|(n, p)| {
                let v = if p.trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                };
                (n.to_string(), v)
            })
            .collect();
        let bound: aclip::params::Bound = vars.iter().cloned().collect();
        let out = vit_forward(&mut g, &bound, &trainer.dims.visual, &batch.view_patches[0], None, None).unwrap();
        let e_i = unit_rows(&mut g, out.cls, bound.var("visual.proj").unwrap());
        let feat = text_forward(&mut g, &bound, &trainer.dims.text, &batch.tokens).unwrap();
        let e_t = unit_rows(&mut g, feat, bound.var("text.proj").unwrap());
        let b = batch.tokens.len();
        let log_tau = bound.var("logit.log_tau").unwrap();
        let et_t = g.transpose(e_t).unwrap();
        let sims = g.matmul(e_i, et_t).unwrap();
        let neg = g.scale(log_tau, -1.0);
        let scale = g.exp(neg);
        let logits = g.mul_scalar(sims, scale).unwrap();
        let diag: Vec<usize> = (0..b).collect();
        let ls_rows = g.log_softmax(logits, None).unwrap();
        let pick_rows = g.pick(ls_rows, &diag).unwrap();
        let logits_t = g.transpose(logits).unwrap();
        let ls_cols = g.log_softmax(logits_t, None).unwrap();
        let pick_cols = g.pick(ls_cols, &diag).unwrap();
        let both = g.add(pick_rows, pick_cols).unwrap();
        let sum = g.sum_all(both);
        let loss = g.scale(sum, -0.5 / b as f64);
        let value = g.value(loss).item();
        let grads = g.backward(loss);

        self.t += 1;
        let lr = trainer.lr_at(step);
        let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        for (i, (name, var)) in vars.iter().enumerate() {
            let p = self.params.param(name).unwrap();
            if !p.trainable {
                continue;
            }
            let Some(grad) = grads.get(*var) else { continue };
            let decay = p.decay;
            let value = self.params.get_mut(name).unwrap();
            for (j, x) in value.data_mut().iter_mut().enumerate() {
                let gj = grad.data()[j];
                self.m[i][j] = b1 * self.m[i][j] + (1.0 - b1) * gj;
                self.v[i][j] = b2 * self.v[i][j] + (1.0 - b2) * gj * gj;
                let mh = self.m[i][j] / (1.0 - b1.powi(self.t));
                let vh = self.v[i][j] / (1.0 - b2.powi(self.t));
                if decay {
                    *x *= 1.0 - lr * cfg.weight_decay;
                }
                *x -= lr * mh / (vh.sqrt() + eps);
            }
        }
        let lt = self.params.get_mut("logit.log_tau").unwrap();
        let c = lt.item().clamp(0.01f64.ln(), 1.0f64.ln());
        *lt = Tensor::scalar(c);
        value
    }
}


/// Runs `steps` steps of both and returns the worst loss and parameter gap.
pub fn compare(steps: usize, seed: u64) -> f64 {
    let mut trainer = Trainer::new(plain_config(), super::corpus(64, seed)).unwrap();
    let mut oracle = Oracle::new(&trainer);
    let mut worst: f64 = 0.0;
    for step in 0..steps {
        let expected = oracle.step(&trainer, step);
        let log = trainer.train_step().unwrap();
        worst = worst.max((log.loss.total - expected).abs());
        for (name, p) in trainer.params.iter() {
            worst = worst.max(p.value.max_abs_diff(oracle.params.get(name).unwrap()));
        }
    }
    worst
}
