//! Training state, batch sampling, logging and checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use ndgrad::{Graph, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attnmask::EmaState;
use crate::dataio::{Corpus, Vocab, PROMPT_TEMPLATES};
use crate::encoders::Checkpoint;
use crate::error::{AclipError, Result};
use crate::losses::{LossReport, LOG_TAU};
use crate::params::ParamSet;
use crate::rng::{stream, Domain};
use crate::trainer::config::TrainConfig;
use crate::trainer::model::{init_model, ModelDims, EMA_PREFIXES};
use crate::trainer::optim::{lr_schedule, AdamState, AdamW};
use crate::trainer::step::{prepare_batch, step_loss, PreparedBatch};

pub const LOG_FILE: &str = "log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub mu: f64,
    pub loss: LossReport,
}

/// Prompt strings for every class, template-major.
pub fn class_prompts(class_names: &[String]) -> Vec<String> {
    PROMPT_TEMPLATES
        .iter()
        .flat_map(|t| class_names.iter().map(move |c| t.replace("{}", c)))
        .collect()
}

/// Vocabulary over every caption plus the zero-shot prompts.
pub fn build_vocab(corpus: &Corpus) -> Vocab {
    let prompts = class_prompts(&corpus.class_names);
    Vocab::build(corpus.captions().chain(prompts.iter().map(String::as_str)))
}

/// Model weights restored from a checkpoint, without optimizer state.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub cfg: TrainConfig,
    pub dims: ModelDims,
    pub vocab: Vocab,
    pub params: ParamSet,
    pub shadow: ParamSet,
    pub step: usize,
}

fn restore(into: &mut ParamSet, ck: &Checkpoint, prefix: &str) -> Result<()> {
    let names: Vec<String> = into.names().map(str::to_string).collect();
    for name in names {
        let key = format!("{prefix}{name}");
        let t = ck
            .tensors
            .get(&key)
            .ok_or_else(|| AclipError::Structural(format!("checkpoint lacks {key}")))?;
        let slot = into.get_mut(&name)?;
        if t.shape() != slot.shape() {
            return Err(AclipError::Structural(format!(
                "{key}: stored {:?} vs model {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t.clone();
    }
    Ok(())
}

fn meta_field<T: serde::de::DeserializeOwned>(ck: &Checkpoint, key: &str) -> Result<T> {
    let v = ck
        .meta
        .get(key)
        .ok_or_else(|| AclipError::Structural(format!("checkpoint meta lacks {key:?}")))?;
    Ok(serde_json::from_value(v.clone())?)
}

impl LoadedModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg: TrainConfig = meta_field(ck, "config")?;
        let vocab = Vocab::from_words(meta_field(ck, "vocab")?);
        let dims = ModelDims::new(&cfg, vocab.len())?;
        let mut params = init_model(&cfg, &dims);
        restore(&mut params, ck, "param/")?;
        let mut shadow = params.subset(&EMA_PREFIXES);
        restore(&mut shadow, ck, "ema/")?;
        Ok(Self {
            step: meta_field(ck, "step")?,
            cfg,
            dims,
            vocab,
            params,
            shadow,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Complete mutable state of a run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub dims: ModelDims,
    pub vocab: Vocab,
    pub corpus: Arc<Corpus>,
    pub params: ParamSet,
    pub ema: EmaState,
    pub adam: AdamState,
    /// Completed optimizer steps.
    pub step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, corpus: Arc<Corpus>) -> Result<Self> {
        cfg.validate()?;
        if corpus.len() < cfg.batch_size {
            return Err(AclipError::Config(format!(
                "corpus of {} pairs is smaller than batch_size {}",
                corpus.len(),
                cfg.batch_size
            )));
        }
        if cfg.batch_size < 2 {
            eprintln!("warning: batch_size 1 gives a constant contrastive loss");
        }
        let vocab = build_vocab(&corpus);
        let dims = ModelDims::new(&cfg, vocab.len())?;
        let params = init_model(&cfg, &dims);
        let ema = EmaState::new(&params, &EMA_PREFIXES, cfg.ema_momentum, cfg.total_steps);
        let adam = AdamState::new(&params);
        Ok(Self {
            cfg,
            dims,
            vocab,
            corpus,
            params,
            ema,
            adam,
            step: 0,
        })
    }

    /// Batch of `step`: a slice of the epoch's permutation. Each epoch drops
    /// the tail that does not fill a batch.
    pub fn batch_ids(&self, step: usize) -> Vec<usize> {
        let n = self.corpus.len();
        let b = self.cfg.batch_size;
        let per_epoch = n / b;
        let (epoch, slot) = (step / per_epoch, step % per_epoch);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut stream(self.cfg.seed, Domain::Batch, &[epoch as u64]));
        perm[slot * b..(slot + 1) * b].to_vec()
    }

    pub fn prepare(&self, step: usize) -> Result<PreparedBatch> {
        prepare_batch(
            &self.corpus,
            &self.vocab,
            &self.cfg,
            &self.dims,
            &self.ema,
            step,
            &self.batch_ids(step),
        )
    }

    fn optimizer(&self) -> AdamW {
        AdamW {
            beta1: self.cfg.adam_beta1,
            beta2: self.cfg.adam_beta2,
            eps: self.cfg.adam_eps,
            weight_decay: self.cfg.weight_decay,
        }
    }

    /// Learning rate of the update that completes step `step + 1`.
    pub fn lr_at(&self, step: usize) -> f64 {
        lr_schedule(step + 1, self.cfg.lr, self.cfg.warmup_steps, self.cfg.total_steps)
    }

    /// Loss, backward, AdamW, EMA update and temperature clamp on an already
    /// prepared batch.
    pub fn apply(&mut self, batch: &PreparedBatch) -> Result<StepLog> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let (loss, report) = step_loss(&mut g, &bound, batch, &self.cfg, &self.dims)?;
        let mut grads = g.backward(loss);
        let grads: IndexMap<String, Tensor> = bound
            .iter()
            .filter(|(_, v)| g.requires_grad(*v))
            .filter_map(|(name, v)| grads.take(v).map(|t| (name.to_string(), t)))
            .collect();
        for (name, t) in &grads {
            if !t.is_finite() {
                return Err(AclipError::Divergence {
                    step: self.step,
                    component: format!("grad {name}"),
                    value: t.data().iter().copied().find(|v| !v.is_finite()).unwrap_or(f64::NAN),
                });
            }
        }
        let lr = self.lr_at(self.step);
        self.optimizer().step(&mut self.params, &grads, &mut self.adam, lr)?;
        let mu = self.ema.update(&self.params)?;
        let log_tau = self.params.get_mut(LOG_TAU)?;
        let clamped = self.cfg.temperature.clamp_log_tau(log_tau.item());
        *log_tau = Tensor::scalar(clamped);
        let log = StepLog {
            step: self.step,
            lr,
            mu,
            loss: report,
        };
        self.step += 1;
        Ok(log)
    }

    pub fn train_step(&mut self) -> Result<StepLog> {
        let batch = self.prepare(self.step)?;
        self.apply(&batch)
    }

    /// Trains until `cfg.total_steps`, appending to `run_dir/log.jsonl` and
    /// writing checkpoints under `run_dir/checkpoints/` when a directory is
    /// given.
    pub fn run(&mut self, run_dir: Option<&Path>) -> Result<Vec<StepLog>> {
        self.run_with(run_dir, |_| {})
    }

    /// [`Trainer::run`] with a callback after every step.
    pub fn run_with(&mut self, run_dir: Option<&Path>, on_step: impl FnMut(&StepLog)) -> Result<Vec<StepLog>> {
        self.run_until(self.cfg.total_steps, run_dir, on_step)
    }

    /// Trains until `stop` steps are complete (at most `cfg.total_steps`),
    /// then writes `last.ckpt`.
    pub fn run_until(
        &mut self,
        stop: usize,
        run_dir: Option<&Path>,
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<Vec<StepLog>> {
        let stop = stop.min(self.cfg.total_steps);
        let mut log_file = match run_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| AclipError::io(dir, e))?;
                let cfg_path = dir.join("config.json");
                fs::write(&cfg_path, self.cfg.to_json()).map_err(|e| AclipError::io(&cfg_path, e))?;
                let path = dir.join(LOG_FILE);
                let f = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| AclipError::io(&path, e))?;
                Some((f, path))
            }
            None => None,
        };
        let mut logs = Vec::new();
        while self.step < stop {
            let entry = self.train_step()?;
            if let Some((f, path)) = log_file.as_mut() {
                let mut line = serde_json::to_vec(&entry)?;
                line.push(b'\n');
                f.write_all(&line).map_err(|e| AclipError::io(path.as_path(), e))?;
            }
            on_step(&entry);
            logs.push(entry);
            if let Some(dir) = run_dir {
                let every = self.cfg.checkpoint_every;
                if every > 0 && self.step % every == 0 && self.step < stop {
                    self.save(&checkpoint_dir(dir).join(format!("step_{:06}.ckpt", self.step)))?;
                }
            }
        }
        if let Some(dir) = run_dir {
            self.save(&checkpoint_dir(dir).join(LAST_CHECKPOINT))?;
        }
        Ok(logs)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = IndexMap::new();
        let sections: [(&str, &ParamSet); 4] = [
            ("param/", &self.params),
            ("ema/", &self.ema.shadow),
            ("adam_m/", &self.adam.m),
            ("adam_v/", &self.adam.v),
        ];
        for (prefix, set) in sections {
            for (name, p) in set.iter() {
                tensors.insert(format!("{prefix}{name}"), p.value.clone());
            }
        }
        let meta = serde_json::json!({
            "step": self.step,
            "adam_t": self.adam.t,
            "ema_step": self.ema.step,
            "config": self.cfg,
            "vocab": self.vocab.plain_words(),
        });
        Checkpoint { tensors, meta }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    /// Resumes a run. The corpus must be the one the run was started on.
    pub fn from_checkpoint(ck: &Checkpoint, corpus: Arc<Corpus>) -> Result<Self> {
        let loaded = LoadedModel::from_checkpoint(ck)?;
        let mut t = Self::new(loaded.cfg, corpus)?;
        if t.vocab != loaded.vocab {
            return Err(AclipError::Structural("corpus vocabulary differs from the checkpoint".into()));
        }
        t.params = loaded.params;
        t.ema.shadow = loaded.shadow;
        t.ema.step = meta_field(ck, "ema_step")?;
        restore(&mut t.adam.m, ck, "adam_m/")?;
        restore(&mut t.adam.v, ck, "adam_v/")?;
        t.adam.t = meta_field(ck, "adam_t")?;
        t.step = loaded.step;
        Ok(t)
    }

    pub fn resume(path: &Path, corpus: Arc<Corpus>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, corpus)
    }
}

pub fn checkpoint_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoints")
}
