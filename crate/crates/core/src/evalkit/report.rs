//! Metrics report for a trained checkpoint.

use serde::{Deserialize, Serialize};

use crate::attnmask::SelectionStrategy;
use crate::dataio::{Corpus, PROMPT_TEMPLATES};
use crate::error::{AclipError, Result};
use crate::evalkit::coverage::{coverage_study, CoverageStats};
use crate::evalkit::flops::{flop_model, FlopLedger, FlopSpec};
use crate::evalkit::{retrieval_metrics, zero_shot_classify, Retrieval};
use crate::trainer::{embed_images, embed_texts, with_shadow, LoadedModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Evaluate the EMA visual encoder (text encoder stays online).
    pub use_ema: bool,
    pub ks: Vec<usize>,
    /// Pairs used for retrieval, taken from the start of the corpus.
    pub retrieval_pairs: usize,
    pub coverage_keep: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            use_ema: false,
            ks: vec![1, 5, 10],
            retrieval_pairs: 64,
            coverage_keep: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotSummary {
    pub top1: f64,
    pub images: usize,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub keep: f64,
    pub attentive: CoverageStats,
    pub random: CoverageStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: usize,
    pub use_ema: bool,
    pub zero_shot: ZeroShotSummary,
    pub retrieval: Retrieval,
    pub coverage: CoverageSummary,
    pub flops: FlopLedger,
}

/// Zero-shot top-1 over the whole corpus, retrieval on the detailed caption
/// of the first `retrieval_pairs` records, and object coverage of attentive
/// versus random masks scored by the EMA encoder.
pub fn evaluate_checkpoint(model: &LoadedModel, corpus: &Corpus, opts: &EvalOptions) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(AclipError::Argument("evaluation corpus is empty".into()));
    }
    let params = if opts.use_ema {
        with_shadow(&model.params, &model.shadow)?
    } else {
        model.params.clone()
    };
    let (vcfg, tcfg) = (&model.dims.visual, &model.dims.text);
    let image_emb = embed_images(&params, vcfg, &corpus.images)?;
    let labels: Vec<usize> = corpus.records.iter().map(|r| r.class_id).collect();
    let mut encode = |prompts: &[String]| {
        let ids: Vec<Vec<usize>> = prompts
            .iter()
            .map(|p| model.vocab.tokenize(p, tcfg.context_length))
            .collect();
        embed_texts(&params, tcfg, &ids)
    };
    let zs = zero_shot_classify(&image_emb, &labels, &corpus.class_names, &PROMPT_TEMPLATES, &mut encode)?;

    let m = opts.retrieval_pairs.min(corpus.len());
    let ids: Vec<Vec<usize>> = corpus.records[..m]
        .iter()
        .map(|r| model.vocab.tokenize(r.detailed_caption(), tcfg.context_length))
        .collect();
    let text_emb = embed_texts(&params, tcfg, &ids)?;
    let d = vcfg.embed_dim;
    let img_m = ndgrad::Tensor::new(&[m, d], image_emb.data()[..m * d].to_vec())?;
    let retrieval = retrieval_metrics(&img_m, &text_emb, &opts.ks)?;

    let bboxes: Vec<_> = corpus.records.iter().map(|r| r.bbox).collect();
    let study = |strategy| {
        coverage_study(
            &model.shadow,
            vcfg,
            &corpus.images,
            &bboxes,
            opts.coverage_keep,
            strategy,
            model.cfg.mask_granularity,
            model.cfg.score_layers,
            opts.seed,
        )
    };
    let coverage = CoverageSummary {
        keep: opts.coverage_keep,
        attentive: study(SelectionStrategy::Low)?,
        random: study(SelectionStrategy::Random)?,
    };
    Ok(EvalReport {
        step: model.step,
        use_ema: opts.use_ema,
        zero_shot: ZeroShotSummary {
            top1: zs.accuracy,
            images: corpus.len(),
            classes: corpus.class_names.len(),
        },
        retrieval,
        coverage,
        flops: flop_model(&FlopSpec::from_config(&model.cfg)?),
    })
}
