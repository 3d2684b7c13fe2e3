//! Zero-shot classification, retrieval recall, mask coverage and the
//! analytic FLOP ledger.

pub mod coverage;
pub mod flops;
pub mod report;

use ndgrad::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{AclipError, Result};

pub use coverage::{coverage_study, mask_coverage, Coverage, CoverageStats};
pub use flops::{flop_model, BranchFlops, FlopLedger, FlopSpec};
pub use report::{evaluate_checkpoint, EvalOptions, EvalReport};

fn unit_rows(x: &Tensor) -> Result<Vec<Vec<f64>>> {
    if x.rank() != 2 {
        return Err(AclipError::Dimension(format!("expected a matrix, got {:?}", x.shape())));
    }
    x.data()
        .chunks(x.shape()[1])
        .enumerate()
        .map(|(i, r)| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(AclipError::DegenerateEmbedding(format!("row {i} has norm {n}")));
            }
            Ok(r.iter().map(|v| v / n).collect())
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest value; the first one wins ties.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShot {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Class embeddings: the normalized mean over templates of the unit prompt
/// embeddings. `encode` maps prompt strings to a `[M, D]` embedding matrix.
pub fn class_embeddings(
    class_names: &[String],
    templates: &[&str],
    encode: &mut dyn FnMut(&[String]) -> Result<Tensor>,
) -> Result<Vec<Vec<f64>>> {
    if class_names.is_empty() {
        return Err(AclipError::Argument("no classes to classify into".into()));
    }
    if templates.is_empty() {
        return Err(AclipError::Argument("no prompt templates".into()));
    }
    let mut out = Vec::with_capacity(class_names.len());
    for name in class_names {
        let prompts: Vec<String> = templates.iter().map(|t| t.replace("{}", name)).collect();
        let rows = unit_rows(&encode(&prompts)?)?;
        let mut mean = vec![0.0; rows[0].len()];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / rows.len() as f64;
            }
        }
        let t = Tensor::new(&[1, mean.len()], mean)?;
        out.push(unit_rows(&t)?.remove(0));
    }
    Ok(out)
}

/// Predicts the class whose embedding has the largest cosine with each image
/// and scores top-1 accuracy against `labels`.
pub fn zero_shot_classify(
    image_embeds: &Tensor,
    labels: &[usize],
    class_names: &[String],
    templates: &[&str],
    encode: &mut dyn FnMut(&[String]) -> Result<Tensor>,
) -> Result<ZeroShot> {
    let classes = class_embeddings(class_names, templates, encode)?;
    classify_with(image_embeds, labels, &classes)
}

/// [`zero_shot_classify`] with precomputed class embeddings.
pub fn classify_with(image_embeds: &Tensor, labels: &[usize], classes: &[Vec<f64>]) -> Result<ZeroShot> {
    if classes.is_empty() {
        return Err(AclipError::Argument("no classes to classify into".into()));
    }
    let images = unit_rows(image_embeds)?;
    if images.len() != labels.len() {
        return Err(AclipError::Dimension(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let predictions: Vec<usize> = images
        .iter()
        .map(|img| argmax(&classes.iter().map(|c| dot(img, c)).collect::<Vec<_>>()))
        .collect();
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(ZeroShot {
        accuracy: if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 },
        predictions,
    })
}

/// Recall at each `k` in both directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub ks: Vec<usize>,
    pub i2t: Vec<f64>,
    pub t2i: Vec<f64>,
}

impl Retrieval {
    pub fn i2t_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.i2t[i])
    }

    pub fn t2i_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.t2i[i])
    }
}

/// Zero-based rank of the partner of each query row. Candidates scoring
/// equal to the partner rank ahead of it when their index is smaller.
fn partner_ranks(sim: &[Vec<f64>]) -> Vec<usize> {
    sim.iter()
        .enumerate()
        .map(|(i, row)| {
            let target = row[i];
            row.iter()
                .enumerate()
                .filter(|&(j, &s)| s > target || (s == target && j < i))
                .count()
        })
        .collect()
}

fn recall(ranks: &[usize], ks: &[usize]) -> Vec<f64> {
    ks.iter()
        .map(|&k| ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64)
        .collect()
}

/// Recall@k from a square similarity matrix whose row `i` pairs with column
/// `i`; image-to-text reads rows, text-to-image reads columns.
pub fn retrieval_from_similarity(sim: &Tensor, ks: &[usize]) -> Result<Retrieval> {
    let s = sim.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(AclipError::Dimension(format!("similarity {s:?} is not square")));
    }
    let m = s[0];
    if m == 0 {
        return Err(AclipError::Argument("retrieval over zero pairs".into()));
    }
    let rows: Vec<Vec<f64>> = sim.data().chunks(m).map(<[f64]>::to_vec).collect();
    let cols: Vec<Vec<f64>> = (0..m).map(|j| (0..m).map(|i| rows[i][j]).collect()).collect();
    Ok(Retrieval {
        ks: ks.to_vec(),
        i2t: recall(&partner_ranks(&rows), ks),
        t2i: recall(&partner_ranks(&cols), ks),
    })
}

/// Recall@k by cosine similarity between paired rows of `e_i` and `e_t`.
pub fn retrieval_metrics(e_i: &Tensor, e_t: &Tensor, ks: &[usize]) -> Result<Retrieval> {
    if e_i.shape() != e_t.shape() {
        return Err(AclipError::Dimension(format!(
            "image embeddings {:?} vs text embeddings {:?}",
            e_i.shape(),
            e_t.shape()
        )));
    }
    if e_i.rank() != 2 || e_i.shape()[0] == 0 {
        return Err(AclipError::Argument("retrieval over zero pairs".into()));
    }
    let (a, b) = (unit_rows(e_i)?, unit_rows(e_t)?);
    let m = a.len();
    let sim: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| dot(x, y))).collect();
    retrieval_from_similarity(&Tensor::new(&[m, m], sim)?, ks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn identical_orthonormal_sets_retrieve_perfectly() {
        let r = retrieval_metrics(&eye(4), &eye(4), &[1, 5, 10]).unwrap();
        assert_eq!(r.i2t, vec![1.0; 3]);
        assert_eq!(r.t2i, vec![1.0; 3]);
    }

    #[test]
    fn reversed_partners_never_rank_first() {
        let e = eye(4);
        let rev: Vec<f64> = (0..4).rev().flat_map(|i| e.row(i).to_vec()).collect();
        let r = retrieval_metrics(&e, &Tensor::new(&[4, 4], rev).unwrap(), &[1]).unwrap();
        assert_eq!((r.i2t[0], r.t2i[0]), (0.0, 0.0));
    }

    #[test]
    fn hand_ranked_similarity() {
        // Partner ranks (i2t): row 0 -> 0, row 1 -> 1, row 2 -> 2.
        let sim = Tensor::from_rows(&[
            vec![0.9, 0.1, 0.0],
            vec![0.8, 0.5, 0.1],
            vec![0.7, 0.6, 0.2],
        ])
        .unwrap();
        let r = retrieval_from_similarity(&sim, &[1, 2, 3]).unwrap();
        assert!((r.i2t[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.i2t[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.i2t[2], 1.0);
    }

    #[test]
    fn ties_break_toward_smaller_index() {
        let sim = Tensor::full(&[3, 3], 0.5);
        let r = retrieval_from_similarity(&sim, &[1]).unwrap();
        assert!((r.i2t[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(retrieval_from_similarity(&Tensor::zeros(&[2, 3]), &[1]).is_err());
        let mut enc = |_: &[String]| Ok(eye(2));
        assert!(zero_shot_classify(&eye(2), &[0, 1], &[], &["{}"], &mut enc).is_err());
    }

    #[test]
    fn zero_shot_picks_nearest_class() {
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let mut enc = |p: &[String]| {
            let row = if p[0].ends_with('a') { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
            Tensor::new(&[p.len(), 2], row.repeat(p.len())).map_err(Into::into)
        };
        let img = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.0, 1.0]]).unwrap();
        let one = zero_shot_classify(&img, &[0, 1], &names, &["x {}"], &mut enc).unwrap();
        assert_eq!(one.predictions, vec![0, 1]);
        assert_eq!(one.accuracy, 1.0);
        let many = zero_shot_classify(&img, &[0, 1], &names, &["x {}", "x {}"], &mut enc).unwrap();
        assert_eq!(one, many);
    }
}
