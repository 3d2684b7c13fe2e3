//! Keep-list selection from a score map.

use rand::seq::index::sample;
use rand::Rng;

use crate::attnmask::ScoreMap;
use crate::error::{AclipError, Result};
use crate::rng::{stream, Domain};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectionStrategy {
    /// Keep the highest scores (discard the lowest).
    Low,
    /// Keep the lowest scores (discard the highest).
    High,
    /// Keep the top `keep - random_fraction` share plus a uniform draw of
    /// `random_fraction` from the rest.
    Mixed { random_fraction: f64 },
    /// Ignore scores entirely.
    Random,
}

/// `floor(n * ratio)`, tolerant of ratios like `1/3` that land a hair under
/// an integer.
pub(crate) fn budget(n: usize, ratio: f64) -> usize {
    (n as f64 * ratio + 1e-9).floor() as usize
}

fn check_ratio(n: usize, keep_ratio: f64) -> Result<usize> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(AclipError::Argument(format!("keep ratio {keep_ratio} outside (0, 1]")));
    }
    let k = budget(n, keep_ratio);
    if k == 0 {
        return Err(AclipError::Argument(format!(
            "keep ratio {keep_ratio} of {n} tokens leaves no token"
        )));
    }
    Ok(k)
}

/// Indices ordered by descending score, ties to the smaller index.
fn ranked_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn ranked_asc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

/// Sorted keep list of `floor(N keep_ratio)` positions of `scores`.
pub fn select_from_scores(
    scores: &[f64],
    keep_ratio: f64,
    strategy: SelectionStrategy,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let n = scores.len();
    let k = check_ratio(n, keep_ratio)?;
    let mut kept = match strategy {
        SelectionStrategy::Low => ranked_desc(scores)[..k].to_vec(),
        SelectionStrategy::High => ranked_asc(scores)[..k].to_vec(),
        SelectionStrategy::Random => sample(rng, n, k).into_vec(),
        SelectionStrategy::Mixed { random_fraction: rho } => {
            if !(rho > 0.0 && rho < keep_ratio) {
                return Err(AclipError::Argument(format!(
                    "mixed random fraction {rho} must lie strictly between 0 and keep ratio {keep_ratio}"
                )));
            }
            let top = budget(n, keep_ratio - rho);
            let extra = budget(n, rho);
            let ranked = ranked_desc(scores);
            let mut kept = ranked[..top].to_vec();
            let rest = &ranked[top..];
            kept.extend(sample(rng, rest.len(), extra.min(rest.len())).into_iter().map(|i| rest[i]));
            if kept.is_empty() {
                return Err(AclipError::Argument("mixed selection keeps no token".into()));
            }
            kept
        }
    };
    kept.sort_unstable();
    Ok(kept)
}

/// [`select_from_scores`] on a map, with the random part seeded by `seed`.
pub fn select_tokens(
    map: &ScoreMap,
    keep_ratio: f64,
    strategy: SelectionStrategy,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = stream(seed, Domain::Mask, &[]);
    select_from_scores(&map.scores, keep_ratio, strategy, &mut rng)
}

/// Uniform keep list of `floor(n keep_ratio)` indices, sorted.
pub fn random_mask(n: usize, keep_ratio: f64, seed: u64) -> Result<Vec<usize>> {
    let k = check_ratio(n, keep_ratio)?;
    let mut rng = stream(seed, Domain::Mask, &[]);
    let mut kept = sample(&mut rng, n, k).into_vec();
    kept.sort_unstable();
    Ok(kept)
}
