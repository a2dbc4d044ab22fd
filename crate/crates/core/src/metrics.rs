//! Ranking-utility and watermark metrics over recommendation lists.
//!
//! Utility metrics use the leave-one-out protocol: each user has exactly one
//! held-out target item, and a list scores by whether (and where) that
//! target appears in its top K.

use crate::error::{Error, Result};
use crate::partition::{PartitionConfig, SecretKey, SemanticCoordinates};
use crate::verifier::{count_green, RecommendationList};

fn check_aligned(lists: &[RecommendationList], targets: &[u32], k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if lists.is_empty() {
        return Err(Error::InvalidArgument("no recommendation lists".into()));
    }
    if lists.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} lists but {} held-out targets",
            lists.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// Fraction of users whose held-out target appears in their top `k` items.
pub fn recall_at_k(lists: &[RecommendationList], targets: &[u32], k: usize) -> Result<f64> {
    check_aligned(lists, targets, k)?;
    let hits = lists
        .iter()
        .zip(targets)
        .filter(|(list, target)| list.items.iter().take(k).any(|i| i == *target))
        .count();
    Ok(hits as f64 / lists.len() as f64)
}

/// Mean discounted gain of the held-out target: `1/log2(rank+1)` when the
/// target sits at 1-based rank <= `k`, else 0. With a single relevant item
/// the ideal gain is 1, so this is already normalized.
pub fn ndcg_at_k(lists: &[RecommendationList], targets: &[u32], k: usize) -> Result<f64> {
    check_aligned(lists, targets, k)?;
    let mut sum = 0.0;
    for (list, target) in lists.iter().zip(targets) {
        if let Some(pos) = list.items.iter().take(k).position(|i| i == target) {
            sum += 1.0 / libm::log2(pos as f64 + 2.0);
        }
    }
    Ok(sum / lists.len() as f64)
}

/// Mean top-`k` overlap between two aligned runs: `|A ∩ B| / k` per user.
///
/// Lists must be aligned user by user; a user-id mismatch is an error, not a
/// silent zero.
pub fn agreement_at_k(
    a: &[RecommendationList],
    b: &[RecommendationList],
    k: usize,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "runs have {} and {} lists; need equal non-zero counts",
            a.len(),
            b.len()
        )));
    }
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        if x.user_id != y.user_id {
            return Err(Error::InvalidArgument(format!(
                "misaligned users: {} vs {}",
                x.user_id, y.user_id
            )));
        }
        let xs: std::collections::HashSet<u32> = x.items.iter().take(k).copied().collect();
        let shared = y.items.iter().take(k).filter(|i| xs.contains(i)).count();
        sum += shared as f64 / k as f64;
    }
    Ok(sum / a.len() as f64)
}

/// Aggregate green fraction of the recommended items, re-derived from the
/// key exactly as the verifier counts them.
pub fn green_hit_rate(
    lists: &[RecommendationList],
    key: SecretKey,
    coords: &SemanticCoordinates,
    pcfg: &PartitionConfig,
) -> Result<f64> {
    let (green, total) = count_green(lists, key, coords, pcfg)?;
    if total == 0 {
        return Err(Error::InvalidArgument(
            "no recommended items to rate".into(),
        ));
    }
    Ok(green as f64 / total as f64)
}
