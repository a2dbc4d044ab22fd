//! Black-box ownership verification from recommendation logs.
//!
//! Given the secret key and the item embeddings, the verifier re-derives the
//! green partition each logged list was served under and tests whether green
//! items are over-represented relative to the keyless base rate with a
//! one-sided z-test. No model access is needed: the inputs are the logs,
//! the key, and the public embedding matrix.

use crate::error::{Error, Result};
use crate::partition::{
    effective_density, is_green, step_seed, PartitionConfig, SecretKey, SemanticCoordinates,
};

/// Ownership is claimed when the z statistic exceeds this threshold; the
/// one-sided normal tail there is about 3.17e-5.
pub const OWNERSHIP_Z_THRESHOLD: f64 = 4.0;

/// One logged recommendation event: the interaction context the model saw
/// and the item list it emitted.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendationList {
    pub user_id: u64,
    pub history: Vec<u32>,
    pub items: Vec<u32>,
}

/// Outcome of a verification run. Contains only public statistics; the
/// secret key is never part of a report.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VerificationReport {
    pub green_count: usize,
    pub total: usize,
    pub empirical_rate: f64,
    pub null_rate: f64,
    pub z_score: f64,
    pub p_value: f64,
    pub owned: bool,
    pub threshold: f64,
}

/// Re-derives the partition for every list and counts green recommendations.
///
/// Each list's partition is fixed by the step seed of its logged history, so
/// every recommended item is tested for green membership exactly as the
/// injector saw it. Returns `(green_count, total)`; an empty collection
/// counts as `(0, 0)`.
pub fn count_green(
    lists: &[RecommendationList],
    key: SecretKey,
    coords: &SemanticCoordinates,
    pcfg: &PartitionConfig,
) -> Result<(usize, usize)> {
    let n_items = coords.len() as u64;
    let mut green = 0usize;
    let mut total = 0usize;
    for list in lists {
        if let Some(&bad) = list.items.iter().find(|&&id| id as u64 >= n_items) {
            return Err(Error::InvalidArgument(format!(
                "item id {bad} out of range for catalog of {n_items} (user {})",
                list.user_id
            )));
        }
        let seed = step_seed(key, &list.history, pcfg);
        for &item in &list.items {
            if is_green(coords.coords[item as usize], seed, pcfg) {
                green += 1;
            }
            total += 1;
        }
    }
    Ok((green, total))
}

/// One-sided z statistic for the observed green rate against the base rate:
/// `(green/total - null_rate) / sqrt(null_rate (1 - null_rate) / total)`.
pub fn z_score(green_count: usize, total: usize, null_rate: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument(
            "cannot score an empty recommendation sample".into(),
        ));
    }
    if green_count > total {
        return Err(Error::InvalidArgument(format!(
            "green count {green_count} exceeds total {total}"
        )));
    }
    if !(null_rate > 0.0 && null_rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "null rate must be inside (0, 1), got {null_rate}"
        )));
    }
    let n = total as f64;
    let rate = green_count as f64 / n;
    Ok((rate - null_rate) / libm::sqrt(null_rate * (1.0 - null_rate) / n))
}

/// Upper-tail normal probability `P(Z > z) = erfc(z / sqrt 2) / 2`.
pub fn p_value(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "z must be finite, got {z}"
        )));
    }
    Ok(0.5 * libm::erfc(z / std::f64::consts::SQRT_2))
}

/// Full verification pass with an explicit null rate, for callers that have
/// measured an empirical base rate on a known-clean model. `None` uses the
/// closed-form (or Monte Carlo) keyless density of the partition.
pub fn verify_with_null_rate(
    lists: &[RecommendationList],
    key: SecretKey,
    coords: &SemanticCoordinates,
    pcfg: &PartitionConfig,
    threshold: f64,
    null_rate: Option<f64>,
) -> Result<VerificationReport> {
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ownership threshold must be finite, got {threshold}"
        )));
    }
    let null_rate = match null_rate {
        Some(r) => r,
        None => effective_density(pcfg.gamma, pcfg.omega)?,
    };
    let (green_count, total) = count_green(lists, key, coords, pcfg)?;
    let z = z_score(green_count, total, null_rate)?;
    Ok(VerificationReport {
        green_count,
        total,
        empirical_rate: green_count as f64 / total as f64,
        null_rate,
        z_score: z,
        p_value: p_value(z)?,
        owned: z > threshold,
        threshold,
    })
}

/// Full verification pass: count green recommendations, compare against the
/// effective keyless density, and decide ownership at `threshold`.
pub fn verify(
    lists: &[RecommendationList],
    key: SecretKey,
    coords: &SemanticCoordinates,
    pcfg: &PartitionConfig,
    threshold: f64,
) -> Result<VerificationReport> {
    verify_with_null_rate(lists, key, coords, pcfg, threshold, None)
}
