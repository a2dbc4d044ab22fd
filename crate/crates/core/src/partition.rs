//! Secret-key-controlled, step-dependent green-red partition of the item space.
//!
//! The owner's key derives a Gaussian projection vector; item embeddings are
//! projected to one-dimensional semantic coordinates; a per-step seed hashed
//! from the interaction context shifts a sinusoidal hash over those
//! coordinates; thresholding the hash yields the green mask. Every step of
//! this chain is pinned to exact bit patterns: the verifier must re-derive
//! the same mask from black-box outputs, possibly on different hardware.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// The watermark owner's private credential.
///
/// Any 64-bit value is a valid key. Keys are accepted on the command line
/// and held in memory only; nothing in this crate writes a key into a
/// report, log, or serialized artifact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SecretKey(pub u64);

/// Dense item embedding matrix, `n_items` rows by `dim` columns, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemEmbeddings {
    data: Vec<f64>,
    n_items: usize,
    dim: usize,
}

impl ItemEmbeddings {
    pub fn new(data: Vec<f64>, n_items: usize, dim: usize) -> Result<Self> {
        if n_items == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding matrix must have at least one item and one dimension".into(),
            ));
        }
        if data.len() != n_items * dim {
            return Err(Error::InvalidArgument(format!(
                "embedding matrix has {} values, expected {}x{}",
                data.len(),
                n_items,
                dim
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "embedding matrix contains a non-finite value".into(),
            ));
        }
        Ok(Self { data, n_items, dim })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, item: usize) -> &[f64] {
        &self.data[item * self.dim..(item + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Key-derived Gaussian projection direction (one value per embedding dim).
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionVector {
    pub values: Vec<f64>,
}

/// One-dimensional semantic coordinate per item: `dot(e_i, v) / sqrt(d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticCoordinates {
    pub coords: Vec<f64>,
}

impl SemanticCoordinates {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Step-dependent seed derived from the key and the interaction context.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSeed {
    /// 32-bit seed before normalization.
    pub raw: u32,
    /// `raw / 2^32`, evaluated in double precision; always in [0, 1).
    pub normalized: f64,
    /// Integer encoding of the trailing context that was hashed.
    pub context_id: u32,
}

/// Per-step binary partition of the item space.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenMask {
    pub bits: Vec<bool>,
    pub step_seed: StepSeed,
}

impl GreenMask {
    pub fn count_green(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Parameters of the keyed partition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartitionConfig {
    /// Hash threshold; items with hash value <= gamma are green.
    pub gamma: f64,
    /// Frequency scaling factor of the sinusoidal hash. Smaller values give
    /// larger contiguous green regions along the semantic axis.
    pub omega: f64,
    /// Multiplicative hashing constant for the step seed.
    pub hash_constant: u32,
    /// Number of trailing history items folded into the context id.
    pub context_width: usize,
}

/// Knuth's 32-bit multiplicative hashing constant.
pub const DEFAULT_HASH_CONSTANT: u32 = 2_654_435_761;

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            omega: std::f64::consts::TAU,
            hash_constant: DEFAULT_HASH_CONSTANT,
            context_width: 1,
        }
    }
}

impl PartitionConfig {
    /// Checks field ranges. `gamma = 0` is legal and turns the partition
    /// into an all-red no-op; `gamma = 1` marks everything green.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "omega must be positive and finite, got {}",
                self.omega
            )));
        }
        Ok(())
    }
}

/// Derives the keyed projection vector: `dim` independent standard normals
/// from SplitMix64 seeded with the key, mapped through Box-Muller.
///
/// The draw order is pinned: each pair of 64-bit outputs produces the
/// (cosine, sine) pair of one Box-Muller step; an odd final slot keeps the
/// cosine value. Bit-identical across platforms and runs.
pub fn derive_projection(key: SecretKey, dim: usize) -> Result<ProjectionVector> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "projection dimension must be at least 1".into(),
        ));
    }
    let mut rng = SplitMix64::new(key.0);
    let mut values = Vec::with_capacity(dim);
    while values.len() < dim {
        let (a, b) = rng.next_normal_pair();
        values.push(a);
        if values.len() < dim {
            values.push(b);
        }
    }
    Ok(ProjectionVector { values })
}

/// Projects every embedding row onto the keyed direction: `dot(e_i, v)/sqrt(d)`.
///
/// The dot product accumulates left to right in double precision so the
/// result is reproducible bit for bit.
pub fn semantic_coordinates(
    embeddings: &ItemEmbeddings,
    projection: &ProjectionVector,
) -> Result<SemanticCoordinates> {
    if embeddings.dim() != projection.values.len() {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension {} does not match projection length {}",
            embeddings.dim(),
            projection.values.len()
        )));
    }
    let scale = libm::sqrt(embeddings.dim() as f64);
    let coords = (0..embeddings.n_items())
        .map(|i| {
            let row = embeddings.row(i);
            let mut dot = 0.0;
            for (e, v) in row.iter().zip(&projection.values) {
                dot += e * v;
            }
            dot / scale
        })
        .collect();
    Ok(SemanticCoordinates { coords })
}

/// Computes the step-dependent seed from the key and the trailing history.
///
/// The context id is the most recent item id when `context_width` is 1,
/// otherwise the left fold `r <- r * a + item (mod 2^32)` over the trailing
/// `context_width` items. An empty history uses context id 0, so cold-start
/// queries still get a valid key-dependent partition.
pub fn step_seed(key: SecretKey, history: &[u32], cfg: &PartitionConfig) -> StepSeed {
    let a = cfg.hash_constant;
    let start = history.len().saturating_sub(cfg.context_width.max(1));
    let context_id = history[start..]
        .iter()
        .fold(0u32, |r, &item| r.wrapping_mul(a).wrapping_add(item));
    let raw = a
        .wrapping_mul(context_id)
        .wrapping_add((key.0 % (1u64 << 32)) as u32);
    StepSeed {
        raw,
        normalized: raw as f64 / (1u64 << 32) as f64,
        context_id,
    }
}

/// Randomized sinusoidal hash: `|sin((c + s) * omega)|`, in [0, 1].
#[inline]
pub fn continuous_hash(coord: f64, seed_norm: f64, omega: f64) -> f64 {
    libm::fabs(libm::sin((coord + seed_norm) * omega))
}

/// Thresholds the sinusoidal hash at `gamma` over all items.
///
/// An item is green iff `continuous_hash(c_i, s, omega) <= gamma`. The
/// comparison is `<=`; the boundary set has measure zero but the choice is
/// fixed so masks reproduce exactly.
pub fn green_mask(
    coords: &SemanticCoordinates,
    seed: StepSeed,
    cfg: &PartitionConfig,
) -> GreenMask {
    let bits = coords
        .coords
        .iter()
        .map(|&c| continuous_hash(c, seed.normalized, cfg.omega) <= cfg.gamma)
        .collect();
    GreenMask {
        bits,
        step_seed: seed,
    }
}

/// Membership test for a single item, identical to the corresponding bit of
/// [`green_mask`] but without materializing the full mask.
#[inline]
pub fn is_green(coord: f64, seed: StepSeed, cfg: &PartitionConfig) -> bool {
    continuous_hash(coord, seed.normalized, cfg.omega) <= cfg.gamma
}

/// Marginal green probability of a single item under a uniform seed, with
/// the Monte Carlo standard error when a closed form is unavailable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveDensity {
    pub value: f64,
    /// `None` when the closed form applies (omega an integer multiple of pi).
    pub std_error: Option<f64>,
}

/// Probability that a fixed item is green when the normalized seed is
/// uniform over [0, 1).
///
/// When `omega` is an integer multiple of pi the seed sweeps the hash phase
/// over whole periods of |sin|, so the probability is exactly
/// `(2/pi) * asin(gamma)` for every coordinate. Otherwise the marginal rate
/// depends on the item's coordinate; the estimate returned is the Monte
/// Carlo rate at coordinate 0 over 2^20 uniform seeds, with its standard
/// error.
pub fn effective_density_detailed(gamma: f64, omega: f64) -> Result<EffectiveDensity> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be in [0, 1], got {gamma}"
        )));
    }
    if !(omega > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "omega must be positive, got {omega}"
        )));
    }
    let periods = omega / std::f64::consts::PI;
    if (periods - libm::round(periods)).abs() < 1e-9 * periods.max(1.0) {
        return Ok(EffectiveDensity {
            value: 2.0 * libm::asin(gamma) / std::f64::consts::PI,
            std_error: None,
        });
    }
    let n = 1usize << 20;
    let mut rng = SplitMix64::new(0x9D5F_61C2_53A1_4E07);
    let mut hits = 0usize;
    for _ in 0..n {
        if continuous_hash(0.0, rng.next_f64(), omega) <= gamma {
            hits += 1;
        }
    }
    let p = hits as f64 / n as f64;
    Ok(EffectiveDensity {
        value: p,
        std_error: Some(libm::sqrt(p * (1.0 - p) / n as f64)),
    })
}

/// Convenience wrapper around [`effective_density_detailed`] returning only
/// the rate. This is the verifier's null-hypothesis green rate.
pub fn effective_density(gamma: f64, omega: f64) -> Result<f64> {
    effective_density_detailed(gamma, omega).map(|d| d.value)
}
