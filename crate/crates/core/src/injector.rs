//! Logit-space watermark injection with an entropy-aware strength controller.
//!
//! Injection adds a positive offset to items that are both green and inside
//! the candidate band near the score cutoff. The offset is the product of a
//! global strength (feedback-controlled toward a target green rate) and a
//! per-step local scale that shrinks toward zero when the model is already
//! confident, so sharply peaked predictions are left intact.

use crate::error::{Error, Result};
use crate::partition::{
    green_mask, step_seed, GreenMask, PartitionConfig, SecretKey, SemanticCoordinates,
};

/// Full item-space score vector for one recommendation step.
///
/// Values must be finite or negative infinity; negative infinity marks items
/// the serving layer has excluded (already-consumed items, typically).
#[derive(Clone, Debug, PartialEq)]
pub struct LogitVector {
    pub values: Vec<f64>,
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("logit vector is empty".into()));
        }
        if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidArgument(
                "logits must be finite or negative infinity".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Injection-shape parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InjectorConfig {
    /// Width of the candidate band: items scoring at or above the
    /// `k_cand`-th largest logit are eligible for injection.
    pub k_cand: usize,
    /// Recommendation list length; also the entropy window.
    pub top_k: usize,
    /// Exponent shaping the entropy-based local scale.
    pub beta: f64,
    /// Initial global strength.
    pub delta_base: f64,
    /// Lower clip bound for the global strength.
    pub delta_min: f64,
    /// Upper clip bound for the global strength.
    pub delta_max: f64,
}

impl Default for InjectorConfig {
    fn default() -> Self {
        Self {
            k_cand: 100,
            top_k: 20,
            beta: 1.0,
            delta_base: 0.1,
            delta_min: 0.01,
            delta_max: 5.0,
        }
    }
}

impl InjectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::InvalidArgument("top_k must be at least 1".into()));
        }
        if self.k_cand < self.top_k {
            return Err(Error::InvalidArgument(format!(
                "k_cand ({}) must be at least top_k ({})",
                self.k_cand, self.top_k
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        if !(self.delta_base > 0.0 && self.delta_base.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "delta_base must be finite and positive, got {}",
                self.delta_base
            )));
        }
        if !(self.delta_min > 0.0 && self.delta_min <= self.delta_max && self.delta_max.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "strength bounds must satisfy 0 < delta_min <= delta_max, got [{}, {}]",
                self.delta_min, self.delta_max
            )));
        }
        Ok(())
    }
}

/// Feedback controller for the global injection strength, including the
/// clip bounds it enforces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlobalController {
    /// Current global strength.
    pub alpha_global: f64,
    /// Momentum-averaged green rate of emitted lists.
    pub running_rate: f64,
    /// Learning rate of the strength update.
    pub eta: f64,
    /// Target green rate in emitted lists.
    pub tau: f64,
    /// Momentum of the running green-rate average.
    pub momentum: f64,
    /// Lower clip bound applied after every update.
    pub delta_min: f64,
    /// Upper clip bound applied after every update.
    pub delta_max: f64,
}

impl GlobalController {
    /// Controller at the default feedback settings, starting from
    /// `delta_base` with an empty running average.
    pub fn new(cfg: &InjectorConfig) -> Self {
        Self {
            alpha_global: cfg.delta_base,
            running_rate: 0.0,
            eta: 0.05,
            tau: 0.65,
            momentum: 0.9,
            delta_min: cfg.delta_min,
            delta_max: cfg.delta_max,
        }
    }

    /// Controller with explicit feedback settings.
    pub fn with_feedback(cfg: &InjectorConfig, eta: f64, tau: f64, momentum: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta must be finite and non-negative, got {eta}"
            )));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!(
                "tau must be in [0, 1], got {tau}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            eta,
            tau,
            momentum,
            ..Self::new(cfg)
        })
    }
}

/// Candidate band around the score cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMask {
    pub bits: Vec<bool>,
    /// The `k_cand`-th largest finite logit; band membership is `z >= threshold`.
    pub threshold: f64,
}

/// Items eligible for injection this step: green items inside the band.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionMask {
    pub bits: Vec<bool>,
    pub boundary_bits: Vec<bool>,
    pub threshold: f64,
}

impl InjectionMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Marks items scoring at or above the `k_cand`-th largest finite logit.
///
/// Ties with the threshold value are all included, so the band can hold more
/// than `k_cand` items. Non-finite entries are never in the band.
pub fn boundary_mask(logits: &LogitVector, k_cand: usize) -> Result<BoundaryMask> {
    if k_cand == 0 {
        return Err(Error::InvalidArgument("k_cand must be at least 1".into()));
    }
    let mut finite: Vec<f64> = logits
        .values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    if finite.len() < k_cand {
        return Err(Error::InvalidArgument(format!(
            "candidate band needs {k_cand} finite logits, have {}",
            finite.len()
        )));
    }
    let idx = k_cand - 1;
    let threshold = if idx + 1 == finite.len() {
        finite.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        finite.select_nth_unstable_by(idx, |a, b| b.total_cmp(a));
        finite[idx]
    };
    Ok(BoundaryMask {
        bits: logits
            .values
            .iter()
            .map(|&z| z.is_finite() && z >= threshold)
            .collect(),
        threshold,
    })
}

/// Intersects the candidate band with the green mask.
pub fn injection_mask(boundary: &BoundaryMask, green: &GreenMask) -> Result<InjectionMask> {
    if boundary.bits.len() != green.bits.len() {
        return Err(Error::InvalidArgument(format!(
            "boundary length {} does not match green mask length {}",
            boundary.bits.len(),
            green.bits.len()
        )));
    }
    Ok(InjectionMask {
        bits: boundary
            .bits
            .iter()
            .zip(&green.bits)
            .map(|(b, g)| *b && *g)
            .collect(),
        boundary_bits: boundary.bits.clone(),
        threshold: boundary.threshold,
    })
}

/// Entropy-based local strength scale in [0, 1].
///
/// Softmax the `top_k` largest logits (max-subtracted for stability), take
/// the entropy H of that distribution, and return `(H / ln top_k)^beta`. A
/// near-uniform head gives a scale near 1; a confidently peaked head gives
/// a scale near 0. `top_k = 1` returns 0: a single-item head is maximally
/// confident and its entropy normalizer is degenerate.
pub fn local_scale(logits: &LogitVector, top_k: usize, beta: f64) -> Result<f64> {
    if top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be at least 1".into()));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "beta must be finite and non-negative, got {beta}"
        )));
    }
    let mut finite: Vec<f64> = logits
        .values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    if finite.len() < top_k {
        return Err(Error::InvalidArgument(format!(
            "entropy window needs {top_k} finite logits, have {}",
            finite.len()
        )));
    }
    if top_k == 1 {
        return Ok(0.0);
    }
    if top_k < finite.len() {
        finite.select_nth_unstable_by(top_k - 1, |a, b| b.total_cmp(a));
        finite.truncate(top_k);
    }
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for &z in &finite {
        let shifted = z - max;
        let w = libm::exp(shifted);
        sum += w;
        weighted += w * shifted;
    }
    let entropy = libm::log(sum) - weighted / sum;
    let normalized = (entropy / libm::log(top_k as f64)).clamp(0.0, 1.0);
    Ok(libm::pow(normalized, beta))
}

/// Adds `alpha_global * alpha_local` to every masked logit. Unmasked logits
/// keep their exact bit patterns; the input vector is not modified.
pub fn inject(
    logits: &LogitVector,
    mask: &InjectionMask,
    alpha_global: f64,
    alpha_local: f64,
) -> Result<LogitVector> {
    if logits.len() != mask.bits.len() {
        return Err(Error::InvalidArgument(format!(
            "logit length {} does not match mask length {}",
            logits.len(),
            mask.bits.len()
        )));
    }
    for (name, a) in [("alpha_global", alpha_global), ("alpha_local", alpha_local)] {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be finite and non-negative, got {a}"
            )));
        }
    }
    let offset = alpha_global * alpha_local;
    Ok(LogitVector {
        values: logits
            .values
            .iter()
            .zip(&mask.bits)
            .map(|(&z, &m)| if m { z + offset } else { z })
            .collect(),
    })
}

/// One feedback update of the global strength.
///
/// The running green rate moves toward `r_curr` (the green fraction of the
/// just-emitted watermarked top list) under the controller's momentum, then
/// the strength takes a proportional step toward the target rate and is
/// clipped into `[delta_min, delta_max]`.
pub fn update_controller(ctrl: GlobalController, r_curr: f64) -> Result<GlobalController> {
    if !(0.0..=1.0).contains(&r_curr) {
        return Err(Error::InvalidArgument(format!(
            "r_curr must be in [0, 1], got {r_curr}"
        )));
    }
    let running_rate = ctrl.momentum * ctrl.running_rate + (1.0 - ctrl.momentum) * r_curr;
    let alpha_global = (ctrl.alpha_global + ctrl.eta * (ctrl.tau - running_rate))
        .clamp(ctrl.delta_min, ctrl.delta_max);
    Ok(GlobalController {
        alpha_global,
        running_rate,
        ..ctrl
    })
}

/// Indices of the `k` largest finite scores, ordered by score descending
/// with ascending index as the tie-break. Errors when fewer than `k` scores
/// are finite.
pub fn top_k_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i].is_finite())
        .collect();
    if idx.len() < k {
        return Err(Error::InvalidArgument(format!(
            "need {k} finite scores, have {}",
            idx.len()
        )));
    }
    let by_score = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then_with(|| a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, by_score);
        idx.truncate(k);
    }
    idx.sort_unstable_by(by_score);
    Ok(idx)
}

/// Runs one full injection step over a raw logit vector.
///
/// Derives the step seed from the trailing history, builds the green and
/// candidate masks, scales the global strength by the entropy-based local
/// scale, and adds the offset. In calibrating mode the green rate of the
/// watermarked top-`top_k` list drives one controller update; in frozen
/// serving mode the controller passes through unchanged.
#[allow(clippy::too_many_arguments)]
pub fn watermark_step(
    logits: &LogitVector,
    history: &[u32],
    key: SecretKey,
    coords: &SemanticCoordinates,
    pcfg: &PartitionConfig,
    icfg: &InjectorConfig,
    ctrl: GlobalController,
    calibrating: bool,
) -> Result<(LogitVector, GlobalController)> {
    icfg.validate()?;
    if logits.len() != coords.len() {
        return Err(Error::InvalidArgument(format!(
            "logit length {} does not match coordinate count {}",
            logits.len(),
            coords.len()
        )));
    }
    let seed = step_seed(key, history, pcfg);
    let green = green_mask(coords, seed, pcfg);
    let boundary = boundary_mask(logits, icfg.k_cand)?;
    let mask = injection_mask(&boundary, &green)?;
    let alpha_local = local_scale(logits, icfg.top_k, icfg.beta)?;
    let watermarked = inject(logits, &mask, ctrl.alpha_global, alpha_local)?;
    let ctrl = if calibrating {
        let top = top_k_indices(&watermarked.values, icfg.top_k)?;
        let r_curr = top.iter().filter(|&&i| green.bits[i]).count() as f64 / top.len() as f64;
        update_controller(ctrl, r_curr)?
    } else {
        ctrl
    };
    Ok((watermarked, ctrl))
}
