//! Synthetic desk-scale recommendation environment.
//!
//! Provides everything needed to exercise the watermark end to end without
//! external data: a Gaussian-mixture item catalog, cluster-sticky user
//! interaction walks, a deterministic closed-form teacher scorer, a
//! count-based student that imitates the teacher from its query logs alone,
//! and a calibration loop for the global injection strength. Every generator
//! is deterministic in its seed.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::injector::{
    top_k_indices, update_controller, watermark_step, GlobalController, InjectorConfig,
    LogitVector,
};
use crate::partition::{
    derive_projection, is_green, semantic_coordinates, step_seed, ItemEmbeddings, PartitionConfig,
    SecretKey, SemanticCoordinates,
};
use crate::rng::SplitMix64;
use crate::verifier::RecommendationList;

/// Decay of the teacher's history average.
pub const DEFAULT_RHO: f64 = 0.8;
/// Weight of log-popularity in the teacher's scores.
pub const DEFAULT_LAMBDA_POP: f64 = 0.1;
/// Sharpness of the proximity kernel used by the interaction walk.
const PROXIMITY_SCALE: f64 = 10.0;
/// Norm of every catalog embedding, as a multiple of sqrt(dim). Larger
/// scales widen the teacher's logit band, which lets the entropy-based
/// local scale actually separate confident lists from uncertain ones.
const EMBED_SCALE: f64 = 3.0;
/// Decay of the walk's taste vector, mirroring the teacher's default rho.
const WALK_DECAY: f64 = 0.8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn fill_normals(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let (a, b) = rng.next_normal_pair();
        out.push(a);
        out.push(b);
    }
    out.truncate(n);
    out
}

/// Synthetic item catalog: embeddings from a Gaussian mixture, the cluster
/// assignment of each item, and lognormal base popularities.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCatalog {
    pub embeddings: ItemEmbeddings,
    pub cluster_of: Vec<u32>,
    pub popularity: Vec<f64>,
}

impl SyntheticCatalog {
    pub fn n_items(&self) -> usize {
        self.embeddings.n_items()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_of.iter().map(|&c| c as usize + 1).max().unwrap_or(0)
    }
}

/// Generates the synthetic catalog.
///
/// Item `i` belongs to cluster `i mod n_clusters`; its embedding is the
/// cluster center plus `spread` times a standard Gaussian offset, then
/// scaled to norm `sqrt(d)` so dot-product ranking coincides with
/// nearest-neighbor ranking. Popularities are `exp(N(0,1))`. The draw order
/// is fixed (centers, then offsets, then popularities), so catalogs are
/// bit-identical for a fixed seed.
///
/// Generation fails if the mixture does not separate: the mean pairwise
/// distance within clusters must be below the mean pairwise distance
/// between clusters.
pub fn gen_catalog(
    n_items: usize,
    dim: usize,
    n_clusters: usize,
    spread: f64,
    rng_seed: u64,
) -> Result<SyntheticCatalog> {
    if n_clusters < 1 || n_items < n_clusters || dim < 1 {
        return Err(Error::InvalidArgument(format!(
            "need n_items >= n_clusters >= 1 and dim >= 1, got {n_items}/{n_clusters}/{dim}"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spread must be finite and non-negative, got {spread}"
        )));
    }
    let mut rng = SplitMix64::new(rng_seed);
    let centers = fill_normals(&mut rng, n_clusters * dim);
    for a in 0..n_clusters {
        for b in a + 1..n_clusters {
            if centers[a * dim..(a + 1) * dim] == centers[b * dim..(b + 1) * dim] {
                return Err(Error::Generation(format!(
                    "cluster centers {a} and {b} coincide"
                )));
            }
        }
    }
    let offsets = fill_normals(&mut rng, n_items * dim);
    let popularity: Vec<f64> = fill_normals(&mut rng, n_items)
        .into_iter()
        .map(libm::exp)
        .collect();

    let target_norm = EMBED_SCALE * libm::sqrt(dim as f64);
    let mut data = vec![0.0; n_items * dim];
    let mut cluster_of = Vec::with_capacity(n_items);
    for i in 0..n_items {
        let c = i % n_clusters;
        cluster_of.push(c as u32);
        let row = &mut data[i * dim..(i + 1) * dim];
        for j in 0..dim {
            row[j] = centers[c * dim + j] + spread * offsets[i * dim + j];
        }
        let norm = libm::sqrt(dot(row, row));
        if norm == 0.0 {
            return Err(Error::Generation(format!("item {i} has a zero embedding")));
        }
        let scale = target_norm / norm;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    let embeddings = ItemEmbeddings::new(data, n_items, dim)?;

    // Separation check over all pairs; clusters with fewer than two members
    // contribute no within-cluster pairs.
    let mut within = (0.0, 0usize);
    let mut between = (0.0, 0usize);
    for i in 0..n_items {
        for j in i + 1..n_items {
            let a = embeddings.row(i);
            let b = embeddings.row(j);
            let mut sq = 0.0;
            for (x, y) in a.iter().zip(b) {
                let d = x - y;
                sq += d * d;
            }
            let dist = libm::sqrt(sq);
            if cluster_of[i] == cluster_of[j] {
                within.0 += dist;
                within.1 += 1;
            } else {
                between.0 += dist;
                between.1 += 1;
            }
        }
    }
    if within.1 > 0 && between.1 > 0 {
        let mean_within = within.0 / within.1 as f64;
        let mean_between = between.0 / between.1 as f64;
        if mean_within >= mean_between {
            return Err(Error::Generation(format!(
                "mixture does not separate: within-cluster mean distance {mean_within:.4} >= \
                 between-cluster mean distance {mean_between:.4}; lower the spread"
            )));
        }
    }
    Ok(SyntheticCatalog {
        embeddings,
        cluster_of,
        popularity,
    })
}

/// Per-user interaction sequences with a leave-one-out split: the final
/// item of each sequence is the held-out evaluation target, everything
/// before it is the serving context.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionLog {
    pub sequences: Vec<Vec<u32>>,
}

impl InteractionLog {
    pub fn n_users(&self) -> usize {
        self.sequences.len()
    }

    /// The serving context: everything except the held-out final item.
    pub fn serving_prefix(&self, user: usize) -> &[u32] {
        let seq = &self.sequences[user];
        &seq[..seq.len() - 1]
    }

    /// The held-out final item of one user.
    pub fn held_out(&self, user: usize) -> u32 {
        *self.sequences[user].last().unwrap()
    }

    /// Held-out targets for all users, aligned with user index.
    pub fn held_out_targets(&self) -> Vec<u32> {
        (0..self.n_users()).map(|u| self.held_out(u)).collect()
    }
}

/// Generates cluster-sticky interaction walks.
///
/// Each user starts at a popularity-weighted item and carries a taste
/// vector, the exponentially decayed mean of the embeddings consumed so
/// far. At every later step the walk stays in its current cluster with
/// probability `p_stay`, otherwise jumps to a uniformly chosen different
/// cluster; the next item is sampled from the unseen items of the chosen
/// cluster with weight `popularity * exp(scale * cos)` against the taste
/// vector. Items never repeat within a user; if the chosen cluster is
/// exhausted the walk falls back to all unseen items.
pub fn gen_interactions(
    catalog: &SyntheticCatalog,
    n_users: usize,
    seq_len: usize,
    p_stay: f64,
    rng_seed: u64,
) -> Result<InteractionLog> {
    let n_items = catalog.n_items();
    if n_users < 1 {
        return Err(Error::InvalidArgument("n_users must be at least 1".into()));
    }
    if seq_len < 2 || seq_len > n_items {
        return Err(Error::InvalidArgument(format!(
            "seq_len must be in [2, n_items], got {seq_len} with {n_items} items"
        )));
    }
    if !(0.0..=1.0).contains(&p_stay) {
        return Err(Error::InvalidArgument(format!(
            "p_stay must be in [0, 1], got {p_stay}"
        )));
    }
    let n_clusters = catalog.n_clusters();
    let mut cluster_items: Vec<Vec<u32>> = vec![Vec::new(); n_clusters];
    for (i, &c) in catalog.cluster_of.iter().enumerate() {
        cluster_items[c as usize].push(i as u32);
    }
    let dim_f = catalog.dim() as f64;

    let mut rng = SplitMix64::new(rng_seed);
    let mut sequences = Vec::with_capacity(n_users);
    let mut seen = vec![false; n_items];
    let mut candidates: Vec<u32> = Vec::with_capacity(n_items);
    let mut weights: Vec<f64> = Vec::with_capacity(n_items);
    let mut taste: Vec<f64> = vec![0.0; catalog.dim()];
    for _ in 0..n_users {
        seen.iter_mut().for_each(|s| *s = false);
        let first = rng.next_weighted(&catalog.popularity) as u32;
        seen[first as usize] = true;
        let mut seq = vec![first];
        let mut cluster = catalog.cluster_of[first as usize] as usize;
        taste.copy_from_slice(catalog.embeddings.row(first as usize));
        for _ in 1..seq_len {
            let stay = n_clusters == 1 || rng.next_f64() < p_stay;
            let target = if stay {
                cluster
            } else {
                let pick = rng.next_below(n_clusters as u64 - 1) as usize;
                if pick < cluster {
                    pick
                } else {
                    pick + 1
                }
            };
            candidates.clear();
            candidates.extend(
                cluster_items[target]
                    .iter()
                    .copied()
                    .filter(|&i| !seen[i as usize]),
            );
            if candidates.is_empty() {
                candidates.extend((0..n_items as u32).filter(|&i| !seen[i as usize]));
            }
            let taste_norm = match libm::sqrt(dot(&taste, &taste)) {
                0.0 => 1.0,
                n => n,
            };
            let row_norm = EMBED_SCALE * libm::sqrt(dim_f);
            weights.clear();
            weights.extend(candidates.iter().map(|&i| {
                let cos = dot(&taste, catalog.embeddings.row(i as usize))
                    / (taste_norm * row_norm);
                catalog.popularity[i as usize] * libm::exp(PROXIMITY_SCALE * cos)
            }));
            let next = candidates[rng.next_weighted(&weights)];
            seen[next as usize] = true;
            cluster = catalog.cluster_of[next as usize] as usize;
            let row = catalog.embeddings.row(next as usize);
            for (t, &e) in taste.iter_mut().zip(row) {
                *t = WALK_DECAY * *t + (1.0 - WALK_DECAY) * e;
            }
            seq.push(next);
        }
        sequences.push(seq);
    }
    Ok(InteractionLog { sequences })
}

/// Anything that can score the full catalog for a given history.
pub trait Scorer {
    fn score_next(&self, history: &[u32]) -> Result<LogitVector>;
    fn n_items(&self) -> usize;
}

/// Deterministic closed-form next-item scorer.
///
/// Scores are `dot(e_i, u) / sqrt(d) + lambda_pop * ln(popularity_i)` where
/// `u` is the exponentially decayed mean (decay `rho`, most recent first) of
/// the history embeddings. Items already in the history score negative
/// infinity.
pub struct TeacherScorer<'a> {
    catalog: &'a SyntheticCatalog,
    pub rho: f64,
    pub lambda_pop: f64,
    pop_log: Vec<f64>,
}

impl<'a> TeacherScorer<'a> {
    pub fn new(catalog: &'a SyntheticCatalog, rho: f64, lambda_pop: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho must be in (0, 1], got {rho}"
            )));
        }
        if !(lambda_pop >= 0.0 && lambda_pop.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda_pop must be finite and non-negative, got {lambda_pop}"
            )));
        }
        let pop_log = catalog.popularity.iter().map(|&p| libm::log(p)).collect();
        Ok(Self {
            catalog,
            rho,
            lambda_pop,
            pop_log,
        })
    }
}

impl Scorer for TeacherScorer<'_> {
    fn score_next(&self, history: &[u32]) -> Result<LogitVector> {
        if history.is_empty() {
            return Err(Error::InvalidArgument(
                "teacher needs a non-empty history".into(),
            ));
        }
        let n_items = self.catalog.n_items();
        if let Some(&bad) = history.iter().find(|&&h| h as usize >= n_items) {
            return Err(Error::InvalidArgument(format!(
                "history item {bad} out of range for catalog of {n_items}"
            )));
        }
        let dim = self.catalog.dim();
        let mut context = vec![0.0; dim];
        let mut weight = 1.0;
        let mut weight_sum = 0.0;
        for &h in history.iter().rev() {
            let row = self.catalog.embeddings.row(h as usize);
            for (c, &e) in context.iter_mut().zip(row) {
                *c += weight * e;
            }
            weight_sum += weight;
            weight *= self.rho;
        }
        for c in context.iter_mut() {
            *c /= weight_sum;
        }
        let scale = libm::sqrt(dim as f64);
        let mut scores: Vec<f64> = (0..n_items)
            .map(|i| {
                dot(self.catalog.embeddings.row(i), &context) / scale
                    + self.lambda_pop * self.pop_log[i]
            })
            .collect();
        for &h in history {
            scores[h as usize] = f64::NEG_INFINITY;
        }
        LogitVector::new(scores)
    }

    fn n_items(&self) -> usize {
        self.catalog.n_items()
    }
}

/// Extraction-attack student: item-to-item transition weights harvested
/// from the teacher's logged answers, with a popularity-prior additive
/// smoothing. Never sees teacher internals, only (history, items) pairs.
///
/// Weights are reciprocal ranks accumulated as exact integer multiples of
/// `1/lcm(1..=max_list_len)`, so training is independent of log order down
/// to the bit.
pub struct StudentModel {
    n_items: usize,
    lcm: u128,
    transitions: Vec<HashMap<u32, u128>>,
    out_weight: Vec<u128>,
    pop_weight: Vec<u128>,
    pop_total: u128,
    pub smoothing: f64,
}

fn lcm_through(k: usize) -> Result<u128> {
    fn gcd(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let mut acc: u128 = 1;
    for r in 2..=k as u128 {
        let g = gcd(acc, r);
        acc = acc
            .checked_mul(r / g)
            .ok_or_else(|| Error::InvalidArgument(format!(
                "list length {k} too large for exact rank-weight accumulation"
            )))?;
    }
    Ok(acc)
}

/// Trains the student from recommendation logs.
///
/// Every logged list contributes `1/rank` transition weight from the last
/// history item to each recommended item. Accumulation is commutative
/// integer arithmetic: permuting the logs yields a bit-identical model.
pub fn train_student(
    logs: &[RecommendationList],
    n_items: usize,
    smoothing: f64,
) -> Result<StudentModel> {
    if logs.is_empty() {
        return Err(Error::InvalidArgument(
            "student training needs at least one logged list".into(),
        ));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing must be finite and non-negative, got {smoothing}"
        )));
    }
    let max_len = logs.iter().map(|l| l.items.len()).max().unwrap_or(0);
    if max_len == 0 {
        return Err(Error::InvalidArgument(
            "student training needs non-empty recommendation lists".into(),
        ));
    }
    let lcm = lcm_through(max_len)?;
    let mut transitions: Vec<HashMap<u32, u128>> = vec![HashMap::new(); n_items];
    let mut out_weight = vec![0u128; n_items];
    let mut pop_weight = vec![0u128; n_items];
    let mut pop_total = 0u128;
    for list in logs {
        let Some(&context) = list.history.last() else {
            return Err(Error::InvalidArgument(format!(
                "logged list for user {} has no history context",
                list.user_id
            )));
        };
        if context as usize >= n_items {
            return Err(Error::InvalidArgument(format!(
                "history item {context} out of range for catalog of {n_items}"
            )));
        }
        for (rank0, &item) in list.items.iter().enumerate() {
            if item as usize >= n_items {
                return Err(Error::InvalidArgument(format!(
                    "recommended item {item} out of range for catalog of {n_items}"
                )));
            }
            let w = lcm / (rank0 as u128 + 1);
            *transitions[context as usize].entry(item).or_insert(0) += w;
            out_weight[context as usize] += w;
            pop_weight[item as usize] += w;
            pop_total += w;
        }
    }
    Ok(StudentModel {
        n_items,
        lcm,
        transitions,
        out_weight,
        pop_weight,
        pop_total,
        smoothing,
    })
}

impl StudentModel {
    /// Number of distinct outgoing transitions recorded for a context item.
    pub fn transition_count(&self, context: u32) -> usize {
        self.transitions
            .get(context as usize)
            .map(|m| m.len())
            .unwrap_or(0)
    }
}

impl Scorer for StudentModel {
    fn score_next(&self, history: &[u32]) -> Result<LogitVector> {
        let Some(&context) = history.last() else {
            return Err(Error::InvalidArgument(
                "student needs a non-empty history".into(),
            ));
        };
        if let Some(&bad) = history.iter().find(|&&h| h as usize >= self.n_items) {
            return Err(Error::InvalidArgument(format!(
                "history item {bad} out of range for catalog of {}",
                self.n_items
            )));
        }
        let lcm_f = self.lcm as f64;
        let out = self.out_weight[context as usize] as f64 / lcm_f;
        let pop_total = self.pop_total as f64 / lcm_f;
        let denom = out + self.smoothing;
        let table = &self.transitions[context as usize];
        let mut scores: Vec<f64> = (0..self.n_items as u32)
            .map(|i| {
                if denom == 0.0 {
                    return 0.0;
                }
                let trans = table.get(&i).map(|&w| w as f64 / lcm_f).unwrap_or(0.0);
                let prior = self.pop_weight[i as usize] as f64 / lcm_f / pop_total;
                (trans + self.smoothing * prior) / denom
            })
            .collect();
        for &h in history {
            scores[h as usize] = f64::NEG_INFINITY;
        }
        LogitVector::new(scores)
    }

    fn n_items(&self) -> usize {
        self.n_items
    }
}

/// Everything the serving layer needs to watermark one scorer's output:
/// the key-derived coordinates and the partition, injection, and controller
/// state. The controller is carried frozen; calibration produces a new one.
#[derive(Clone, Debug, PartialEq)]
pub struct WatermarkContext {
    pub key: SecretKey,
    pub coords: SemanticCoordinates,
    pub pcfg: PartitionConfig,
    pub icfg: InjectorConfig,
    pub ctrl: GlobalController,
}

impl WatermarkContext {
    pub fn new(
        embeddings: &ItemEmbeddings,
        key: SecretKey,
        pcfg: PartitionConfig,
        icfg: InjectorConfig,
    ) -> Result<Self> {
        icfg.validate()?;
        let projection = derive_projection(key, embeddings.dim())?;
        let coords = semantic_coordinates(embeddings, &projection)?;
        let ctrl = GlobalController::new(&icfg);
        Ok(Self {
            key,
            coords,
            pcfg,
            icfg,
            ctrl,
        })
    }
}

/// Serves one top-`k` list, optionally watermarked with a frozen controller.
/// Ties are broken by ascending item id.
pub fn recommend<S: Scorer + ?Sized>(
    scorer: &S,
    user_id: u64,
    history: &[u32],
    k: usize,
    wm: Option<&WatermarkContext>,
) -> Result<RecommendationList> {
    let logits = scorer.score_next(history)?;
    let served = match wm {
        Some(ctx) => {
            watermark_step(
                &logits,
                history,
                ctx.key,
                &ctx.coords,
                &ctx.pcfg,
                &ctx.icfg,
                ctx.ctrl,
                false,
            )?
            .0
        }
        None => logits,
    };
    let top = top_k_indices(&served.values, k)?;
    Ok(RecommendationList {
        user_id,
        history: history.to_vec(),
        items: top.into_iter().map(|i| i as u32).collect(),
    })
}

/// Serves every user's top-`k` list on their leave-one-out serving prefix.
pub fn serve_all<S: Scorer + ?Sized>(
    scorer: &S,
    log: &InteractionLog,
    k: usize,
    wm: Option<&WatermarkContext>,
) -> Result<Vec<RecommendationList>> {
    (0..log.n_users())
        .map(|u| recommend(scorer, u as u64, log.serving_prefix(u), k, wm))
        .collect()
}

/// One controller update during calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationRecord {
    pub batch: usize,
    /// Strength after this batch's update.
    pub alpha_global: f64,
    /// Running green-rate average after this batch's update.
    pub running_rate: f64,
    /// Raw mean green rate of the lists emitted in this batch.
    pub batch_rate: f64,
}

/// Calibrates the global strength on validation batches.
///
/// Users are consumed cyclically in batches of `batch_size`. Within a batch
/// the controller is frozen; each user's prefix is served watermarked and
/// the green fraction of the emitted top list recorded. The batch mean then
/// drives exactly one controller update, keeping the feedback signal a
/// stable estimate rather than a single-user sample. Returns the calibrated
/// controller and the per-batch trace.
pub fn calibrate<S: Scorer + ?Sized>(
    scorer: &S,
    log: &InteractionLog,
    ctx: &WatermarkContext,
    n_batches: usize,
    batch_size: usize,
) -> Result<(GlobalController, Vec<CalibrationRecord>)> {
    if n_batches < 1 || batch_size < 1 {
        return Err(Error::InvalidArgument(
            "calibration needs at least one batch of at least one user".into(),
        ));
    }
    if log.n_users() == 0 {
        return Err(Error::InvalidArgument("interaction log is empty".into()));
    }
    let n_users = log.n_users();
    let mut ctrl = ctx.ctrl;
    let mut trace = Vec::with_capacity(n_batches);
    let mut cursor = 0usize;
    for batch in 0..n_batches {
        let frozen = WatermarkContext {
            ctrl,
            ..ctx.clone()
        };
        let mut rate_sum = 0.0;
        for _ in 0..batch_size {
            let user = cursor % n_users;
            cursor += 1;
            let prefix = log.serving_prefix(user);
            let list = recommend(scorer, user as u64, prefix, ctx.icfg.top_k, Some(&frozen))?;
            let seed = step_seed(ctx.key, prefix, &ctx.pcfg);
            let green = list
                .items
                .iter()
                .filter(|&&i| is_green(ctx.coords.coords[i as usize], seed, &ctx.pcfg))
                .count();
            rate_sum += green as f64 / list.items.len() as f64;
        }
        let batch_rate = rate_sum / batch_size as f64;
        ctrl = update_controller(ctrl, batch_rate)?;
        trace.push(CalibrationRecord {
            batch,
            alpha_global: ctrl.alpha_global,
            running_rate: ctrl.running_rate,
            batch_rate,
        });
    }
    Ok((ctrl, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_catalog() -> SyntheticCatalog {
        gen_catalog(200, 16, 4, 0.35, 42).unwrap()
    }

    #[test]
    fn gen_catalog_is_deterministic_in_seed() {
        let a = gen_catalog(100, 8, 4, 0.3, 7).unwrap();
        let b = gen_catalog(100, 8, 4, 0.3, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_catalog(100, 8, 4, 0.3, 8).unwrap();
        assert_ne!(a.embeddings, c.embeddings);
    }

    #[test]
    fn gen_catalog_validates_sizes() {
        assert!(gen_catalog(0, 8, 1, 0.3, 1).is_err());
        assert!(gen_catalog(3, 8, 4, 0.3, 1).is_err());
        assert!(gen_catalog(10, 0, 2, 0.3, 1).is_err());
        assert!(gen_catalog(10, 4, 2, -1.0, 1).is_err());
        assert!(gen_catalog(10, 4, 2, f64::NAN, 1).is_err());
    }

    #[test]
    fn gen_catalog_structure() {
        let cat = small_catalog();
        assert_eq!(cat.n_items(), 200);
        assert_eq!(cat.n_clusters(), 4);
        for (i, &c) in cat.cluster_of.iter().enumerate() {
            assert_eq!(c as usize, i % 4);
        }
        assert!(cat.popularity.iter().all(|&p| p > 0.0));
        // Rows share a common norm.
        let want = EMBED_SCALE * libm::sqrt(16.0);
        for i in 0..cat.n_items() {
            let row = cat.embeddings.row(i);
            let norm = libm::sqrt(dot(row, row));
            assert!((norm - want).abs() < 1e-9);
        }
    }

    #[test]
    fn gen_catalog_single_cluster_and_zero_spread() {
        let one = gen_catalog(30, 8, 1, 0.5, 3).unwrap();
        assert!(one.cluster_of.iter().all(|&c| c == 0));

        // spread = 0 collapses each cluster to its normalized center.
        let tight = gen_catalog(40, 8, 4, 0.0, 3).unwrap();
        for i in 0..40 {
            for j in (i + 1)..40 {
                if tight.cluster_of[i] == tight.cluster_of[j] {
                    assert_eq!(tight.embeddings.row(i), tight.embeddings.row(j));
                }
            }
        }
    }

    #[test]
    fn gen_catalog_rejects_unseparated_mixture() {
        // Spread far above the center scale erases the cluster structure,
        // so some draws put within-cluster distances on the wrong side of
        // the between-cluster ones and must be rejected.
        let mut rejected = false;
        for seed in 0..40 {
            if matches!(gen_catalog(24, 4, 3, 100.0, seed), Err(Error::Generation(_))) {
                rejected = true;
                break;
            }
        }
        assert!(rejected, "no unseparated draw among 40 seeds at spread 100");
    }

    #[test]
    fn gen_interactions_shape_and_determinism() {
        let cat = small_catalog();
        let a = gen_interactions(&cat, 50, 12, 0.8, 9).unwrap();
        let b = gen_interactions(&cat, 50, 12, 0.8, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_users(), 50);
        for u in 0..50 {
            let seq = &a.sequences[u];
            assert_eq!(seq.len(), 12);
            let mut sorted = seq.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 12, "user {u} repeats an item");
            assert_eq!(a.serving_prefix(u), &seq[..11]);
            assert_eq!(a.held_out(u), seq[11]);
        }
        let c = gen_interactions(&cat, 50, 12, 0.8, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gen_interactions_validates_inputs() {
        let cat = small_catalog();
        assert!(gen_interactions(&cat, 0, 5, 0.8, 1).is_err());
        assert!(gen_interactions(&cat, 5, 1, 0.8, 1).is_err());
        assert!(gen_interactions(&cat, 5, 201, 0.8, 1).is_err());
        assert!(gen_interactions(&cat, 5, 5, 1.2, 1).is_err());
    }

    #[test]
    fn gen_interactions_sticky_walk_persistence() {
        let cat = small_catalog();
        let log = gen_interactions(&cat, 100, 10, 1.0, 4).unwrap();
        for seq in &log.sequences {
            let c0 = cat.cluster_of[seq[0] as usize];
            assert!(seq.iter().all(|&i| cat.cluster_of[i as usize] == c0));
        }

        // Realized persistence tracks p_stay over >= 10^4 transitions.
        let p_stay = 0.7;
        let log = gen_interactions(&cat, 600, 18, p_stay, 11).unwrap();
        let mut stays = 0usize;
        let mut total = 0usize;
        for seq in &log.sequences {
            for w in seq.windows(2) {
                if cat.cluster_of[w[0] as usize] == cat.cluster_of[w[1] as usize] {
                    stays += 1;
                }
                total += 1;
            }
        }
        assert!(total >= 10_000);
        let rate = stays as f64 / total as f64;
        assert!(
            (rate - p_stay).abs() < 0.03,
            "persistence {rate} vs p_stay {p_stay}"
        );
    }

    #[test]
    fn teacher_single_item_history_is_nearest_neighbor() {
        let cat = small_catalog();
        let teacher = TeacherScorer::new(&cat, 0.8, 0.0).unwrap();
        for h in [0u32, 17, 63] {
            let logits = teacher.score_next(&[h]).unwrap();
            let top = top_k_indices(&logits.values, 1).unwrap()[0];
            // Best eligible neighbor by embedding dot product.
            let hrow = cat.embeddings.row(h as usize);
            let best = (0..cat.n_items())
                .filter(|&i| i != h as usize)
                .max_by(|&a, &b| {
                    dot(cat.embeddings.row(a), hrow)
                        .total_cmp(&dot(cat.embeddings.row(b), hrow))
                })
                .unwrap();
            assert_eq!(top, best);
        }
    }

    #[test]
    fn teacher_repeated_item_matches_single_item() {
        let cat = small_catalog();
        let teacher = TeacherScorer::new(&cat, 0.37, 0.0).unwrap();
        let a = teacher.score_next(&[5]).unwrap();
        let b = teacher.score_next(&[5, 5]).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            if x.is_finite() {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn teacher_masks_history_and_validates() {
        let cat = small_catalog();
        let teacher = TeacherScorer::new(&cat, 0.8, 0.1).unwrap();
        let history = [3u32, 50, 120];
        let logits = teacher.score_next(&history).unwrap();
        for &h in &history {
            assert_eq!(logits.values[h as usize], f64::NEG_INFINITY);
        }
        let top = top_k_indices(&logits.values, 20).unwrap();
        assert!(top.iter().all(|&i| !history.contains(&(i as u32))));
        assert!(teacher.score_next(&[]).is_err());
        assert!(teacher.score_next(&[999]).is_err());
        assert!(TeacherScorer::new(&cat, 0.0, 0.1).is_err());
        assert!(TeacherScorer::new(&cat, 0.8, -0.1).is_err());
    }

    #[test]
    fn student_counts_transitions_per_list() {
        let logs = vec![RecommendationList {
            user_id: 0,
            history: vec![4, 9],
            items: vec![1, 2, 3],
        }];
        let student = train_student(&logs, 20, 0.5).unwrap();
        assert_eq!(student.transition_count(9), 3);
        assert_eq!(student.transition_count(4), 0);
        let scores = student.score_next(&[9]).unwrap();
        // Reciprocal-rank ordering: item 1 above item 2 above item 3.
        assert!(scores.values[1] > scores.values[2]);
        assert!(scores.values[2] > scores.values[3]);
        assert_eq!(scores.values[9], f64::NEG_INFINITY);
    }

    #[test]
    fn student_training_is_permutation_invariant() {
        let mut logs = Vec::new();
        let mut rng = SplitMix64::new(77);
        for u in 0..40 {
            let context = (rng.next_u64() % 30) as u32;
            let items: Vec<u32> = (0..8).map(|_| (rng.next_u64() % 30) as u32).collect();
            logs.push(RecommendationList {
                user_id: u,
                history: vec![context],
                items,
            });
        }
        let forward = train_student(&logs, 30, 0.5).unwrap();
        let mut reversed = logs.clone();
        reversed.reverse();
        let backward = train_student(&reversed, 30, 0.5).unwrap();
        for context in 0..30u32 {
            let a = forward.score_next(&[context]).unwrap();
            let b = backward.score_next(&[context]).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn student_validates_inputs() {
        assert!(train_student(&[], 10, 0.5).is_err());
        let no_history = vec![RecommendationList {
            user_id: 0,
            history: vec![],
            items: vec![1],
        }];
        assert!(train_student(&no_history, 10, 0.5).is_err());
        let no_items = vec![RecommendationList {
            user_id: 0,
            history: vec![1],
            items: vec![],
        }];
        assert!(train_student(&no_items, 10, 0.5).is_err());
        let logs = vec![RecommendationList {
            user_id: 0,
            history: vec![1],
            items: vec![2],
        }];
        assert!(train_student(&logs, 10, -1.0).is_err());
        assert!(train_student(&logs, 2, 0.5).is_err());
    }

    #[test]
    fn lcm_values() {
        assert_eq!(lcm_through(1).unwrap(), 1);
        assert_eq!(lcm_through(10).unwrap(), 2520);
        assert_eq!(lcm_through(20).unwrap(), 232_792_560);
        assert!(lcm_through(200).is_err());
    }

    fn wm_context(cat: &SyntheticCatalog, key: u64) -> WatermarkContext {
        WatermarkContext::new(
            &cat.embeddings,
            SecretKey(key),
            PartitionConfig::default(),
            InjectorConfig {
                k_cand: 40,
                top_k: 10,
                ..InjectorConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn recommend_without_injector_is_pure_ranking() {
        let cat = small_catalog();
        let teacher = TeacherScorer::new(&cat, 0.8, 0.1).unwrap();
        let history = [8u32, 2];
        let list = recommend(&teacher, 5, &history, 10, None).unwrap();
        assert_eq!(list.user_id, 5);
        assert_eq!(list.history, history.to_vec());
        let logits = teacher.score_next(&history).unwrap();
        let top = top_k_indices(&logits.values, 10).unwrap();
        assert_eq!(list.items, top.into_iter().map(|i| i as u32).collect::<Vec<_>>());
    }

    #[test]
    fn recommend_with_zero_gamma_matches_plain() {
        let cat = small_catalog();
        let teacher = TeacherScorer::new(&cat, 0.8, 0.1).unwrap();
        let mut ctx = wm_context(&cat, 99);
        ctx.pcfg.gamma = 0.0;
        let plain = recommend(&teacher, 0, &[14, 3], 10, None).unwrap();
        let watermarked = recommend(&teacher, 0, &[14, 3], 10, Some(&ctx)).unwrap();
        assert_eq!(plain, watermarked);
    }

    #[test]
    fn recommend_is_deterministic() {
        let cat = small_catalog();
        let teacher = TeacherScorer::new(&cat, 0.8, 0.1).unwrap();
        let ctx = wm_context(&cat, 1234);
        let a = recommend(&teacher, 1, &[5, 6, 7], 10, Some(&ctx)).unwrap();
        let b = recommend(&teacher, 1, &[5, 6, 7], 10, Some(&ctx)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn serve_all_covers_every_user() {
        let cat = small_catalog();
        let teacher = TeacherScorer::new(&cat, 0.8, 0.1).unwrap();
        let log = gen_interactions(&cat, 30, 8, 0.8, 2).unwrap();
        let lists = serve_all(&teacher, &log, 10, None).unwrap();
        assert_eq!(lists.len(), 30);
        for (u, list) in lists.iter().enumerate() {
            assert_eq!(list.user_id, u as u64);
            assert_eq!(list.history, log.serving_prefix(u));
            assert_eq!(list.items.len(), 10);
        }
    }

    #[test]
    fn calibrate_tracks_batches_and_respects_bounds() {
        let cat = small_catalog();
        let teacher = TeacherScorer::new(&cat, 0.8, 0.1).unwrap();
        let log = gen_interactions(&cat, 40, 8, 0.8, 6).unwrap();
        let ctx = wm_context(&cat, 555);
        let (ctrl, trace) = calibrate(&teacher, &log, &ctx, 30, 10).unwrap();
        assert_eq!(trace.len(), 30);
        for rec in &trace {
            assert!(rec.alpha_global >= ctx.icfg.delta_min);
            assert!(rec.alpha_global <= ctx.icfg.delta_max);
            assert!((0.0..=1.0).contains(&rec.batch_rate));
        }
        assert_eq!(ctrl.alpha_global, trace.last().unwrap().alpha_global);
        assert!(calibrate(&teacher, &log, &ctx, 0, 10).is_err());
        assert!(calibrate(&teacher, &log, &ctx, 1, 0).is_err());
    }
}
