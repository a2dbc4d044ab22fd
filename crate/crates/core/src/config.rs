//! Run configuration: one flat JSON document driving the whole pipeline.
//!
//! Every field has a default, so `{}` is a valid config. Unknown keys are
//! rejected to catch typos. The effective (post-default) config is echoed
//! into every output artifact, which makes any run re-executable from its
//! artifacts alone. The secret key is deliberately not part of the config:
//! it is only ever accepted as a command-line argument and never written
//! to any artifact.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::injector::{GlobalController, InjectorConfig};
use crate::partition::{PartitionConfig, DEFAULT_HASH_CONSTANT};
use crate::rng::SplitMix64;

/// Flat run configuration. Defaults are documented per field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // Keyed partition.
    /// Hash threshold for the green set. Default 0.5.
    pub gamma: f64,
    /// Frequency of the sinusoidal hash. Default 2*pi.
    pub omega: f64,
    /// Multiplicative constant of the context hash. Default 2654435761.
    pub hash_constant: u32,
    /// Trailing history items folded into the context id. Default 1.
    pub context_width: usize,

    // Injection.
    /// Candidate-pool size defining the decision boundary. Default 100.
    pub k_cand: usize,
    /// Length of the served recommendation lists. Default 20.
    pub top_k: usize,
    /// Exponent of the entropy-based local scale. Default 1.0.
    pub beta: f64,
    /// Initial global injection strength. Default 0.1.
    pub delta_base: f64,
    /// Lower clip bound of the global strength. Default 0.01.
    pub delta_min: f64,
    /// Upper clip bound of the global strength. Default 5.0.
    pub delta_max: f64,

    // Calibration feedback.
    /// Learning rate of the strength controller. Default 0.05.
    pub eta: f64,
    /// Target green rate in served lists. Default 0.65.
    pub tau: f64,
    /// Momentum of the running green-rate average. Default 0.9.
    pub momentum: f64,
    /// Number of calibration batches. Default 500.
    pub calib_batches: usize,
    /// Users per calibration batch. Default 50.
    pub calib_batch_size: usize,

    // Synthetic environment.
    /// Catalog size. Default 2000.
    pub n_items: usize,
    /// Embedding dimension. Default 32.
    pub dim: usize,
    /// Number of catalog clusters. Default 8.
    pub n_clusters: usize,
    /// Within-cluster Gaussian spread. Default 0.85.
    pub spread: f64,
    /// Number of simulated users. Default 2000.
    pub n_users: usize,
    /// Interaction sequence length per user. Default 20.
    pub seq_len: usize,
    /// Probability an interaction walk stays in its cluster. Default 0.9.
    pub p_stay: f64,
    /// Decay of the teacher's history average. Default 0.8.
    pub rho: f64,
    /// Weight of log-popularity in the teacher's scores. Default 0.1.
    pub lambda_pop: f64,
    /// Additive smoothing of the student's transition model. Default 0.5.
    pub smoothing: f64,
    /// Attacker query budget: the student trains on the logged answers of
    /// the first this-many users, and 0 means the whole transcript.
    /// Default 100.
    pub attack_queries: usize,

    // Evaluation and verification.
    /// Cutoff for recall/NDCG/agreement reporting. Default 10.
    pub eval_k: usize,
    /// Ownership decision threshold on the z-score. Default 4.0.
    pub z_threshold: f64,

    // Plumbing.
    /// Master seed; all generator seeds derive from it. Default 42.
    pub rng_seed: u64,
    /// Output directory for all artifacts. Default "out".
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            omega: std::f64::consts::TAU,
            hash_constant: DEFAULT_HASH_CONSTANT,
            context_width: 1,
            k_cand: 100,
            top_k: 20,
            beta: 1.0,
            delta_base: 0.1,
            delta_min: 0.01,
            delta_max: 5.0,
            eta: 0.05,
            tau: 0.65,
            momentum: 0.9,
            calib_batches: 500,
            calib_batch_size: 50,
            n_items: 2000,
            dim: 32,
            n_clusters: 8,
            spread: 0.85,
            n_users: 2000,
            seq_len: 20,
            p_stay: 0.9,
            rho: 0.8,
            lambda_pop: 0.1,
            smoothing: 0.5,
            attack_queries: 100,
            eval_k: 10,
            z_threshold: 4.0,
            rng_seed: 42,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses a config document, rejecting unknown keys.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and parses a config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Cross-field sanity checks beyond what each consumer validates.
    pub fn validate(&self) -> Result<()> {
        self.partition().validate()?;
        self.injector().validate()?;
        self.controller()?;
        if self.eval_k < 1 {
            return Err(Error::InvalidArgument("eval_k must be at least 1".into()));
        }
        if !(self.z_threshold.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "z_threshold must be finite, got {}",
                self.z_threshold
            )));
        }
        if self.k_cand + self.seq_len > self.n_items {
            return Err(Error::InvalidArgument(format!(
                "k_cand ({}) plus seq_len ({}) must not exceed n_items ({}); the candidate \
                 pool would run out of unseen items",
                self.k_cand, self.seq_len, self.n_items
            )));
        }
        Ok(())
    }

    pub fn partition(&self) -> PartitionConfig {
        PartitionConfig {
            gamma: self.gamma,
            omega: self.omega,
            hash_constant: self.hash_constant,
            context_width: self.context_width,
        }
    }

    pub fn injector(&self) -> InjectorConfig {
        InjectorConfig {
            k_cand: self.k_cand,
            top_k: self.top_k,
            beta: self.beta,
            delta_base: self.delta_base,
            delta_min: self.delta_min,
            delta_max: self.delta_max,
        }
    }

    pub fn controller(&self) -> Result<GlobalController> {
        GlobalController::with_feedback(&self.injector(), self.eta, self.tau, self.momentum)
    }

    /// Seed of the catalog generator, derived from the master seed.
    pub fn catalog_seed(&self) -> u64 {
        SplitMix64::new(self.rng_seed).next_u64()
    }

    /// Seed of the interaction generator, derived from the master seed.
    pub fn interactions_seed(&self) -> u64 {
        let mut s = SplitMix64::new(self.rng_seed);
        s.next_u64();
        s.next_u64()
    }

    /// The effective config as a JSON value, for echoing into artifacts.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    // Artifact locations, all under `out_dir`.
    pub fn catalog_bin_path(&self) -> PathBuf {
        self.out_dir.join("catalog.emb")
    }

    pub fn catalog_sidecar_path(&self) -> PathBuf {
        self.out_dir.join("catalog.json")
    }

    pub fn interactions_path(&self) -> PathBuf {
        self.out_dir.join("interactions.jsonl")
    }

    pub fn recommendations_path(&self, watermarked: bool) -> PathBuf {
        self.out_dir.join(if watermarked {
            "recs_watermarked.jsonl"
        } else {
            "recs_clean.jsonl"
        })
    }

    pub fn report_path(&self) -> PathBuf {
        self.out_dir.join("report.json")
    }

    pub fn student_lists_path(&self) -> PathBuf {
        self.out_dir.join("student_lists.jsonl")
    }

    pub fn attack_report_path(&self) -> PathBuf {
        self.out_dir.join("attack_report.json")
    }

    pub fn sweep_path(&self, param: &str) -> PathBuf {
        self.out_dir.join(format!("sweep_{param}.csv"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.gamma, 0.5);
        assert_eq!(cfg.k_cand, 100);
        assert_eq!(cfg.top_k, 20);
        assert_eq!(cfg.tau, 0.65);
        assert_eq!(cfg.n_items, 2000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"gama": 0.5}"#);
        assert!(matches!(err, Err(Error::Parse(_))), "{err:?}");
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let cfg = RunConfig::from_json(r#"{"gamma": 0.25, "n_users": 10}"#).unwrap();
        assert_eq!(cfg.gamma, 0.25);
        assert_eq!(cfg.n_users, 10);
        assert_eq!(cfg.top_k, 20);
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(RunConfig::from_json(r#"{"gamma": 1.5}"#).is_err());
        assert!(RunConfig::from_json(r#"{"k_cand": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"momentum": 1.0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"n_items": 100}"#).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::default();
        let echo = cfg.echo();
        let back: RunConfig = serde_json::from_value(echo).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn echo_never_contains_a_key_field() {
        let text = serde_json::to_string(&RunConfig::default().echo()).unwrap();
        assert!(!text.contains("\"key\""));
        assert!(!text.contains("secret"));
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.catalog_seed(), cfg.catalog_seed());
        assert_ne!(cfg.catalog_seed(), cfg.interactions_seed());
        let other = RunConfig {
            rng_seed: 43,
            ..RunConfig::default()
        };
        assert_ne!(cfg.catalog_seed(), other.catalog_seed());
    }
}
