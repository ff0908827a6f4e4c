//! Cross-validated evaluation of trajectory-user linking.
//!
//! Folds are stratified per user: each user's trajectory indices are
//! shuffled with a seed derived from (seed, label) and dealt round-robin
//! starting at a seed-chosen fold, so per-user fold counts differ by at
//! most one and the whole assignment is a pure function of
//! (labels, n_folds, seed) regardless of platform or thread count.
//!
//! Macro precision and recall average per-class scores over the classes
//! present in the truth set; a class with a zero denominator contributes
//! zero. Macro-F1 is the harmonic mean of macro precision and recall, not
//! the mean of per-class F1 scores. Aggregates over folds are unweighted
//! means, with the aggregate F1 recomputed harmonically from the aggregate
//! precision and recall so every emitted report is self-consistent.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::KnnIndex;
use crate::encode::{encode, Sampler};
use crate::error::{Error, Result};
use crate::model::{
    harmonic_mean, EncodedTrajectory, FoldMetrics, MetricsReport, SegmentedDataset, UserId,
};

// ============================================================================
// stratified folds
// ============================================================================

/// Assignment of trajectory indices to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<u32>,
    pub n_folds: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f as usize == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f as usize != fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// SplitMix64 finalizer; derives one independent stream per label.
fn mix(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stratified fold assignment: a deterministic function of
/// (labels, n_folds, seed). Every label must occur at least n_folds times
/// so each fold sees every user in both roles.
pub fn stratified_folds(labels: &[UserId], n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::Config(format!("n_folds must be at least 2, got {n_folds}")));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut by_label: BTreeMap<UserId, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        by_label.entry(label).or_default().push(i);
    }
    for (&label, indices) in &by_label {
        if indices.len() < n_folds {
            return Err(Error::LabelTooRare { label, count: indices.len(), n_folds });
        }
    }
    let mut fold_of = vec![0u32; labels.len()];
    for (&label, indices) in &mut by_label {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, label));
        indices.shuffle(&mut rng);
        let start = rng.gen_range(0..n_folds);
        for (pos, &idx) in indices.iter().enumerate() {
            fold_of[idx] = ((start + pos) % n_folds) as u32;
        }
    }
    Ok(FoldAssignment { fold_of, n_folds, seed })
}

// ============================================================================
// metrics
// ============================================================================

/// Per-class tallies over one prediction batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

/// Confusion tallies for every class appearing in truths or predictions.
pub fn confusion_counts(
    truths: &[UserId],
    predictions: &[UserId],
) -> Result<BTreeMap<UserId, ClassCounts>> {
    if truths.len() != predictions.len() {
        return Err(Error::LengthMismatch(format!(
            "{} truths vs {} predictions",
            truths.len(),
            predictions.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts: BTreeMap<UserId, ClassCounts> = BTreeMap::new();
    for (&t, &p) in truths.iter().zip(predictions) {
        if t == p {
            counts.entry(t).or_default().true_pos += 1;
        } else {
            counts.entry(t).or_default().false_neg += 1;
            counts.entry(p).or_default().false_pos += 1;
        }
    }
    Ok(counts)
}

/// Macro precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
}

/// Macro scores averaged over the classes present in `truths`.
/// Classes that are predicted but never true only enter through the false
/// negatives they inflict on true classes.
pub fn macro_metrics(truths: &[UserId], predictions: &[UserId]) -> Result<MacroScores> {
    let counts = confusion_counts(truths, predictions)?;
    let truth_classes: Vec<UserId> = {
        let mut c: Vec<UserId> = truths.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    for &class in &truth_classes {
        let c = counts.get(&class).copied().unwrap_or_default();
        p_sum += ratio(c.true_pos, c.true_pos + c.false_pos);
        r_sum += ratio(c.true_pos, c.true_pos + c.false_neg);
    }
    let n = truth_classes.len() as f64;
    let macro_p = p_sum / n;
    let macro_r = r_sum / n;
    Ok(MacroScores { macro_p, macro_r, macro_f1: harmonic_mean(macro_p, macro_r) })
}

/// Fraction of queries whose truth appears in the first k ranked labels.
pub fn acc_at_k(truths: &[UserId], rankings: &[Vec<UserId>], k: usize) -> Result<f64> {
    if truths.len() != rankings.len() {
        return Err(Error::LengthMismatch(format!(
            "{} truths vs {} rankings",
            truths.len(),
            rankings.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if k == 0 {
        return Err(Error::Config("ACC@K needs K >= 1".into()));
    }
    let hits = truths
        .iter()
        .zip(rankings)
        .filter(|(t, r)| r[..k.min(r.len())].contains(t))
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

// ============================================================================
// cross-validation
// ============================================================================

/// Parameters of one cross-validated linking experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Encoding dimension, 1 to 3.
    pub d: usize,
    pub sampler: Sampler,
    /// Neighbors consulted per query.
    pub k: usize,
    /// K values for ACC@K, e.g. [1, 5].
    pub acc_ks: Vec<u32>,
    pub n_folds: usize,
    pub seed: u64,
}

impl EvalConfig {
    pub fn new(d: usize, sampler: Sampler, k: usize, seed: u64) -> EvalConfig {
        EvalConfig { d, sampler, k, acc_ks: vec![1, 5], n_folds: 3, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=crate::model::MAX_DIM).contains(&self.d) {
            return Err(Error::InvalidDimension(self.d));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.acc_ks.is_empty() {
            return Err(Error::Config("at least one ACC@K cutoff is required".into()));
        }
        if self.acc_ks.contains(&0) {
            return Err(Error::Config("ACC@K cutoffs must be at least 1".into()));
        }
        if self.n_folds < 2 {
            return Err(Error::Config(format!("n_folds must be at least 2, got {}", self.n_folds)));
        }
        Ok(())
    }
}

/// Runs stratified k-fold cross-validation of the encode +
/// nearest-neighbor pipeline on a preprocessed dataset.
///
/// Per fold, training trajectories are encoded and indexed, every test
/// trajectory is ranked, and fold metrics are computed from the rankings.
/// Queries within a fold run in parallel; results are ordered by query
/// index, so the metric fields of the report are bit-identical across runs
/// and thread counts. `mean_query_time_ms` is the wall-clock time of the
/// ranking phase divided by the query count and is the one field that
/// varies between runs.
pub fn cross_validate(dataset: &SegmentedDataset, cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if dataset.trajectories.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels: Vec<UserId> =
        dataset.trajectories.iter().map(|t| t.dense_user()).collect::<Result<_>>()?;
    let folds = stratified_folds(&labels, cfg.n_folds, cfg.seed)?;
    let max_rank = *cfg.acc_ks.iter().max().expect("validated non-empty") as usize;

    let mut per_fold = Vec::with_capacity(cfg.n_folds);
    for fold in 0..cfg.n_folds {
        let train_idx = folds.train_indices(fold);
        let test_idx = folds.test_indices(fold);
        let train_enc: Vec<EncodedTrajectory> = train_idx
            .iter()
            .map(|&i| encode(&dataset.trajectories[i], cfg.d, cfg.sampler))
            .collect::<Result<_>>()?;
        let test_enc: Vec<EncodedTrajectory> = test_idx
            .iter()
            .map(|&i| encode(&dataset.trajectories[i], cfg.d, cfg.sampler))
            .collect::<Result<_>>()?;
        let index = KnnIndex::build(&train_enc)?;

        let started = Instant::now();
        let rankings: Vec<Vec<UserId>> = test_enc
            .par_iter()
            .map(|e| index.rank_labels(e.vector(), cfg.k, max_rank))
            .collect::<Result<_>>()?;
        let elapsed = started.elapsed();

        let truths: Vec<UserId> = test_enc.iter().map(|e| e.label).collect();
        let predictions: Vec<UserId> = rankings.iter().map(|r| r[0]).collect();
        let scores = macro_metrics(&truths, &predictions)?;
        let mut acc_at = BTreeMap::new();
        for &kk in &cfg.acc_ks {
            acc_at.insert(kk, acc_at_k(&truths, &rankings, kk as usize)?);
        }
        per_fold.push(FoldMetrics {
            fold: fold as u32,
            acc_at,
            macro_p: scores.macro_p,
            macro_r: scores.macro_r,
            macro_f1: scores.macro_f1,
            query_count: test_idx.len() as u64,
            search_space_size: train_idx.len() as u64,
            mean_query_time_ms: elapsed.as_secs_f64() * 1000.0 / test_idx.len().max(1) as f64,
        });
    }

    let report = aggregate_folds(per_fold);
    report.validate()?;
    Ok(report)
}

/// Aggregates fold metrics into the top-level report: unweighted means for
/// accuracy, precision, recall and timing; harmonic mean of the aggregated
/// precision and recall for F1; rounded means for the counts.
pub fn aggregate_folds(per_fold: Vec<FoldMetrics>) -> MetricsReport {
    assert!(!per_fold.is_empty(), "cannot aggregate zero folds");
    let n = per_fold.len() as f64;
    let mut acc_at = BTreeMap::new();
    for k in per_fold[0].acc_at.keys() {
        let mean = per_fold.iter().map(|f| f.acc_at[k]).sum::<f64>() / n;
        acc_at.insert(*k, mean);
    }
    let macro_p = per_fold.iter().map(|f| f.macro_p).sum::<f64>() / n;
    let macro_r = per_fold.iter().map(|f| f.macro_r).sum::<f64>() / n;
    MetricsReport {
        acc_at,
        macro_p,
        macro_r,
        macro_f1: harmonic_mean(macro_p, macro_r),
        query_count: (per_fold.iter().map(|f| f.query_count).sum::<u64>() as f64 / n).round()
            as u64,
        search_space_size: (per_fold.iter().map(|f| f.search_space_size).sum::<u64>() as f64 / n)
            .round() as u64,
        mean_query_time_ms: per_fold.iter().map(|f| f.mean_query_time_ms).sum::<f64>() / n,
        per_fold,
    }
}
