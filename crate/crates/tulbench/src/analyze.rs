//! Dataset analyses and experiment sweeps: venue-set uniqueness, the k and
//! d hyperparameter sweeps, timescale comparison, user-count scaling,
//! query-latency profiling, and the synthetic corpus generator that makes
//! every downstream result testable without real data.
//!
//! The generator plants the identifying mechanism the benchmark measures:
//! each user has a small pool of private venues nobody else visits, first
//! visited only after at least one shared venue. First-appearance
//! relabeling then hands those venues the largest dense IDs in the user's
//! trajectories, so the max-ID encoding becomes a near-perfect user
//! fingerprint. Setting `p_private` to zero removes the mechanism and
//! accuracy collapses to chance, which is the ablation the test suite pins.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use chrono::{Days, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::KnnIndex;
use crate::encode::{encode, Sampler};
use crate::error::{Error, Result};
use crate::evaluate::{cross_validate, stratified_folds, EvalConfig};
use crate::model::{
    CheckinRecord, Key, MetricsReport, SegmentedDataset, Timescale, UserId, VenueId,
};

// ============================================================================
// synthetic corpus
// ============================================================================

/// Shape of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_users: u64,
    pub venues_shared: u64,
    pub venues_private_per_user: u64,
    pub trajectories_per_user: u32,
    pub checkins_min: u32,
    pub checkins_max: u32,
    /// Probability that a check-in hits the user's private pool.
    pub p_private: f64,
    /// Calendar days between a user's consecutive trajectories; raise it to
    /// spread one corpus across weeks and months.
    pub day_stride: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Desk-scale corpus: 100 users, 50 shared venues, 3 private venues
    /// each, 12 trajectories of 3 to 8 check-ins, 40% private visits.
    fn default() -> SyntheticSpec {
        SyntheticSpec {
            n_users: 100,
            venues_shared: 50,
            venues_private_per_user: 3,
            trajectories_per_user: 12,
            checkins_min: 3,
            checkins_max: 8,
            p_private: 0.4,
            day_stride: 1,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_users", self.n_users),
            ("venues_shared", self.venues_shared),
            ("venues_private_per_user", self.venues_private_per_user),
            ("trajectories_per_user", self.trajectories_per_user as u64),
            ("checkins_min", self.checkins_min as u64),
            ("day_stride", self.day_stride as u64),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.checkins_min > self.checkins_max {
            return Err(Error::Config(format!(
                "check-in range {}..{} is empty",
                self.checkins_min, self.checkins_max
            )));
        }
        if !(0.0..=1.0).contains(&self.p_private) {
            return Err(Error::Config(format!(
                "p_private {} outside [0, 1]",
                self.p_private
            )));
        }
        Ok(())
    }
}

/// Ground-truth counts recorded while the generator emits, so tests can
/// audit the stream against what the generator believes it wrote.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLedger {
    pub checkin_count: u64,
    pub user_count: u64,
    pub trajectory_count: u64,
    pub shared_visits: u64,
    pub private_visits: u64,
    /// Trajectories whose last check-in was rewritten to the home venue.
    pub anchored_trajectories: u64,
    pub distinct_shared_used: u64,
    pub distinct_private_used: u64,
}

/// Generates a raw (pre-relabel) check-in stream, deterministic per seed.
///
/// Construction, per user: trajectory 0 draws shared venues, fixing the
/// user's shared repertoire, then appends the private pool once with the
/// designated home venue last, so the home venue is the last of the
/// user's venues to first appear. Every later trajectory draws privates
/// with probability `p_private` and shared venues from the repertoire
/// only, and is anchored: when the home venue was not drawn, the last
/// check-in is rewritten to it. Every venue a user ever visits therefore
/// first appears in that user's stream no later than the home venue, so
/// after first-appearance relabeling the home venue is the maximum of
/// every one of the user's trajectories, the mechanism under study. With
/// `p_private = 0` all draws come from the full shared pool, the private
/// pool is never touched, and no anchoring happens, leaving no per-user
/// signal at all.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<CheckinRecord>, GeneratorLedger)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::new();
    let mut ledger = GeneratorLedger { user_count: spec.n_users, ..GeneratorLedger::default() };
    let mut shared_used: BTreeSet<u64> = BTreeSet::new();
    let mut private_used: BTreeSet<(u64, u64)> = BTreeSet::new();
    let base_date = NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date");
    let with_privates = spec.p_private > 0.0;

    for user in 0..spec.n_users {
        // Home venue: the highest-numbered private venue of this user.
        let home = spec.venues_private_per_user - 1;
        let mut repertoire: Vec<u64> = Vec::new();
        for t in 0..spec.trajectories_per_user {
            let day = base_date
                .checked_add_days(Days::new(t as u64 * spec.day_stride as u64))
                .expect("date in range");
            let length = rng.gen_range(spec.checkins_min..=spec.checkins_max);
            let mut venues: Vec<(bool, u64)> = Vec::with_capacity(length as usize + 3);
            if with_privates && t == 0 {
                // Shared draws fix the repertoire, then the whole private
                // pool is introduced with the home venue last.
                for _ in 0..length {
                    let v = rng.gen_range(0..spec.venues_shared);
                    if !repertoire.contains(&v) {
                        repertoire.push(v);
                    }
                    venues.push((false, v));
                }
                venues.extend((0..spec.venues_private_per_user).map(|p| (true, p)));
            } else {
                for _ in 0..length {
                    if with_privates && rng.gen_bool(spec.p_private) {
                        venues.push((true, rng.gen_range(0..spec.venues_private_per_user)));
                    } else if with_privates {
                        venues.push((false, repertoire[rng.gen_range(0..repertoire.len())]));
                    } else {
                        venues.push((false, rng.gen_range(0..spec.venues_shared)));
                    }
                }
                if with_privates && !venues.contains(&(true, home)) {
                    *venues.last_mut().expect("length is at least 1") = (true, home);
                    ledger.anchored_trajectories += 1;
                }
            }
            for (i, &(private, venue)) in venues.iter().enumerate() {
                let time = Utc.from_utc_datetime(
                    &day.and_hms_opt(0, 0, 0)
                        .expect("midnight exists")
                        .checked_add_signed(chrono::Duration::seconds(60 * i as i64))
                        .expect("time in range"),
                );
                let venue_key = if private {
                    private_used.insert((user, venue));
                    ledger.private_visits += 1;
                    Key::parse(&format!("home-{user}-{venue}"))
                } else {
                    shared_used.insert(venue);
                    ledger.shared_visits += 1;
                    Key::parse(&format!("shared-{venue}"))
                };
                records.push(CheckinRecord::new(Key::Num(user), time, venue_key));
            }
            ledger.trajectory_count += 1;
            ledger.checkin_count += venues.len() as u64;
        }
    }
    ledger.distinct_shared_used = shared_used.len() as u64;
    ledger.distinct_private_used = private_used.len() as u64;
    Ok((records, ledger))
}

// ============================================================================
// venue-set uniqueness
// ============================================================================

/// Users ranked by check-in count descending, ties by dense ID ascending.
pub fn top_users(dataset: &SegmentedDataset, n: usize) -> Result<Vec<UserId>> {
    if dataset.trajectories.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let counts = dataset.checkins_per_user()?;
    if n > counts.len() {
        return Err(Error::UserCapTooLarge { requested: n, available: counts.len() });
    }
    let mut ranked: Vec<(UserId, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(n).map(|(u, _)| u).collect())
}

/// Restriction of a dataset to its top `n` users by activity. Trajectory
/// order is preserved and the identifier maps are kept whole, so original
/// keys stay resolvable; the summary counts describe the restriction.
pub fn top_n_users(dataset: &SegmentedDataset, n: usize) -> Result<SegmentedDataset> {
    let keep: BTreeSet<UserId> = top_users(dataset, n)?.into_iter().collect();
    let trajectories = dataset
        .trajectories
        .iter()
        .filter(|t| t.dense_user().is_ok_and(|u| keep.contains(&u)))
        .cloned()
        .collect();
    Ok(SegmentedDataset::recounted(dataset.timescale, trajectories, dataset.id_maps.clone()))
}

fn venue_sets(dataset: &SegmentedDataset, users: &[UserId]) -> Result<Vec<BTreeSet<VenueId>>> {
    let wanted: BTreeMap<UserId, usize> =
        users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let mut sets: Vec<BTreeSet<VenueId>> = vec![BTreeSet::new(); users.len()];
    for t in &dataset.trajectories {
        if let Some(&slot) = wanted.get(&t.dense_user()?) {
            for c in &t.checkins {
                sets[slot].insert(c.venue.dense()?);
            }
        }
    }
    Ok(sets)
}

/// Jaccard distance between two sets, exact integer ratio. Two empty sets
/// are identical, distance 0.
pub fn jaccard_distance(a: &BTreeSet<VenueId>, b: &BTreeSet<VenueId>) -> f64 {
    let inter = a.intersection(b).count() as u64;
    let union = (a.len() + b.len()) as u64 - inter;
    if union == 0 {
        0.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

/// Venue-set uniqueness summary over the `top_n` most active users.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniquenessStats {
    pub top_n: usize,
    /// Mean pairwise Jaccard distance between the top users' venue sets.
    pub mean_jaccard_distance: f64,
    /// Unique venues per unique user over the whole dataset.
    pub venue_user_ratio: f64,
    /// Distinct-venue-set size per top user, in rank order.
    pub venue_set_sizes: Vec<(UserId, u64)>,
}

pub fn uniqueness_stats(dataset: &SegmentedDataset, top_n: usize) -> Result<UniquenessStats> {
    if top_n < 2 {
        return Err(Error::Config(format!(
            "uniqueness needs at least 2 users to form a pair, got top_n = {top_n}"
        )));
    }
    let users = top_users(dataset, top_n)?;
    let sets = venue_sets(dataset, &users)?;
    let mut sum = 0.0;
    let mut pairs = 0u64;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            sum += jaccard_distance(&sets[i], &sets[j]);
            pairs += 1;
        }
    }
    Ok(UniquenessStats {
        top_n,
        mean_jaccard_distance: sum / pairs as f64,
        venue_user_ratio: dataset.venue_count as f64 / dataset.user_count as f64,
        venue_set_sizes: users
            .iter()
            .zip(&sets)
            .map(|(&u, s)| (u, s.len() as u64))
            .collect(),
    })
}

/// Checks the emission invariants of a distance matrix: square, symmetric,
/// zero diagonal, entries in [0, 1].
pub fn validate_matrix(matrix: &[Vec<f64>]) -> Result<()> {
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != matrix.len() {
            return Err(Error::LengthMismatch(format!(
                "row {i} has {} entries in a {}-row matrix",
                row.len(),
                matrix.len()
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("matrix[{i}][{j}] = {v} outside [0, 1]")));
            }
            if i == j && v != 0.0 {
                return Err(Error::InvalidInput(format!("matrix[{i}][{i}] = {v}, not 0")));
            }
            if matrix[j][i] != v {
                return Err(Error::InvalidInput(format!(
                    "matrix[{i}][{j}] = {v} differs from matrix[{j}][{i}] = {}",
                    matrix[j][i]
                )));
            }
        }
    }
    Ok(())
}

/// Pairwise Jaccard distance matrix over the top `n` users' venue sets,
/// validated before return. Returns the ranked user IDs and the matrix.
pub fn jaccard_matrix(
    dataset: &SegmentedDataset,
    top_n: usize,
) -> Result<(Vec<UserId>, Vec<Vec<f64>>)> {
    let users = top_users(dataset, top_n)?;
    let sets = venue_sets(dataset, &users)?;
    let n = sets.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = jaccard_distance(&sets[i], &sets[j]);
            matrix[i][j] = d;
            matrix[j][i] = d;
        }
    }
    validate_matrix(&matrix)?;
    Ok((users, matrix))
}

// ============================================================================
// sweeps
// ============================================================================

/// One neighbor-count grid point: misclassification rate at k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KSweepPoint {
    pub k: usize,
    /// 1 - ACC@1, cross-validated.
    pub error_rate: f64,
}

pub fn sweep_k(
    dataset: &SegmentedDataset,
    d: usize,
    sampler: Sampler,
    k_values: &[usize],
    seed: u64,
) -> Result<Vec<KSweepPoint>> {
    if k_values.is_empty() {
        return Err(Error::Config("sweep_k needs at least one k value".into()));
    }
    let mut points = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let report = cross_validate(dataset, &EvalConfig::new(d, sampler, k, seed))?;
        points.push(KSweepPoint { k, error_rate: 1.0 - report.acc_at[&1] });
    }
    Ok(points)
}

/// One encoding-dimension grid point: the full report at d.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DSweepPoint {
    pub d: usize,
    pub report: MetricsReport,
}

pub fn sweep_d(
    dataset: &SegmentedDataset,
    d_values: &[usize],
    sampler: Sampler,
    k: usize,
    seed: u64,
) -> Result<Vec<DSweepPoint>> {
    if d_values.is_empty() {
        return Err(Error::Config("sweep_d needs at least one d value".into()));
    }
    let mut points = Vec::with_capacity(d_values.len());
    for &d in d_values {
        let report = cross_validate(dataset, &EvalConfig::new(d, sampler, k, seed))?;
        points.push(DSweepPoint { d, report });
    }
    Ok(points)
}

/// Timescale comparison over one source, user counts equalized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalComparison {
    /// Users evaluated per timescale: the minimum user count across the
    /// three datasets unless explicitly overridden.
    pub n_users: usize,
    pub reports: Vec<(Timescale, MetricsReport)>,
}

pub fn interval_comparison(
    datasets: &[&SegmentedDataset],
    d: usize,
    sampler: Sampler,
    k: usize,
    seed: u64,
    n_users: Option<usize>,
) -> Result<IntervalComparison> {
    let mut per_scale: Vec<&SegmentedDataset> = Vec::with_capacity(3);
    for ts in Timescale::ALL {
        let ds = datasets
            .iter()
            .find(|ds| ds.timescale == ts)
            .ok_or(Error::MissingTimescale(ts.name()))?;
        per_scale.push(ds);
    }
    let available = per_scale.iter().map(|ds| ds.user_count as usize).min().expect("3 datasets");
    let n = match n_users {
        None => available,
        Some(n) => {
            // An explicit count must fit every dataset.
            if let Some(small) =
                per_scale.iter().find(|ds| (ds.user_count as usize) < n)
            {
                return Err(Error::UserCapTooLarge {
                    requested: n,
                    available: small.user_count as usize,
                });
            }
            n
        }
    };
    let mut reports = Vec::with_capacity(3);
    for (ts, ds) in Timescale::ALL.into_iter().zip(per_scale) {
        let truncated = top_n_users(ds, n)?;
        reports.push((ts, cross_validate(&truncated, &EvalConfig::new(d, sampler, k, seed))?));
    }
    Ok(IntervalComparison { n_users: n, reports })
}

/// Default user-count grid for scaling runs, one order of magnitude apart.
pub const DEFAULT_SCALING_GRID: [usize; 5] = [10, 100, 1_000, 10_000, 100_000];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n_users: usize,
    pub report: MetricsReport,
}

/// Evaluation at increasing top-N user counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub points: Vec<ScalingPoint>,
    /// Grid entries larger than the dataset's user population.
    pub skipped: Vec<usize>,
}

pub fn scaling_curve(
    dataset: &SegmentedDataset,
    user_counts: &[usize],
    d: usize,
    sampler: Sampler,
    k: usize,
    seed: u64,
) -> Result<ScalingCurve> {
    if user_counts.is_empty() {
        return Err(Error::Config("scaling_curve needs at least one user count".into()));
    }
    if user_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "scaling grid must be strictly ascending, got {user_counts:?}"
        )));
    }
    let available = dataset.user_count as usize;
    let mut curve = ScalingCurve { points: Vec::new(), skipped: Vec::new() };
    for &n in user_counts {
        if n > available {
            curve.skipped.push(n);
            continue;
        }
        let truncated = top_n_users(dataset, n)?;
        curve.points.push(ScalingPoint {
            n_users: n,
            report: cross_validate(&truncated, &EvalConfig::new(d, sampler, k, seed))?,
        });
    }
    Ok(curve)
}

// ============================================================================
// timing
// ============================================================================

/// Warm per-query latency over one cross-validation fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingProfile {
    pub query_count: u64,
    pub search_space_size: u64,
    /// Mean wall-clock milliseconds per ranked query, sequential, warm.
    pub mean_query_time_ms: f64,
    /// Index construction cost, reported separately from query time.
    pub index_build_ms: f64,
    pub machine: String,
}

/// Describes the executing hardware well enough to situate timing numbers.
pub fn machine_description() -> String {
    let threads = std::thread::available_parallelism().map_or(0, |n| n.get());
    format!("{} {}, {} hardware threads", std::env::consts::ARCH, std::env::consts::OS, threads)
}

/// Measures per-query wall time on fold 0: index built on the training
/// side (timed separately), every test trajectory ranked one at a time on
/// a single thread. Metric-free by design; pair it with `cross_validate`
/// for quality numbers.
pub fn timing_profile(
    dataset: &SegmentedDataset,
    d: usize,
    sampler: Sampler,
    k: usize,
    seed: u64,
) -> Result<TimingProfile> {
    let cfg = EvalConfig::new(d, sampler, k, seed);
    cfg.validate()?;
    if dataset.trajectories.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels: Vec<UserId> =
        dataset.trajectories.iter().map(|t| t.dense_user()).collect::<Result<_>>()?;
    let folds = stratified_folds(&labels, cfg.n_folds, seed)?;
    let train_idx = folds.train_indices(0);
    let test_idx = folds.test_indices(0);
    let train_enc: Vec<_> = train_idx
        .iter()
        .map(|&i| encode(&dataset.trajectories[i], d, sampler))
        .collect::<Result<_>>()?;
    let test_enc: Vec<_> = test_idx
        .iter()
        .map(|&i| encode(&dataset.trajectories[i], d, sampler))
        .collect::<Result<_>>()?;

    let build_started = Instant::now();
    let index = KnnIndex::build(&train_enc)?;
    let index_build_ms = build_started.elapsed().as_secs_f64() * 1000.0;

    let mut total = std::time::Duration::ZERO;
    for e in &test_enc {
        let started = Instant::now();
        let ranked = index.rank_labels(e.vector(), k, 1)?;
        total += started.elapsed();
        std::hint::black_box(ranked);
    }
    Ok(TimingProfile {
        query_count: test_enc.len() as u64,
        search_space_size: train_enc.len() as u64,
        mean_query_time_ms: total.as_secs_f64() * 1000.0 / test_enc.len().max(1) as f64,
        index_build_ms,
        machine: machine_description(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IdMaps, IntervalKey, SubTrajectory};
    use crate::pipeline::{build_dataset, PipelineConfig};

    fn planted_dataset(spec: &SyntheticSpec, timescale: Timescale) -> SegmentedDataset {
        let (records, _) = generate_synthetic(spec).unwrap();
        let config = PipelineConfig {
            timescale,
            min_checkins: 1,
            min_trajectories: 3,
            relabel: true,
            relabel_order: crate::pipeline::RelabelOrder::UserTime,
        };
        build_dataset(records, &config).unwrap()
    }

    #[test]
    fn generator_ledger_matches_emitted_stream() {
        let spec = SyntheticSpec::default();
        let (records, ledger) = generate_synthetic(&spec).unwrap();

        assert_eq!(ledger.checkin_count, records.len() as u64);
        let mut users = BTreeSet::new();
        let mut shared = BTreeSet::new();
        let mut private = BTreeSet::new();
        let mut private_visits = 0u64;
        let mut days = BTreeSet::new();
        for r in &records {
            users.insert(r.user.to_string());
            let name = r.venue.to_string();
            if name.starts_with("home-") {
                private.insert(name);
                private_visits += 1;
            } else {
                assert!(name.starts_with("shared-"), "venue {name} from neither pool");
                shared.insert(name);
            }
            days.insert((r.user.to_string(), r.time.date_naive()));
        }
        assert_eq!(ledger.user_count, users.len() as u64);
        assert_eq!(ledger.private_visits, private_visits);
        assert_eq!(ledger.shared_visits, records.len() as u64 - private_visits);
        assert_eq!(ledger.distinct_shared_used, shared.len() as u64);
        assert_eq!(ledger.distinct_private_used, private.len() as u64);
        assert_eq!(ledger.trajectory_count, days.len() as u64, "one trajectory per user-day");

        // Deterministic for a fixed seed.
        let (again, ledger_again) = generate_synthetic(&spec).unwrap();
        assert_eq!(again, records);
        assert_eq!(ledger_again, ledger);
    }

    #[test]
    fn generator_single_user_and_zero_private() {
        let spec = SyntheticSpec { n_users: 1, ..SyntheticSpec::default() };
        let (records, _) = generate_synthetic(&spec).unwrap();
        assert!(records.iter().all(|r| r.user == Key::Num(0)));

        let spec = SyntheticSpec { p_private: 0.0, n_users: 5, ..SyntheticSpec::default() };
        let (records, ledger) = generate_synthetic(&spec).unwrap();
        assert_eq!(ledger.private_visits, 0);
        assert_eq!(ledger.anchored_trajectories, 0);
        assert!(records.iter().all(|r| r.venue.to_string().starts_with("shared-")));
    }

    #[test]
    fn generator_plants_the_leakage_mechanism() {
        let spec = SyntheticSpec { n_users: 20, ..SyntheticSpec::default() };
        let (records, _) = generate_synthetic(&spec).unwrap();
        // Per user: the first check-in is shared, and no private venue
        // appears before the first shared visit.
        let mut first_kind: BTreeMap<String, bool> = BTreeMap::new();
        for r in &records {
            first_kind
                .entry(r.user.to_string())
                .or_insert_with(|| r.venue.to_string().starts_with("shared-"));
        }
        assert_eq!(first_kind.len(), 20);
        assert!(first_kind.values().all(|&shared| shared), "every user starts shared");

        // Private pools are disjoint: the user ID is baked into the key.
        for r in &records {
            let name = r.venue.to_string();
            if let Some(rest) = name.strip_prefix("home-") {
                let owner: String = rest.chars().take_while(|c| *c != '-').collect();
                assert_eq!(owner, r.user.to_string(), "{name} visited by {}", r.user);
            }
        }

        // After relabeling, the max venue ID of every trajectory is one of
        // the owner's private venues: the fingerprint the benchmark measures.
        let ds = planted_dataset(&spec, Timescale::Daily);
        let mut fingerprinted = 0u64;
        for t in &ds.trajectories {
            let max_venue = t.checkins.iter().map(|c| c.venue.dense().unwrap()).max().unwrap();
            let original = &ds.id_maps.venues[max_venue as usize];
            if original.to_string().starts_with("home-") {
                fingerprinted += 1;
            }
        }
        assert!(
            fingerprinted * 100 >= ds.trajectory_count * 95,
            "{fingerprinted} of {} trajectories carry a private max venue",
            ds.trajectory_count
        );
    }

    fn tiny_dataset(sets: &[&[u64]], checkins_per_user: &[usize]) -> SegmentedDataset {
        // One user per set; user u gets `checkins_per_user[u]` check-ins
        // cycling through their venue set, one trajectory per user per day.
        let mut trajectories = Vec::new();
        for (u, venues) in sets.iter().enumerate() {
            let n = checkins_per_user[u];
            let day = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
            let checkins: Vec<CheckinRecord> = (0..n)
                .map(|i| {
                    CheckinRecord::new(
                        Key::Num(u as u64),
                        Utc.from_utc_datetime(
                            &day.and_hms_opt(0, 0, 0)
                                .unwrap()
                                .checked_add_signed(chrono::Duration::seconds(i as i64))
                                .unwrap(),
                        ),
                        Key::Num(venues[i % venues.len()]),
                    )
                })
                .collect();
            trajectories.push(SubTrajectory {
                user: Key::Num(u as u64),
                interval: IntervalKey::Day(day),
                checkins,
            });
        }
        SegmentedDataset::recounted(Timescale::Daily, trajectories, IdMaps::default())
    }

    #[test]
    fn top_users_rank_by_activity_then_id() {
        let ds = tiny_dataset(&[&[0], &[1], &[2]], &[5, 7, 5]);
        assert_eq!(top_users(&ds, 3).unwrap(), vec![1, 0, 2]);
        assert_eq!(top_users(&ds, 1).unwrap(), vec![1]);
        assert!(matches!(
            top_users(&ds, 4),
            Err(Error::UserCapTooLarge { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn uniqueness_extremes() {
        // Disjoint sets: distance 1; identical sets: distance 0.
        let ds = tiny_dataset(&[&[0, 1], &[2, 3]], &[4, 4]);
        let stats = uniqueness_stats(&ds, 2).unwrap();
        assert_eq!(stats.mean_jaccard_distance, 1.0);
        assert_eq!(stats.venue_user_ratio, 2.0);
        assert_eq!(stats.venue_set_sizes, vec![(0, 2), (1, 2)]);

        let ds = tiny_dataset(&[&[0, 1], &[0, 1]], &[4, 4]);
        let stats = uniqueness_stats(&ds, 2).unwrap();
        assert_eq!(stats.mean_jaccard_distance, 0.0);

        assert!(uniqueness_stats(&ds, 1).is_err(), "one user forms no pair");
    }

    #[test]
    fn jaccard_matrix_matches_hand_computation() {
        // Five users with engineered overlaps (sets listed per user):
        //   0: {0,1}   1: {1,2}   2: {0,1,2}  3: {7}   4: {0,1}
        // Hand values: d(0,1) = 1 - 1/3; d(0,2) = 1 - 2/3; d(0,3) = 1;
        // d(0,4) = 0; d(1,2) = 1 - 2/3; d(1,3) = 1; d(1,4) = 1 - 1/3;
        // d(2,3) = 1; d(2,4) = 1 - 2/3; d(3,4) = 1.
        let ds = tiny_dataset(
            &[&[0, 1], &[1, 2], &[0, 1, 2], &[7], &[0, 1]],
            &[10, 9, 8, 7, 6],
        );
        let (users, m) = jaccard_matrix(&ds, 5).unwrap();
        assert_eq!(users, vec![0, 1, 2, 3, 4], "activity already orders them");
        let third = 1.0 - 1.0 / 3.0;
        let two_thirds = 1.0 - 2.0 / 3.0;
        assert_eq!(m[0][1], third);
        assert_eq!(m[0][2], two_thirds);
        assert_eq!(m[0][3], 1.0);
        assert_eq!(m[0][4], 0.0);
        assert_eq!(m[1][2], two_thirds);
        assert_eq!(m[1][4], third);
        assert_eq!(m[2][4], two_thirds);
        assert_eq!(m[3][4], 1.0);
        // Emission invariants hold (validate_matrix ran inside), and the
        // matrix equals its transpose.
        for i in 0..5 {
            assert_eq!(m[i][i], 0.0);
            for j in 0..5 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
    }

    #[test]
    fn validate_matrix_rejects_bad_shapes() {
        assert!(validate_matrix(&[vec![0.0, 0.5], vec![0.5, 0.0]]).is_ok());
        assert!(validate_matrix(&[vec![0.0, 0.5]]).is_err(), "not square");
        assert!(validate_matrix(&[vec![0.1, 0.5], vec![0.5, 0.0]]).is_err(), "diagonal");
        assert!(validate_matrix(&[vec![0.0, 0.5], vec![0.4, 0.0]]).is_err(), "asymmetric");
        assert!(validate_matrix(&[vec![0.0, 1.5], vec![1.5, 0.0]]).is_err(), "range");
    }

    /// Dataset where every user's trajectories are identical copies, each
    /// holding one user-unique venue: any fold split leaves an exact-match
    /// training neighbor, so k=1 classifies perfectly.
    fn duplicated_dataset(n_users: u64, copies: u32) -> SegmentedDataset {
        let mut trajectories = Vec::new();
        for u in 0..n_users {
            for t in 0..copies {
                let day = NaiveDate::from_ymd_opt(2010, 1, 1)
                    .unwrap()
                    .checked_add_days(Days::new(t as u64))
                    .unwrap();
                let time = Utc.from_utc_datetime(&day.and_hms_opt(8, 0, 0).unwrap());
                trajectories.push(SubTrajectory {
                    user: Key::Num(u),
                    interval: IntervalKey::Day(day),
                    checkins: vec![CheckinRecord::new(Key::Num(u), time, Key::Num(1000 + u))],
                });
            }
        }
        SegmentedDataset::recounted(Timescale::Daily, trajectories, IdMaps::default())
    }

    #[test]
    fn sweep_k_error_zero_on_trivial_datasets() {
        // Single user: every vote is forced correct at any k.
        let single = duplicated_dataset(1, 9);
        for p in sweep_k(&single, 1, Sampler::Max, &[1, 3, 5], 7).unwrap() {
            assert_eq!(p.error_rate, 0.0, "k = {}", p.k);
        }
        // Exact duplicates: k=1 always finds a zero-distance twin.
        let dup = duplicated_dataset(12, 6);
        let points = sweep_k(&dup, 1, Sampler::Max, &[1], 7).unwrap();
        assert_eq!(points[0].error_rate, 0.0);
    }

    #[test]
    fn sweep_d_trend_on_planted_corpus() {
        let spec = SyntheticSpec { n_users: 30, ..SyntheticSpec::default() };
        let ds = planted_dataset(&spec, Timescale::Daily);
        let points = sweep_d(&ds, &[1, 2, 3], Sampler::Max, 3, 7).unwrap();
        assert_eq!(points.len(), 3);
        let f1: Vec<f64> = points.iter().map(|p| p.report.macro_f1).collect();
        assert!(f1[0] >= f1[2], "d=1 F1 {} under d=3 F1 {}", f1[0], f1[2]);
        assert!(f1[0] >= 0.9, "planted corpus is nearly separable, got {}", f1[0]);
    }

    #[test]
    fn interval_comparison_requires_all_timescales_and_equalizes_users() {
        let spec = SyntheticSpec { n_users: 12, day_stride: 15, ..SyntheticSpec::default() };
        let daily = planted_dataset(&spec, Timescale::Daily);
        let weekly = planted_dataset(&spec, Timescale::Weekly);
        let monthly = planted_dataset(&spec, Timescale::Monthly);

        let missing = interval_comparison(&[&daily, &weekly], 1, Sampler::Max, 3, 7, None);
        assert!(matches!(missing, Err(Error::MissingTimescale("monthly"))));

        let cmp =
            interval_comparison(&[&daily, &weekly, &monthly], 1, Sampler::Max, 3, 7, None)
                .unwrap();
        assert_eq!(cmp.n_users, 12, "all three keep every user here");
        assert_eq!(cmp.reports.len(), 3);
        let f1_of = |ts: Timescale| {
            cmp.reports.iter().find(|(t, _)| *t == ts).unwrap().1.macro_f1
        };
        assert!(
            f1_of(Timescale::Monthly) >= f1_of(Timescale::Daily) - 1e-9,
            "longer intervals cannot lose fingerprint venues"
        );

        let too_big =
            interval_comparison(&[&daily, &weekly, &monthly], 1, Sampler::Max, 3, 7, Some(99));
        assert!(matches!(too_big, Err(Error::UserCapTooLarge { .. })));
    }

    #[test]
    fn interval_comparison_of_identical_content_gives_identical_reports() {
        let spec = SyntheticSpec { n_users: 10, ..SyntheticSpec::default() };
        let daily = planted_dataset(&spec, Timescale::Daily);
        // Same trajectories presented under each timescale label.
        let mut weekly = daily.clone();
        weekly.timescale = Timescale::Weekly;
        let mut monthly = daily.clone();
        monthly.timescale = Timescale::Monthly;
        let cmp =
            interval_comparison(&[&daily, &weekly, &monthly], 1, Sampler::Max, 3, 7, None)
                .unwrap();
        let strip = |r: &MetricsReport| {
            (r.acc_at.clone(), r.macro_p, r.macro_r, r.macro_f1, r.query_count)
        };
        assert_eq!(strip(&cmp.reports[0].1), strip(&cmp.reports[1].1));
        assert_eq!(strip(&cmp.reports[0].1), strip(&cmp.reports[2].1));
    }

    #[test]
    fn scaling_curve_full_population_equals_plain_cross_validation() {
        let spec = SyntheticSpec { n_users: 15, ..SyntheticSpec::default() };
        let ds = planted_dataset(&spec, Timescale::Daily);
        let curve = scaling_curve(&ds, &[10, 15, 100], 1, Sampler::Max, 3, 7).unwrap();
        assert_eq!(curve.skipped, vec![100]);
        assert_eq!(curve.points.len(), 2);
        let full = &curve.points[1];
        assert_eq!(full.n_users, 15);
        let plain = cross_validate(&ds, &EvalConfig::new(1, Sampler::Max, 3, 7)).unwrap();
        assert_eq!(full.report.acc_at, plain.acc_at);
        assert_eq!(full.report.macro_p.to_bits(), plain.macro_p.to_bits());
        assert_eq!(full.report.macro_r.to_bits(), plain.macro_r.to_bits());
        assert_eq!(full.report.macro_f1.to_bits(), plain.macro_f1.to_bits());
        assert_eq!(full.report.query_count, plain.query_count);
        assert_eq!(full.report.search_space_size, plain.search_space_size);

        // Degradation trend: more users cannot improve the smallest run.
        assert!(
            curve.points[0].report.macro_f1 >= curve.points[1].report.macro_f1 - 1e-9,
            "F1 should not rise with population"
        );

        assert!(scaling_curve(&ds, &[10, 10], 1, Sampler::Max, 3, 7).is_err(), "grid not ascending");
        assert!(scaling_curve(&ds, &[], 1, Sampler::Max, 3, 7).is_err(), "empty grid");
    }

    #[test]
    fn timing_profile_reports_finite_warm_numbers() {
        let spec = SyntheticSpec { n_users: 10, ..SyntheticSpec::default() };
        let ds = planted_dataset(&spec, Timescale::Daily);
        let profile = timing_profile(&ds, 1, Sampler::Max, 3, 7).unwrap();
        assert!(profile.query_count > 0);
        assert!(profile.search_space_size > 0);
        assert_eq!(
            profile.query_count + profile.search_space_size,
            ds.trajectory_count,
            "fold 0 partitions the dataset"
        );
        assert!(profile.mean_query_time_ms.is_finite() && profile.mean_query_time_ms >= 0.0);
        assert!(profile.index_build_ms.is_finite() && profile.index_build_ms >= 0.0);
        assert!(!profile.machine.is_empty());
    }
}
