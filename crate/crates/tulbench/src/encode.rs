//! Sub-trajectory encoding: reduce the distinct venue IDs of a trajectory
//! to a fixed-length vector of d representatives.
//!
//! The `max` sampler keeps the d largest distinct venue IDs, which is the
//! selection that maximizes the summed IDs over all d-subsets. `min` and
//! `median` keep the d smallest and the d rank-closest-to-median IDs and
//! exist as ablation baselines. All encodings are stored in non-increasing
//! order; when a trajectory has fewer than d distinct venues the sampler's
//! last selected ID is repeated, which keeps the padded vector in the same
//! numeric region instead of dragging it toward zero.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncodedTrajectory, SubTrajectory, VenueId, MAX_DIM};

/// Which d of the distinct venue IDs represent a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Max,
    Min,
    Median,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::Max => "max",
            Sampler::Min => "min",
            Sampler::Median => "median",
        }
    }

    /// Selects up to d venue IDs from the ascending distinct list, in the
    /// sampler's own selection order (used for deficit padding).
    fn select(self, distinct: &[VenueId], d: usize) -> Vec<VenueId> {
        match self {
            Sampler::Max => distinct.iter().rev().take(d).copied().collect(),
            Sampler::Min => distinct.iter().take(d).copied().collect(),
            Sampler::Median => {
                // Median rank of the ascending list; even lengths tie toward
                // the lower rank. Selection walks outward by rank distance,
                // lower rank first on ties.
                let median_rank = (distinct.len() - 1) / 2;
                let mut ranks: Vec<usize> = (0..distinct.len()).collect();
                ranks.sort_by_key(|&r| (r.abs_diff(median_rank), r));
                ranks.into_iter().take(d).map(|r| distinct[r]).collect()
            }
        }
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Sampler> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Sampler::Max),
            "min" => Ok(Sampler::Min),
            "median" => Ok(Sampler::Median),
            other => Err(Error::Config(format!(
                "unknown sampler {other:?}, expected max, min or median"
            ))),
        }
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Distinct venue IDs visited in a trajectory. Requires dense venue IDs.
pub fn venue_set(traj: &SubTrajectory) -> Result<BTreeSet<VenueId>> {
    traj.checkins.iter().map(|c| c.venue.dense()).collect()
}

/// Reduces a raw venue-ID multiset to its d-vector, in non-increasing
/// order. Selection depends only on the distinct venue set, so visit order
/// and multiplicity never change the result; a deficit repeats the
/// sampler's last selected ID.
pub fn encode_venues(venues: &[VenueId], d: usize, sampler: Sampler) -> Result<Vec<VenueId>> {
    if !(1..=MAX_DIM).contains(&d) {
        return Err(Error::InvalidDimension(d));
    }
    if venues.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let distinct: Vec<VenueId> = venues.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut selected = sampler.select(&distinct, d);
    while selected.len() < d {
        selected.push(*selected.last().expect("non-empty multiset has a selection"));
    }
    selected.sort_unstable_by(|a, b| b.cmp(a));
    Ok(selected)
}

/// Encodes one trajectory as d venue IDs plus its user label.
pub fn encode(traj: &SubTrajectory, d: usize, sampler: Sampler) -> Result<EncodedTrajectory> {
    if !(1..=MAX_DIM).contains(&d) {
        return Err(Error::InvalidDimension(d));
    }
    if traj.checkins.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let label = traj.dense_user()?;
    let venues: Vec<VenueId> = venue_set(traj)?.into_iter().collect();
    EncodedTrajectory::new(&encode_venues(&venues, d, sampler)?, label)
}

/// Encodes a slice of trajectories in order.
pub fn encode_all(
    trajs: &[SubTrajectory],
    d: usize,
    sampler: Sampler,
) -> Result<Vec<EncodedTrajectory>> {
    trajs.iter().map(|t| encode(t, d, sampler)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CheckinRecord, IntervalKey, Key};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    /// Builds a dense single-user trajectory visiting `venues` in order,
    /// one check-in per minute.
    fn traj(venues: &[u64]) -> SubTrajectory {
        traj_for_user(0, venues)
    }

    fn traj_for_user(user: u64, venues: &[u64]) -> SubTrajectory {
        let day = chrono::NaiveDate::from_ymd_opt(2010, 3, 14).unwrap();
        SubTrajectory {
            user: Key::Num(user),
            interval: IntervalKey::Day(day),
            checkins: venues
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    CheckinRecord::new(
                        Key::Num(user),
                        Utc.with_ymd_and_hms(2010, 3, 14, 8, i as u32, 0).unwrap(),
                        Key::Num(v),
                    )
                })
                .collect(),
        }
    }

    /// Oracle for the max sampler: enumerate every subset of the distinct
    /// venues of the target size and keep the one with the largest sum
    /// (unique because distinct IDs have distinct sums per element count).
    fn best_subset_by_sum(distinct: &BTreeSet<u64>, size: usize) -> BTreeSet<u64> {
        let vals: Vec<u64> = distinct.iter().copied().collect();
        let n = vals.len();
        assert!(n <= 20, "oracle is exponential");
        let mut best: Option<(u128, BTreeSet<u64>)> = None;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != size {
                continue;
            }
            let subset: BTreeSet<u64> =
                (0..n).filter(|&i| mask & (1 << i) != 0).map(|i| vals[i]).collect();
            let sum: u128 = subset.iter().map(|&v| v as u128).sum();
            if best.as_ref().map_or(true, |(s, _)| sum > *s) {
                best = Some((sum, subset));
            }
        }
        best.expect("at least one subset").1
    }

    #[test]
    fn max_keeps_largest_distinct_ids_descending() {
        let e = encode(&traj(&[9, 5, 7, 7, 2]), 2, Sampler::Max).unwrap();
        assert_eq!(e.vector(), &[9, 7], "duplicate 7 counts once");
    }

    #[test]
    fn deficit_pads_by_repeating_last_selected() {
        let e = encode(&traj(&[7]), 3, Sampler::Max).unwrap();
        assert_eq!(e.vector(), &[7, 7, 7]);
        let e = encode(&traj(&[9, 5]), 3, Sampler::Max).unwrap();
        assert_eq!(e.vector(), &[9, 5, 5], "max pads with the smallest selected");
        let e = encode(&traj(&[9, 5]), 3, Sampler::Min).unwrap();
        assert_eq!(e.vector(), &[9, 9, 5], "min selects ascending, pads with 9");
    }

    #[test]
    fn min_keeps_smallest_distinct_ids() {
        let e = encode(&traj(&[9, 5, 7, 7, 2]), 2, Sampler::Min).unwrap();
        assert_eq!(e.vector(), &[5, 2]);
    }

    // Median rank-window cases, replayed by hand on the ascending distinct
    // list with the low-side tie rule:
    //   [1..9], rank 4 holds 5; window by rank distance: 5, 4, 6 -> (6,5,4)
    //   [2,5,7,9], median rank (4-1)/2 = 1 holds 5; next is rank 0 (tie
    //   toward lower), then rank 2: 5, 2, 7 -> (7,5,2)
    #[test]
    fn median_rank_window_with_low_tie() {
        let e = encode(&traj(&[1, 2, 3, 4, 5, 6, 7, 8, 9]), 3, Sampler::Median).unwrap();
        assert_eq!(e.vector(), &[6, 5, 4]);
        let e = encode(&traj(&[9, 5, 7, 7, 2]), 3, Sampler::Median).unwrap();
        assert_eq!(e.vector(), &[7, 5, 2]);
        let e = encode(&traj(&[9, 5, 7, 7, 2]), 2, Sampler::Median).unwrap();
        assert_eq!(e.vector(), &[5, 2]);
    }

    #[test]
    fn d1_max_is_the_single_maximal_venue() {
        let e = encode(&traj(&[3, 1, 4, 1, 5]), 1, Sampler::Max).unwrap();
        assert_eq!(e.vector(), &[5]);
    }

    #[test]
    fn rejects_bad_dimension_and_empty_input() {
        assert!(matches!(encode(&traj(&[1]), 0, Sampler::Max), Err(Error::InvalidDimension(0))));
        assert!(matches!(encode(&traj(&[1]), 4, Sampler::Max), Err(Error::InvalidDimension(4))));
        let mut t = traj(&[1]);
        t.checkins.clear();
        assert!(matches!(encode(&t, 1, Sampler::Max), Err(Error::EmptyTrajectory)));
    }

    #[test]
    fn requires_dense_ids() {
        let mut t = traj(&[1, 2]);
        t.checkins[0].venue = Key::parse("raw-venue");
        assert!(matches!(encode(&t, 1, Sampler::Max), Err(Error::NonDenseId(_))));

        let mut t = traj(&[1, 2]);
        t.user = Key::parse("raw-user");
        for c in &mut t.checkins {
            c.user = t.user.clone();
        }
        assert!(matches!(encode(&t, 1, Sampler::Max), Err(Error::NonDenseId(_))));
    }

    #[test]
    fn venue_set_dedupes_and_accepts_empty() {
        let t = traj(&[9, 5, 7, 7, 2]);
        assert_eq!(venue_set(&t).unwrap(), BTreeSet::from([2, 5, 7, 9]));
        let mut empty = traj(&[1]);
        empty.checkins.clear();
        assert_eq!(venue_set(&empty).unwrap(), BTreeSet::new());
    }

    #[test]
    fn label_is_the_dense_user() {
        let e = encode(&traj_for_user(42, &[1, 2, 3]), 2, Sampler::Max).unwrap();
        assert_eq!(e.label, 42);
    }

    proptest! {
        /// The max sampler's selected set must match the exhaustive-subset
        /// argmax of summed venue IDs, for every d and small venue pools.
        #[test]
        fn max_selection_maximizes_subset_sum(
            venues in proptest::collection::vec(0u64..50, 1..20),
            d in 1usize..=3,
        ) {
            let t = traj(&venues);
            let distinct = venue_set(&t).unwrap();
            let size = d.min(distinct.len());
            let expected = best_subset_by_sum(&distinct, size);
            let e = encode(&t, d, Sampler::Max).unwrap();
            let got: BTreeSet<u64> = e.vector().iter().copied().collect();
            prop_assert_eq!(got, expected);
        }

        /// Same distinct venue set in any visit order and multiplicity
        /// encodes identically.
        #[test]
        fn encoding_ignores_order_and_multiplicity(
            venues in proptest::collection::vec(0u64..30, 1..15),
            d in 1usize..=3,
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = venues.clone();
            shuffled.extend_from_slice(&venues); // double every visit
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            shuffled.shuffle(&mut rng);
            for sampler in [Sampler::Max, Sampler::Min, Sampler::Median] {
                let a = encode(&traj(&venues), d, sampler).unwrap();
                let b = encode(&traj(&shuffled), d, sampler).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        /// Encodings are always exactly d long and non-increasing; with
        /// fewer than d distinct venues the padding repeats a selected ID.
        #[test]
        fn encoding_shape_invariants(
            venues in proptest::collection::vec(0u64..10, 1..6),
            d in 1usize..=3,
        ) {
            for sampler in [Sampler::Max, Sampler::Min, Sampler::Median] {
                let t = traj(&venues);
                let e = encode(&t, d, sampler).unwrap();
                prop_assert_eq!(e.d(), d);
                prop_assert!(e.vector().windows(2).all(|w| w[0] >= w[1]));
                let distinct = venue_set(&t).unwrap();
                for v in e.vector() {
                    prop_assert!(distinct.contains(v));
                }
            }
        }
    }
}
