//! Exact k-nearest-neighbor linking over encoded trajectories.
//!
//! Every distance comparison uses exact integer arithmetic on squared
//! Euclidean distances; the square root is monotone, so it is never taken
//! for ordering. Integer venue coordinates make exact distance ties common,
//! and ties are broken by canonical training position, which makes every
//! query answer fully deterministic and independent of insertion order.
//!
//! Canonical training order: points sorted by (coordinate vector, label)
//! ascending. `Neighbor::train_index` refers to that order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{EncodedTrajectory, UserId, VenueId, MAX_COORD, MAX_DIM};

/// One training point returned by a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub label: UserId,
    /// Position in the canonical sorted training order; the tie-break key.
    pub train_index: usize,
    /// Exact squared Euclidean distance.
    pub dist2: u128,
}

impl Neighbor {
    /// Euclidean distance, derived from the exact squared form.
    pub fn distance(&self) -> f64 {
        (self.dist2 as f64).sqrt()
    }
}

#[inline]
fn dist2(q: &[u64], p: &[u64; MAX_DIM], d: usize) -> u128 {
    let mut sum = 0u128;
    for i in 0..d {
        let diff = q[i].abs_diff(p[i]) as u128;
        sum += diff * diff;
    }
    sum
}

/// Sub-trees this small are scanned linearly instead of recursed.
const LEAF: usize = 16;

#[derive(Debug, Clone)]
enum Structure {
    /// d = 1: the canonical point order is already coordinate-sorted;
    /// queries expand outward from a binary-searched split.
    Sorted1d,
    /// d = 2 or 3: median-split space-partitioning tree; `perm` holds
    /// canonical indices arranged so each [lo, hi) range splits at its
    /// midpoint along axis = depth mod d.
    KdTree { perm: Vec<u32> },
}

/// Exact k-NN index over d-dimensional venue-ID vectors, d in {1, 2, 3}.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    d: usize,
    /// Canonical order: (coords, label) ascending. Unused dims are zero.
    points: Vec<[u64; MAX_DIM]>,
    labels: Vec<UserId>,
    structure: Structure,
}

impl KnnIndex {
    /// Builds an index from encoded trajectories, all of the same dimension.
    pub fn build(encodings: &[EncodedTrajectory]) -> Result<KnnIndex> {
        if encodings.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let d = encodings[0].d();
        for e in encodings {
            if e.d() != d {
                return Err(Error::DimensionMismatch { expected: d, got: e.d() });
            }
        }
        let pairs: Vec<([u64; MAX_DIM], u64)> =
            encodings.iter().map(|e| (*e.coords(), e.label)).collect();
        KnnIndex::from_pairs(d, pairs)
    }

    /// Builds from raw coordinate rows (`n * d` values) and labels.
    pub fn from_rows(d: usize, coords: &[u64], labels: &[UserId]) -> Result<KnnIndex> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(Error::InvalidDimension(d));
        }
        if coords.len() != labels.len() * d {
            return Err(Error::LengthMismatch(format!(
                "{} coordinates cannot form {} points of dimension {d}",
                coords.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let pairs: Vec<([u64; MAX_DIM], u64)> = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let mut p = [0u64; MAX_DIM];
                p[..d].copy_from_slice(&coords[i * d..(i + 1) * d]);
                (p, label)
            })
            .collect();
        KnnIndex::from_pairs(d, pairs)
    }

    fn from_pairs(d: usize, mut pairs: Vec<([u64; MAX_DIM], u64)>) -> Result<KnnIndex> {
        for (p, _) in &pairs {
            for &c in &p[..d] {
                if c > MAX_COORD {
                    return Err(Error::CoordinateOverflow(c));
                }
            }
        }
        pairs.sort_unstable();
        let points: Vec<[u64; MAX_DIM]> = pairs.iter().map(|(p, _)| *p).collect();
        let labels: Vec<u64> = pairs.iter().map(|(_, l)| *l).collect();
        let structure = if d == 1 {
            Structure::Sorted1d
        } else {
            let mut perm: Vec<u32> = (0..points.len() as u32).collect();
            build_kd(&points, &mut perm, d, 0);
            Structure::KdTree { perm }
        };
        Ok(KnnIndex { d, points, labels, structure })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    fn check_query(&self, q: &[u64], k: usize) -> Result<()> {
        if q.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: q.len() });
        }
        for &c in q {
            if c > MAX_COORD {
                return Err(Error::CoordinateOverflow(c));
            }
        }
        if k == 0 || k > self.len() {
            return Err(Error::KOutOfRange { k, n: self.len() });
        }
        Ok(())
    }

    /// The k exact nearest neighbors, sorted by (distance, train_index)
    /// ascending. Equal-distance results always appear in canonical
    /// training order, so answers are reproducible bit for bit.
    pub fn query_knn(&self, q: &[u64], k: usize) -> Result<Vec<Neighbor>> {
        self.check_query(q, k)?;
        let hits = match &self.structure {
            Structure::Sorted1d => self.query_1d(q[0], k),
            Structure::KdTree { perm } => self.query_kd(perm, q, k),
        };
        Ok(hits
            .into_iter()
            .map(|(d2, i)| Neighbor {
                label: self.labels[i as usize],
                train_index: i as usize,
                dist2: d2,
            })
            .collect())
    }

    /// Outward expansion over the coordinate-sorted array. Runs of equal
    /// coordinates are consumed lowest-index-first so distance ties come
    /// out in canonical order.
    fn query_1d(&self, q: u64, k: usize) -> Vec<(u128, u32)> {
        let n = self.points.len();
        let coord = |i: usize| self.points[i][0];
        let split = self.points.partition_point(|p| p[0] < q);
        let mut out: Vec<(u128, u32)> = Vec::with_capacity(k);
        let mut left_end = split; // exclusive end of the unconsumed left side
        let mut right = split; // next unconsumed right index
        while out.len() < k {
            let left_diff = (left_end > 0).then(|| q - coord(left_end - 1));
            let right_diff = (right < n).then(|| coord(right) - q);
            let take_left = match (left_diff, right_diff) {
                (None, None) => break,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                // Lower train indices live on the left, so ties go left.
                (Some(l), Some(r)) => l <= r,
            };
            if take_left {
                let c = coord(left_end - 1);
                let run_start = self.points.partition_point(|p| p[0] < c);
                let want = k - out.len();
                let take = (left_end - run_start).min(want);
                let d2 = {
                    let diff = (q - c) as u128;
                    diff * diff
                };
                for i in run_start..run_start + take {
                    out.push((d2, i as u32));
                }
                left_end = run_start;
            } else {
                let diff = (coord(right) - q) as u128;
                out.push((diff * diff, right as u32));
                right += 1;
            }
        }
        out
    }

    fn query_kd(&self, perm: &[u32], q: &[u64], k: usize) -> Vec<(u128, u32)> {
        // Max-heap of the k best (dist2, index) pairs; the top is the
        // current worst, compared lexicographically so index ties are exact.
        let mut heap: BinaryHeap<(u128, u32)> = BinaryHeap::with_capacity(k + 1);
        self.kd_search(perm, q, k, 0, perm.len(), 0, &mut heap);
        let mut hits = heap.into_vec();
        hits.sort_unstable();
        hits
    }

    fn kd_search(
        &self,
        perm: &[u32],
        q: &[u64],
        k: usize,
        lo: usize,
        hi: usize,
        depth: usize,
        heap: &mut BinaryHeap<(u128, u32)>,
    ) {
        let offer = |heap: &mut BinaryHeap<(u128, u32)>, cand: (u128, u32)| {
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap full") {
                heap.pop();
                heap.push(cand);
            }
        };
        if hi - lo <= LEAF {
            for &i in &perm[lo..hi] {
                offer(heap, (dist2(q, &self.points[i as usize], self.d), i));
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let pivot_idx = perm[mid] as usize;
        offer(heap, (dist2(q, &self.points[pivot_idx], self.d), perm[mid]));
        let axis = depth % self.d;
        let pivot = self.points[pivot_idx][axis];
        let (near, far) =
            if q[axis] <= pivot { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.kd_search(perm, q, k, near.0, near.1, depth + 1, heap);
        let plane = q[axis].abs_diff(pivot) as u128;
        let plane2 = plane * plane;
        // Descend the far side on equality too: it may hold an equal-distance
        // point with a smaller train index than the current worst.
        if heap.len() < k || plane2 <= heap.peek().expect("heap full").0 {
            self.kd_search(perm, q, k, far.0, far.1, depth + 1, heap);
        }
    }

    /// Majority vote over the k nearest neighbors. Vote ties fall through
    /// to: smaller summed squared distance, then the nearest neighbor's
    /// label if it is among the tied, then the smallest label.
    pub fn predict(&self, q: &[u64], k: usize) -> Result<UserId> {
        let neighbors = self.query_knn(q, k)?;
        Ok(vote(&neighbors))
    }

    /// Ranked label list for ACC@K: rank 1 is the `predict` winner; the
    /// other labels among the k nearest follow by (votes desc, nearest
    /// member asc, label asc). If fewer than `max_labels` distinct labels
    /// appear, the list extends outward through farther neighbors in
    /// (distance, train_index) order, appending labels on first sight.
    pub fn rank_labels(&self, q: &[u64], k: usize, max_labels: usize) -> Result<Vec<UserId>> {
        if max_labels == 0 {
            return Err(Error::Config("max_labels must be at least 1".into()));
        }
        let neighbors = self.query_knn(q, k)?;
        let winner = vote(&neighbors);
        let mut stats: BTreeMap<UserId, (usize, u128)> = BTreeMap::new();
        for n in &neighbors {
            let e = stats.entry(n.label).or_insert((0, u128::MAX));
            e.0 += 1;
            e.1 = e.1.min(n.dist2);
        }
        let mut rest: Vec<(Reverse<usize>, u128, UserId)> = stats
            .iter()
            .filter(|(&label, _)| label != winner)
            .map(|(&label, &(count, nearest))| (Reverse(count), nearest, label))
            .collect();
        rest.sort_unstable();
        let mut ranked = Vec::with_capacity(max_labels);
        ranked.push(winner);
        ranked.extend(rest.into_iter().take(max_labels - 1).map(|(_, _, label)| label));

        // Deficit: walk outward through farther neighbors, first seen first.
        let mut fetched = neighbors.len();
        while ranked.len() < max_labels && fetched < self.len() {
            let next = (fetched * 2).max(fetched + 4).min(self.len());
            let wider = self.query_knn(q, next)?;
            for n in &wider[fetched..] {
                if !ranked.contains(&n.label) {
                    ranked.push(n.label);
                    if ranked.len() == max_labels {
                        break;
                    }
                }
            }
            fetched = next;
        }
        Ok(ranked)
    }

    // ------------------------------------------------------------------
    // persistence
    // ------------------------------------------------------------------

    /// Serializes the index: magic, dimension, count, then the canonical
    /// point array as little-endian u64 rows of d coordinates plus label.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (p, &label) in self.points.iter().zip(&self.labels) {
            for &c in &p[..self.d] {
                w.write_all(&c.to_le_bytes())?;
            }
            w.write_all(&label.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.save(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Loads a saved index and rebuilds the search structure. The stored
    /// point order is verified against the canonical order, so a truncated
    /// or tampered file is rejected rather than silently misanswering.
    pub fn load<R: Read>(mut r: R) -> Result<KnnIndex> {
        let corrupt = |msg: &str| Error::CorruptIndex(msg.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| corrupt("file shorter than its header"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic, not an index file or unsupported version"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(|_| corrupt("missing dimension"))?;
        let d = u32::from_le_bytes(u32buf) as usize;
        if !(1..=MAX_DIM).contains(&d) {
            return Err(corrupt("dimension out of range"));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf).map_err(|_| corrupt("missing point count"))?;
        let count = u64::from_le_bytes(u64buf) as usize;
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            let mut p = [0u64; MAX_DIM];
            for c in p.iter_mut().take(d) {
                r.read_exact(&mut u64buf).map_err(|_| corrupt("truncated point data"))?;
                *c = u64::from_le_bytes(u64buf);
            }
            r.read_exact(&mut u64buf).map_err(|_| corrupt("truncated point data"))?;
            pairs.push((p, u64::from_le_bytes(u64buf)));
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(corrupt("trailing bytes after point data"));
        }
        if pairs.windows(2).any(|w| w[0] > w[1]) {
            return Err(corrupt("points out of canonical order"));
        }
        let n = pairs.len();
        let index = KnnIndex::from_pairs(d, pairs)?;
        debug_assert_eq!(index.len(), n);
        Ok(index)
    }

    pub fn load_file(path: &Path) -> Result<KnnIndex> {
        KnnIndex::load(BufReader::new(File::open(path)?))
    }
}

const MAGIC: &[u8; 8] = b"TULIDX01";

fn build_kd(points: &[[u64; MAX_DIM]], perm: &mut [u32], d: usize, depth: usize) {
    if perm.len() <= LEAF {
        return;
    }
    let mid = perm.len() / 2;
    let axis = depth % d;
    perm.select_nth_unstable_by_key(mid, |&i| points[i as usize][axis]);
    let (left, rest) = perm.split_at_mut(mid);
    build_kd(points, left, d, depth + 1);
    build_kd(points, &mut rest[1..], d, depth + 1);
}

/// Majority vote with the deterministic tie-break cascade.
fn vote(neighbors: &[Neighbor]) -> UserId {
    debug_assert!(!neighbors.is_empty());
    let mut stats: BTreeMap<UserId, (usize, u128)> = BTreeMap::new();
    for n in neighbors {
        let e = stats.entry(n.label).or_insert((0, 0));
        e.0 += 1;
        e.1 = e.1.saturating_add(n.dist2);
    }
    let best_count = stats.values().map(|&(c, _)| c).max().expect("non-empty");
    let best_sum = stats
        .values()
        .filter(|&&(c, _)| c == best_count)
        .map(|&(_, s)| s)
        .min()
        .expect("non-empty");
    let mut tied = stats
        .iter()
        .filter(|(_, &(c, s))| c == best_count && s == best_sum)
        .map(|(&label, _)| label);
    let first = tied.next().expect("at least one tied label");
    if tied.next().is_none() {
        return first;
    }
    let nearest = neighbors[0].label;
    let is_tied = |l: UserId| stats[&l] == (best_count, best_sum);
    if is_tied(nearest) {
        nearest
    } else {
        first // BTreeMap iterates ascending, so this is the smallest tied label
    }
}

// ============================================================================
// Jaccard-distance variant
// ============================================================================

/// Exact comparison key for a Jaccard distance (union - inter) / union.
/// Empty-vs-empty is distance zero. Ordering compares fractions by cross
/// multiplication, never through floating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct JaccardDist {
    num: u64,
    den: u64,
}

impl JaccardDist {
    fn between(a: &BTreeSet<VenueId>, b: &BTreeSet<VenueId>) -> JaccardDist {
        let inter = a.intersection(b).count() as u64;
        let union = (a.len() + b.len()) as u64 - inter;
        if union == 0 {
            JaccardDist { num: 0, den: 1 }
        } else {
            JaccardDist { num: union - inter, den: union }
        }
    }

    fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Ord for JaccardDist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

impl PartialOrd for JaccardDist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Majority vote over the k training venue sets nearest in Jaccard
/// distance. A linear scan: the set variant exists to show the vector
/// encoding loses little accuracy, not to be fast. Ties mirror `predict`
/// with summed Jaccard distance in place of summed squared distance.
pub fn predict_jaccard(
    train_sets: &[BTreeSet<VenueId>],
    labels: &[UserId],
    query: &BTreeSet<VenueId>,
    k: usize,
) -> Result<UserId> {
    if train_sets.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} training sets vs {} labels",
            train_sets.len(),
            labels.len()
        )));
    }
    if train_sets.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if k == 0 || k > train_sets.len() {
        return Err(Error::KOutOfRange { k, n: train_sets.len() });
    }
    let mut scored: Vec<(JaccardDist, usize)> = train_sets
        .iter()
        .enumerate()
        .map(|(i, s)| (JaccardDist::between(query, s), i))
        .collect();
    if k < scored.len() {
        scored.select_nth_unstable(k - 1);
        scored.truncate(k);
    }
    scored.sort_unstable();

    let mut stats: BTreeMap<UserId, (usize, f64)> = BTreeMap::new();
    for &(dist, i) in &scored {
        let e = stats.entry(labels[i]).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += dist.as_f64();
    }
    let best_count = stats.values().map(|&(c, _)| c).max().expect("non-empty");
    let best_sum = stats
        .values()
        .filter(|&&(c, _)| c == best_count)
        .map(|&(_, s)| s)
        .fold(f64::INFINITY, f64::min);
    let mut tied = stats
        .iter()
        .filter(|(_, &(c, s))| c == best_count && s == best_sum)
        .map(|(&label, _)| label);
    let first = tied.next().expect("at least one tied label");
    if tied.next().is_none() {
        return Ok(first);
    }
    let nearest = labels[scored[0].1];
    if stats[&nearest] == (best_count, best_sum) {
        Ok(nearest)
    } else {
        Ok(first)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncodedTrajectory;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn enc(vector: &[u64], label: u64) -> EncodedTrajectory {
        EncodedTrajectory::new(vector, label).unwrap()
    }

    /// Independent oracle: canonicalize, scan every point, full sort by
    /// (dist2, index), take k. Distances recomputed from scratch here.
    fn brute_force(
        points: &[(Vec<u64>, u64)],
        q: &[u64],
        k: usize,
    ) -> Vec<(u128, usize, u64)> {
        let mut canonical: Vec<(Vec<u64>, u64)> = points.to_vec();
        canonical.sort();
        let mut all: Vec<(u128, usize, u64)> = canonical
            .iter()
            .enumerate()
            .map(|(i, (p, label))| {
                let d2: u128 = p
                    .iter()
                    .zip(q)
                    .map(|(&a, &b)| {
                        let diff = if a > b { a - b } else { b - a } as u128;
                        diff * diff
                    })
                    .sum();
                (d2, i, *label)
            })
            .collect();
        all.sort();
        all.truncate(k);
        all
    }

    fn build_from(points: &[(Vec<u64>, u64)]) -> KnnIndex {
        let d = points[0].0.len();
        let coords: Vec<u64> = points.iter().flat_map(|(p, _)| p.iter().copied()).collect();
        let labels: Vec<u64> = points.iter().map(|(_, l)| *l).collect();
        KnnIndex::from_rows(d, &coords, &labels).unwrap()
    }

    fn as_triples(neighbors: &[Neighbor]) -> Vec<(u128, usize, u64)> {
        neighbors.iter().map(|n| (n.dist2, n.train_index, n.label)).collect()
    }

    #[test]
    fn one_dimensional_query_and_distances() {
        // Training values 2, 9, 14; query 10, k = 2: neighbors 9 then 14.
        let idx = build_from(&[(vec![2], 0), (vec![9], 1), (vec![14], 2)]);
        let ns = idx.query_knn(&[10], 2).unwrap();
        assert_eq!(as_triples(&ns), vec![(1, 1, 1), (16, 2, 2)]);
        assert_eq!(ns[0].distance(), 1.0);
        assert_eq!(ns[1].distance(), 4.0);
    }

    #[test]
    fn equal_distance_ties_resolve_by_canonical_position() {
        // Three identical coordinates: canonical order sorts by label.
        let idx = build_from(&[(vec![5], 30), (vec![5], 10), (vec![5], 20)]);
        let ns = idx.query_knn(&[5], 3).unwrap();
        assert_eq!(as_triples(&ns), vec![(0, 0, 10), (0, 1, 20), (0, 2, 30)]);

        // Left and right candidates at the same distance: left (smaller
        // coordinate, hence smaller canonical index) comes first.
        let idx = build_from(&[(vec![9], 7), (vec![11], 3)]);
        let ns = idx.query_knn(&[10], 2).unwrap();
        assert_eq!(as_triples(&ns), vec![(1, 0, 7), (1, 1, 3)]);
    }

    #[test]
    fn results_do_not_depend_on_insertion_order() {
        let fwd = vec![(vec![3, 1], 0), (vec![2, 2], 1), (vec![9, 9], 2), (vec![3, 1], 3)];
        let mut rev = fwd.clone();
        rev.reverse();
        let a = build_from(&fwd);
        let b = build_from(&rev);
        for q in [[0u64, 0], [3, 1], [5, 5], [9, 9]] {
            for k in 1..=4 {
                assert_eq!(
                    as_triples(&a.query_knn(&q, k).unwrap()),
                    as_triples(&b.query_knn(&q, k).unwrap())
                );
            }
        }
    }

    #[test]
    fn rejects_bad_queries() {
        let idx = build_from(&[(vec![1, 2], 0), (vec![3, 4], 1)]);
        assert!(matches!(idx.query_knn(&[1], 1), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(idx.query_knn(&[1, 2], 0), Err(Error::KOutOfRange { k: 0, n: 2 })));
        assert!(matches!(idx.query_knn(&[1, 2], 3), Err(Error::KOutOfRange { k: 3, n: 2 })));
        assert!(matches!(
            idx.query_knn(&[1, u64::MAX], 1),
            Err(Error::CoordinateOverflow(_))
        ));
    }

    #[test]
    fn rejects_bad_builds() {
        assert!(matches!(KnnIndex::build(&[]), Err(Error::EmptyTrainingSet)));
        let mixed = [enc(&[1], 0), enc(&[2, 1], 1)];
        assert!(matches!(KnnIndex::build(&mixed), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            KnnIndex::from_rows(2, &[1, 2, 3], &[0]),
            Err(Error::LengthMismatch(_))
        ));
        assert!(matches!(
            KnnIndex::from_rows(1, &[u64::MAX], &[0]),
            Err(Error::CoordinateOverflow(_))
        ));
    }

    #[test]
    fn predict_majority_wins() {
        // k = 3, labels [A, A, B] -> A.
        let idx = build_from(&[(vec![10], 1), (vec![11], 1), (vec![12], 2), (vec![50], 3)]);
        assert_eq!(idx.predict(&[10], 3).unwrap(), 1);
    }

    #[test]
    fn predict_vote_tie_falls_to_summed_distance() {
        // k = 3, labels [A, B, C] at distances 1, 2, 3 -> A by smallest sum.
        let idx = build_from(&[(vec![11], 5), (vec![12], 4), (vec![13], 6)]);
        assert_eq!(idx.predict(&[10], 3).unwrap(), 5);
    }

    #[test]
    fn predict_sum_tie_falls_to_nearest_label() {
        // Two labels, one point each, equal distance and sum: the nearest
        // neighbor (smaller canonical index) decides, not the smaller label.
        let idx = build_from(&[(vec![9], 7), (vec![11], 3)]);
        assert_eq!(idx.predict(&[10], 2).unwrap(), 7);
    }

    #[test]
    fn predict_last_resort_is_smallest_label() {
        // Counts: A=1 (dist 0), B=2, C=2 with equal sums; nearest label A is
        // not among the tied {B, C}, so the smallest tied label wins.
        let idx = build_from(&[
            (vec![50], 9),
            (vec![47], 7),
            (vec![53], 7),
            (vec![47], 3),
            (vec![53], 3),
        ]);
        assert_eq!(idx.predict(&[50], 5).unwrap(), 3);
    }

    #[test]
    fn rank_labels_orders_then_extends_outward() {
        // Nearest 3 of query 10: 10(A), 11(A), 12(B); C sits farther out.
        let idx = build_from(&[(vec![10], 1), (vec![11], 1), (vec![12], 2), (vec![50], 3)]);
        assert_eq!(idx.rank_labels(&[10], 3, 3).unwrap(), vec![1, 2, 3]);
        // Asking for more labels than exist returns every distinct label.
        assert_eq!(idx.rank_labels(&[10], 3, 10).unwrap(), vec![1, 2, 3]);
        assert_eq!(idx.rank_labels(&[10], 3, 1).unwrap(), vec![1]);
        assert!(idx.rank_labels(&[10], 3, 0).is_err());
    }

    #[test]
    fn rank_labels_second_rank_ordering() {
        // k = 5 around query 100: A twice (nearest 99, 101), B twice
        // (98, 102), C once (103). Rank 2 = B (votes), rank 3 = C.
        let idx = build_from(&[
            (vec![99], 1),
            (vec![101], 1),
            (vec![98], 2),
            (vec![102], 2),
            (vec![103], 3),
        ]);
        assert_eq!(idx.rank_labels(&[100], 5, 3).unwrap(), vec![1, 2, 3]);

        // Same votes, nearer member breaks the tie: B's nearest is closer.
        let idx = build_from(&[
            (vec![100], 1),
            (vec![100], 1),
            (vec![101], 5),
            (vec![110], 5),
            (vec![104], 9),
            (vec![104], 9),
        ]);
        // counts: 1 -> 2 votes, 5 -> 2 votes, 9 -> 2 votes; winner 1 (sum 0).
        // Among {5, 9}: nearest members at dist2 1 vs 16 -> 5 before 9.
        assert_eq!(idx.rank_labels(&[100], 6, 3).unwrap(), vec![1, 5, 9]);
    }

    #[test]
    fn rank_first_equals_predict() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<(Vec<u64>, u64)> = (0..200)
            .map(|_| (vec![rng.gen_range(0..50u64), rng.gen_range(0..50u64)], rng.gen_range(0..8)))
            .collect();
        let idx = build_from(&points);
        for _ in 0..100 {
            let q = [rng.gen_range(0..50u64), rng.gen_range(0..50u64)];
            for k in [1, 3, 7] {
                assert_eq!(
                    idx.rank_labels(&q, k, 5).unwrap()[0],
                    idx.predict(&q, k).unwrap()
                );
            }
        }
    }

    #[test]
    fn save_load_round_trip_and_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<(Vec<u64>, u64)> = (0..300)
            .map(|_| {
                (
                    vec![rng.gen_range(0..1000u64), rng.gen_range(0..1000u64), rng.gen_range(0..1000u64)],
                    rng.gen_range(0..20),
                )
            })
            .collect();
        let idx = build_from(&points);
        let mut bytes = Vec::new();
        idx.save(&mut bytes).unwrap();
        let loaded = KnnIndex::load(&bytes[..]).unwrap();
        for _ in 0..50 {
            let q = [
                rng.gen_range(0..1000u64),
                rng.gen_range(0..1000u64),
                rng.gen_range(0..1000u64),
            ];
            assert_eq!(
                as_triples(&idx.query_knn(&q, 7).unwrap()),
                as_triples(&loaded.query_knn(&q, 7).unwrap())
            );
        }

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(KnnIndex::load(truncated), Err(Error::CorruptIndex(_))));

        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xff;
        assert!(matches!(KnnIndex::load(&bad_magic[..]), Err(Error::CorruptIndex(_))));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(KnnIndex::load(&trailing[..]), Err(Error::CorruptIndex(_))));

        // Swapping two distinct rows breaks canonical order and must be
        // detected.
        let header = 8 + 4 + 8;
        let row = (idx.d() + 1) * 8;
        let mut swapped = bytes.clone();
        assert_ne!(swapped[header..header + row], swapped[header + row..header + 2 * row]);
        for i in 0..row {
            swapped.swap(header + i, header + row + i);
        }
        assert!(matches!(KnnIndex::load(&swapped[..]), Err(Error::CorruptIndex(_))));
    }

    #[test]
    fn jaccard_nearest_set_wins_at_k1() {
        let sets = [
            BTreeSet::from([1, 2]),
            BTreeSet::from([2, 3]),
            BTreeSet::from([9]),
        ];
        let labels = [10, 20, 30];
        assert_eq!(predict_jaccard(&sets, &labels, &BTreeSet::from([1, 2]), 1).unwrap(), 10);
        assert_eq!(predict_jaccard(&sets, &labels, &BTreeSet::from([9, 1]), 1).unwrap(), 30);
    }

    #[test]
    fn jaccard_vote_and_tie_breaks() {
        // Query {1,2,3}: distances 1/3 (A), 1/3 (A), 2/3 (B), 1 (B).
        let sets = [
            BTreeSet::from([1, 2]),
            BTreeSet::from([2, 3]),
            BTreeSet::from([3]),
            BTreeSet::from([4]),
        ];
        let labels = [1, 1, 2, 2];
        assert_eq!(predict_jaccard(&sets, &labels, &BTreeSet::from([1, 2, 3]), 4).unwrap(), 1);

        // One-vote-each tie: smaller summed distance wins.
        let sets = [BTreeSet::from([1, 2]), BTreeSet::from([7])];
        let labels = [5, 6];
        assert_eq!(predict_jaccard(&sets, &labels, &BTreeSet::from([1, 2, 7]), 2).unwrap(), 5);
    }

    #[test]
    fn jaccard_rejects_bad_input() {
        let sets = [BTreeSet::from([1])];
        assert!(matches!(
            predict_jaccard(&sets, &[1, 2], &BTreeSet::new(), 1),
            Err(Error::LengthMismatch(_))
        ));
        assert!(matches!(
            predict_jaccard(&[], &[], &BTreeSet::new(), 1),
            Err(Error::EmptyTrainingSet)
        ));
        assert!(matches!(
            predict_jaccard(&sets, &[1], &BTreeSet::new(), 2),
            Err(Error::KOutOfRange { .. })
        ));
    }

    #[test]
    fn jaccard_exact_fraction_ordering() {
        assert!(JaccardDist { num: 1, den: 3 } < JaccardDist { num: 2, den: 5 });
        assert_eq!(
            JaccardDist { num: 1, den: 3 }.cmp(&JaccardDist { num: 2, den: 6 }),
            std::cmp::Ordering::Equal
        );
        // Empty vs empty is distance zero; empty vs non-empty is one.
        assert_eq!(
            JaccardDist::between(&BTreeSet::new(), &BTreeSet::new()),
            JaccardDist { num: 0, den: 1 }
        );
        assert_eq!(
            JaccardDist::between(&BTreeSet::new(), &BTreeSet::from([1])),
            JaccardDist { num: 1, den: 1 }
        );
    }

    /// Jaccard linear scan cross-checked against a from-scratch oracle on
    /// random small sets.
    #[test]
    fn jaccard_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=12usize);
            let sets: Vec<BTreeSet<u64>> = (0..n)
                .map(|_| {
                    let len = rng.gen_range(0..=4usize);
                    (0..len).map(|_| rng.gen_range(0..8u64)).collect()
                })
                .collect();
            let labels: Vec<u64> = (0..n).map(|_| rng.gen_range(0..4u64)).collect();
            let query: BTreeSet<u64> =
                (0..rng.gen_range(0..=4usize)).map(|_| rng.gen_range(0..8u64)).collect();
            let k = rng.gen_range(1..=n);

            // Oracle: exact fractions as (num * LCM-free cross compare) via
            // f64 on tiny sets is unsafe, so order by (num * other.den).
            let mut scored: Vec<((u64, u64), usize)> = sets
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let inter = query.intersection(s).count() as u64;
                    let union = (query.len() + s.len()) as u64 - inter;
                    let frac = if union == 0 { (0, 1) } else { (union - inter, union) };
                    (frac, i)
                })
                .collect();
            scored.sort_by(|((n1, d1), i1), ((n2, d2), i2)| {
                (n1 * d2).cmp(&(n2 * d1)).then(i1.cmp(i2))
            });
            scored.truncate(k);
            // Recompute the vote naively.
            let mut count: BTreeMap<u64, usize> = BTreeMap::new();
            let mut sum: BTreeMap<u64, f64> = BTreeMap::new();
            for &((num, den), i) in &scored {
                *count.entry(labels[i]).or_default() += 1;
                *sum.entry(labels[i]).or_default() += num as f64 / den as f64;
            }
            let bc = count.values().copied().max().unwrap();
            let bs = count
                .iter()
                .filter(|(_, &c)| c == bc)
                .map(|(l, _)| sum[l])
                .fold(f64::INFINITY, f64::min);
            let tied: Vec<u64> = count
                .iter()
                .filter(|(l, &c)| c == bc && sum[*l] == bs)
                .map(|(&l, _)| l)
                .collect();
            let nearest = labels[scored[0].1];
            let expected = if tied.len() == 1 {
                tied[0]
            } else if tied.contains(&nearest) {
                nearest
            } else {
                tied[0]
            };

            assert_eq!(predict_jaccard(&sets, &labels, &query, k).unwrap(), expected);
        }
    }

    proptest! {
        /// Exactness against the brute-force oracle, including tie order,
        /// across dimensions, duplicate-heavy coordinate pools and all k.
        #[test]
        fn knn_matches_brute_force(
            d in 1usize..=3,
            n in 1usize..60,
            seed in 0u64..500,
            span in prop_oneof![Just(4u64), Just(100u64), Just(1_000_000u64)],
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points: Vec<(Vec<u64>, u64)> = (0..n)
                .map(|_| {
                    let p: Vec<u64> = (0..d).map(|_| rng.gen_range(0..span)).collect();
                    (p, rng.gen_range(0..10u64))
                })
                .collect();
            let idx = build_from(&points);
            let q: Vec<u64> = (0..d).map(|_| rng.gen_range(0..span)).collect();
            let k = rng.gen_range(1..=n);
            prop_assert_eq!(
                as_triples(&idx.query_knn(&q, k).unwrap()),
                brute_force(&points, &q, k)
            );
        }
    }
}
