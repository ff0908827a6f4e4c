//! Core data model shared by every stage of the benchmark: raw and dense
//! identifiers, calendar intervals, check-in records, sub-trajectories,
//! segmented datasets and metric reports.
//!
//! Identifier semantics: a [`Key`] starts life as whatever string the raw file
//! contained. Canonical non-negative decimal strings are held as `Num`, which
//! is also the representation of dense IDs after relabeling. `Num(7)` and
//! `Text("007")` are distinct keys on purpose: two raw spellings are two IDs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense user identifier assigned by relabeling.
pub type UserId = u64;
/// Dense venue identifier assigned by relabeling.
pub type VenueId = u64;

/// Largest coordinate value for which squared Euclidean distances of up to
/// three dimensions stay exact in 128-bit arithmetic.
pub const MAX_COORD: u64 = (1 << 63) - 1;

/// Maximum encoding dimension supported by the classifier.
pub const MAX_DIM: usize = 3;

// ============================================================================
// identifiers
// ============================================================================

/// A user or venue identifier, raw or dense.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Key {
    Num(u64),
    Text(Box<str>),
}

impl Key {
    /// Interns a raw token. Canonical decimals (no sign, no leading zero
    /// except "0", fits in u64) become `Num`; everything else stays `Text`
    /// so the original spelling round-trips exactly.
    pub fn parse(token: &str) -> Key {
        let canonical = !token.is_empty()
            && token.len() <= 20
            && token.bytes().all(|b| b.is_ascii_digit())
            && (token == "0" || !token.starts_with('0'));
        if canonical {
            if let Ok(n) = token.parse::<u64>() {
                return Key::Num(n);
            }
        }
        Key::Text(token.into())
    }

    pub fn num(n: u64) -> Key {
        Key::Num(n)
    }

    pub fn as_num(&self) -> Option<u64> {
        match self {
            Key::Num(n) => Some(*n),
            Key::Text(_) => None,
        }
    }

    /// Dense ID of a relabeled key; error naming the offending raw key otherwise.
    pub fn dense(&self) -> Result<u64> {
        match self {
            Key::Num(n) => Ok(*n),
            Key::Text(t) => Err(Error::NonDenseId(t.to_string())),
        }
    }

    /// Byte-wise comparison of the textual forms, allocation-free.
    pub fn cmp_lex(&self, other: &Key) -> Ordering {
        let mut buf_a = [0u8; 20];
        let mut buf_b = [0u8; 20];
        self.lex_bytes(&mut buf_a).cmp(other.lex_bytes(&mut buf_b))
    }

    fn lex_bytes<'a>(&'a self, buf: &'a mut [u8; 20]) -> &'a [u8] {
        match self {
            Key::Text(t) => t.as_bytes(),
            Key::Num(n) => {
                let mut n = *n;
                let mut i = buf.len();
                loop {
                    i -= 1;
                    buf[i] = b'0' + (n % 10) as u8;
                    n /= 10;
                    if n == 0 {
                        break;
                    }
                }
                &buf[i..]
            }
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Num(n) => write!(f, "{n}"),
            Key::Text(t) => f.write_str(t),
        }
    }
}

/// Dataset-wide ordering mode for raw keys: numeric when every key is a
/// canonical decimal, byte-wise lexicographic otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyOrder {
    Numeric,
    Lexical,
}

impl KeyOrder {
    pub fn detect<'a>(keys: impl IntoIterator<Item = &'a Key>) -> KeyOrder {
        if keys.into_iter().all(|k| matches!(k, Key::Num(_))) {
            KeyOrder::Numeric
        } else {
            KeyOrder::Lexical
        }
    }

    pub fn cmp(self, a: &Key, b: &Key) -> Ordering {
        match self {
            // Numeric mode is only selected when every key is Num; the
            // fallback ranks stray Text keys last deterministically.
            KeyOrder::Numeric => match (a.as_num(), b.as_num()) {
                (Some(x), Some(y)) => x.cmp(&y),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => a.cmp_lex(b),
            },
            KeyOrder::Lexical => a.cmp_lex(b),
        }
    }
}

// ============================================================================
// time intervals
// ============================================================================

/// Granularity at which check-in streams are cut into sub-trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timescale {
    Daily,
    Weekly,
    Monthly,
}

impl Timescale {
    pub const ALL: [Timescale; 3] = [Timescale::Daily, Timescale::Weekly, Timescale::Monthly];

    pub fn name(self) -> &'static str {
        match self {
            Timescale::Daily => "daily",
            Timescale::Weekly => "weekly",
            Timescale::Monthly => "monthly",
        }
    }

    /// Minimum check-ins a sub-trajectory must have to survive filtering.
    /// Longer intervals collect more check-ins, so the floor rises with scale.
    pub fn default_min_checkins(self) -> usize {
        match self {
            Timescale::Daily => 3,
            Timescale::Weekly => 5,
            Timescale::Monthly => 10,
        }
    }

    /// Calendar bucket of a timestamp. Days and months are UTC calendar
    /// units; weeks are ISO-8601 weeks (Monday start, week 1 holds the
    /// first Thursday), keyed by the ISO week-year.
    pub fn interval_of(self, t: DateTime<Utc>) -> IntervalKey {
        match self {
            Timescale::Daily => IntervalKey::Day(t.date_naive()),
            Timescale::Weekly => {
                let w = t.iso_week();
                IntervalKey::Week { year: w.year(), week: w.week() }
            }
            Timescale::Monthly => IntervalKey::Month { year: t.year(), month: t.month() },
        }
    }
}

impl FromStr for Timescale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Timescale> {
        match s.to_ascii_lowercase().as_str() {
            "daily" | "day" => Ok(Timescale::Daily),
            "weekly" | "week" => Ok(Timescale::Weekly),
            "monthly" | "month" => Ok(Timescale::Monthly),
            other => Err(Error::Config(format!(
                "unknown timescale {other:?}, expected daily, weekly or monthly"
            ))),
        }
    }
}

impl fmt::Display for Timescale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Canonical identifier of one calendar bucket. Ordering is chronological
/// within a timescale; datasets never mix variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum IntervalKey {
    Day(chrono::NaiveDate),
    Week { year: i32, week: u32 },
    Month { year: i32, month: u32 },
}

impl fmt::Display for IntervalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntervalKey::Day(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            IntervalKey::Week { year, week } => write!(f, "{year:04}-W{week:02}"),
            IntervalKey::Month { year, month } => write!(f, "{year:04}-{month:02}"),
        }
    }
}

impl FromStr for IntervalKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<IntervalKey> {
        let bad = || Error::InvalidInput(format!("malformed interval key {s:?}"));
        if let Some((y, w)) = s.split_once("-W") {
            let year = y.parse().map_err(|_| bad())?;
            let week = w.parse().map_err(|_| bad())?;
            if !(1..=53).contains(&week) {
                return Err(bad());
            }
            return Ok(IntervalKey::Week { year, week });
        }
        match s.bytes().filter(|&b| b == b'-').count() {
            1 => {
                let (y, m) = s.split_once('-').ok_or_else(bad)?;
                let year = y.parse().map_err(|_| bad())?;
                let month = m.parse().map_err(|_| bad())?;
                if !(1..=12).contains(&month) || m.len() != 2 {
                    return Err(bad());
                }
                Ok(IntervalKey::Month { year, month })
            }
            2 => {
                let d = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| bad())?;
                Ok(IntervalKey::Day(d))
            }
            _ => Err(bad()),
        }
    }
}

impl From<IntervalKey> for String {
    fn from(k: IntervalKey) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for IntervalKey {
    type Error = Error;

    fn try_from(s: String) -> Result<IntervalKey> {
        s.parse()
    }
}

// ============================================================================
// check-ins and trajectories
// ============================================================================

/// One check-in event. Coordinates are carried for dataset fidelity only;
/// no downstream stage reads them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckinRecord {
    pub user: Key,
    pub time: DateTime<Utc>,
    pub venue: Key,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
}

impl CheckinRecord {
    pub fn new(user: Key, time: DateTime<Utc>, venue: Key) -> CheckinRecord {
        CheckinRecord { user, time, venue, lat: None, lon: None }
    }
}

/// All check-ins of one user inside one calendar interval, time-ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTrajectory {
    pub user: Key,
    pub interval: IntervalKey,
    pub checkins: Vec<CheckinRecord>,
}

impl SubTrajectory {
    pub fn len(&self) -> usize {
        self.checkins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkins.is_empty()
    }

    /// Timestamp of the first check-in. Panics on an empty trajectory,
    /// which no constructor in this crate produces.
    pub fn start_time(&self) -> DateTime<Utc> {
        self.checkins[0].time
    }

    /// Dense user label; error when the trajectory still carries a raw key.
    pub fn dense_user(&self) -> Result<UserId> {
        self.user.dense()
    }

    /// Checks the structural invariants: non-empty, single user, ascending time.
    pub fn validate(&self) -> Result<()> {
        if self.checkins.is_empty() {
            return Err(Error::InvalidInput(format!(
                "empty sub-trajectory for user {} in {}",
                self.user, self.interval
            )));
        }
        for pair in self.checkins.windows(2) {
            if pair[0].time > pair[1].time {
                return Err(Error::InvalidInput(format!(
                    "check-ins out of time order for user {} in {}",
                    self.user, self.interval
                )));
            }
        }
        if self.checkins.iter().any(|c| c.user != self.user) {
            return Err(Error::InvalidInput(format!(
                "mixed users inside sub-trajectory of {}",
                self.user
            )));
        }
        Ok(())
    }
}

// ============================================================================
// encodings
// ============================================================================

/// A sub-trajectory reduced to `d` venue IDs plus its user label.
/// The vector is stored descending, padded with zeros past `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncodedTrajectory {
    coords: [VenueId; MAX_DIM],
    d: u8,
    pub label: UserId,
}

impl EncodedTrajectory {
    /// Builds an encoding from an already-ordered vector. `vector` must be
    /// non-increasing and 1 to 3 entries long.
    pub fn new(vector: &[VenueId], label: UserId) -> Result<EncodedTrajectory> {
        if vector.is_empty() || vector.len() > MAX_DIM {
            return Err(Error::InvalidDimension(vector.len()));
        }
        if vector.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput(format!(
                "encoding vector {vector:?} is not non-increasing"
            )));
        }
        let mut coords = [0; MAX_DIM];
        coords[..vector.len()].copy_from_slice(vector);
        Ok(EncodedTrajectory { coords, d: vector.len() as u8, label })
    }

    pub fn d(&self) -> usize {
        self.d as usize
    }

    pub fn vector(&self) -> &[VenueId] {
        &self.coords[..self.d as usize]
    }

    /// Fixed-width coordinate view; entries past `d` are zero.
    pub fn coords(&self) -> &[VenueId; MAX_DIM] {
        &self.coords
    }
}

impl Serialize for EncodedTrajectory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("EncodedTrajectory", 2)?;
        st.serialize_field("vector", self.vector())?;
        st.serialize_field("label", &self.label)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for EncodedTrajectory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            vector: Vec<VenueId>,
            label: UserId,
        }
        let raw = Raw::deserialize(d)?;
        EncodedTrajectory::new(&raw.vector, raw.label).map_err(serde::de::Error::custom)
    }
}

// ============================================================================
// datasets
// ============================================================================

/// Original-to-dense identifier bijections recorded by relabeling.
/// Position in each vector is the dense ID.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdMaps {
    pub users: Vec<Key>,
    pub venues: Vec<Key>,
}

impl IdMaps {
    pub fn is_empty(&self) -> bool {
        self.users.is_empty() && self.venues.is_empty()
    }

    /// Dense lookup table over the original user keys.
    pub fn user_index(&self) -> HashMap<&Key, UserId> {
        self.users.iter().enumerate().map(|(i, k)| (k, i as UserId)).collect()
    }

    pub fn venue_index(&self) -> HashMap<&Key, VenueId> {
        self.venues.iter().enumerate().map(|(i, k)| (k, i as VenueId)).collect()
    }
}

/// A fully preprocessed dataset: filtered, relabeled sub-trajectories plus
/// the summary counts and identifier maps that describe them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedDataset {
    pub timescale: Timescale,
    pub user_count: u64,
    pub venue_count: u64,
    pub checkin_count: u64,
    pub trajectory_count: u64,
    pub id_maps: IdMaps,
    pub trajectories: Vec<SubTrajectory>,
}

impl SegmentedDataset {
    /// Assembles a dataset, recomputing every summary count from the
    /// trajectories so the counts can never drift from the content.
    pub fn recounted(
        timescale: Timescale,
        trajectories: Vec<SubTrajectory>,
        id_maps: IdMaps,
    ) -> SegmentedDataset {
        let mut users: HashSet<&Key> = HashSet::new();
        let mut venues: HashSet<&Key> = HashSet::new();
        let mut checkins = 0u64;
        for t in &trajectories {
            users.insert(&t.user);
            checkins += t.checkins.len() as u64;
            for c in &t.checkins {
                venues.insert(&c.venue);
            }
        }
        SegmentedDataset {
            timescale,
            user_count: users.len() as u64,
            venue_count: venues.len() as u64,
            checkin_count: checkins,
            trajectory_count: trajectories.len() as u64,
            id_maps,
            trajectories,
        }
    }

    /// Verifies count consistency, per-trajectory invariants and the filter
    /// floors the dataset claims to satisfy.
    pub fn validate(&self, min_checkins: usize, min_trajectories: usize) -> Result<()> {
        let recount = SegmentedDataset::recounted(
            self.timescale,
            self.trajectories.clone(),
            self.id_maps.clone(),
        );
        if (recount.user_count, recount.venue_count, recount.checkin_count, recount.trajectory_count)
            != (self.user_count, self.venue_count, self.checkin_count, self.trajectory_count)
        {
            return Err(Error::InvalidInput(format!(
                "stored counts (u={}, v={}, c={}, t={}) disagree with content (u={}, v={}, c={}, t={})",
                self.user_count,
                self.venue_count,
                self.checkin_count,
                self.trajectory_count,
                recount.user_count,
                recount.venue_count,
                recount.checkin_count,
                recount.trajectory_count,
            )));
        }
        let mut per_user: HashMap<&Key, usize> = HashMap::new();
        for t in &self.trajectories {
            t.validate()?;
            if t.len() < min_checkins {
                return Err(Error::InvalidInput(format!(
                    "trajectory of user {} in {} has {} check-ins, floor is {min_checkins}",
                    t.user,
                    t.interval,
                    t.len()
                )));
            }
            *per_user.entry(&t.user).or_default() += 1;
        }
        for (user, n) in per_user {
            if n < min_trajectories {
                return Err(Error::InvalidInput(format!(
                    "user {user} has {n} trajectories, floor is {min_trajectories}"
                )));
            }
        }
        Ok(())
    }

    /// Check-in records in stored order (user-ascending, time-ascending).
    pub fn flatten(&self) -> Vec<CheckinRecord> {
        self.trajectories.iter().flat_map(|t| t.checkins.iter().cloned()).collect()
    }

    /// Check-in count per user, keyed by dense user ID.
    /// Errors if the dataset still carries raw user keys.
    pub fn checkins_per_user(&self) -> Result<BTreeMap<UserId, u64>> {
        let mut counts = BTreeMap::new();
        for t in &self.trajectories {
            *counts.entry(t.dense_user()?).or_insert(0) += t.checkins.len() as u64;
        }
        Ok(counts)
    }
}

// ============================================================================
// metric reports
// ============================================================================

/// Harmonic mean with the zero convention used throughout evaluation:
/// both terms zero yields zero, never NaN.
pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Metrics of a single cross-validation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: u32,
    /// ACC@K keyed by K.
    pub acc_at: BTreeMap<u32, f64>,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub query_count: u64,
    pub search_space_size: u64,
    pub mean_query_time_ms: f64,
}

/// Cross-validated experiment outcome. Top-level accuracy, precision and
/// recall are unweighted means over folds; `macro_f1` is the harmonic mean
/// of the top-level `macro_p` and `macro_r`. Query and search-space counts
/// are rounded means of the per-fold values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc_at: BTreeMap<u32, f64>,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub query_count: u64,
    pub search_space_size: u64,
    pub mean_query_time_ms: f64,
    pub per_fold: Vec<FoldMetrics>,
}

const F1_TOLERANCE: f64 = 1e-12;

impl MetricsReport {
    /// Self-consistency checks run on every report before it is emitted.
    pub fn validate(&self) -> Result<()> {
        self.validate_block(&self.acc_at, self.macro_p, self.macro_r, self.macro_f1, "report")?;
        for f in &self.per_fold {
            self.validate_block(
                &f.acc_at,
                f.macro_p,
                f.macro_r,
                f.macro_f1,
                &format!("fold {}", f.fold),
            )?;
        }
        if !self.per_fold.is_empty() {
            let n = self.per_fold.len() as f64;
            for (&k, &v) in &self.acc_at {
                let mean = self.per_fold.iter().map(|f| f.acc_at[&k]).sum::<f64>() / n;
                if (mean - v).abs() > F1_TOLERANCE {
                    return Err(Error::InvalidInput(format!(
                        "acc@{k} = {v} is not the mean {mean} of per-fold values"
                    )));
                }
            }
            let mean_p = self.per_fold.iter().map(|f| f.macro_p).sum::<f64>() / n;
            let mean_r = self.per_fold.iter().map(|f| f.macro_r).sum::<f64>() / n;
            if (mean_p - self.macro_p).abs() > F1_TOLERANCE
                || (mean_r - self.macro_r).abs() > F1_TOLERANCE
            {
                return Err(Error::InvalidInput(
                    "macro precision/recall are not means of per-fold values".into(),
                ));
            }
        }
        Ok(())
    }

    fn validate_block(
        &self,
        acc_at: &BTreeMap<u32, f64>,
        p: f64,
        r: f64,
        f1: f64,
        what: &str,
    ) -> Result<()> {
        for (&k, &v) in acc_at {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{what}: acc@{k} = {v} out of [0, 1]")));
            }
        }
        // ACC@K over one ranking is non-decreasing in K.
        let accs: Vec<f64> = acc_at.values().copied().collect();
        if accs.windows(2).any(|w| w[0] > w[1] + F1_TOLERANCE) {
            return Err(Error::InvalidInput(format!("{what}: acc@K decreases with K")));
        }
        for (name, v) in [("macro_p", p), ("macro_r", r), ("macro_f1", f1)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("{what}: {name} = {v} out of [0, 1]")));
            }
        }
        if (f1 - harmonic_mean(p, r)).abs() > F1_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "{what}: macro_f1 = {f1} is not the harmonic mean of p = {p}, r = {r}"
            )));
        }
        Ok(())
    }
}

// ============================================================================
// tests
// ============================================================================
