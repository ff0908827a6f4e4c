//! Preprocessing pipeline: raw check-in records to a filtered, relabeled
//! [`SegmentedDataset`].
//!
//! Stage order is fixed: segment into (user, calendar-interval) buckets,
//! drop short trajectories, drop users with too few surviving trajectories
//! (each filter applied exactly once, in that order), then relabel. Raw
//! user keys are ordered numerically when every key is a canonical decimal
//! and byte-wise lexicographically otherwise; records are traversed in
//! (user, time) order and users and venues receive dense IDs 0, 1, 2, ...
//! in order of first appearance in that traversal.
//!
//! That traversal is the load-bearing detail of the whole benchmark: a
//! venue first visited late in a user's stream, and by nobody before, gets
//! a dense ID larger than everything already seen, so personal venues
//! surface as the largest IDs of that user's trajectories.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    CheckinRecord, IdMaps, IntervalKey, Key, KeyOrder, SegmentedDataset, SubTrajectory, Timescale,
};

/// Which record ordering drives venue first-appearance numbering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelabelOrder {
    /// Records ordered by (user, time): the default traversal.
    #[default]
    UserTime,
    /// Records ordered by (user, venue key, time); kept as an explicit
    /// alternative because either reading of the traversal is defensible.
    UserVenueTime,
}

impl std::str::FromStr for RelabelOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<RelabelOrder> {
        match s.to_ascii_lowercase().as_str() {
            "user-time" => Ok(RelabelOrder::UserTime),
            "user-venue-time" => Ok(RelabelOrder::UserVenueTime),
            other => Err(Error::Config(format!(
                "unknown relabel order {other:?}, expected user-time or user-venue-time"
            ))),
        }
    }
}

/// Preprocessing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub timescale: Timescale,
    /// Minimum check-ins per surviving sub-trajectory.
    pub min_checkins: usize,
    /// Minimum surviving sub-trajectories per surviving user.
    pub min_trajectories: usize,
    /// Assign dense IDs; disable to pass already-dense data through.
    pub relabel: bool,
    pub relabel_order: RelabelOrder,
}

impl PipelineConfig {
    /// Defaults for a timescale: check-in floor 3/5/10 for
    /// daily/weekly/monthly, at least 10 trajectories per user.
    pub fn for_timescale(timescale: Timescale) -> PipelineConfig {
        PipelineConfig {
            timescale,
            min_checkins: timescale.default_min_checkins(),
            min_trajectories: 10,
            relabel: true,
            relabel_order: RelabelOrder::UserTime,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_checkins == 0 {
            return Err(Error::Config("min_checkins must be at least 1".into()));
        }
        if self.min_trajectories == 0 {
            return Err(Error::Config("min_trajectories must be at least 1".into()));
        }
        Ok(())
    }
}

// ============================================================================
// stages
// ============================================================================

/// Buckets records into per-(user, interval) sub-trajectories.
///
/// Records are stably sorted by (user, time), so equal timestamps keep
/// their input order; within a user, calendar intervals are monotone in
/// time, which makes each bucket one contiguous run. Output trajectories
/// are ordered by (user, interval).
pub fn segment(mut records: Vec<CheckinRecord>, timescale: Timescale) -> Vec<SubTrajectory> {
    let order = KeyOrder::detect(records.iter().map(|r| &r.user));
    records.sort_by(|a, b| order.cmp(&a.user, &b.user).then(a.time.cmp(&b.time)));
    let mut out = Vec::new();
    let mut current: Option<SubTrajectory> = None;
    for record in records {
        let interval = timescale.interval_of(record.time);
        match current.as_mut() {
            Some(t) if t.user == record.user && t.interval == interval => {
                t.checkins.push(record);
            }
            _ => {
                out.extend(current.take());
                current = Some(SubTrajectory {
                    user: record.user.clone(),
                    interval,
                    checkins: vec![record],
                });
            }
        }
    }
    out.extend(current);
    out
}

/// Keeps trajectories with at least `min_checkins` check-ins, preserving order.
pub fn filter_trajectories(
    trajectories: Vec<SubTrajectory>,
    min_checkins: usize,
) -> Vec<SubTrajectory> {
    trajectories.into_iter().filter(|t| t.len() >= min_checkins).collect()
}

/// Keeps trajectories of users owning at least `min_trajectories` of them.
/// Counted once over the input; dropping a user here never re-triggers the
/// check-in filter, so the two filters are applied exactly once each.
pub fn filter_users(
    trajectories: Vec<SubTrajectory>,
    min_trajectories: usize,
) -> Vec<SubTrajectory> {
    let mut counts: std::collections::HashMap<Key, usize> = std::collections::HashMap::new();
    for t in &trajectories {
        *counts.entry(t.user.clone()).or_default() += 1;
    }
    trajectories.into_iter().filter(|t| counts[&t.user] >= min_trajectories).collect()
}

/// First-appearance relabeling over the (user, time) traversal.
pub fn relabel(trajectories: Vec<SubTrajectory>) -> (Vec<SubTrajectory>, IdMaps) {
    relabel_ordered(trajectories, RelabelOrder::UserTime)
}

/// Relabeling with an explicit venue-numbering traversal.
pub fn relabel_ordered(
    mut trajectories: Vec<SubTrajectory>,
    order: RelabelOrder,
) -> (Vec<SubTrajectory>, IdMaps) {
    use std::collections::HashMap;

    let user_order = KeyOrder::detect(trajectories.iter().map(|t| &t.user));
    // Trajectories may arrive in any order; (user, start time, interval) with
    // a stable sort reconstructs the global (user, time) traversal.
    trajectories.sort_by(|a, b| {
        user_order
            .cmp(&a.user, &b.user)
            .then_with(|| a.start_time().cmp(&b.start_time()))
            .then_with(|| a.interval.cmp(&b.interval))
    });

    let mut users: Vec<Key> = Vec::new();
    let mut user_map: HashMap<Key, u64> = HashMap::new();
    let mut venues: Vec<Key> = Vec::new();
    let mut venue_map: HashMap<Key, u64> = HashMap::new();

    if order == RelabelOrder::UserVenueTime {
        // Venue numbering follows the (user, venue key, time) ordering of
        // individual check-ins instead of the plain stream order.
        let venue_order =
            KeyOrder::detect(trajectories.iter().flat_map(|t| t.checkins.iter().map(|c| &c.venue)));
        let mut refs: Vec<(&Key, &Key, chrono::DateTime<Utc>)> = trajectories
            .iter()
            .flat_map(|t| t.checkins.iter().map(|c| (&c.user, &c.venue, c.time)))
            .collect();
        refs.sort_by(|a, b| {
            user_order
                .cmp(a.0, b.0)
                .then_with(|| venue_order.cmp(a.1, b.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        for (_, venue, _) in refs {
            if !venue_map.contains_key(venue) {
                venue_map.insert(venue.clone(), venues.len() as u64);
                venues.push(venue.clone());
            }
        }
    }

    for t in &mut trajectories {
        let uid = *user_map.entry(t.user.clone()).or_insert_with(|| {
            users.push(t.user.clone());
            users.len() as u64 - 1
        });
        t.user = Key::Num(uid);
        for c in &mut t.checkins {
            let vid = *venue_map.entry(c.venue.clone()).or_insert_with(|| {
                venues.push(c.venue.clone());
                venues.len() as u64 - 1
            });
            c.user = Key::Num(uid);
            c.venue = Key::Num(vid);
        }
    }
    (trajectories, IdMaps { users, venues })
}

/// Full pipeline: segment, filter trajectories, filter users, relabel,
/// assemble and validate. With `relabel` disabled the surviving records
/// keep their keys, which makes re-running the pipeline on a dataset's own
/// flattened output the identity.
pub fn build_dataset(
    records: Vec<CheckinRecord>,
    config: &PipelineConfig,
) -> Result<SegmentedDataset> {
    config.validate()?;
    let trajectories = segment(records, config.timescale);
    let trajectories = filter_trajectories(trajectories, config.min_checkins);
    let trajectories = filter_users(trajectories, config.min_trajectories);
    let (trajectories, id_maps) = if config.relabel {
        relabel_ordered(trajectories, config.relabel_order)
    } else {
        (trajectories, IdMaps::default())
    };
    let dataset = SegmentedDataset::recounted(config.timescale, trajectories, id_maps);
    dataset.validate(config.min_checkins, config.min_trajectories)?;
    if config.relabel {
        debug_assert_eq!(dataset.id_maps.users.len() as u64, dataset.user_count);
        debug_assert_eq!(dataset.id_maps.venues.len() as u64, dataset.venue_count);
    }
    Ok(dataset)
}

// ============================================================================
// persistence
// ============================================================================

/// Sidecar JSON stored next to the check-in table.
#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    timescale: Timescale,
    user_count: u64,
    venue_count: u64,
    checkin_count: u64,
    trajectory_count: u64,
    id_maps: IdMaps,
}

pub fn dataset_paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("tsv"), base.with_extension("json"))
}

fn with_path(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Persists a dense dataset as `<base>.tsv` plus `<base>.json`.
///
/// The table holds one line per check-in,
/// `dense_user TAB interval_key TAB epoch_seconds TAB dense_venue`,
/// in stored (user, time) order; the sidecar carries the summary counts and
/// identifier maps. Output is byte-identical for identical datasets.
/// Coordinates are not persisted.
pub fn save_dataset(dataset: &SegmentedDataset, base: &Path) -> Result<()> {
    let (tsv_path, json_path) = dataset_paths(base);
    let mut tsv = BufWriter::new(File::create(&tsv_path).map_err(with_path(&tsv_path))?);
    for t in &dataset.trajectories {
        let user = t.dense_user()?;
        for c in &t.checkins {
            let venue = c.venue.dense()?;
            writeln!(tsv, "{user}\t{}\t{}\t{venue}", t.interval, c.time.timestamp())?;
        }
    }
    tsv.flush()?;
    let sidecar = Sidecar {
        timescale: dataset.timescale,
        user_count: dataset.user_count,
        venue_count: dataset.venue_count,
        checkin_count: dataset.checkin_count,
        trajectory_count: dataset.trajectory_count,
        id_maps: dataset.id_maps.clone(),
    };
    let mut json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    json.push('\n');
    std::fs::write(&json_path, json)?;
    Ok(())
}

/// Loads a dataset persisted by [`save_dataset`], verifying the stored
/// counts against the loaded content.
pub fn load_dataset(base: &Path) -> Result<SegmentedDataset> {
    let (tsv_path, json_path) = dataset_paths(base);
    let json_file = File::open(&json_path).map_err(with_path(&json_path))?;
    let sidecar: Sidecar = serde_json::from_reader(BufReader::new(json_file))
        .map_err(|e| Error::InvalidInput(format!("bad sidecar {}: {e}", json_path.display())))?;

    let mut trajectories: Vec<SubTrajectory> = Vec::new();
    let reader = BufReader::new(File::open(&tsv_path).map_err(with_path(&tsv_path))?);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = |what: &str| {
            Error::InvalidInput(format!(
                "{} line {}: {what}",
                tsv_path.display(),
                lineno + 1
            ))
        };
        let mut fields = line.split('\t');
        let (user, interval, secs, venue) = match (
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
            fields.next(),
        ) {
            (Some(u), Some(i), Some(s), Some(v), None) => (u, i, s, v),
            _ => return Err(bad("expected 4 tab-separated fields")),
        };
        let user: u64 = user.parse().map_err(|_| bad("bad user id"))?;
        let interval: IntervalKey = interval.parse().map_err(|_| bad("bad interval key"))?;
        let secs: i64 = secs.parse().map_err(|_| bad("bad epoch seconds"))?;
        let venue: u64 = venue.parse().map_err(|_| bad("bad venue id"))?;
        let time = Utc
            .timestamp_opt(secs, 0)
            .single()
            .ok_or_else(|| bad("epoch seconds out of range"))?;
        let record = CheckinRecord::new(Key::Num(user), time, Key::Num(venue));
        match trajectories.last_mut() {
            Some(t) if t.user == record.user && t.interval == interval => t.checkins.push(record),
            _ => trajectories.push(SubTrajectory {
                user: record.user.clone(),
                interval,
                checkins: vec![record],
            }),
        }
    }

    let dataset = SegmentedDataset::recounted(sidecar.timescale, trajectories, sidecar.id_maps);
    for t in &dataset.trajectories {
        t.validate()?;
    }
    let stored = (
        sidecar.user_count,
        sidecar.venue_count,
        sidecar.checkin_count,
        sidecar.trajectory_count,
    );
    let loaded = (
        dataset.user_count,
        dataset.venue_count,
        dataset.checkin_count,
        dataset.trajectory_count,
    );
    if stored != loaded {
        return Err(Error::InvalidInput(format!(
            "sidecar counts {stored:?} disagree with table content {loaded:?}"
        )));
    }
    Ok(dataset)
}
