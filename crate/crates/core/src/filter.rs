//! Trip removal criteria.
//!
//! The IO side gathers [`TripFacts`] from a cleaned trip directory; [`decide`]
//! applies the criteria in a fixed order and reports the first one matched.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

/// Evaluation order is the declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    NonconsentingDriver,
    RequestedRemoval,
    NoMotion,
    TooSmall,
    TooShort,
    MissingEssential,
    OutsideParticipation,
    LargeErrorFiles,
    SubsystemMismatch,
}

impl RemovalReason {
    pub const ORDER: [RemovalReason; 9] = [
        RemovalReason::NonconsentingDriver,
        RemovalReason::RequestedRemoval,
        RemovalReason::NoMotion,
        RemovalReason::TooSmall,
        RemovalReason::TooShort,
        RemovalReason::MissingEssential,
        RemovalReason::OutsideParticipation,
        RemovalReason::LargeErrorFiles,
        RemovalReason::SubsystemMismatch,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RemovalReason::NonconsentingDriver => "nonconsenting_driver",
            RemovalReason::RequestedRemoval => "requested_removal",
            RemovalReason::NoMotion => "no_motion",
            RemovalReason::TooSmall => "too_small",
            RemovalReason::TooShort => "too_short",
            RemovalReason::MissingEssential => "missing_essential",
            RemovalReason::OutsideParticipation => "outside_participation",
            RemovalReason::LargeErrorFiles => "large_error_files",
            RemovalReason::SubsystemMismatch => "subsystem_mismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "snake_case")]
pub enum FilterDecision {
    Keep,
    Remove(RemovalReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterThresholds {
    /// 15 MiB.
    pub min_total_bytes: u64,
    pub min_camera_duration_us: u64,
    pub min_max_speed_mps: f64,
    pub max_subsystem_end_gap_us: u64,
    /// 1 MiB.
    pub max_error_file_bytes: u64,
    pub max_error_file_lines: u64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            min_total_bytes: 15 * 1024 * 1024,
            min_camera_duration_us: 30_000_000,
            min_max_speed_mps: 0.5,
            max_subsystem_end_gap_us: 60_000_000,
            max_error_file_bytes: 1024 * 1024,
            max_error_file_lines: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RemovalRequest {
    /// A single trip by directory name.
    Trip { name: String },
    /// Every trip of a subject overlapping `[from, until)`.
    Window { subject_id: u32, from: Timestamp, until: Timestamp },
}

/// Inclusive date range during which a subject is an enrolled participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipationRange {
    pub subject_id: u32,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    /// `None` disables the consent check.
    pub consented_subjects: Option<BTreeSet<u32>>,
    pub removal_requests: Vec<RemovalRequest>,
    /// Empty disables the participation check.
    pub participation: Vec<ParticipationRange>,
    pub thresholds: FilterThresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorFileStats {
    pub bytes: u64,
    pub lines: u64,
}

/// What the filter needs to know about one trip. `None` means the value
/// could not be established from the files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TripFacts {
    pub name: String,
    pub subject_id: Option<u32>,
    /// Trip span from the specs file or reconstructed from rows.
    pub span: Option<(Timestamp, Timestamp)>,
    pub max_speed_mps: Option<f64>,
    pub total_bytes: u64,
    /// `None` when any camera is missing or empty.
    pub camera_durations_us: Option<Vec<u64>>,
    pub missing_essential: bool,
    pub essential_error_files: Vec<ErrorFileStats>,
    /// End timestamp of each essential subsystem.
    pub essential_ends: Vec<Timestamp>,
    /// End timestamp of every subsystem, essential or not.
    pub all_ends: Vec<Timestamp>,
}

fn overlaps(span: (Timestamp, Timestamp), from: Timestamp, until: Timestamp) -> bool {
    span.0 < until && span.1 >= from
}

/// First matching criterion in [`RemovalReason::ORDER`], or `Keep`. A
/// criterion that cannot be evaluated because essential inputs are missing
/// yields `MissingEssential` at its position in the order.
pub fn decide(facts: &TripFacts, policy: &FilterPolicy) -> FilterDecision {
    use RemovalReason::*;
    let t = &policy.thresholds;
    let undecidable = FilterDecision::Remove(MissingEssential);

    if let Some(consented) = &policy.consented_subjects {
        match facts.subject_id {
            None => return undecidable,
            Some(s) if !consented.contains(&s) => return FilterDecision::Remove(NonconsentingDriver),
            _ => {}
        }
    }

    for request in &policy.removal_requests {
        let hit = match request {
            RemovalRequest::Trip { name } => *name == facts.name,
            RemovalRequest::Window { subject_id, from, until } => {
                match (facts.subject_id, facts.span) {
                    (Some(s), Some(span)) => s == *subject_id && overlaps(span, *from, *until),
                    _ => return undecidable,
                }
            }
        };
        if hit {
            return FilterDecision::Remove(RequestedRemoval);
        }
    }

    match facts.max_speed_mps {
        None => return undecidable,
        Some(v) if v < t.min_max_speed_mps => return FilterDecision::Remove(NoMotion),
        _ => {}
    }

    if facts.total_bytes < t.min_total_bytes {
        return FilterDecision::Remove(TooSmall);
    }

    match &facts.camera_durations_us {
        None => return undecidable,
        Some(d) if d.is_empty() => return undecidable,
        Some(d) if d.iter().any(|&us| us < t.min_camera_duration_us) => {
            return FilterDecision::Remove(TooShort)
        }
        _ => {}
    }

    if facts.missing_essential {
        return undecidable;
    }

    if !policy.participation.is_empty() {
        let (Some(subject), Some(date)) = (facts.subject_id, facts.span.and_then(|s| s.0.utc_date())) else {
            return undecidable;
        };
        let enrolled = policy
            .participation
            .iter()
            .any(|r| r.subject_id == subject && r.start_date <= date && date <= r.end_date);
        if !enrolled {
            return FilterDecision::Remove(OutsideParticipation);
        }
    }

    if facts
        .essential_error_files
        .iter()
        .any(|e| e.bytes > t.max_error_file_bytes || e.lines > t.max_error_file_lines)
    {
        return FilterDecision::Remove(LargeErrorFiles);
    }

    if let (Some(earliest), Some(latest)) = (facts.essential_ends.iter().min(), facts.all_ends.iter().max()) {
        if latest.micros_since(*earliest) >= t.max_subsystem_end_gap_us {
            return FilterDecision::Remove(SubsystemMismatch);
        }
    }

    FilterDecision::Keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn healthy() -> TripFacts {
        let start = Timestamp::from_micros(1_469_546_998_634_990);
        let end = start.saturating_add_micros(60_000_000);
        TripFacts {
            name: "20_20160726_1469546998634990".into(),
            subject_id: Some(3),
            span: Some((start, end)),
            max_speed_mps: Some(12.0),
            total_bytes: 30_000_000,
            camera_durations_us: Some(vec![59_900_000, 59_950_000]),
            missing_essential: false,
            essential_error_files: vec![ErrorFileStats::default(); 3],
            essential_ends: vec![end; 3],
            all_ends: vec![end; 5],
        }
    }

    fn removed(facts: &TripFacts, policy: &FilterPolicy) -> Option<RemovalReason> {
        match decide(facts, policy) {
            FilterDecision::Keep => None,
            FilterDecision::Remove(r) => Some(r),
        }
    }

    #[test]
    fn healthy_trip_is_kept() {
        assert_eq!(decide(&healthy(), &FilterPolicy::default()), FilterDecision::Keep);
    }

    #[test]
    fn size_threshold_is_fifteen_mebibytes() {
        let p = FilterPolicy::default();
        let mut f = healthy();
        f.total_bytes = 14_000_000;
        assert_eq!(removed(&f, &p), Some(RemovalReason::TooSmall));
        f.total_bytes = 15_728_639;
        assert_eq!(removed(&f, &p), Some(RemovalReason::TooSmall));
        f.total_bytes = 15_728_640;
        assert_eq!(removed(&f, &p), None);
    }

    #[test]
    fn duration_threshold_uses_shortest_camera() {
        let p = FilterPolicy::default();
        let mut f = healthy();
        f.camera_durations_us = Some(vec![60_000_000, 29_000_000]);
        assert_eq!(removed(&f, &p), Some(RemovalReason::TooShort));
        f.camera_durations_us = Some(vec![60_000_000, 30_000_000]);
        assert_eq!(removed(&f, &p), None);
    }

    #[test]
    fn zero_motion_is_removed() {
        let mut f = healthy();
        f.max_speed_mps = Some(0.0);
        assert_eq!(removed(&f, &FilterPolicy::default()), Some(RemovalReason::NoMotion));
        f.max_speed_mps = Some(0.5);
        assert_eq!(removed(&f, &FilterPolicy::default()), None);
    }

    #[test]
    fn subsystem_mismatch_boundary() {
        let p = FilterPolicy::default();
        let mut f = healthy();
        let end = f.span.unwrap().1;
        f.essential_ends[1] = end.saturating_sub_micros(60_000_000);
        assert_eq!(removed(&f, &p), Some(RemovalReason::SubsystemMismatch));
        f.essential_ends[1] = end.saturating_sub_micros(59_999_999);
        assert_eq!(removed(&f, &p), None);
        // a nonessential stream ending early is not a mismatch
        let mut f = healthy();
        f.all_ends[4] = end.saturating_sub_micros(61_000_000);
        assert_eq!(removed(&f, &p), None);
    }

    #[test]
    fn large_error_files() {
        let p = FilterPolicy::default();
        let mut f = healthy();
        f.essential_error_files[0] = ErrorFileStats { bytes: 1_048_577, lines: 1 };
        assert_eq!(removed(&f, &p), Some(RemovalReason::LargeErrorFiles));
        f.essential_error_files[0] = ErrorFileStats { bytes: 10, lines: 1001 };
        assert_eq!(removed(&f, &p), Some(RemovalReason::LargeErrorFiles));
        f.essential_error_files[0] = ErrorFileStats { bytes: 1_048_576, lines: 1000 };
        assert_eq!(removed(&f, &p), None);
    }

    #[test]
    fn consent_and_requests() {
        let mut p = FilterPolicy { consented_subjects: Some([4].into_iter().collect()), ..Default::default() };
        assert_eq!(removed(&healthy(), &p), Some(RemovalReason::NonconsentingDriver));
        p.consented_subjects = Some([3].into_iter().collect());
        assert_eq!(removed(&healthy(), &p), None);
        let (start, _) = healthy().span.unwrap();
        p.removal_requests.push(RemovalRequest::Window {
            subject_id: 3,
            from: start.saturating_add_micros(10),
            until: start.saturating_add_micros(20),
        });
        assert_eq!(removed(&healthy(), &p), Some(RemovalReason::RequestedRemoval));
        p.removal_requests = vec![RemovalRequest::Trip { name: healthy().name }];
        assert_eq!(removed(&healthy(), &p), Some(RemovalReason::RequestedRemoval));
    }

    #[test]
    fn participation_range() {
        let mut p = FilterPolicy::default();
        p.participation.push(ParticipationRange {
            subject_id: 3,
            start_date: NaiveDate::from_ymd_opt(2016, 7, 27).unwrap(),
            end_date: NaiveDate::from_ymd_opt(2017, 7, 27).unwrap(),
        });
        assert_eq!(removed(&healthy(), &p), Some(RemovalReason::OutsideParticipation));
        p.participation[0].start_date = NaiveDate::from_ymd_opt(2016, 7, 26).unwrap();
        assert_eq!(removed(&healthy(), &p), None);
    }

    #[test]
    fn missing_inputs_are_missing_essential() {
        let p = FilterPolicy::default();
        let mut f = healthy();
        f.max_speed_mps = None;
        assert_eq!(removed(&f, &p), Some(RemovalReason::MissingEssential));
        let mut f = healthy();
        f.camera_durations_us = None;
        assert_eq!(removed(&f, &p), Some(RemovalReason::MissingEssential));
        let mut f = healthy();
        f.missing_essential = true;
        assert_eq!(removed(&f, &p), Some(RemovalReason::MissingEssential));
    }

    #[test]
    fn first_match_wins() {
        // everything wrong at once: the earliest reason is reported
        let mut p = FilterPolicy { consented_subjects: Some(BTreeSet::new()), ..Default::default() };
        let mut f = healthy();
        f.max_speed_mps = Some(0.0);
        f.total_bytes = 1;
        f.camera_durations_us = Some(vec![1]);
        assert_eq!(removed(&f, &p), Some(RemovalReason::NonconsentingDriver));
        p.consented_subjects = None;
        assert_eq!(removed(&f, &p), Some(RemovalReason::NoMotion));
        f.max_speed_mps = Some(3.0);
        assert_eq!(removed(&f, &p), Some(RemovalReason::TooSmall));
        f.total_bytes = u64::MAX;
        assert_eq!(removed(&f, &p), Some(RemovalReason::TooShort));
    }

    #[test]
    fn reason_order_matches_declaration() {
        let mut sorted = RemovalReason::ORDER;
        sorted.sort();
        assert_eq!(sorted, RemovalReason::ORDER);
    }
}
