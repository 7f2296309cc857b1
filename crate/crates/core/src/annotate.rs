//! Parses substrate responses into intervention annotations.
//!
//! Only explicit markers count. Anything that starts like a marker but does
//! not parse is treated as a level-1 firing and flagged for review, so
//! formatting drift inflates rather than hides intervention counts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::profile::{DomainLabel, Partition};
use crate::router::Level;
use crate::scaffold::{BOUNDARY_MARKER, MARKER_PREFIX, UNCERTAINTY_MARKER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    Intervention,
    Uncertainty,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionAnnotation {
    pub fired: bool,
    pub level: Level,
    pub markers: BTreeSet<MarkerKind>,
    pub well_formed: bool,
    pub raw_marker_lines: Vec<String>,
    /// Partition and domain from the status marker, when one parsed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainLabel>,
}

impl InterventionAnnotation {
    pub fn needs_review(&self) -> bool {
        !self.well_formed
    }

    pub fn is_valid(&self) -> bool {
        self.fired == (self.level >= 1)
            && self.level <= crate::router::MAX_LEVEL
            && (!self.well_formed
                || self.markers.is_empty()
                || self.markers.contains(&MarkerKind::Intervention))
    }
}

struct StatusMarker {
    level: Level,
    partition: Partition,
    domain: DomainLabel,
}

fn parse_status(token: &str) -> Option<StatusMarker> {
    let body = token.strip_prefix("[CCS:INTERVENTION ")?.strip_suffix(']')?;
    let mut fields = body.split(' ');
    let level = match fields.next()?.strip_prefix("level=")? {
        "0" => 0,
        "1" => 1,
        "2" => 2,
        "3" => 3,
        _ => return None,
    };
    let partition = match fields.next()?.strip_prefix("partition=")? {
        "strong" => Partition::Strong,
        "mixed" => Partition::Mixed,
        "weak" => Partition::Weak,
        _ => return None,
    };
    let domain_raw = fields.next()?.strip_prefix("domain=")?;
    if fields.next().is_some()
        || domain_raw.is_empty()
        || !domain_raw
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
    {
        return None;
    }
    let domain = DomainLabel::parse(domain_raw).ok()?;
    // Reject labels that are not already in normal form (`a__b`, `_a`).
    if domain.as_str() != domain_raw {
        return None;
    }
    Some(StatusMarker {
        level,
        partition,
        domain,
    })
}

/// Scans `text` for marker tokens. Total: never panics, always returns a
/// valid annotation.
pub fn parse_response(text: &str) -> InterventionAnnotation {
    let mut statuses: Vec<StatusMarker> = Vec::new();
    let mut markers = BTreeSet::new();
    let mut malformed = 0usize;
    let mut raw_marker_lines = Vec::new();

    for line in text.lines() {
        if !line.contains(MARKER_PREFIX) {
            continue;
        }
        raw_marker_lines.push(line.to_string());
        let mut rest = line;
        while let Some(pos) = rest.find(MARKER_PREFIX) {
            let tail = &rest[pos..];
            // A token ends at the first `]`; a later `[CCS:` before it means
            // this one was cut off.
            let next_start = tail[1..].find(MARKER_PREFIX).map(|p| p + 1);
            let close = tail.find(']');
            let token_end = match (close, next_start) {
                (Some(c), Some(n)) if n < c => None,
                (Some(c), _) => Some(c + 1),
                (None, _) => None,
            };
            match token_end {
                Some(end) => {
                    let token = &tail[..end];
                    if token == UNCERTAINTY_MARKER {
                        markers.insert(MarkerKind::Uncertainty);
                    } else if token == BOUNDARY_MARKER {
                        markers.insert(MarkerKind::Boundary);
                    } else if let Some(status) = parse_status(token) {
                        markers.insert(MarkerKind::Intervention);
                        statuses.push(status);
                    } else {
                        malformed += 1;
                    }
                    rest = &tail[end..];
                }
                None => {
                    malformed += 1;
                    rest = match next_start {
                        Some(n) => &tail[n..],
                        None => "",
                    };
                }
            }
        }
    }

    let has_followups =
        markers.contains(&MarkerKind::Uncertainty) || markers.contains(&MarkerKind::Boundary);
    let status_level = statuses.iter().map(|s| s.level).max();

    let (level, well_formed) = match (status_level, malformed) {
        (None, 0) if !has_followups => (0, true),
        // Marker-like text without a parseable level.
        (None, _) => (1, false),
        (Some(l), 0) => {
            let single = statuses.len() == 1;
            let followups_ok = !has_followups || l >= 2;
            (l, single && followups_ok)
        }
        (Some(l), _) => (l.max(1), false),
    };

    let (partition, domain) = match statuses.iter().max_by_key(|s| s.level) {
        Some(s) => (Some(s.partition), Some(s.domain.clone())),
        None => (None, None),
    };

    InterventionAnnotation {
        fired: level >= 1,
        level,
        markers,
        well_formed,
        raw_marker_lines,
        partition,
        domain,
    }
}
