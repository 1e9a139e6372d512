use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::case_io::{CaseError, Snapshot, Timestamp};
use crate::grid::{Change, Grid, LineId, SubId, TopologyAction};
use crate::powerflow::{SecurityIssue, ThermalIssue};

pub const DB_VERSION: u32 = 1;

/// Where a record was found: the snapshot time and the look-ahead.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Source {
    pub t: Timestamp,
    /// Minutes.
    pub h: u32,
}

/// A topological action that removed an overload from a counterfactual
/// grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RemedialRecord {
    pub issue: ThermalIssue,
    pub action: TopologyAction,
    pub substations: Vec<SubId>,
    pub source: Source,
    /// Issues remaining on the counterfactual grid after the action.
    pub post_issues: Vec<SecurityIssue>,
    /// Number of mined records merged into this one.
    pub occurrences: usize,
    /// The counterfactual grid, kept in memory only.
    pub context_grid: Option<Grid>,
}

impl RemedialRecord {
    pub fn fingerprint(&self) -> String {
        self.action.fingerprint()
    }

    pub fn key(&self) -> DedupKey {
        DedupKey {
            line: self.issue.line,
            substations: self.substations.clone(),
            fingerprint: self.fingerprint(),
        }
    }

    /// True when the action leaves no new issue on the counterfactual.
    pub fn is_clean(&self, pre: &[SecurityIssue]) -> bool {
        self.post_issues
            .iter()
            .all(|p| p.key().is_some() && pre.iter().any(|s| s.key() == p.key()))
    }

    /// Rebuilds the counterfactual grid from the archive.
    pub fn rebuild_context(&self, archive: &[Snapshot]) -> Option<Grid> {
        let at = |t: Timestamp| archive.binary_search_by_key(&t, |s| s.timestamp).ok();
        let g_t = &archive[at(self.source.t)?].grid;
        let g_th = &archive[at(self.source.t.plus_minutes(self.source.h))?].grid;
        let (grid, _) = g_t.with_injections(&g_th.injections());
        Some(grid)
    }
}

/// Two records are the same remedial action when they relieve the same
/// line, act on the same substations and change the nodal topology in the
/// same way.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DedupKey {
    pub line: LineId,
    pub substations: Vec<SubId>,
    pub fingerprint: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RemedialDB {
    pub records: Vec<RemedialRecord>,
    /// Records dropped as duplicates.
    pub merged: usize,
}

/// Keeps one record per dedup key, the one with the earliest source.
pub fn dedup(mut records: Vec<RemedialRecord>) -> RemedialDB {
    records.sort_by(|a, b| {
        (a.source, a.issue.line, a.fingerprint()).cmp(&(b.source, b.issue.line, b.fingerprint()))
    });
    let mut index: HashMap<DedupKey, usize> = HashMap::new();
    let mut out: Vec<RemedialRecord> = Vec::new();
    let mut merged = 0;
    for r in records {
        match index.get(&r.key()) {
            Some(&i) => {
                out[i].occurrences += r.occurrences;
                merged += 1;
            }
            None => {
                index.insert(r.key(), out.len());
                out.push(r);
            }
        }
    }
    RemedialDB {
        records: out,
        merged,
    }
}

impl RemedialDB {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn for_line(&self, line: LineId) -> impl Iterator<Item = &RemedialRecord> {
        self.records.iter().filter(move |r| r.issue.line == line)
    }

    /// Record count per substation among records relieving `line`.
    pub fn substation_counts(&self, line: LineId) -> BTreeMap<SubId, usize> {
        let mut counts = BTreeMap::new();
        for r in self.for_line(line) {
            for &s in &r.substations {
                *counts.entry(s).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Mined occurrences per substation among records relieving `line`,
    /// merged duplicates included.
    pub fn substation_frequency(&self, line: LineId) -> BTreeMap<SubId, usize> {
        let mut counts = BTreeMap::new();
        for r in self.for_line(line) {
            for &s in &r.substations {
                *counts.entry(s).or_insert(0) += r.occurrences;
            }
        }
        counts
    }

    pub fn contains(&self, line: LineId, action: &TopologyAction) -> bool {
        self.for_line(line).any(|r| &r.action == action)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), CaseError> {
        let header = Header {
            version: DB_VERSION,
            records: self.records.len(),
            merged: self.merged,
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, &RecordLine::from(r)).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<RemedialDB, CaseError> {
        let mut lines = input.lines().enumerate().filter(|(_, l)| {
            l.as_ref().map_or(true, |l| !l.trim().is_empty())
        });
        let header: Header = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?).map_err(|e| CaseError::MalformedRecord {
                index: 0,
                msg: e.to_string(),
            })?,
            None => {
                return Err(CaseError::MalformedRecord {
                    index: 0,
                    msg: "missing header".into(),
                })
            }
        };
        if header.version != DB_VERSION {
            return Err(CaseError::Version {
                found: header.version,
                expected: DB_VERSION,
            });
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let malformed = |msg: String| CaseError::MalformedRecord { index: i, msg };
            let rec: RecordLine =
                serde_json::from_str(&line?).map_err(|e| malformed(e.to_string()))?;
            records.push(rec.into_record().map_err(|e| malformed(e.to_string()))?);
        }
        Ok(RemedialDB {
            records,
            merged: header.merged,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    records: usize,
    merged: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    issue: ThermalIssue,
    action: Vec<Change>,
    substations: Vec<SubId>,
    source: Source,
    post_issues: Vec<SecurityIssue>,
    fingerprint: String,
    occurrences: usize,
}

impl From<&RemedialRecord> for RecordLine {
    fn from(r: &RemedialRecord) -> Self {
        RecordLine {
            issue: r.issue.clone(),
            action: r.action.changes().to_vec(),
            substations: r.substations.clone(),
            source: r.source,
            post_issues: r.post_issues.clone(),
            fingerprint: r.fingerprint(),
            occurrences: r.occurrences,
        }
    }
}

impl RecordLine {
    fn into_record(self) -> Result<RemedialRecord, crate::grid::GridError> {
        let action = TopologyAction::new(self.action)?;
        if action.fingerprint() != self.fingerprint {
            return Err(crate::grid::GridError::Invalid(format!(
                "fingerprint {} does not match action {}",
                self.fingerprint,
                action.fingerprint()
            )));
        }
        Ok(RemedialRecord {
            issue: self.issue,
            action,
            substations: self.substations,
            source: self.source,
            post_issues: self.post_issues,
            occurrences: self.occurrences,
            context_grid: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(line: u32, sub: u32, off: u32, t: i64) -> RemedialRecord {
        RemedialRecord {
            issue: ThermalIssue {
                line: LineId(line),
                flow: 11.0,
                limit: 10.0,
                ratio: 1.1,
                contingency: None,
            },
            action: TopologyAction::single(Change::LineStatus {
                line: LineId(off),
                in_service: false,
            }),
            substations: vec![SubId(sub)],
            source: Source {
                t: Timestamp(t),
                h: 30,
            },
            post_issues: vec![],
            occurrences: 1,
            context_grid: None,
        }
    }

    #[test]
    fn same_key_merges_and_keeps_earliest() {
        let db = dedup(vec![record(1, 2, 3, 600), record(1, 2, 3, 300)]);
        assert_eq!(db.len(), 1);
        assert_eq!(db.merged, 1);
        assert_eq!(db.records[0].source.t, Timestamp(300));
        assert_eq!(db.records[0].occurrences, 2);
    }

    #[test]
    fn different_lines_stay_apart() {
        let db = dedup(vec![record(1, 2, 3, 0), record(4, 2, 3, 0)]);
        assert_eq!(db.len(), 2);
        assert_eq!(db.merged, 0);
    }

    #[test]
    fn file_round_trip() {
        let db = dedup(vec![record(1, 2, 3, 0), record(4, 2, 5, 60), record(4, 2, 5, 120)]);
        let mut buf = Vec::new();
        db.write(&mut buf).unwrap();
        let back = RemedialDB::read(&buf[..]).unwrap();
        assert_eq!(back, db);
        let text = String::from_utf8(buf).unwrap();
        let second = text.lines().nth(1).unwrap();
        assert!(second.starts_with(
            r#"{"issue":{"line":1,"flow":11.0,"limit":10.0,"ratio":1.1},"action":[{"kind":"line_status","line":3,"in_service":false}]"#
        ));
    }

    #[test]
    fn wrong_version_rejected() {
        let text = "{\"version\":9,\"records\":0,\"merged\":0}\n";
        assert!(matches!(
            RemedialDB::read(text.as_bytes()),
            Err(CaseError::Version { found: 9, .. })
        ));
    }
}
