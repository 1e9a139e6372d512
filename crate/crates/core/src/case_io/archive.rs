//! Line-delimited snapshot archives.
//!
//! Each line holds one JSON object with the injections and switchable
//! topology of a grid state; static network data comes from the base grid
//! supplied to the reader.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::CaseError;
use crate::grid::{Busbar, ElementId, Grid, Injections, LineId, SubId, Topology};

pub const ARCHIVE_VERSION: u32 = 1;

/// Seconds since the Unix epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn plus_minutes(self, minutes: u32) -> Timestamp {
        Timestamp(self.0 + 60 * minutes as i64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub timestamp: Timestamp,
    pub grid: Grid,
}

#[derive(Serialize, Deserialize)]
struct LineStatusRecord {
    id: LineId,
    in_service: bool,
}

#[derive(Serialize, Deserialize)]
struct AssignmentRecord {
    sub: SubId,
    elem: ElementId,
    busbar: Busbar,
}

#[derive(Serialize, Deserialize)]
struct TopologyRecord {
    lines: Vec<LineStatusRecord>,
    assignments: Vec<AssignmentRecord>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRecord {
    version: u32,
    timestamp: Timestamp,
    injections: Injections,
    topology: TopologyRecord,
}

impl SnapshotRecord {
    fn from_snapshot(s: &Snapshot) -> Self {
        let topo = s.grid.topology();
        SnapshotRecord {
            version: ARCHIVE_VERSION,
            timestamp: s.timestamp,
            injections: s.grid.injections(),
            topology: TopologyRecord {
                lines: s
                    .grid
                    .lines
                    .iter()
                    .map(|l| LineStatusRecord {
                        id: l.id,
                        in_service: l.in_service,
                    })
                    .collect(),
                assignments: topo
                    .assignments
                    .into_iter()
                    .map(|(sub, elem, busbar)| AssignmentRecord { sub, elem, busbar })
                    .collect(),
            },
        }
    }

    fn into_snapshot(self, base: &Grid, index: usize) -> Result<Snapshot, CaseError> {
        let malformed = |msg: String| CaseError::MalformedRecord { index, msg };
        if self.version != ARCHIVE_VERSION {
            return Err(malformed(format!("unsupported version {}", self.version)));
        }
        let mut lines = base.lines.iter().map(|l| l.in_service).collect::<Vec<_>>();
        for rec in &self.topology.lines {
            *lines
                .get_mut(rec.id.index())
                .ok_or_else(|| malformed(format!("unknown line {}", rec.id)))? = rec.in_service;
        }
        let topo = Topology {
            lines,
            assignments: self
                .topology
                .assignments
                .iter()
                .map(|a| (a.sub, a.elem, a.busbar))
                .collect(),
        };
        let (grid, dropped) = base.with_injections(&self.injections);
        if dropped > 0 {
            return Err(malformed(format!("{dropped} injections reference unknown elements")));
        }
        let grid = grid
            .with_topology(&topo)
            .map_err(|e| malformed(e.to_string()))?;
        Ok(Snapshot {
            timestamp: self.timestamp,
            grid,
        })
    }
}

/// Streaming archive reader; holds one record in memory at a time.
pub struct ArchiveReader<'a, R> {
    lines: std::io::Lines<R>,
    base: &'a Grid,
    index: usize,
    last: Option<Timestamp>,
    failed: bool,
}

impl<'a, R: BufRead> ArchiveReader<'a, R> {
    pub fn new(reader: R, base: &'a Grid) -> Self {
        ArchiveReader {
            lines: reader.lines(),
            base,
            index: 0,
            last: None,
            failed: false,
        }
    }
}

impl<R: BufRead> Iterator for ArchiveReader<'_, R> {
    type Item = Result<Snapshot, CaseError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let index = self.index;
            self.index += 1;
            let parsed = serde_json::from_str::<SnapshotRecord>(&line)
                .map_err(|e| CaseError::MalformedRecord {
                    index,
                    msg: e.to_string(),
                })
                .and_then(|rec| rec.into_snapshot(self.base, index))
                .and_then(|snap| {
                    if self.last.is_some_and(|t| snap.timestamp <= t) {
                        Err(CaseError::NonMonotoneTimestamp { index })
                    } else {
                        self.last = Some(snap.timestamp);
                        Ok(snap)
                    }
                });
            if parsed.is_err() {
                self.failed = true;
            }
            return Some(parsed);
        }
    }
}

pub fn read_archive<R: BufRead>(reader: R, base: &Grid) -> ArchiveReader<'_, R> {
    ArchiveReader::new(reader, base)
}

/// Streaming archive writer enforcing increasing timestamps.
pub struct ArchiveWriter<W> {
    out: W,
    index: usize,
    last: Option<Timestamp>,
}

impl<W: Write> ArchiveWriter<W> {
    pub fn new(out: W) -> Self {
        ArchiveWriter {
            out,
            index: 0,
            last: None,
        }
    }

    pub fn write(&mut self, snapshot: &Snapshot) -> Result<(), CaseError> {
        if self.last.is_some_and(|t| snapshot.timestamp <= t) {
            return Err(CaseError::NonMonotoneTimestamp { index: self.index });
        }
        serde_json::to_writer(&mut self.out, &SnapshotRecord::from_snapshot(snapshot))
            .map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.last = Some(snapshot.timestamp);
        self.index += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, CaseError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_archive<'s, W: Write>(
    out: W,
    snapshots: impl IntoIterator<Item = &'s Snapshot>,
) -> Result<W, CaseError> {
    let mut w = ArchiveWriter::new(out);
    for s in snapshots {
        w.write(s)?;
    }
    w.finish()
}
