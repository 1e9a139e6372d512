use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest look-ahead, in minutes.
pub const H_MAX: u32 = 24 * 60;

const DEFAULT_MINUTES: [u32; 26] = [
    5, 10, 15, 30, 45, 60, 90, 120, 150, 180, 210, 240, 270, 300, 330, 360, 420, 480, 540, 600,
    660, 720, 1380, 1410, 1425, 1440,
];

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("window set is empty")]
    Empty,
    #[error("offsets must be strictly increasing ({0} after {1})")]
    NotIncreasing(u32, u32),
    #[error("offset {0} min exceeds 24h")]
    TooLong(u32),
    #[error("cannot parse offset {0:?}")]
    Parse(String),
}

/// Look-ahead offsets `h`, in minutes, strictly increasing and at most 24h.
///
/// Zero is accepted so that `{0}` replays the archive against itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct WindowSet {
    minutes: Vec<u32>,
}

impl WindowSet {
    pub fn new(minutes: Vec<u32>) -> Result<Self, WindowError> {
        if minutes.is_empty() {
            return Err(WindowError::Empty);
        }
        for pair in minutes.windows(2) {
            if pair[1] <= pair[0] {
                return Err(WindowError::NotIncreasing(pair[1], pair[0]));
            }
        }
        if let Some(&m) = minutes.iter().find(|&&m| m > H_MAX) {
            return Err(WindowError::TooLong(m));
        }
        Ok(WindowSet { minutes })
    }

    /// The 26 offsets from 5 min to 24h used by default.
    pub fn standard() -> Self {
        WindowSet {
            minutes: DEFAULT_MINUTES.to_vec(),
        }
    }

    /// `{0}`: every counterfactual equals its snapshot.
    pub fn identity() -> Self {
        WindowSet { minutes: vec![0] }
    }

    pub fn minutes(&self) -> &[u32] {
        &self.minutes
    }

    pub fn len(&self) -> usize {
        self.minutes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutes.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.minutes.iter().map(|&m| label(m)).collect()
    }
}

impl Default for WindowSet {
    fn default() -> Self {
        WindowSet::standard()
    }
}

impl TryFrom<Vec<u32>> for WindowSet {
    type Error = WindowError;

    fn try_from(v: Vec<u32>) -> Result<Self, WindowError> {
        WindowSet::new(v)
    }
}

impl From<WindowSet> for Vec<u32> {
    fn from(w: WindowSet) -> Vec<u32> {
        w.minutes
    }
}

/// `45` → `45min`, `90` → `1h30`, `1440` → `24h`.
pub fn label(minutes: u32) -> String {
    match (minutes / 60, minutes % 60) {
        (0, m) => format!("{m}min"),
        (h, 0) => format!("{h}h"),
        (h, m) => format!("{h}h{m:02}"),
    }
}

/// Inverse of [`label`]; also accepts bare minute counts.
pub fn parse_label(text: &str) -> Result<u32, WindowError> {
    let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || WindowError::Parse(text.to_string());
    if let Some(m) = t.strip_suffix("min") {
        return m.parse().map_err(|_| bad());
    }
    if let Some((h, m)) = t.split_once('h') {
        let h: u32 = h.parse().map_err(|_| bad())?;
        let m: u32 = if m.is_empty() { 0 } else { m.parse().map_err(|_| bad())? };
        if m >= 60 {
            return Err(bad());
        }
        return Ok(h * 60 + m);
    }
    t.parse().map_err(|_| bad())
}

impl fmt::Display for WindowSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.labels().join(", "))
    }
}

impl FromStr for WindowSet {
    type Err = WindowError;

    /// `default` or a comma-separated list of labels.
    fn from_str(s: &str) -> Result<Self, WindowError> {
        if s.trim() == "default" {
            return Ok(WindowSet::standard());
        }
        let minutes = s
            .split(',')
            .map(parse_label)
            .collect::<Result<Vec<_>, _>>()?;
        WindowSet::new(minutes)
    }
}
