use std::fmt::Write as _;
use std::path::Path;

use crate::phonology::Phoneme;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
    pub phoneme: Phoneme,
}

impl Interval {
    /// Half-open containment `[start, end)`.
    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }
}

/// Sorted, non-overlapping phone intervals. Gaps are implicit silence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcript {
    pub intervals: Vec<Interval>,
}

impl Transcript {
    /// End of the last interval, or 0 for an empty transcript.
    pub fn duration(&self) -> f64 {
        self.intervals.last().map_or(0.0, |i| i.end_s)
    }
}

pub fn parse_transcript(path: impl AsRef<Path>) -> Result<Transcript> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_transcript_str(&text, &path.display().to_string())
}

/// Parse `start_s<TAB>end_s<TAB>PHONEME` lines. Blank lines are skipped.
pub fn parse_transcript_str(text: &str, origin: &str) -> Result<Transcript> {
    let mut intervals: Vec<Interval> = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: origin.to_string(), line: line_no, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let time = |s: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().map_err(|_| err(format!("bad time {s:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("bad time {s:?}")))
            }
        };
        let (start_s, end_s) = (time(fields[0])?, time(fields[1])?);
        if start_s < 0.0 || start_s >= end_s {
            return Err(err(format!("need 0 <= start < end, got {start_s} .. {end_s}")));
        }
        let phoneme = Phoneme::normalize(fields[2]).map_err(|_| err(format!("unknown phoneme {:?}", fields[2])))?;
        if let Some(prev) = intervals.last() {
            if start_s < prev.start_s {
                return Err(Error::Order { path: origin.to_string(), line: line_no });
            }
            if start_s < prev.end_s {
                return Err(Error::Overlap { path: origin.to_string(), line: line_no });
            }
        }
        intervals.push(Interval { start_s, end_s, phoneme });
    }
    Ok(Transcript { intervals })
}

pub fn write_transcript(t: &Transcript, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for i in &t.intervals {
        writeln!(out, "{}\t{}\t{}", i.start_s, i.end_s, i.phoneme).expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
