//! Line-oriented trace: a `#openhealth-trace v1` header with `key=value`
//! metadata, then one event per line, tab-separated:
//!
//! ```text
//! t_ms  KIND  entity  key=value  key=value ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::SimError;

pub const TRACE_MAGIC: &str = "#openhealth-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct TraceWriter {
    buf: String,
    events: usize,
}

impl TraceWriter {
    pub fn new(meta: &[(&str, String)]) -> Self {
        let mut buf = format!("{TRACE_MAGIC} v{TRACE_VERSION}");
        for (k, v) in meta {
            let _ = write!(buf, "\t{k}={v}");
        }
        buf.push('\n');
        TraceWriter { buf, events: 0 }
    }

    pub fn event(&mut self, t_ms: i64, kind: &str, entity: &str, fields: &[(&str, String)]) {
        let _ = write!(self.buf, "{t_ms}\t{kind}\t{entity}");
        for (k, v) in fields {
            let _ = write!(self.buf, "\t{k}={v}");
        }
        self.buf.push('\n');
        self.events += 1;
    }

    pub fn events(&self) -> usize {
        self.events
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub version: u32,
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// 1-based line number in the trace file.
    pub line: usize,
    pub t_ms: i64,
    pub kind: String,
    pub entity: String,
    pub fields: BTreeMap<String, String>,
}

impl TraceRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }

    pub fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T, SimError> {
        self.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| SimError::Trace { line: self.line, reason: format!("missing or bad `{key}`") })
    }

    /// Device id of a `dev:N` entity.
    pub fn device(&self) -> Option<u16> {
        self.entity.strip_prefix("dev:").and_then(|s| s.parse().ok())
    }
}

fn split_fields(parts: &[&str], line: usize) -> Result<BTreeMap<String, String>, SimError> {
    parts
        .iter()
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| SimError::Trace { line, reason: format!("field `{p}` is not key=value") })
        })
        .collect()
}

/// Parses a whole trace. Fails on a missing or foreign header, or on a
/// version other than the one this build writes.
pub fn parse_trace(text: &str) -> Result<(TraceHeader, Vec<TraceRecord>), SimError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(SimError::Trace { line: 1, reason: "empty trace file".into() })?;
    let mut head = first.split('\t');
    let magic = head.next().unwrap_or_default();
    let (name, ver) = magic.split_once(" v").unwrap_or((magic, ""));
    if name != TRACE_MAGIC {
        return Err(SimError::Trace { line: 1, reason: "not an openhealth trace".into() });
    }
    let version: u32 = ver
        .parse()
        .map_err(|_| SimError::Trace { line: 1, reason: format!("bad version `{ver}`") })?;
    if version != TRACE_VERSION {
        return Err(SimError::VersionMismatch { found: version, expected: TRACE_VERSION });
    }
    let meta = split_fields(&head.collect::<Vec<_>>(), 1)?;

    let mut records = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = raw.split('\t').collect();
        if parts.len() < 3 {
            return Err(SimError::Trace { line, reason: "expected t_ms, kind and entity".into() });
        }
        let t_ms = parts[0]
            .parse()
            .map_err(|_| SimError::Trace { line, reason: format!("bad time `{}`", parts[0]) })?;
        records.push(TraceRecord {
            line,
            t_ms,
            kind: parts[1].to_string(),
            entity: parts[2].to_string(),
            fields: split_fields(&parts[3..], line)?,
        });
    }
    Ok((TraceHeader { version, meta }, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_parse() {
        let mut w = TraceWriter::new(&[("seed", "9".into())]);
        w.event(5, "STATE", "dev:1", &[("from", "Sleep".into()), ("to", "Sampling".into())]);
        w.event(7, "TICK", "host", &[]);
        let text = w.finish();
        assert_eq!(text, "#openhealth-trace v1\tseed=9\n5\tSTATE\tdev:1\tfrom=Sleep\tto=Sampling\n7\tTICK\thost\n");
        let (h, recs) = parse_trace(&text).unwrap();
        assert_eq!(h.meta["seed"], "9");
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].device(), Some(1));
        assert_eq!(recs[0].get("to"), Some("Sampling"));
        assert_eq!(recs[1].line, 3);
    }

    #[test]
    fn version_and_garbage() {
        assert!(matches!(
            parse_trace("#openhealth-trace v2\n"),
            Err(SimError::VersionMismatch { found: 2, expected: 1 })
        ));
        assert!(parse_trace("hello\n").is_err());
        assert!(parse_trace("").is_err());
        let bad = "#openhealth-trace v1\n5\tX\n";
        assert!(matches!(parse_trace(bad), Err(SimError::Trace { line: 2, .. })));
    }
}
