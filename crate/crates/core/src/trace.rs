//! Access traces: Common Log Format ingestion, time binning and the binned
//! CSV interchange format (`t,content_id,count`).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::DateTime;
use thiserror::Error;

/// Content identifier. Ascending integer order is the canonical order used
/// for every cumulative distribution built downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct ContentId(pub u64);

impl fmt::Display for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("malformed log line: {0}")]
    MalformedLine(String),
    #[error("bad CSV header: expected `t,content_id,count`, found `{0}`")]
    BadHeader(String),
    #[error("negative count on line {line}")]
    NegativeCount { line: usize },
    #[error("non-integer field `{field}` on line {line}")]
    NonIntegerField { line: usize, field: String },
    #[error("bin width must be positive")]
    ZeroBinWidth,
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for TraceError {
    fn from(e: std::io::Error) -> Self {
        TraceError::Io(e.to_string())
    }
}

/// One parsed access-log entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessLogRecord {
    pub client_id: String,
    /// Seconds since the Unix epoch, timezone offset applied.
    pub timestamp: i64,
    pub method: String,
    pub object_path: String,
    pub status: u16,
    pub size: u64,
}

/// Parses a single Common Log Format line, e.g.
/// `282 - - [30/Apr/1998:21:31:12 +0000] "GET /images/hm_bg.jpg HTTP/1.0" 200 24736`.
///
/// Status codes are not filtered here.
pub fn parse_clf_line(line: &str) -> Result<AccessLogRecord, TraceError> {
    let bad = |why: &str| TraceError::MalformedLine(format!("{why}: `{}`", line.trim_end()));
    let line = line.trim();
    if line.is_empty() {
        return Err(bad("empty line"));
    }

    let open = line.find('[').ok_or_else(|| bad("missing timestamp"))?;
    let close = line[open..].find(']').map(|i| open + i).ok_or_else(|| bad("unterminated timestamp"))?;
    let client_id = line[..open].split_whitespace().next().ok_or_else(|| bad("missing client"))?.to_string();
    let timestamp = DateTime::parse_from_str(&line[open + 1..close], "%d/%b/%Y:%H:%M:%S %z")
        .map_err(|_| bad("unparseable timestamp"))?
        .timestamp();

    let rest = &line[close + 1..];
    let q1 = rest.find('"').ok_or_else(|| bad("missing request"))?;
    let q2 = rest[q1 + 1..].find('"').map(|i| q1 + 1 + i).ok_or_else(|| bad("unterminated request"))?;
    let mut request = rest[q1 + 1..q2].split_whitespace();
    let method = request.next().ok_or_else(|| bad("empty request"))?.to_string();
    let target = request.next().ok_or_else(|| bad("request without path"))?;
    let object_path = normalize_path(target);

    let mut tail = rest[q2 + 1..].split_whitespace();
    let status: u16 = tail
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|s| (100..=599).contains(s))
        .ok_or_else(|| bad("bad status"))?;
    let size = match tail.next() {
        None | Some("-") => 0,
        Some(s) => s.parse().map_err(|_| bad("bad size"))?,
    };

    Ok(AccessLogRecord { client_id, timestamp, method, object_path, status, size })
}

/// Content identity is the request path with any query string removed.
fn normalize_path(target: &str) -> String {
    target.split(['?', '#']).next().unwrap_or(target).to_string()
}

/// First-seen interning of object paths into ascending [`ContentId`]s.
#[derive(Debug, Default, Clone)]
pub struct ContentInterner {
    ids: HashMap<String, ContentId>,
    paths: Vec<String>,
}

impl ContentInterner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, path: &str) -> ContentId {
        if let Some(id) = self.ids.get(path) {
            return *id;
        }
        let id = ContentId(self.paths.len() as u64);
        self.ids.insert(path.to_string(), id);
        self.paths.push(path.to_string());
        id
    }

    pub fn path(&self, id: ContentId) -> Option<&str> {
        self.paths.get(id.0 as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Per-bin access counts. Bin `t` covers `[t*bin_width, (t+1)*bin_width)`
/// relative to the trace origin. Zero counts are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BinnedTrace {
    pub bin_width: u64,
    pub bins: Vec<BTreeMap<ContentId, u64>>,
    pub content_catalog: BTreeSet<ContentId>,
}

impl BinnedTrace {
    pub fn new(bin_width: u64, horizon: usize) -> Self {
        Self { bin_width, bins: vec![BTreeMap::new(); horizon], content_catalog: BTreeSet::new() }
    }

    pub fn horizon(&self) -> usize {
        self.bins.len()
    }

    /// Adds `count` accesses of `content` to bin `t`, growing the trace if needed.
    pub fn add(&mut self, t: usize, content: ContentId, count: u64) {
        if t >= self.bins.len() {
            self.bins.resize(t + 1, BTreeMap::new());
        }
        self.content_catalog.insert(content);
        if count > 0 {
            *self.bins[t].entry(content).or_insert(0) += count;
        }
    }

    pub fn count(&self, t: usize, content: ContentId) -> u64 {
        self.bins.get(t).and_then(|b| b.get(&content)).copied().unwrap_or(0)
    }

    pub fn bin_total(&self, t: usize) -> u64 {
        self.bins.get(t).map(|b| b.values().sum()).unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().flat_map(|b| b.values()).sum()
    }

    /// Stable fingerprint of the trace contents (hex SHA-256 of its CSV form).
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut buf = Vec::new();
        write_csv_to(self, &mut buf).expect("writing to a Vec cannot fail");
        let digest = Sha256::digest(&buf);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Bins records by timestamp. The origin is the earliest timestamp rounded
/// down to a multiple of `bin_width`; it is returned alongside the trace.
/// Empty bins inside the covered span are materialized.
pub fn bin_records<'a, I>(
    records: I,
    bin_width: u64,
    interner: &mut ContentInterner,
) -> Result<(BinnedTrace, i64), TraceError>
where
    I: IntoIterator<Item = &'a AccessLogRecord>,
{
    if bin_width == 0 {
        return Err(TraceError::ZeroBinWidth);
    }
    let records: Vec<&AccessLogRecord> = records.into_iter().collect();
    let mut trace = BinnedTrace::new(bin_width, 0);
    let Some(min_ts) = records.iter().map(|r| r.timestamp).min() else {
        return Ok((trace, 0));
    };
    let width = bin_width as i64;
    let origin = min_ts.div_euclid(width) * width;
    for r in records {
        let t = ((r.timestamp - origin) / width) as usize;
        let id = interner.intern(&r.object_path);
        trace.add(t, id, 1);
    }
    Ok((trace, origin))
}

/// Streams a CLF file, returning parsed records and the number of skipped
/// (malformed) lines. When `only_2xx` is set, non-2xx records are dropped.
pub fn read_clf<R: BufRead>(reader: R, only_2xx: bool) -> Result<(Vec<AccessLogRecord>, usize), TraceError> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for line in reader.lines() {
        let line = line?;
        match parse_clf_line(&line) {
            Ok(rec) if only_2xx && !(200..300).contains(&rec.status) => {}
            Ok(rec) => out.push(rec),
            Err(_) => skipped += 1,
        }
    }
    Ok((out, skipped))
}

const CSV_HEADER: &str = "t,content_id,count";

pub fn write_csv_trace(trace: &BinnedTrace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_csv_to(trace, &mut f)?;
    f.flush()?;
    Ok(())
}

/// Rows are sorted by `(t, content_id)`. Catalog entries that never occur and
/// a trailing empty bin are recorded as zero-count rows so the trace shape
/// survives a round trip.
pub fn write_csv_to<W: Write>(trace: &BinnedTrace, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    let seen: BTreeSet<ContentId> = trace.bins.iter().flat_map(|b| b.keys().copied()).collect();
    let first = trace.content_catalog.iter().next().copied();
    for (t, bin) in trace.bins.iter().enumerate() {
        let mut rows: BTreeMap<ContentId, u64> = bin.clone();
        if t == 0 {
            for c in trace.content_catalog.difference(&seen) {
                rows.insert(*c, 0);
            }
        }
        if t + 1 == trace.bins.len() && rows.is_empty() {
            if let Some(c) = first {
                rows.insert(c, 0);
            }
        }
        for (c, n) in rows {
            writeln!(w, "{t},{c},{n}")?;
        }
    }
    Ok(())
}

pub fn read_csv_trace(path: impl AsRef<Path>, bin_width: u64) -> Result<BinnedTrace, TraceError> {
    let f = fs::File::open(path)?;
    read_csv_from(BufReader::new(f), bin_width)
}

pub fn read_csv_from<R: BufRead>(reader: R, bin_width: u64) -> Result<BinnedTrace, TraceError> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != CSV_HEADER {
        return Err(TraceError::BadHeader(header));
    }
    let mut trace = BinnedTrace::new(bin_width, 0);
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(TraceError::NonIntegerField { line: lineno, field: line.clone() });
        }
        let parse = |s: &str| -> Result<i64, TraceError> {
            s.parse::<i64>().map_err(|_| TraceError::NonIntegerField { line: lineno, field: s.to_string() })
        };
        let (t, c, n) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
        if n < 0 {
            return Err(TraceError::NegativeCount { line: lineno });
        }
        if t < 0 || c < 0 {
            return Err(TraceError::NonIntegerField { line: lineno, field: line.clone() });
        }
        trace.add(t as usize, ContentId(c as u64), n as u64);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    const WC_LINE: &str = r#"282 - - [30/Apr/1998:21:31:12 +0000] "GET /images/hm_bg.jpg HTTP/1.0" 200 24736"#;

    #[test]
    fn parses_world_cup_entry() {
        let r = parse_clf_line(WC_LINE).unwrap();
        assert_eq!(r.client_id, "282");
        assert_eq!(r.method, "GET");
        assert_eq!(r.object_path, "/images/hm_bg.jpg");
        assert_eq!(r.status, 200);
        assert_eq!(r.size, 24736);
        assert_eq!(r.timestamp, 893_971_872);
    }

    #[test]
    fn timezone_offset_is_applied() {
        let line = r#"1 - - [30/Apr/1998:23:31:12 +0200] "GET /a HTTP/1.0" 200 1"#;
        assert_eq!(parse_clf_line(line).unwrap().timestamp, 893_971_872);
    }

    #[test]
    fn empty_line_is_malformed() {
        assert!(matches!(parse_clf_line(""), Err(TraceError::MalformedLine(_))));
    }

    #[test]
    fn not_found_is_kept() {
        let line = WC_LINE.replace(" 200 ", " 404 ");
        assert_eq!(parse_clf_line(&line).unwrap().status, 404);
    }

    #[test]
    fn garbage_fields_are_malformed() {
        for line in [
            r#"1 - - [99/Foo/1998:21:31:12 +0000] "GET /a HTTP/1.0" 200 1"#,
            r#"1 - - [30/Apr/1998:21:31:12 +0000] "GET /a HTTP/1.0" abc 1"#,
            r#"1 - - [30/Apr/1998:21:31:12 +0000] GET /a HTTP/1.0 200 1"#,
            r#"1 - - [30/Apr/1998:21:31:12 +0000] "GET /a HTTP/1.0" 700 1"#,
        ] {
            assert!(parse_clf_line(line).is_err(), "{line}");
        }
    }

    #[test]
    fn query_string_is_stripped_and_dash_size_is_zero() {
        let line = r#"9 - - [30/Apr/1998:21:31:12 +0000] "GET /a.html?x=1 HTTP/1.0" 304 -"#;
        let r = parse_clf_line(line).unwrap();
        assert_eq!(r.object_path, "/a.html");
        assert_eq!(r.size, 0);
    }

    #[test]
    fn interner_assigns_first_seen_ids() {
        let mut i = ContentInterner::new();
        assert_eq!(i.intern("/b"), ContentId(0));
        assert_eq!(i.intern("/a"), ContentId(1));
        assert_eq!(i.intern("/b"), ContentId(0));
        assert_eq!(i.path(ContentId(1)), Some("/a"));
    }

    fn rec(ts: i64, path: &str) -> AccessLogRecord {
        AccessLogRecord {
            client_id: "c".into(),
            timestamp: ts,
            method: "GET".into(),
            object_path: path.into(),
            status: 200,
            size: 1,
        }
    }

    #[test]
    fn no_records_gives_zero_bins() {
        let (trace, _) = bin_records(std::iter::empty(), 60, &mut ContentInterner::new()).unwrap();
        assert_eq!(trace.horizon(), 0);
    }

    #[test]
    fn single_bin_aggregation() {
        let mut interner = ContentInterner::new();
        for p in 0..7 {
            interner.intern(&format!("/pad{p}"));
        }
        let recs = vec![rec(0, "/seven"), rec(1, "/seven"), rec(59, "/seven")];
        let (trace, origin) = bin_records(&recs, 60, &mut interner).unwrap();
        assert_eq!(origin, 0);
        assert_eq!(trace.horizon(), 1);
        assert_eq!(trace.bins[0], BTreeMap::from([(ContentId(7), 3)]));
    }

    #[test]
    fn gaps_are_materialized() {
        let recs = vec![rec(100, "/a"), rec(400, "/a")];
        let (trace, origin) = bin_records(&recs, 60, &mut ContentInterner::new()).unwrap();
        assert_eq!(origin, 60);
        assert_eq!(trace.horizon(), 6);
        assert_eq!(trace.bin_total(0), 1);
        assert_eq!(trace.bin_total(5), 1);
        assert!(trace.bins[1..5].iter().all(BTreeMap::is_empty));
    }

    #[test]
    fn zero_width_is_rejected() {
        assert_eq!(bin_records(&[], 0, &mut ContentInterner::new()).unwrap_err(), TraceError::ZeroBinWidth);
    }

    #[test]
    fn csv_minimal() {
        let t = read_csv_from("t,content_id,count\n0,1,5\n".as_bytes(), 1).unwrap();
        assert_eq!(t.bins, vec![BTreeMap::from([(ContentId(1), 5)])]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(read_csv_from("a,b,c\n".as_bytes(), 1), Err(TraceError::BadHeader(_))));
        assert_eq!(
            read_csv_from("t,content_id,count\n0,1,-2\n".as_bytes(), 1),
            Err(TraceError::NegativeCount { line: 2 })
        );
        assert!(matches!(
            read_csv_from("t,content_id,count\n0,x,2\n".as_bytes(), 1),
            Err(TraceError::NonIntegerField { line: 2, .. })
        ));
    }

    #[test]
    fn csv_round_trip_small() {
        let mut t = BinnedTrace::new(10, 3);
        t.add(0, ContentId(1), 4);
        t.add(0, ContentId(2), 1);
        t.add(2, ContentId(2), 7);
        t.content_catalog.insert(ContentId(9));
        let mut buf = Vec::new();
        write_csv_to(&t, &mut buf).unwrap();
        assert_eq!(read_csv_from(buf.as_slice(), 10).unwrap(), t);
    }
}
