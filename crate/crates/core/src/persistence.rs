//! Session logs: the fused CSV and an append-only JSON-lines document store.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{decode_record, encode_record, FusedRow, SessionMeta, SourceId, Timestamp, TimedRecord};

pub const CSV_COLUMNS: [&str; 16] = [
    "grid_ts_ms",
    "hr_bpm",
    "hr_source",
    "rr_bpm",
    "rr_source",
    "hrv_rmssd_ms",
    "drowsiness_physio",
    "perclos",
    "blink_rate_per_min",
    "long_blink_rate_per_min",
    "attention",
    "drowsiness_camera",
    "warning",
    "radar_reliable",
    "wearable_fresh",
    "camera_fresh",
];

/// How often a long-running writer pushes buffered rows to its sink.
pub const CSV_FLUSH_INTERVAL: Duration = Duration::from_secs(5);

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

/// At most 4 fractional digits, trailing zeros dropped, never an exponent.
pub fn format_real(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

fn opt_real(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

fn opt_source(v: Option<SourceId>) -> String {
    v.map(|s| s.as_str().to_string()).unwrap_or_default()
}

fn row_fields(row: &FusedRow) -> [String; 16] {
    [
        row.grid_ts.ms().to_string(),
        opt_real(row.hr_bpm),
        opt_source(row.hr_source),
        opt_real(row.rr_bpm),
        opt_source(row.rr_source),
        opt_real(row.hrv_rmssd_ms),
        opt_real(row.drowsiness_physio),
        opt_real(row.perclos),
        opt_real(row.blink_rate_per_min),
        opt_real(row.long_blink_rate_per_min),
        opt_real(row.attention),
        opt_real(row.drowsiness_camera),
        row.warning.as_str().to_string(),
        row.radar_reliable.to_string(),
        row.wearable_fresh.to_string(),
        row.camera_fresh.to_string(),
    ]
}

/// Render one row exactly as it appears in the CSV, without the newline.
pub fn format_csv_row(row: &FusedRow) -> String {
    row_fields(row).join(",")
}

fn csv_io(rows_written: usize, err: csv::Error) -> Error {
    let source = match err.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    };
    Error::Io { rows_written, source }
}

/// Streaming CSV writer. The header goes out on construction; buffered rows
/// are flushed at least every [`CSV_FLUSH_INTERVAL`] and on [`CsvWriter::finish`].
pub struct CsvWriter<W: Write> {
    inner: csv::Writer<W>,
    rows: usize,
    last_flush: Instant,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
        inner.write_record(CSV_COLUMNS).map_err(|e| csv_io(0, e))?;
        Ok(CsvWriter {
            inner,
            rows: 0,
            last_flush: Instant::now(),
        })
    }

    pub fn rows_written(&self) -> usize {
        self.rows
    }

    pub fn write_row(&mut self, row: &FusedRow) -> Result<()> {
        self.inner.write_record(row_fields(row)).map_err(|e| csv_io(self.rows, e))?;
        self.rows += 1;
        if self.last_flush.elapsed() >= CSV_FLUSH_INTERVAL {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.last_flush = Instant::now();
        self.inner.flush().map_err(|source| Error::Io {
            rows_written: self.rows,
            source,
        })
    }

    /// Flush and hand back the sink.
    pub fn finish(mut self) -> Result<(usize, W)> {
        self.flush()?;
        let rows = self.rows;
        let sink = self.inner.into_inner().map_err(|e| Error::Io {
            rows_written: rows,
            source: io::Error::new(e.error().kind(), e.error().to_string()),
        })?;
        Ok((rows, sink))
    }
}

pub fn write_csv<'a, W: Write>(rows: impl IntoIterator<Item = &'a FusedRow>, sink: W) -> Result<usize> {
    let mut w = CsvWriter::new(sink)?;
    for row in rows {
        w.write_row(row)?;
    }
    w.finish().map(|(n, _)| n)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::CsvParse {
        line,
        message: message.into(),
    }
}

fn parse_opt_real(line: usize, column: &str, field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(line, format!("{column}: {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{column}: {field:?} is not finite")));
    }
    Ok(Some(v))
}

fn parse_opt_source(line: usize, column: &str, field: &str) -> Result<Option<SourceId>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| parse_err(line, format!("{column}: unknown source {field:?}")))
}

fn parse_bool(line: usize, column: &str, field: &str) -> Result<bool> {
    match field {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(parse_err(line, format!("{column}: {field:?} is not true/false"))),
    }
}

fn parse_row(line: usize, f: &csv::StringRecord) -> Result<FusedRow> {
    let c = |i: usize| f.get(i).unwrap_or("");
    let grid_ts: i64 = c(0)
        .parse()
        .map_err(|_| parse_err(line, format!("grid_ts_ms: {:?} is not an integer", c(0))))?;
    let real = |i: usize| parse_opt_real(line, CSV_COLUMNS[i], c(i));
    let row = FusedRow {
        grid_ts: Timestamp(grid_ts),
        hr_bpm: real(1)?,
        hr_source: parse_opt_source(line, CSV_COLUMNS[2], c(2))?,
        rr_bpm: real(3)?,
        rr_source: parse_opt_source(line, CSV_COLUMNS[4], c(4))?,
        hrv_rmssd_ms: real(5)?,
        drowsiness_physio: real(6)?,
        perclos: real(7)?,
        blink_rate_per_min: real(8)?,
        long_blink_rate_per_min: real(9)?,
        attention: real(10)?,
        drowsiness_camera: real(11)?,
        warning: c(12)
            .parse()
            .map_err(|_| parse_err(line, format!("warning: unknown state {:?}", c(12))))?,
        radar_reliable: parse_bool(line, CSV_COLUMNS[13], c(13))?,
        wearable_fresh: parse_bool(line, CSV_COLUMNS[14], c(14))?,
        camera_fresh: parse_bool(line, CSV_COLUMNS[15], c(15))?,
    };
    row.validate().map_err(|e| parse_err(line, e.to_string()))?;
    Ok(row)
}

/// Read a fused CSV log. Line numbers in errors are 1-based and count the header.
pub fn read_csv(source: impl Read) -> Result<Vec<FusedRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let actual = header.iter().collect::<Vec<_>>().join(",");
    if actual != csv_header() {
        return Err(Error::CsvSchema {
            expected: csv_header(),
            actual,
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(i + 2, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        rows.push(parse_row(line, &record)?);
    }
    Ok(rows)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<FusedRow>> {
    read_csv(File::open(path).map_err(Error::io)?)
}

/// Schema-flexible record storage keyed by session, source and wall time.
pub trait DocumentStore: Send + Sync {
    fn append(&self, record: &TimedRecord) -> Result<()>;

    /// Records with `t0 <= wall_ts_ms <= t1`, sorted by wall time (then source, then seq).
    /// An unknown session yields an empty result.
    fn query(&self, session_id: &str, source: Option<SourceId>, t0: Timestamp, t1: Timestamp) -> Result<Vec<TimedRecord>>;

    fn sessions(&self) -> Vec<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct IndexEntry {
    wall: i64,
    seq: u64,
    offset: u64,
    len: u32,
}

#[derive(Debug, Default)]
struct SessionIndex {
    by_source: BTreeMap<SourceId, Vec<IndexEntry>>,
    end: u64,
}

impl SessionIndex {
    fn insert(&mut self, source: SourceId, entry: IndexEntry) {
        let entries = self.by_source.entry(source).or_default();
        let at = entries.partition_point(|e| (e.wall, e.seq) <= (entry.wall, entry.seq));
        entries.insert(at, entry);
    }
}

#[derive(Debug, Default)]
struct StoreInner {
    sessions: HashMap<String, SessionIndex>,
    files: HashMap<String, File>,
}

/// One `{session_id}.jsonl` file per session plus an in-memory time index
/// rebuilt when the store is opened.
#[derive(Debug)]
pub struct JsonlStore {
    dir: PathBuf,
    inner: Mutex<StoreInner>,
}

fn session_file_name(session_id: &str) -> Result<String> {
    if session_id.is_empty() || session_id.contains(['/', '\\']) || session_id.starts_with('.') {
        return Err(Error::Validation(format!("session id {session_id:?} is not usable as a file name")));
    }
    Ok(format!("{session_id}.jsonl"))
}

impl JsonlStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(Error::io)?;
        let mut inner = StoreInner::default();
        for entry in fs::read_dir(&dir).map_err(Error::io)? {
            let path = entry.map_err(Error::io)?.path();
            let Some(session) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".jsonl"))
                .map(str::to_string)
            else {
                continue;
            };
            let index = Self::index_file(&path)?;
            inner.sessions.insert(session, index);
        }
        Ok(JsonlStore {
            dir,
            inner: Mutex::new(inner),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn index_file(path: &Path) -> Result<SessionIndex> {
        let bytes = fs::read(path).map_err(Error::io)?;
        let mut index = SessionIndex::default();
        let mut offset = 0usize;
        while offset < bytes.len() {
            let Some(nl) = bytes[offset..].iter().position(|b| *b == b'\n') else {
                // An unterminated tail is a torn write; it is ignored and overwritten.
                tracing::warn!(file = %path.display(), offset, "ignoring unterminated trailing record");
                break;
            };
            let line = &bytes[offset..offset + nl];
            let text = std::str::from_utf8(line).map_err(|e| Error::Replay {
                file: path.display().to_string(),
                message: e.to_string(),
            })?;
            let record = decode_record(text).map_err(|e| Error::Replay {
                file: path.display().to_string(),
                message: format!("offset {offset}: {e}"),
            })?;
            index.insert(
                record.source,
                IndexEntry {
                    wall: record.wall_ts_ms.ms(),
                    seq: record.seq,
                    offset: offset as u64,
                    len: nl as u32,
                },
            );
            offset += nl + 1;
        }
        index.end = offset as u64;
        Ok(index)
    }

    /// Write the session metadata next to its record file.
    pub fn save_meta(&self, meta: &SessionMeta) -> Result<()> {
        let name = session_file_name(&meta.session_id)?;
        let path = self.dir.join(name.replace(".jsonl", ".meta.json"));
        let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Schema(e.to_string()))?;
        fs::write(path, text).map_err(Error::io)
    }

    pub fn load_meta(&self, session_id: &str) -> Result<Option<SessionMeta>> {
        let name = session_file_name(session_id)?;
        let path = self.dir.join(name.replace(".jsonl", ".meta.json"));
        match fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| Error::Schema(e.to_string())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(e)),
        }
    }

    /// Dump every record of one source as JSON lines, in wall-time order.
    pub fn export_source(&self, session_id: &str, source: SourceId, path: &Path) -> Result<usize> {
        let records = self.query(session_id, Some(source), Timestamp(i64::MIN), Timestamp(i64::MAX))?;
        let mut out = io::BufWriter::new(File::create(path).map_err(Error::io)?);
        for (n, r) in records.iter().enumerate() {
            writeln!(out, "{}", encode_record(r)).map_err(|source| Error::Io { rows_written: n, source })?;
        }
        out.flush().map_err(|source| Error::Io {
            rows_written: records.len(),
            source,
        })?;
        Ok(records.len())
    }

    /// Sources with at least one record in the session.
    pub fn sources(&self, session_id: &str) -> Vec<SourceId> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        inner
            .sessions
            .get(session_id)
            .map(|s| s.by_source.iter().filter(|(_, v)| !v.is_empty()).map(|(k, _)| *k).collect())
            .unwrap_or_default()
    }
}

impl DocumentStore for JsonlStore {
    fn append(&self, record: &TimedRecord) -> Result<()> {
        let name = session_file_name(&record.session_id)?;
        let mut line = encode_record(record);
        line.push('\n');
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let StoreInner { sessions, files } = &mut *inner;
        let index = sessions.entry(record.session_id.clone()).or_default();
        if !files.contains_key(&record.session_id) {
            let path = self.dir.join(&name);
            let file = OpenOptions::new().create(true).write(true).truncate(false).open(&path).map_err(Error::io)?;
            // Drop any torn tail left by an earlier crash.
            file.set_len(index.end).map_err(Error::io)?;
            files.insert(record.session_id.clone(), file);
        }
        let file = files.get_mut(&record.session_id).expect("file opened above");
        use std::io::Seek;
        file.seek(io::SeekFrom::Start(index.end)).map_err(Error::io)?;
        file.write_all(line.as_bytes()).map_err(Error::io)?;
        index.insert(
            record.source,
            IndexEntry {
                wall: record.wall_ts_ms.ms(),
                seq: record.seq,
                offset: index.end,
                len: (line.len() - 1) as u32,
            },
        );
        index.end += line.len() as u64;
        Ok(())
    }

    fn query(&self, session_id: &str, source: Option<SourceId>, t0: Timestamp, t1: Timestamp) -> Result<Vec<TimedRecord>> {
        let Ok(name) = session_file_name(session_id) else {
            return Ok(Vec::new());
        };
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let Some(index) = inner.sessions.get(session_id) else {
            return Ok(Vec::new());
        };
        let mut hits: Vec<(i64, SourceId, u64, u64, u32)> = Vec::new();
        for (src, entries) in &index.by_source {
            if source.is_some_and(|s| s != *src) {
                continue;
            }
            let lo = entries.partition_point(|e| e.wall < t0.ms());
            let hi = entries.partition_point(|e| e.wall <= t1.ms());
            hits.extend(entries[lo..hi.max(lo)].iter().map(|e| (e.wall, *src, e.seq, e.offset, e.len)));
        }
        if hits.is_empty() {
            return Ok(Vec::new());
        }
        hits.sort_unstable();
        // Only the indexed prefix is read, so a concurrent append is never seen half-written.
        let path = self.dir.join(name);
        let mut bytes = Vec::with_capacity(index.end as usize);
        File::open(&path)
            .map_err(Error::io)?
            .take(index.end)
            .read_to_end(&mut bytes)
            .map_err(Error::io)?;
        drop(inner);
        hits.into_iter()
            .map(|(_, _, _, offset, len)| {
                let slice = &bytes[offset as usize..offset as usize + len as usize];
                let text = std::str::from_utf8(slice).map_err(|e| Error::Parse(e.to_string()))?;
                decode_record(text)
            })
            .collect()
    }

    fn sessions(&self) -> Vec<String> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let mut ids: Vec<_> = inner.sessions.keys().cloned().collect();
        ids.sort();
        ids
    }
}
