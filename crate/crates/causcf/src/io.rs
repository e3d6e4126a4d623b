//! Interaction log files.
//!
//! CSV logs start with a comment line declaring the schema, then a fixed
//! column header:
//!
//! ```text
//! # causcf n_treatments=2 user_features=4 item_features=4
//! user_id,item_id,treatment,outcome,position,leave_position,session,timestamp,user_features,item_features
//! u0,i17,1,0,3,5,0,1,0.25;-1.5;0.5;2,1;0;0;0.125
//! ```
//!
//! Absent optional values are empty cells; feature vectors are
//! semicolon-separated inside one cell. JSONL logs carry the same schema as a
//! header object on the first line and one record object per line after it,
//! with `null` for absent values and arrays for features. Reals are written in
//! shortest round-trip form, so save then load reproduces every value.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use causcf_core::data::{Dataset, DatasetBuilder, RawRecord, Schema};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 10] = [
    "user_id",
    "item_id",
    "treatment",
    "outcome",
    "position",
    "leave_position",
    "session",
    "timestamp",
    "user_features",
    "item_features",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl LogFormat {
    /// `.jsonl` and `.json` files are JSONL, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json") => LogFormat::Jsonl,
            _ => LogFormat::Csv,
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            LogFormat::Csv => "csv",
            LogFormat::Jsonl => "jsonl",
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path, format: Option<LogFormat>) -> Result<Dataset> {
    match format.unwrap_or_else(|| LogFormat::from_path(path)) {
        LogFormat::Csv => load_csv(path),
        LogFormat::Jsonl => load_jsonl(path),
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path, format: Option<LogFormat>) -> Result<()> {
    match format.unwrap_or_else(|| LogFormat::from_path(path)) {
        LogFormat::Csv => save_csv(ds, path),
        LogFormat::Jsonl => save_jsonl(ds, path),
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> causcf_core::Error {
    causcf_core::Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_schema_comment(line: &str) -> std::result::Result<Schema, String> {
    let rest = line
        .strip_prefix("# causcf")
        .ok_or("first line must be the schema comment `# causcf n_treatments=.. user_features=.. item_features=..`")?;
    let (mut l, mut fu, mut fi) = (None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| format!("malformed header field {field:?}"))?;
        let parsed: usize = value.parse().map_err(|_| format!("header field {key} is not a count: {value:?}"))?;
        match key {
            "n_treatments" => l = Some(parsed),
            "user_features" => fu = Some(parsed),
            "item_features" => fi = Some(parsed),
            _ => return Err(format!("unknown header field {key:?}")),
        }
    }
    let n_treatments = l.ok_or("header lacks n_treatments")?;
    let n_treatments = u8::try_from(n_treatments).map_err(|_| "n_treatments exceeds 255".to_string())?;
    Ok(Schema {
        n_treatments,
        user_features: fu.ok_or("header lacks user_features")?,
        item_features: fi.ok_or("header lacks item_features")?,
    })
}

fn schema_comment(s: Schema) -> String {
    format!(
        "# causcf n_treatments={} user_features={} item_features={}",
        s.n_treatments, s.user_features, s.item_features
    )
}

fn opt_u32(cell: &str, name: &str) -> std::result::Result<Option<u32>, String> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse().map(Some).map_err(|_| format!("{name} is not a nonnegative integer: {cell:?}"))
}

fn small(cell: &str, name: &str) -> std::result::Result<u8, String> {
    cell.parse().map_err(|_| format!("{name} is not a small nonnegative integer: {cell:?}"))
}

fn features(cell: &str, name: &str) -> std::result::Result<Vec<f64>, String> {
    if cell.is_empty() {
        return Ok(Vec::new());
    }
    cell.split(';')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("{name} entry is not a real number: {x:?}")))
        .collect()
}

fn csv_row(rec: &csv::StringRecord) -> std::result::Result<RawRecord, String> {
    if rec.len() != CSV_COLUMNS.len() {
        return Err(format!("expected {} columns, found {}", CSV_COLUMNS.len(), rec.len()));
    }
    Ok(RawRecord {
        user_id: rec[0].to_string(),
        item_id: rec[1].to_string(),
        treatment: small(&rec[2], "treatment")?,
        outcome: small(&rec[3], "outcome")?,
        position: opt_u32(&rec[4], "position")?,
        leave_position: opt_u32(&rec[5], "leave_position")?,
        session: opt_u32(&rec[6], "session")?,
        timestamp: opt_u32(&rec[7], "timestamp")?,
        user_features: features(&rec[8], "user_features")?,
        item_features: features(&rec[9], "item_features")?,
    })
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = open(path)?;
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let schema = parse_schema_comment(first.trim_end()).map_err(|m| parse_err(1, m))?;
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = csv.headers().map_err(|e| parse_err(2, e.to_string()))?.clone();
    if header.iter().ne(CSV_COLUMNS) {
        return Err(parse_err(2, format!("column header must be `{}`", CSV_COLUMNS.join(","))).into());
    }
    let mut builder = DatasetBuilder::new(schema);
    let mut rec = csv::StringRecord::new();
    loop {
        // csv counts lines from the header, which is file line 2
        let line = csv.position().line() as usize + 1;
        match csv.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => match csv_row(&rec) {
                Ok(raw) => builder.push(line, raw),
                Err(reason) => builder.reject(line, reason),
            },
            Err(e) => return Err(parse_err(line, e.to_string()).into()),
        }
    }
    Ok(builder.finish()?)
}

fn join_features(xs: &[f64]) -> String {
    let mut out = String::new();
    for (j, x) in xs.iter().enumerate() {
        if j > 0 {
            out.push(';');
        }
        out.push_str(&x.to_string());
    }
    out
}

fn cell(x: Option<u32>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{}", schema_comment(ds.schema())).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let werr = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(CSV_COLUMNS).map_err(werr)?;
    // features are per entity; format each table row once
    let users: Vec<String> = (0..ds.n_users() as u32).map(|u| join_features(ds.user_features(u))).collect();
    let items: Vec<String> = (0..ds.n_items() as u32).map(|i| join_features(ds.item_features(i))).collect();
    for r in ds.records() {
        w.write_record([
            ds.users().id(r.user).unwrap_or_default(),
            ds.items().id(r.item).unwrap_or_default(),
            &r.treatment.to_string(),
            &r.outcome.to_string(),
            &cell(r.position),
            &cell(r.leave_position),
            &cell(r.session),
            &cell(r.timestamp),
            &users[r.user as usize],
            &items[r.item as usize],
        ])
        .map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonHeader {
    format: String,
    n_treatments: u8,
    user_features: usize,
    item_features: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    user_id: String,
    item_id: String,
    treatment: u8,
    outcome: u8,
    position: Option<u32>,
    leave_position: Option<u32>,
    #[serde(default)]
    session: Option<u32>,
    #[serde(default)]
    timestamp: Option<u32>,
    #[serde(default)]
    user_features: Vec<f64>,
    #[serde(default)]
    item_features: Vec<f64>,
}

pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    let reader = open(path)?;
    let mut lines = reader.lines();
    let first = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err(1, "empty file; expected a header object").into()),
    };
    let header: JsonHeader = serde_json::from_str(&first).map_err(|e| parse_err(1, format!("header: {e}")))?;
    if header.format != "causcf" {
        return Err(parse_err(1, format!("header format must be \"causcf\", found {:?}", header.format)).into());
    }
    let mut builder = DatasetBuilder::new(Schema {
        n_treatments: header.n_treatments,
        user_features: header.user_features,
        item_features: header.item_features,
    });
    for (ix, line) in lines.enumerate() {
        let n = ix + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JsonRecord>(&line) {
            Ok(r) => builder.push(
                n,
                RawRecord {
                    user_id: r.user_id,
                    item_id: r.item_id,
                    treatment: r.treatment,
                    outcome: r.outcome,
                    position: r.position,
                    leave_position: r.leave_position,
                    session: r.session,
                    timestamp: r.timestamp,
                    user_features: r.user_features,
                    item_features: r.item_features,
                },
            ),
            Err(e) => builder.reject(n, e.to_string()),
        }
    }
    Ok(builder.finish()?)
}

pub fn save_jsonl(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let s = ds.schema();
    let header = JsonHeader {
        format: "causcf".into(),
        n_treatments: s.n_treatments,
        user_features: s.user_features,
        item_features: s.item_features,
    };
    let jerr = |e: serde_json::Error| Error::format(path, e.to_string());
    serde_json::to_writer(&mut out, &header).map_err(jerr)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for ix in 0..ds.len() {
        let r = ds.raw_record(ix);
        let rec = JsonRecord {
            user_id: r.user_id,
            item_id: r.item_id,
            treatment: r.treatment,
            outcome: r.outcome,
            position: r.position,
            leave_position: r.leave_position,
            session: r.session,
            timestamp: r.timestamp,
            user_features: r.user_features,
            item_features: r.item_features,
        };
        serde_json::to_writer(&mut out, &rec).map_err(jerr)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Summary written next to every saved log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub file: String,
    pub format: LogFormat,
    pub records: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub n_treatments: usize,
    pub user_features: usize,
    pub item_features: usize,
    pub sha256: String,
}

/// `log.csv` -> `log.manifest.json`.
pub fn manifest_path(data: &Path) -> PathBuf {
    data.with_extension("manifest.json")
}

pub fn dataset_manifest(ds: &Dataset, path: &Path, format: LogFormat) -> Result<DatasetManifest> {
    let s = ds.schema();
    Ok(DatasetManifest {
        file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        format,
        records: ds.len(),
        n_users: ds.n_users(),
        n_items: ds.n_items(),
        n_treatments: usize::from(s.n_treatments),
        user_features: s.user_features,
        item_features: s.item_features,
        sha256: sha256_file(path)?,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::format(path, e.to_string()))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let reader = open(path)?;
    serde_json::from_reader(reader).map_err(|e| Error::format(path, e.to_string()))
}

/// Creates `path` with parents, returning a buffered writer.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    create(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_comment_round_trip() {
        let s = Schema {
            n_treatments: 2,
            user_features: 3,
            item_features: 0,
        };
        assert_eq!(parse_schema_comment(&schema_comment(s)), Ok(s));
        assert!(parse_schema_comment("user_id,item_id").is_err());
        assert!(parse_schema_comment("# causcf n_treatments=2 user_features=1").is_err());
    }

    #[test]
    fn feature_cells() {
        assert_eq!(features("", "f"), Ok(vec![]));
        assert_eq!(features("0.5;-1;2e-3", "f"), Ok(vec![0.5, -1.0, 0.002]));
        assert!(features("0.5;x", "f").is_err());
        let xs = [0.1, -2.0, 1e-300, 1.0 / 3.0, f64::MAX];
        assert_eq!(features(&join_features(&xs), "f"), Ok(xs.to_vec()));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(LogFormat::from_path(Path::new("a/b.jsonl")), LogFormat::Jsonl);
        assert_eq!(LogFormat::from_path(Path::new("a/b.csv")), LogFormat::Csv);
        assert_eq!(manifest_path(Path::new("out/log.csv")), Path::new("out/log.manifest.json"));
    }
}
