//! Dataset and table file formats.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use crate::dilemma::{AggregatedJudgment, RegressionPoint};
use crate::error::{Result, SrmError};

/// Writes `bytes` to a sibling temp file and renames it into place, so a
/// failed run never leaves a truncated output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| SrmError::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(SrmError::io(path, e));
    }
    Ok(())
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn judgments_to_jsonl(data: &[AggregatedJudgment]) -> Result<String> {
    let mut out = String::new();
    for j in data {
        out.push_str(&serde_json::to_string(j)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, data: &[AggregatedJudgment]) -> Result<()> {
    write_atomic(path, judgments_to_jsonl(data)?.as_bytes())
}

/// Parses JSON-lines judgments; errors name the offending line.
pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<AggregatedJudgment>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SrmError::Data(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let j: AggregatedJudgment = serde_json::from_str(&line)
            .map_err(|e| SrmError::Data(format!("line {}: {e}", i + 1)))?;
        out.push(j);
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<AggregatedJudgment>> {
    let f = fs::File::open(path).map_err(|e| SrmError::io(path, e))?;
    parse_jsonl(BufReader::new(f)).map_err(|e| match e {
        SrmError::Data(msg) => SrmError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Serializes rows as CSV with a header taken from the field names.
pub fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| SrmError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn points_to_csv(points: &[RegressionPoint]) -> Result<String> {
    to_csv(points, &["x", "y"])
}

pub fn read_points_csv(path: &Path) -> Result<Vec<RegressionPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(SrmError::from)).collect()
}
