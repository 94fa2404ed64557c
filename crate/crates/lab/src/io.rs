//! File formats.
//!
//! * Matrices: CSV without header, one row per line.
//! * NMI tables: CSV with a `feature,f0,f1,...` header and a label column.
//! * Partitions, checkpoints, results: JSON.
//! * Training histories: CSV `step,train_loss,val_loss`.
//! * Corpora: JSONL, one piece per line,
//!   `{"events":[{"onset":0,"dur":480,"pitch":60,"hand":"RH"}]}`.
//! * Token streams: one token name per line.

use std::io::{BufRead, Write};
use std::path::Path;

use blockmix_core::corpus::{NoteEvent, Piece, Token};
use blockmix_core::info::NmiMatrix;
use blockmix_core::nets::{NetworkSpec, NetworkState};
use blockmix_core::training::TrainHistory;
use blockmix_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::{io_err, LabError, Result};

/// Writes to a temporary file in the destination directory, then renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| LabError::Io { path: path.to_path_buf(), error: e.error })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| LabError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| LabError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Matrix CSV: a `rows,cols` header line, then one line per row.
pub fn matrix_to_csv(m: &Matrix) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["rows", "cols"])?;
    w.write_record([m.rows().to_string(), m.cols().to_string()])?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    finish(w)
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let bad = |line: usize, message: String| LabError::Parse { path: "<matrix csv>".into(), line, message };
    let mut r =
        csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    if r.headers()?.iter().collect::<Vec<_>>() != ["rows", "cols"] {
        return Err(bad(1, "expected a rows,cols header".into()));
    }
    let mut records = r.records();
    let shape = records.next().ok_or_else(|| bad(2, "missing shape line".into()))??;
    let dims: Vec<usize> = shape
        .iter()
        .map(|f| f.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(2, e.to_string()))?;
    let [rows, cols] = dims[..] else {
        return Err(bad(2, "shape line needs two fields".into()));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for (i, rec) in records.enumerate() {
        let line = i + 3;
        let rec = rec?;
        if rec.len() != cols {
            return Err(bad(line, format!("expected {cols} values, found {}", rec.len())));
        }
        for f in rec.iter() {
            data.push(f.parse::<f64>().map_err(|e| bad(line, e.to_string()))?);
        }
    }
    if data.len() != rows * cols {
        return Err(bad(rows + 2, format!("expected {rows} data rows")));
    }
    Ok(Matrix::from_vec(rows, cols, data)?)
}

pub fn nmi_to_csv(c: &NmiMatrix) -> Result<String> {
    let mut w = csv_writer();
    let n = c.dim();
    w.write_record(std::iter::once("feature".to_string()).chain((0..n).map(|j| format!("f{j}"))))?;
    for i in 0..n {
        w.write_record(std::iter::once(format!("f{i}")).chain((0..n).map(|j| c.get(i, j).to_string())))?;
    }
    finish(w)
}

pub fn nmi_from_csv(text: &str) -> Result<NmiMatrix> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let n = r.headers()?.len().saturating_sub(1);
    let mut values = Vec::with_capacity(n * n);
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        for f in rec.iter().skip(1) {
            values.push(f.parse::<f64>().map_err(|e| LabError::Parse {
                path: "<nmi csv>".into(),
                line: line + 2,
                message: e.to_string(),
            })?);
        }
    }
    Ok(NmiMatrix::from_values(n, values)?)
}

pub fn history_to_csv(h: &TrainHistory) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["step", "train_loss", "val_loss"])?;
    for ((s, t), v) in h.steps.iter().zip(&h.train_loss).zip(&h.val_loss) {
        w.write_record([s.to_string(), t.to_string(), v.to_string()])?;
    }
    finish(w)
}

/// Network structure and parameters together.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub state: NetworkState,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = read_json(path)?;
        c.spec.validate()?;
        let state = NetworkState::from_layers(&c.spec, c.state.layers().to_vec())?;
        Ok(Self { spec: c.spec, state })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PieceLine {
    events: Vec<NoteEvent>,
}

/// Reads a JSONL corpus. Blank lines are skipped; errors carry the line
/// number.
pub fn read_events_jsonl(reader: impl BufRead, source: &Path) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(source))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| LabError::Parse { path: source.to_path_buf(), line: i + 1, message };
        let p: PieceLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        pieces.push(Piece::new(p.events).map_err(|e| err(e.to_string()))?);
    }
    Ok(pieces)
}

pub fn load_events_jsonl(path: &Path) -> Result<Vec<Piece>> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    read_events_jsonl(std::io::BufReader::new(f), path)
}

/// Token streams as text: one token name per line, pieces separated by a
/// blank line.
pub fn tokens_to_text(pieces: &[Vec<Token>]) -> String {
    let mut s = String::new();
    for (i, tokens) in pieces.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        for t in tokens {
            s.push_str(&t.to_string());
            s.push('\n');
        }
    }
    s
}

/// Inverse of [`tokens_to_text`].
pub fn tokens_from_text(text: &str) -> Result<Vec<Vec<Token>>> {
    let mut pieces = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                pieces.push(std::mem::take(&mut current));
            }
            continue;
        }
        let t = line.parse::<Token>().map_err(|e| LabError::Parse {
            path: "<tokens>".into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        current.push(t);
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    Ok(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let m = Matrix::from_rows(&[&[1.0, -2.5e-17], &[3.0, 0.1]]).unwrap();
        assert_eq!(matrix_from_csv(&matrix_to_csv(&m).unwrap()).unwrap(), m);
        assert!(matrix_from_csv("rows,cols\n2,2\n1,2\n3\n").is_err());
        assert!(matrix_from_csv("rows,cols\n2,1\n1\n").is_err());
        assert!(matrix_from_csv("1,2\n").is_err());
    }

    #[test]
    fn nmi_round_trip() {
        let c = NmiMatrix::from_values(2, vec![1.0, 0.25, 0.25, 1.0]).unwrap();
        let text = nmi_to_csv(&c).unwrap();
        assert!(text.starts_with("feature,f0,f1\n"));
        assert_eq!(nmi_from_csv(&text).unwrap().values(), c.values());
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let text = "{\"events\":[]}\n\n{\"events\":[{\"onset\":0,\"dur\":0,\"pitch\":60,\"hand\":\"RH\"}]}\n";
        let e = read_events_jsonl(text.as_bytes(), Path::new("c.jsonl")).unwrap_err();
        assert!(e.to_string().starts_with("c.jsonl: line 3:"), "{e}");
        let e = read_events_jsonl("{\"events\":[{\"onset\":0}]}".as_bytes(), Path::new("c.jsonl")).unwrap_err();
        assert!(e.to_string().contains("line 1"));
    }

    #[test]
    fn empty_corpus() {
        assert!(read_events_jsonl("".as_bytes(), Path::new("e")).unwrap().is_empty());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn token_text_round_trip() {
        let text = "SOS\nRH_NOTE_ON_60\nTIME_SHIFT_480\nRH_NOTE_OFF_60\nEOS\n\nSOS\nEOS\n";
        let pieces = tokens_from_text(text).unwrap();
        assert_eq!(pieces.len(), 2);
        assert_eq!(tokens_to_text(&pieces), text);
        let err = tokens_from_text("SOS\nBOGUS\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
