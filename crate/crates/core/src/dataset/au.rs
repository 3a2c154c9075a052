//! Action-unit intensity tables in the comma-separated layout OpenFace writes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AU_DIM: usize = 17;

pub const AU_COLUMNS: [&str; AU_DIM] = [
    "AU01_r", "AU02_r", "AU04_r", "AU05_r", "AU06_r", "AU07_r", "AU09_r", "AU10_r", "AU12_r", "AU14_r", "AU15_r",
    "AU17_r", "AU20_r", "AU23_r", "AU25_r", "AU26_r", "AU45_r",
];

pub const AU_MAX: f64 = 5.0;

/// Seventeen intensities in `[0, 5]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuVector {
    values: [f64; AU_DIM],
}

impl AuVector {
    pub fn new(values: [f64; AU_DIM]) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > AU_MAX) {
            return Err(Error::validation(format!("AU intensity {v} outside [0, {AU_MAX}]")));
        }
        Ok(Self { values })
    }

    pub fn zeros() -> Self {
        Self { values: [0.0; AU_DIM] }
    }

    pub fn values(&self) -> &[f64; AU_DIM] {
        &self.values
    }
}

/// Rows of an AU file plus how many values had to be clamped into range.
#[derive(Clone, Debug, PartialEq)]
pub struct AuTable {
    pub rows: Vec<AuVector>,
    pub clamped: usize,
}

pub fn load_au_file(path: &Path) -> Result<AuTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let missing: Vec<&str> = AU_COLUMNS.iter().copied().filter(|c| !headers.iter().any(|h| h == *c)).collect();
    if !missing.is_empty() {
        return Err(Error::format(path, format!("missing AU columns: {}", missing.join(", "))));
    }
    let cols: Vec<usize> = AU_COLUMNS.iter().map(|c| headers.iter().position(|h| h == *c).unwrap()).collect();
    let mut table = AuTable { rows: Vec::new(), clamped: 0 };
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let mut values = [0.0; AU_DIM];
        for (slot, &c) in values.iter_mut().zip(&cols) {
            let raw = record.get(c).unwrap_or("");
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::format(path, format!("row {}: `{raw}` is not a number", line + 1)))?;
            if !v.is_finite() {
                return Err(Error::format(path, format!("row {}: non-finite AU value", line + 1)));
            }
            let c = v.clamp(0.0, AU_MAX);
            if c != v {
                table.clamped += 1;
            }
            *slot = c;
        }
        table.rows.push(AuVector { values });
    }
    if table.clamped > 0 {
        log::warn!("{}: clamped {} AU values into [0, {AU_MAX}]", path.display(), table.clamped);
    }
    Ok(table)
}

/// Writes `rows` with the frame/timestamp/success preamble OpenFace uses.
pub fn write_au_file(path: &Path, rows: &[AuVector], fps: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["frame".to_string(), "timestamp".to_string(), "success".to_string()];
    header.extend(AU_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (i, row) in rows.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string(), format!("{:.3}", i as f64 / fps), "1".to_string()];
        rec.extend(row.values.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_raw(dir: &Path, header: &[&str], rows: &[Vec<f64>]) -> std::path::PathBuf {
        let p = dir.join("au.csv");
        let mut f = std::fs::File::create(&p).unwrap();
        writeln!(f, "{}", header.join(", ")).unwrap();
        for r in rows {
            let s: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", s.join(", ")).unwrap();
        }
        p
    }

    #[test]
    fn zero_row_gives_zero_vector() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_raw(dir.path(), &AU_COLUMNS, &[vec![0.0; AU_DIM]]);
        let t = load_au_file(&p).unwrap();
        assert_eq!(t.rows, vec![AuVector::zeros()]);
        assert_eq!(t.clamped, 0);
    }

    #[test]
    fn out_of_range_values_are_clamped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let mut row = vec![1.0; AU_DIM];
        row[3] = 5.7;
        row[4] = -0.2;
        let p = write_raw(dir.path(), &AU_COLUMNS, &[row]);
        let t = load_au_file(&p).unwrap();
        assert_eq!(t.rows[0].values()[3], 5.0);
        assert_eq!(t.rows[0].values()[4], 0.0);
        assert_eq!(t.clamped, 2);
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let header: Vec<&str> = AU_COLUMNS.iter().copied().filter(|c| *c != "AU12_r").collect();
        let p = write_raw(dir.path(), &header, &[vec![0.0; AU_DIM - 1]]);
        match load_au_file(&p) {
            Err(Error::Format { message, .. }) => assert!(message.contains("AU12_r"), "{message}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn writer_round_trips_positionally() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        let rows: Vec<AuVector> = (0..4)
            .map(|r| {
                let mut v = [0.0; AU_DIM];
                for (i, x) in v.iter_mut().enumerate() {
                    *x = ((r * AU_DIM + i) as f64 * 0.37) % 5.0;
                }
                AuVector::new(v).unwrap()
            })
            .collect();
        write_au_file(&p, &rows, 25.0).unwrap();
        let t = load_au_file(&p).unwrap();
        assert_eq!(t.rows, rows);
    }

    #[test]
    fn extra_columns_and_reordering_are_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let mut header: Vec<&str> = vec!["frame", " confidence"];
        header.extend(AU_COLUMNS.iter().rev());
        let mut row = vec![1.0, 0.98];
        row.extend((0..AU_DIM).rev().map(|i| i as f64 * 0.25));
        let p = write_raw(dir.path(), &header, &[row]);
        let t = load_au_file(&p).unwrap();
        let expect: Vec<f64> = (0..AU_DIM).map(|i| i as f64 * 0.25).collect();
        assert_eq!(t.rows[0].values().to_vec(), expect);
    }
}
