//! Dataset representation and delimited-text ingestion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column roles used when loading a delimited file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSchema {
    pub response: String,
    /// Offset / trial-count column; all offsets default to 1 when absent.
    #[serde(default)]
    pub offset: Option<String>,
    #[serde(default)]
    pub binary: Vec<String>,
    #[serde(default)]
    pub continuous: Vec<String>,
}

/// In-memory dataset: count/binomial response, per-observation offsets, and
/// binary plus continuous covariates stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub y: Vec<u32>,
    pub offsets: Vec<f64>,
    pub x_binary: Vec<Vec<u8>>,
    pub x_continuous: Vec<Vec<f64>>,
    pub names: DataSchema,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p_binary(&self) -> usize {
        self.x_binary.len()
    }

    pub fn p_continuous(&self) -> usize {
        self.x_continuous.len()
    }

    /// Structural validation: consistent lengths, 0/1 binaries, finite
    /// continuous values, positive offsets.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if self.offsets.len() != n {
            return Err(Error::Data("offset length mismatch".into()));
        }
        for (j, col) in self.x_binary.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Data(format!("binary column {j} length mismatch")));
            }
            if let Some(i) = col.iter().position(|&v| v > 1) {
                return Err(Error::Data(format!(
                    "binary column '{}' has non-binary value at row {}",
                    self.names.binary.get(j).map(String::as_str).unwrap_or("?"),
                    i + 1
                )));
            }
        }
        for (j, col) in self.x_continuous.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Data(format!(
                    "continuous column {j} length mismatch"
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "continuous column {j} has non-finite value at row {}",
                    i + 1
                )));
            }
        }
        if let Some(i) = self.offsets.iter().position(|&h| !(h > 0.0)) {
            return Err(Error::Data(format!("nonpositive offset at row {}", i + 1)));
        }
        Ok(())
    }

    /// Continuous covariate values of observation `i`.
    pub fn xc_row(&self, i: usize) -> Vec<f64> {
        self.x_continuous.iter().map(|c| c[i]).collect()
    }

    /// Binary covariate values of observation `i`.
    pub fn xb_row(&self, i: usize) -> Vec<u8> {
        self.x_binary.iter().map(|c| c[i]).collect()
    }
}

/// Load a delimited text file (comma or tab, auto-detected) under a schema.
///
/// Rows with missing values in mapped columns are rejected with their row
/// numbers; a missing offset column yields unit offsets.
pub fn load_dataset(path: &Path, schema: &DataSchema) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let delim = detect_delimiter(&text);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delim)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("header: {e}")))?
        .iter()
        .map(|s| s.to_string())
        .collect();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    };

    let y_idx = col(&schema.response)?;
    let offset_idx = schema.offset.as_deref().map(col).transpose()?;
    let bin_idx: Vec<usize> = schema
        .binary
        .iter()
        .map(|n| col(n))
        .collect::<Result<_>>()?;
    let cont_idx: Vec<usize> = schema
        .continuous
        .iter()
        .map(|n| col(n))
        .collect::<Result<_>>()?;

    let mut y = Vec::new();
    let mut offsets = Vec::new();
    let mut x_binary: Vec<Vec<u8>> = vec![Vec::new(); bin_idx.len()];
    let mut x_continuous: Vec<Vec<f64>> = vec![Vec::new(); cont_idx.len()];
    let mut bad_rows = Vec::new();

    for (row_no, record) in reader.records().enumerate() {
        let row = row_no + 2; // 1-based, after header
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        let field = |idx: usize| -> Option<&str> {
            record.get(idx).filter(|s| !s.is_empty())
        };
        let mut missing = false;
        let mut need = vec![y_idx];
        need.extend(&bin_idx);
        need.extend(&cont_idx);
        if let Some(i) = offset_idx {
            need.push(i);
        }
        for idx in need {
            if field(idx).is_none() {
                missing = true;
            }
        }
        if missing {
            bad_rows.push(row);
            continue;
        }
        let yv: f64 = field(y_idx)
            .unwrap()
            .parse()
            .map_err(|_| Error::Data(format!("row {row}: response is not a number")))?;
        if yv < 0.0 || yv.fract() != 0.0 {
            return Err(Error::Data(format!(
                "row {row}: response {yv} is not a nonnegative integer"
            )));
        }
        y.push(yv as u32);
        offsets.push(match offset_idx {
            Some(i) => field(i)
                .unwrap()
                .parse()
                .map_err(|_| Error::Data(format!("row {row}: offset is not a number")))?,
            None => 1.0,
        });
        for (j, &idx) in bin_idx.iter().enumerate() {
            let v: f64 = field(idx)
                .unwrap()
                .parse()
                .map_err(|_| Error::Data(format!("row {row}: binary value is not a number")))?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::Data(format!(
                    "row {row}: column '{}' value {v} is not 0/1",
                    schema.binary[j]
                )));
            }
            x_binary[j].push(v as u8);
        }
        for (j, &idx) in cont_idx.iter().enumerate() {
            let v: f64 = field(idx).unwrap().parse().map_err(|_| {
                Error::Data(format!(
                    "row {row}: column '{}' is not a number",
                    schema.continuous[j]
                ))
            })?;
            x_continuous[j].push(v);
        }
    }

    if !bad_rows.is_empty() {
        return Err(Error::Data(format!(
            "rows with missing values rejected: {bad_rows:?}"
        )));
    }

    let ds = Dataset {
        y,
        offsets,
        x_binary,
        x_continuous,
        names: schema.clone(),
    };
    ds.validate()?;
    Ok(ds)
}

fn detect_delimiter(text: &str) -> u8 {
    let first = text.lines().next().unwrap_or("");
    if first.matches('\t').count() > first.matches(',').count() {
        b'\t'
    } else {
        b','
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(tag: &str, content: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir();
        let path = dir.join(format!("dpcount_data_{tag}_{}.csv", std::process::id()));
        std::fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn loads_basic_csv_and_defaults_offset() {
        let path = write_tmp("basic", "y,x\n3,1.5\n0,2.5\n7,0.1\n");
        let schema = DataSchema {
            response: "y".into(),
            offset: None,
            binary: vec![],
            continuous: vec!["x".into()],
        };
        let ds = load_dataset(&path, &schema).unwrap();
        assert_eq!(ds.n(), 3);
        assert!(ds.offsets.iter().all(|&h| h == 1.0));
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn rejects_non_binary_value_with_location() {
        let path = write_tmp("nonbin", "y,b\n3,0\n1,2\n");
        let schema = DataSchema {
            response: "y".into(),
            offset: None,
            binary: vec!["b".into()],
            continuous: vec![],
        };
        let err = load_dataset(&path, &schema).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3") && msg.contains('b'), "{msg}");
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn rejects_missing_values_with_row_numbers() {
        let path = write_tmp("missing", "y,x\n3,1.5\n,2.0\n");
        let schema = DataSchema {
            response: "y".into(),
            offset: None,
            binary: vec![],
            continuous: vec!["x".into()],
        };
        let err = load_dataset(&path, &schema).unwrap_err();
        assert!(err.to_string().contains('3'), "{err}");
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn tab_delimiter_autodetected() {
        let path = write_tmp("tab", "y\tx\n3\t1.5\n2\t2.0\n");
        let schema = DataSchema {
            response: "y".into(),
            offset: None,
            binary: vec![],
            continuous: vec!["x".into()],
        };
        assert_eq!(load_dataset(&path, &schema).unwrap().n(), 2);
        std::fs::remove_file(path).ok();
    }
}
