//! CSV datasets: a header row, one integer column named `label`, every
//! other column a numeric feature.

use std::io::Read;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub fn read<R: Read>(reader: R, n_classes: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| Error::Format("CSV has no `label` column".into()))?;
    let input_dim = headers.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        for (c, field) in record.iter().enumerate() {
            let field = field.trim();
            if c == label_col {
                let y: u32 = field
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: bad label {field:?}", line + 2)))?;
                labels.push(y);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: bad feature {field:?}", line + 2)))?;
                features.push(v);
            }
        }
    }
    let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |&m| m as usize + 1));
    Dataset::new(input_dim, n_classes, features, labels)
}

pub fn load(path: &Path, n_classes: Option<usize>) -> Result<Dataset> {
    read(std::fs::File::open(path)?, n_classes)
}
