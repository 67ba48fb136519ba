use std::io::Read;
use std::path::Path;

use super::{Dataset, Role, Targets};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Which CSV column holds the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    /// Header name; requires a header row.
    Name(String),
    /// Zero-based column index.
    Index(usize),
}

/// Loads a numeric CSV as a regression dataset.
///
/// Features are all non-target columns in file order. Parse errors report
/// 1-based file line numbers (a header counts as line 1) and 1-based columns.
pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, target, has_header)
}

pub fn read_csv(r: impl Read, target: &TargetColumn, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(has_header).trim(csv::Trim::All).from_reader(r);
    let target_idx = match target {
        TargetColumn::Index(i) => *i,
        TargetColumn::Name(name) => {
            if !has_header {
                return Err(Error::invalid(format!("target column `{name}` given by name but the file has no header")));
            }
            let headers = reader.headers().map_err(|e| Error::Parse { row: 1, column: 0, message: e.to_string() })?;
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::invalid(format!("no column named `{name}` in the header")))?
        }
    };
    let offset = if has_header { 2 } else { 1 };
    let mut width = None;
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + offset;
        let rec = rec.map_err(|e| Error::Parse { row, column: 0, message: e.to_string() })?;
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Parse { row, column: rec.len().min(w) + 1, message: format!("expected {w} fields, found {}", rec.len()) });
        }
        if target_idx >= w {
            return Err(Error::invalid(format!("target column {target_idx} out of range for {w} columns")));
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: j + 1,
                message: format!("`{cell}` is not a number"),
            })?;
            if j == target_idx {
                targets.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let m = targets.len();
    let n = width.map_or(0, |w| w - 1);
    Dataset::new(Matrix::from_vec(m, n, features)?, Targets::Values(Matrix::column(&targets)), Role::Train)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_file() {
        let text = "a,b,y\n1.5,2,3\n-4,5e-1,6\n7,8,9.25\n";
        let d = read_csv(text.as_bytes(), &TargetColumn::Name("b".into()), true).unwrap();
        assert_eq!(d.features, Matrix::from_rows(&[[1.5, 3.0], [-4.0, 6.0], [7.0, 9.25]]).unwrap());
        assert_eq!(d.values().unwrap().as_slice(), &[2.0, 0.5, 8.0]);
    }

    #[test]
    fn reports_bad_cell_position() {
        let text = "a,b,y\n1,2,x\n";
        match read_csv(text.as_bytes(), &TargetColumn::Index(2), true) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_target_name() {
        let text = "a,b\n1,2\n";
        assert!(read_csv(text.as_bytes(), &TargetColumn::Name("y".into()), true).is_err());
        assert!(read_csv(text.as_bytes(), &TargetColumn::Name("a".into()), false).is_err());
    }

    #[test]
    fn headerless_by_index() {
        let d = read_csv("1,2\n3,4\n".as_bytes(), &TargetColumn::Index(0), false).unwrap();
        assert_eq!(d.features.as_slice(), &[2.0, 4.0]);
        assert_eq!(d.values().unwrap().as_slice(), &[1.0, 3.0]);
    }
}
