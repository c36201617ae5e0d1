//! File formats: potential-outcome tables as JSON or CSV, assignments
//! as JSON, and diagnostic matrix dumps as CSV.
//!
//! In-memory indices are 0-based; every format here is 1-based.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{DesignDims, PotentialOutcomeTable};
use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;
use crate::randomizer::Assignment;

/// JSON schema for a science table: dimensions plus the nested outcome
/// array `y[b][r][c][p][q]`.
#[derive(Debug, Serialize, Deserialize)]
struct TableJson {
    #[serde(rename = "B")]
    blocks: usize,
    #[serde(rename = "P")]
    row_levels: usize,
    #[serde(rename = "Q")]
    col_levels: usize,
    y: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
}

/// Serializes a table to the JSON document format.
pub fn table_to_json(table: &PotentialOutcomeTable) -> Result<String> {
    let dims = table.dims();
    let y = (0..dims.blocks())
        .map(|b| {
            (0..dims.row_levels())
                .map(|r| {
                    (0..dims.col_levels())
                        .map(|c| {
                            (0..dims.row_levels())
                                .map(|p| {
                                    (0..dims.col_levels())
                                        .map(|q| table.outcome(b, r, c, p, q))
                                        .collect()
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let doc = TableJson {
        blocks: dims.blocks(),
        row_levels: dims.row_levels(),
        col_levels: dims.col_levels(),
        y,
    };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

/// Parses a table from the JSON document format, validating that the
/// nested array is complete and every value finite.
pub fn table_from_json(text: &str) -> Result<PotentialOutcomeTable> {
    let doc: TableJson = serde_json::from_str(text)?;
    let dims = DesignDims::new(doc.blocks, doc.row_levels, doc.col_levels)?;
    let mut flat = Vec::with_capacity(dims.units() * dims.treatments());
    if doc.y.len() != dims.blocks() {
        return Err(Error::InvalidTable(format!(
            "y has {} blocks, header says {}",
            doc.y.len(),
            dims.blocks()
        )));
    }
    for (b, block) in doc.y.iter().enumerate() {
        let shape_err = |what: &str| {
            Error::InvalidTable(format!("block {}: incomplete {what} nesting", b + 1))
        };
        if block.len() != dims.row_levels() {
            return Err(shape_err("row"));
        }
        for row in block {
            if row.len() != dims.col_levels() {
                return Err(shape_err("column"));
            }
            for cell in row {
                if cell.len() != dims.row_levels() {
                    return Err(shape_err("row-level"));
                }
                for plevel in cell {
                    if plevel.len() != dims.col_levels() {
                        return Err(shape_err("column-level"));
                    }
                    flat.extend_from_slice(plevel);
                }
            }
        }
    }
    PotentialOutcomeTable::new(dims, flat)
}

/// Serializes a table to flat CSV with header `b,r,c,p,q,value` and
/// 1-based indices, rows in lexicographic index order.
pub fn table_to_csv(table: &PotentialOutcomeTable) -> Result<String> {
    let dims = table.dims();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["b", "r", "c", "p", "q", "value"])?;
    for b in 0..dims.blocks() {
        for r in 0..dims.row_levels() {
            for c in 0..dims.col_levels() {
                for p in 0..dims.row_levels() {
                    for q in 0..dims.col_levels() {
                        w.write_record([
                            (b + 1).to_string(),
                            (r + 1).to_string(),
                            (c + 1).to_string(),
                            (p + 1).to_string(),
                            (q + 1).to_string(),
                            format!("{}", table.outcome(b, r, c, p, q)),
                        ])?;
                    }
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidTable(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Parses a table from the flat CSV format. Dimensions are inferred
/// from the largest indices; every index tuple must appear exactly once.
pub fn table_from_csv(text: &str) -> Result<PotentialOutcomeTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let expected = ["b", "r", "c", "p", "q", "value"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::InvalidTable(format!(
            "csv header must be {expected:?}, got {headers:?}"
        )));
    }
    let mut rows: Vec<(usize, usize, usize, usize, usize, f64)> = Vec::new();
    let mut max = (0usize, 0usize, 0usize, 0usize, 0usize);
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| -> Result<usize> {
            record[i]
                .parse::<usize>()
                .map_err(|_| Error::InvalidTable(format!("bad index field {:?}", &record[i])))
        };
        let (b, r, c, p, q) = (field(0)?, field(1)?, field(2)?, field(3)?, field(4)?);
        let value: f64 = record[5]
            .parse()
            .map_err(|_| Error::InvalidTable(format!("bad value field {:?}", &record[5])))?;
        if b == 0 || r == 0 || c == 0 || p == 0 || q == 0 {
            return Err(Error::InvalidTable("indices are 1-based; found 0".into()));
        }
        max = (
            max.0.max(b),
            max.1.max(r),
            max.2.max(c),
            max.3.max(p),
            max.4.max(q),
        );
        rows.push((b - 1, r - 1, c - 1, p - 1, q - 1, value));
    }
    if max.1 != max.3 || max.2 != max.4 {
        return Err(Error::InvalidTable(format!(
            "unit grid ({} x {}) must match the factorial ({} x {})",
            max.1, max.2, max.3, max.4
        )));
    }
    let dims = DesignDims::new(max.0, max.1, max.2)?;
    let total = dims.units() * dims.treatments();
    let mut values = vec![f64::NAN; total];
    let mut seen = vec![false; total];
    for (b, r, c, p, q, v) in rows {
        let idx = ((((b * dims.row_levels()) + r) * dims.col_levels() + c) * dims.row_levels()
            + p)
            * dims.col_levels()
            + q;
        if seen[idx] {
            return Err(Error::InvalidTable(format!(
                "duplicate entry for (b,r,c,p,q) = ({},{},{},{},{})",
                b + 1,
                r + 1,
                c + 1,
                p + 1,
                q + 1
            )));
        }
        seen[idx] = true;
        values[idx] = v;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidTable(format!(
            "table is incomplete: {} of {} entries present (first gap at flat index {missing})",
            seen.iter().filter(|s| **s).count(),
            total
        )));
    }
    PotentialOutcomeTable::new(dims, values)
}

/// Loads a table from a path, dispatching on the `.json` / `.csv`
/// extension.
pub fn load_table(path: &Path) -> Result<PotentialOutcomeTable> {
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => table_from_json(&text),
        Some("csv") => table_from_csv(&text),
        other => Err(Error::InvalidInput(format!(
            "unsupported table extension {other:?}; expected .json or .csv"
        ))),
    }
}

/// JSON schema for an assignment: 1-based level-to-row and
/// level-to-column maps, one inner array per block.
#[derive(Debug, Serialize, Deserialize)]
struct AssignmentJson {
    #[serde(rename = "rowPerm")]
    row_perm: Vec<Vec<usize>>,
    #[serde(rename = "colPerm")]
    col_perm: Vec<Vec<usize>>,
}

/// Serializes an assignment with 1-based indices, for audit logs.
pub fn assignment_to_json(a: &Assignment) -> Result<String> {
    let bump = |perms: &[Vec<usize>]| -> Vec<Vec<usize>> {
        perms
            .iter()
            .map(|p| p.iter().map(|v| v + 1).collect())
            .collect()
    };
    let doc = AssignmentJson {
        row_perm: bump(a.row_perms()),
        col_perm: bump(a.col_perms()),
    };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

/// Parses an assignment for a design of the given dimensions,
/// validating bijectivity of every per-block permutation.
pub fn assignment_from_json(text: &str, dims: DesignDims) -> Result<Assignment> {
    let doc: AssignmentJson = serde_json::from_str(text)?;
    let drop = |perms: Vec<Vec<usize>>, axis: &str| -> Result<Vec<Vec<usize>>> {
        perms
            .into_iter()
            .enumerate()
            .map(|(b, p)| {
                p.into_iter()
                    .map(|v| {
                        v.checked_sub(1).ok_or_else(|| {
                            Error::InvalidAssignment(format!(
                                "block {}: {axis} indices are 1-based; found 0",
                                b + 1
                            ))
                        })
                    })
                    .collect()
            })
            .collect()
    };
    Assignment::new(
        dims,
        drop(doc.row_perm, "row")?,
        drop(doc.col_perm, "column")?,
    )
}

/// Writes a square matrix as headered CSV: a label column followed by
/// one column per matrix column, row-major.
pub fn write_matrix_csv<W: Write>(
    matrix: &SquareMatrix,
    labels: &[String],
    writer: W,
) -> Result<()> {
    assert_eq!(labels.len(), matrix.order(), "one label per row/column");
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (i, label) in labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        for j in 0..matrix.order() {
            row.push(format!("{}", matrix.get(i, j)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomizer::{draw_assignment, SeedSpec};
    use proptest::prelude::*;

    fn sample_table() -> PotentialOutcomeTable {
        let dims = DesignDims::new(2, 2, 3).unwrap();
        PotentialOutcomeTable::from_fn(dims, |b, r, c, p, q| {
            (b * 1000 + r * 100 + c * 10 + p * 5 + q) as f64 * 0.25
        })
        .unwrap()
    }

    #[test]
    fn json_round_trip() {
        let table = sample_table();
        let text = table_to_json(&table).unwrap();
        let back = table_from_json(&text).unwrap();
        assert_eq!(table, back);
    }

    #[test]
    fn json_rejects_ragged_nesting() {
        let table = sample_table();
        let text = table_to_json(&table).unwrap();
        let broken = text.replacen("\"B\": 2", "\"B\": 3", 1);
        assert!(table_from_json(&broken).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let table = sample_table();
        let text = table_to_csv(&table).unwrap();
        let back = table_from_csv(&text).unwrap();
        assert_eq!(table, back);
        assert!(text.starts_with("b,r,c,p,q,value\n1,1,1,1,1,0\n"));
    }

    #[test]
    fn csv_rejects_incomplete_and_duplicate_rows() {
        let table = sample_table();
        let text = table_to_csv(&table).unwrap();
        let mut lines: Vec<&str> = text.trim_end().lines().collect();
        let dropped = lines.pop().unwrap();
        let incomplete = lines.join("\n");
        assert!(table_from_csv(&incomplete).is_err());

        let duplicated = format!("{}\n{}\n", text.trim_end(), dropped);
        assert!(table_from_csv(&duplicated).is_err());
    }

    #[test]
    fn assignment_round_trip_is_one_based() {
        let dims = DesignDims::new(3, 2, 3).unwrap();
        let a = draw_assignment(dims, SeedSpec::new(4));
        let text = assignment_to_json(&a).unwrap();
        assert!(text.contains("rowPerm") && text.contains("colPerm"));
        // Wire format is 1-based: no zero appears in the permutations.
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        for axis in ["rowPerm", "colPerm"] {
            for block in doc[axis].as_array().unwrap() {
                for v in block.as_array().unwrap() {
                    assert!(v.as_u64().unwrap() >= 1);
                }
            }
        }
        let back = assignment_from_json(&text, dims).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn assignment_rejects_bad_perms() {
        let dims = DesignDims::new(1, 2, 2).unwrap();
        let bad = r#"{"rowPerm": [[1, 1]], "colPerm": [[1, 2]]}"#;
        assert!(assignment_from_json(bad, dims).is_err());
        let zero = r#"{"rowPerm": [[0, 1]], "colPerm": [[1, 2]]}"#;
        assert!(assignment_from_json(zero, dims).is_err());
    }

    #[test]
    fn matrix_csv_layout() {
        let m = SquareMatrix::from_fn(2, |i, j| (i * 2 + j) as f64);
        let labels = vec!["b1".to_string(), "b2".to_string()];
        let mut buf = Vec::new();
        write_matrix_csv(&m, &labels, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, ",b1,b2\nb1,0,1\nb2,2,3\n");
    }

    proptest! {
        /// Any valid table survives both serialization formats.
        #[test]
        fn formats_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 16)) {
            let dims = DesignDims::new(1, 2, 2).unwrap();
            let table = PotentialOutcomeTable::new(dims, values).unwrap();
            prop_assert_eq!(
                &table_from_json(&table_to_json(&table).unwrap()).unwrap(),
                &table
            );
            prop_assert_eq!(
                &table_from_csv(&table_to_csv(&table).unwrap()).unwrap(),
                &table
            );
        }
    }
}
