//! CSV interchange. A header row is required; vector columns and label
//! columns are picked out by a [`CsvSchema`].

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{LabelColumn, LabelKind, Metadata, VectorDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VectorColumns {
    /// Every header column starting with this prefix, in header order.
    Prefix(String),
    Named(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    pub kind: LabelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub vectors: VectorColumns,
    pub labels: Vec<LabelSpec>,
}

impl CsvSchema {
    /// The schema [`export_csv`] writes for `ds`.
    pub fn for_dataset(ds: &VectorDataset) -> Self {
        CsvSchema {
            vectors: VectorColumns::Prefix("v".into()),
            labels: ds
                .labels()
                .iter()
                .map(|c| LabelSpec {
                    name: c.name.clone(),
                    kind: c.kind,
                })
                .collect(),
        }
    }
}

/// Writes `v0..v{d-1}` followed by one column per label.
pub fn export_csv(ds: &VectorDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Numeric(m) => Error::io(path, std::io::Error::other(m)),
        other => other,
    })
}

pub(crate) fn write_csv<W: Write>(ds: &VectorDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Numeric(e.to_string());
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("v{j}")).collect();
    header.extend(ds.labels().iter().map(|c| c.name.clone()));
    w.write_record(&header).map_err(to_err)?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.vectors().row(i).iter().map(|v| v.to_string()).collect();
        row.extend(ds.labels().iter().map(|c| c.values[i].to_string()));
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(())
}

pub fn import_csv(path: &Path, schema: &CsvSchema) -> Result<VectorDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ds = read_csv(file, schema)?;
    ds.metadata.source = path.display().to_string();
    Ok(ds)
}

pub(crate) fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<VectorDataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = r
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }
    let position = |name: &str| header.iter().position(|h| h == name);

    let vector_idx: Vec<usize> = match &schema.vectors {
        VectorColumns::Prefix(p) => header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(p.as_str()) && !schema.labels.iter().any(|l| l.name == *h))
            .map(|(i, _)| i)
            .collect(),
        VectorColumns::Named(names) => names
            .iter()
            .map(|n| {
                position(n).ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("vector column '{n}' not in header"),
                })
            })
            .collect::<Result<_>>()?,
    };
    if vector_idx.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "schema selects no vector columns".into(),
        });
    }
    let label_idx: Vec<usize> = schema
        .labels
        .iter()
        .map(|l| {
            position(&l.name).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("label column '{}' not in header", l.name),
            })
        })
        .collect::<Result<_>>()?;

    let mut cells: Vec<f32> = Vec::new();
    let mut label_values: Vec<Vec<i32>> = vec![Vec::new(); schema.labels.len()];
    let mut rows = 0usize;
    for record in r.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(rows as u64 + 2);
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("{} fields, header has {}", record.len(), header.len()),
            });
        }
        for &j in &vector_idx {
            let v: f32 = record[j].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric vector cell '{}' in column '{}'", &record[j], &header[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite vector cell in column '{}'", &header[j]),
                });
            }
            cells.push(v);
        }
        for (slot, &j) in label_values.iter_mut().zip(&label_idx) {
            let v: i32 = record[j].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-integer label '{}' in column '{}'", &record[j], &header[j]),
            })?;
            slot.push(v);
        }
        rows += 1;
    }

    let vectors = Array2::from_shape_vec((rows, vector_idx.len()), cells).expect("row-major cells");
    let labels = schema
        .labels
        .iter()
        .zip(label_values)
        .map(|(spec, values)| {
            LabelColumn::new(spec.name.clone(), spec.kind, values).map_err(|e| Error::Parse {
                line: 0,
                message: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    VectorDataset::new(vectors, labels, Metadata::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn schema() -> CsvSchema {
        CsvSchema {
            vectors: VectorColumns::Prefix("v".into()),
            labels: vec![LabelSpec {
                name: "y".into(),
                kind: LabelKind::Binary,
            }],
        }
    }

    #[test]
    fn hand_written_fixture() {
        let text = "v0,v1,y\n0.5,-1,1\n2,3.25,0\n-0.125,0,1\n";
        let ds = read_csv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.vectors(), &array![[0.5f32, -1.0], [2.0, 3.25], [-0.125, 0.0]]);
        assert_eq!(ds.label("y").unwrap().values, vec![1, 0, 1]);
    }

    #[test]
    fn export_then_import_is_lossless() {
        let v = array![[0.1f32, 1.0e-7, -3.4e38], [f32::MIN_POSITIVE, 7.0, 0.333_333_34]];
        let ds = VectorDataset::new(
            v,
            vec![LabelColumn::new("y", LabelKind::Binary, vec![0, 1]).unwrap()],
            Metadata::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::for_dataset(&ds)).unwrap();
        assert_eq!(back.vectors(), ds.vectors());
        assert_eq!(back.labels(), ds.labels());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let missing = "v0,v1\n1,2\n";
        assert!(matches!(read_csv(missing.as_bytes(), &schema()), Err(Error::Parse { line: 1, .. })));
        let ragged = "v0,v1,y\n1,2,0\n1,2\n";
        assert!(matches!(read_csv(ragged.as_bytes(), &schema()), Err(Error::Parse { line: 3, .. })));
        let text = "v0,v1,y\n1,2,0\n1,abc,1\n";
        assert!(matches!(read_csv(text.as_bytes(), &schema()), Err(Error::Parse { line: 3, .. })));
    }
}
