//! Snapshot dataset files.
//!
//! A dataset file is one line of JSON ([`DatasetHeader`]) terminated by `\n`,
//! followed by `rows * width` little-endian `f64` values in row-major order.
//! Positions in the header are written with shortest round-trip formatting, so
//! reading and re-writing a file reproduces it byte for byte.

use std::io::{self, BufRead, BufReader, Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ProcessError, SensorLayout, SnapshotGroup};

pub const DATASET_FORMAT: &str = "pigan-snapshots";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad dataset header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("not a snapshot dataset (format `{0}`)")]
    Format(String),
    #[error("dataset truncated: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Invalid(#[from] ProcessError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub group: usize,
    pub rows: usize,
    pub layout: SensorLayout,
    /// Free-form provenance (process specs, seed, oracle grid).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_dataset<W: Write>(mut out: W, group: &SnapshotGroup, meta: serde_json::Value) -> Result<(), DatasetError> {
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: 1,
        group: group.index,
        rows: group.rows(),
        layout: group.layout.clone(),
        meta,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(group.data.len() * 8);
    for v in group.data.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<(DatasetHeader, SnapshotGroup), DatasetError> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: DatasetHeader = serde_json::from_str(line.trim_end_matches('\n'))?;
    if header.format != DATASET_FORMAT {
        return Err(DatasetError::Format(header.format));
    }
    let width = header.layout.width();
    let expected = header.rows * width;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != expected * 8 {
        return Err(DatasetError::Truncated {
            expected,
            found: bytes.len() / 8,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let data = Array2::from_shape_vec((header.rows, width), values).expect("shape checked");
    let group = SnapshotGroup::new(header.group, header.layout.clone(), data)?;
    Ok((header, group))
}

/// Human-readable copy: a header naming each column `field@x`, then one row per snapshot.
pub fn write_csv<W: Write>(out: W, group: &SnapshotGroup) -> io::Result<()> {
    let mut out = io::BufWriter::new(out);
    let l = &group.layout;
    let names: Vec<String> = [("k", &l.k), ("u", &l.u), ("f", &l.f), ("b", &l.b)]
        .iter()
        .flat_map(|(n, xs)| xs.iter().map(move |x| format!("{n}@{x}")))
        .collect();
    writeln!(out, "{}", names.join(","))?;
    for row in group.data.outer_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_byte_exact(
            vals in proptest::collection::vec(-1e6f64..1e6, 12),
            x in -1.0f64..1.0,
        ) {
            let layout = SensorLayout { k: vec![x], u: vec![], f: vec![-1.0, 1.0 / 3.0], b: vec![] };
            let data = Array2::from_shape_vec((4, 3), vals).unwrap();
            let g = SnapshotGroup::new(2, layout, data).unwrap();
            let mut first = Vec::new();
            write_dataset(&mut first, &g, serde_json::json!({"seed": 5})).unwrap();
            let (h, back) = read_dataset(first.as_slice()).unwrap();
            prop_assert_eq!(&back, &g);
            let mut second = Vec::new();
            write_dataset(&mut second, &back, h.meta).unwrap();
            prop_assert_eq!(first, second);
        }
    }

    #[test]
    fn truncated_file() {
        let g = SnapshotGroup::new(0, SensorLayout::f_only(vec![0.0]), Array2::zeros((3, 1))).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &g, serde_json::Value::Null).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(read_dataset(bytes.as_slice()), Err(DatasetError::Truncated { .. })));
    }

    #[test]
    fn csv_header_names_sensors() {
        let g = SnapshotGroup::new(
            0,
            SensorLayout {
                k: vec![0.0],
                f: vec![-1.0, 1.0],
                ..Default::default()
            },
            Array2::from_shape_vec((1, 3), vec![1.5, 2.0, -0.25]).unwrap(),
        )
        .unwrap();
        let mut out = Vec::new();
        write_csv(&mut out, &g).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "k@0,f@-1,f@1\n1.5,2,-0.25\n");
    }
}
