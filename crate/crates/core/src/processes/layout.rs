use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::ProcessError;

/// `n` equispaced points on `[lo, hi]` including both endpoints; the midpoint when `n == 1`.
pub fn equidistant(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { hi } else { lo + step * i as f64 }).collect()
        }
    }
}

/// Sensor positions for the four fields of one snapshot group.
///
/// Row order of snapshot data is always `(K, U, F, B)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub k: Vec<f64>,
    pub u: Vec<f64>,
    pub f: Vec<f64>,
    pub b: Vec<f64>,
}

/// Equidistant layout on `[-1, 1]`; boundary sensors sit at the endpoints.
pub fn equidistant_layout(n_k: usize, n_u: usize, n_f: usize, n_b: usize) -> Result<SensorLayout, ProcessError> {
    let b = match n_b {
        0 => Vec::new(),
        2 => vec![-1.0, 1.0],
        n => {
            return Err(ProcessError::Layout(format!(
                "boundary sensors sit at x = -1 and x = 1, cannot place {n}"
            )))
        }
    };
    let layout = SensorLayout {
        k: equidistant(n_k, -1.0, 1.0),
        u: equidistant(n_u, -1.0, 1.0),
        f: equidistant(n_f, -1.0, 1.0),
        b,
    };
    layout.validate()?;
    Ok(layout)
}

impl SensorLayout {
    pub fn f_only(positions: Vec<f64>) -> Self {
        Self {
            f: positions,
            ..Self::default()
        }
    }

    pub fn u_only(positions: Vec<f64>) -> Self {
        Self {
            u: positions,
            ..Self::default()
        }
    }

    pub fn width(&self) -> usize {
        self.k.len() + self.u.len() + self.f.len() + self.b.len()
    }

    /// Column ranges of the K, U, F and B blocks.
    pub fn blocks(&self) -> [std::ops::Range<usize>; 4] {
        let k = 0..self.k.len();
        let u = k.end..k.end + self.u.len();
        let f = u.end..u.end + self.f.len();
        let b = f.end..f.end + self.b.len();
        [k, u, f, b]
    }

    pub fn validate(&self) -> Result<(), ProcessError> {
        for (name, xs) in [("k", &self.k), ("u", &self.u), ("f", &self.f), ("b", &self.b)] {
            if xs.iter().any(|x| !x.is_finite() || !(-1.0..=1.0).contains(x)) {
                return Err(ProcessError::Layout(format!("{name} sensor outside [-1, 1]")));
            }
            if xs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ProcessError::Layout(format!("{name} sensors not strictly increasing")));
            }
        }
        if self.b.iter().any(|&x| x != -1.0 && x != 1.0) {
            return Err(ProcessError::Layout("boundary sensors must sit at x = +-1".into()));
        }
        if self.width() == 0 {
            return Err(ProcessError::Layout("layout has no sensors".into()));
        }
        Ok(())
    }
}

/// Sensor reads of each field, one row per random event.
#[derive(Clone, Debug, Default)]
pub struct FieldReads {
    pub k: Option<Array2<f64>>,
    pub u: Option<Array2<f64>>,
    pub f: Option<Array2<f64>>,
    pub b: Option<Array2<f64>>,
}

/// One group of snapshots: `N` rows of simultaneous reads `(K, U, F, B)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotGroup {
    pub index: usize,
    pub layout: SensorLayout,
    pub data: Array2<f64>,
}

impl SnapshotGroup {
    pub fn new(index: usize, layout: SensorLayout, data: Array2<f64>) -> Result<Self, ProcessError> {
        layout.validate()?;
        if data.ncols() != layout.width() {
            return Err(ProcessError::FieldWidth {
                field: "row",
                expected: layout.width(),
                got: data.ncols(),
            });
        }
        if let Some(((row, col), _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(ProcessError::NonFinite { row, col });
        }
        Ok(Self { index, layout, data })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    /// Splits off the last `n` rows as a second group (e.g. for validation).
    pub fn split_tail(mut self, n: usize) -> (Self, Self) {
        let keep = self.rows().saturating_sub(n);
        let tail = self.data.slice(ndarray::s![keep.., ..]).to_owned();
        self.data = self.data.slice(ndarray::s![..keep, ..]).to_owned();
        let other = Self {
            index: self.index,
            layout: self.layout.clone(),
            data: tail,
        };
        (self, other)
    }
}

/// Concatenates per-field reads into snapshot rows; absent fields must have no sensors.
pub fn collect_snapshots(index: usize, layout: SensorLayout, reads: FieldReads) -> Result<SnapshotGroup, ProcessError> {
    layout.validate()?;
    let fields: [(&'static str, &Vec<f64>, &Option<Array2<f64>>); 4] = [
        ("k", &layout.k, &reads.k),
        ("u", &layout.u, &reads.u),
        ("f", &layout.f, &reads.f),
        ("b", &layout.b, &reads.b),
    ];
    let mut rows: Option<usize> = None;
    let mut blocks = Vec::new();
    for (name, pos, data) in fields {
        match data {
            None if pos.is_empty() => {}
            None => {
                return Err(ProcessError::FieldWidth {
                    field: name,
                    expected: pos.len(),
                    got: 0,
                })
            }
            Some(d) => {
                if d.ncols() != pos.len() {
                    return Err(ProcessError::FieldWidth {
                        field: name,
                        expected: pos.len(),
                        got: d.ncols(),
                    });
                }
                match rows {
                    None => rows = Some(d.nrows()),
                    Some(r) if r != d.nrows() => {
                        return Err(ProcessError::RowCount {
                            field: name,
                            expected: r,
                            got: d.nrows(),
                        })
                    }
                    _ => {}
                }
                if !pos.is_empty() {
                    blocks.push(d.view());
                }
            }
        }
    }
    let data = concatenate(Axis(1), &blocks).map_err(|e| ProcessError::Layout(e.to_string()))?;
    SnapshotGroup::new(index, layout, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linspace_layouts() {
        let l = equidistant_layout(1, 2, 11, 0).unwrap();
        assert_eq!(l.k, vec![0.0]);
        assert_eq!(l.u, vec![-1.0, 1.0]);
        assert_eq!(l.f.len(), 11);
        for (i, &x) in l.f.iter().enumerate() {
            assert!((x - (-1.0 + 0.2 * i as f64)).abs() < 1e-15);
        }
        assert_eq!(l.f[10], 1.0);
        assert_eq!(equidistant_layout(13, 2, 21, 0).unwrap().width(), 36);
        assert!(equidistant_layout(0, 0, 3, 1).is_err());
        assert_eq!(equidistant_layout(0, 0, 3, 2).unwrap().b, vec![-1.0, 1.0]);
    }

    #[test]
    fn bad_layouts() {
        let mut l = SensorLayout::f_only(vec![0.0, 0.0]);
        assert!(l.validate().is_err());
        l.f = vec![-2.0];
        assert!(l.validate().is_err());
        assert!(SensorLayout::default().validate().is_err());
    }

    #[test]
    fn rows_concatenate_in_field_order() {
        let layout = SensorLayout {
            k: vec![-0.5, 0.5],
            u: vec![],
            f: vec![0.0],
            b: vec![],
        };
        let reads = FieldReads {
            k: Some(array![[1.0, 2.0], [3.0, 4.0]]),
            f: Some(array![[9.0], [8.0]]),
            ..Default::default()
        };
        let g = collect_snapshots(0, layout, reads).unwrap();
        assert_eq!(g.data, array![[1.0, 2.0, 9.0], [3.0, 4.0, 8.0]]);
    }

    #[test]
    fn single_sensor_group() {
        let g = collect_snapshots(
            1,
            SensorLayout::u_only(vec![0.0]),
            FieldReads {
                u: Some(array![[0.1], [0.2], [0.3]]),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(g.data.ncols(), 1);
        assert_eq!(g.rows(), 3);
    }

    #[test]
    fn mismatched_reads() {
        let layout = SensorLayout {
            k: vec![0.0],
            f: vec![0.0],
            ..Default::default()
        };
        let err = collect_snapshots(
            0,
            layout.clone(),
            FieldReads {
                k: Some(array![[1.0], [2.0]]),
                f: Some(array![[1.0]]),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, ProcessError::RowCount { field: "f", .. }));
        let err = collect_snapshots(
            0,
            layout,
            FieldReads {
                k: Some(array![[1.0]]),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, ProcessError::FieldWidth { field: "f", .. }));
        let err = SnapshotGroup::new(0, SensorLayout::f_only(vec![0.0]), array![[f64::NAN]]).unwrap_err();
        assert_eq!(err, ProcessError::NonFinite { row: 0, col: 0 });
    }
}
