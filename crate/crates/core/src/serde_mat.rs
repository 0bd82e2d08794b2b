//! Matrices serialize as arrays of row arrays.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::{Mat, SymMat};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowMajor(pub Vec<Vec<f64>>);

impl From<&Mat> for RowMajor {
    fn from(m: &Mat) -> Self {
        RowMajor(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }
}

impl TryFrom<RowMajor> for Mat {
    type Error = String;
    fn try_from(rows: RowMajor) -> Result<Self, String> {
        let nrows = rows.0.len();
        let ncols = rows.0.first().map_or(0, |r| r.len());
        if let Some((i, r)) = rows.0.iter().enumerate().find(|(_, r)| r.len() != ncols) {
            return Err(format!("row {i} has {} entries, expected {ncols}", r.len()));
        }
        if rows.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err("matrix contains a non-finite entry".into());
        }
        Ok(Mat::from_row_iterator(
            nrows,
            ncols,
            rows.0.into_iter().flatten(),
        ))
    }
}

impl From<SymMat> for RowMajor {
    fn from(s: SymMat) -> Self {
        RowMajor::from(s.as_mat())
    }
}

impl TryFrom<RowMajor> for SymMat {
    type Error = String;
    fn try_from(rows: RowMajor) -> Result<Self, String> {
        let m = Mat::try_from(rows)?;
        SymMat::new(m).map_err(|e| e.to_string())
    }
}

pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
    RowMajor::from(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
    let rows = RowMajor::deserialize(d)?;
    Mat::try_from(rows).map_err(serde::de::Error::custom)
}

/// Empty matrices lose their column (or row) count in the row-array form;
/// restores the expected shape when the stored matrix is empty.
pub fn conform_empty(m: Mat, rows: usize, cols: usize) -> Mat {
    if m.is_empty() && rows * cols == 0 {
        Mat::zeros(rows, cols)
    } else {
        m
    }
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(RowMajor::from).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Mat>, D::Error> {
        Option::<RowMajor>::deserialize(d)?
            .map(|r| Mat::try_from(r).map_err(serde::de::Error::custom))
            .transpose()
    }
}
