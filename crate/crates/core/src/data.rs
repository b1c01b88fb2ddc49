//! Internal-study datasets: regression rows `(y, z)` or survival triples
//! `(y, delta, z)`, immutable after construction.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::path::Path;

/// Observed rows of the internal study.
///
/// Regression data carry a real response per row; survival data carry a
/// positive follow-up time plus an event indicator. Covariates live in an
/// `n x d` matrix shared by both kinds (`d = 0` is allowed, e.g. an
/// intercept-only model).
#[derive(Debug, Clone)]
pub struct InternalDataset {
    y: DVector<f64>,
    status: Option<Vec<u8>>,
    z: DMatrix<f64>,
}

impl InternalDataset {
    /// Builds a regression dataset from responses and an `n x d` covariate matrix.
    pub fn regression(y: DVector<f64>, z: DMatrix<f64>) -> Result<Self> {
        Self::validate_common(&y, &z)?;
        Ok(Self {
            y,
            status: None,
            z,
        })
    }

    /// Builds a survival dataset from follow-up times, event indicators, and covariates.
    pub fn survival(time: DVector<f64>, status: Vec<u8>, z: DMatrix<f64>) -> Result<Self> {
        Self::validate_common(&time, &z)?;
        if status.len() != time.len() {
            return Err(Error::DimMismatch {
                expected: time.len(),
                got: status.len(),
            });
        }
        for (i, (&t, &d)) in time.iter().zip(status.iter()).enumerate() {
            if t <= 0.0 || d > 1 {
                return Err(Error::InvalidSurvivalRow { row: i });
            }
        }
        Ok(Self {
            y: time,
            status: Some(status),
            z,
        })
    }

    fn validate_common(y: &DVector<f64>, z: &DMatrix<f64>) -> Result<()> {
        if y.len() < 2 {
            return Err(Error::TooFewObservations {
                min: 2,
                got: y.len(),
            });
        }
        if z.nrows() != y.len() {
            return Err(Error::DimMismatch {
                expected: y.len(),
                got: z.nrows(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "response/time",
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "covariates",
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Covariate dimension d.
    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_survival(&self) -> bool {
        self.status.is_some()
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.y
    }

    /// Event indicator for survival rows; panics for regression data.
    pub fn event(&self, i: usize) -> bool {
        self.status.as_ref().expect("survival data")[i] == 1
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn z(&self, i: usize, j: usize) -> f64 {
        self.z[(i, j)]
    }

    /// Dot product of row i's covariates with `v` (length d), no allocation.
    pub fn zdot(&self, i: usize, v: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.z.ncols() {
            acc += self.z[(i, j)] * v[j];
        }
        acc
    }

    /// `acc += alpha * z_i`, no allocation.
    pub fn z_axpy(&self, i: usize, alpha: f64, acc: &mut DVector<f64>) {
        for j in 0..self.z.ncols() {
            acc[j] += alpha * self.z[(i, j)];
        }
    }

    /// Reads survival CSV with header `time,status,z1,...,zd`, status in {0,1}.
    pub fn survival_from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
        let headers = rdr
            .headers()
            .map_err(|e| Error::Invalid(format!("bad csv header: {e}")))?
            .clone();
        if headers.len() < 2 || headers[0].trim() != "time" || headers[1].trim() != "status" {
            return Err(Error::Invalid(
                "survival csv must start with columns time,status".into(),
            ));
        }
        let d = headers.len() - 2;
        let (mut time, mut status, mut zflat) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Invalid(format!("csv row {row}: {e}")))?;
            time.push(parse_field(&rec[0], row)?);
            status.push(parse_field(&rec[1], row)? as u8);
            for j in 0..d {
                zflat.push(parse_field(&rec[2 + j], row)?);
            }
        }
        let n = time.len();
        Self::survival(
            DVector::from_vec(time),
            status,
            DMatrix::from_row_slice(n, d, &zflat),
        )
    }

    /// Reads regression CSV with header `y,z1,...,zd`.
    pub fn regression_from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
        let headers = rdr
            .headers()
            .map_err(|e| Error::Invalid(format!("bad csv header: {e}")))?
            .clone();
        if headers.is_empty() || headers[0].trim() != "y" {
            return Err(Error::Invalid("regression csv must start with column y".into()));
        }
        let d = headers.len() - 1;
        let (mut y, mut zflat) = (Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Invalid(format!("csv row {row}: {e}")))?;
            y.push(parse_field(&rec[0], row)?);
            for j in 0..d {
                zflat.push(parse_field(&rec[1 + j], row)?);
            }
        }
        let n = y.len();
        Self::regression(DVector::from_vec(y), DMatrix::from_row_slice(n, d, &zflat))
    }
}

fn parse_field(s: &str, row: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Invalid(format!("csv row {row}: cannot parse `{s}` as number")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_and_nonfinite() {
        let y = DVector::from_vec(vec![1.0]);
        assert!(InternalDataset::regression(y, DMatrix::zeros(1, 0)).is_err());
        let y = DVector::from_vec(vec![1.0, f64::NAN]);
        assert!(InternalDataset::regression(y, DMatrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn rejects_bad_survival_rows() {
        let t = DVector::from_vec(vec![1.0, 0.0]);
        assert!(InternalDataset::survival(t, vec![1, 0], DMatrix::zeros(2, 1)).is_err());
        let t = DVector::from_vec(vec![1.0, 2.0]);
        assert!(InternalDataset::survival(t, vec![1, 2], DMatrix::zeros(2, 1)).is_err());
    }
}
