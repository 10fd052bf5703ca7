//! Sparse functional observations with scalar responses.

use nalgebra::{DMatrix, DVector};

use crate::error::{FgamError, Result};

/// One subject: irregular noisy samples of its trajectory, the scalar
/// response and optional offset covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub y: f64,
    pub u: Vec<f64>,
}

impl Subject {
    pub fn new(id: impl Into<String>, times: Vec<f64>, values: Vec<f64>, y: f64, u: Vec<f64>) -> Self {
        Subject {
            id: id.into(),
            times,
            values,
            y,
            u,
        }
    }

    pub fn n_obs(&self) -> usize {
        self.times.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseFunctionalDataset {
    subjects: Vec<Subject>,
    p0: usize,
}

impl SparseFunctionalDataset {
    /// Validates and sorts each subject's observations by time.
    pub fn new(mut subjects: Vec<Subject>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(FgamError::Data("dataset has no subjects".into()));
        }
        let p0 = subjects[0].u.len();
        for s in subjects.iter_mut() {
            if s.times.is_empty() {
                return Err(FgamError::Data(format!("subject {} has no observations", s.id)));
            }
            if s.times.len() != s.values.len() {
                return Err(FgamError::Data(format!(
                    "subject {} has {} times but {} values",
                    s.id,
                    s.times.len(),
                    s.values.len()
                )));
            }
            if s.u.len() != p0 {
                return Err(FgamError::Data(format!(
                    "subject {} has {} offset covariates, expected {p0}",
                    s.id,
                    s.u.len()
                )));
            }
            let finite = s.times.iter().chain(&s.values).chain(&s.u).all(|v| v.is_finite());
            if !finite || !s.y.is_finite() {
                return Err(FgamError::Data(format!("subject {} has non-finite values", s.id)));
            }
            let mut idx: Vec<usize> = (0..s.times.len()).collect();
            idx.sort_by(|&a, &b| s.times[a].total_cmp(&s.times[b]));
            let times: Vec<f64> = idx.iter().map(|&i| s.times[i]).collect();
            if times.windows(2).any(|w| w[0] == w[1]) {
                return Err(FgamError::Data(format!("subject {} has duplicate times", s.id)));
            }
            s.values = idx.iter().map(|&i| s.values[i]).collect();
            s.times = times;
        }
        Ok(SparseFunctionalDataset { subjects, p0 })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Number of offset covariates per subject.
    pub fn p0(&self) -> usize {
        self.p0
    }

    pub fn total_obs(&self) -> usize {
        self.subjects.iter().map(|s| s.n_obs()).sum()
    }

    pub fn responses(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.subjects.iter().map(|s| s.y))
    }

    /// Offset design `U`, one row per subject.
    pub fn offsets(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.p0, |i, j| self.subjects[i].u[j])
    }

    /// Smallest and largest observation time.
    pub fn time_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.subjects {
            lo = lo.min(s.times[0]);
            hi = hi.max(s.times[s.n_obs() - 1]);
        }
        (lo, hi)
    }

    /// Subset in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let subjects = idx
            .iter()
            .map(|&i| {
                self.subjects
                    .get(i)
                    .cloned()
                    .ok_or_else(|| FgamError::invalid(format!("subject index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(subjects)
    }
}
