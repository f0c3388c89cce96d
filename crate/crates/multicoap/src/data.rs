//! Input data containers: per-study count/covariate matrices and the
//! multi-study dataset, with construction-time validation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One study: an `n_s × p` count matrix `X`, an `n_s × d` covariate matrix
/// `Z` (put a column of ones first if an intercept is wanted), and a length
/// `n_s` vector of positive normalization factors `a` (e.g. sequencing
/// depths). The Poisson rate for cell `(i, j)` is `a_i · exp(y_ij)` where
/// `y` is the latent log-rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStudyData", into = "RawStudyData")]
pub struct StudyData {
    x: DMatrix<i64>,
    z: DMatrix<f64>,
    a: DVector<f64>,
}

/// Unvalidated mirror of [`StudyData`] used for serialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawStudyData {
    x: DMatrix<i64>,
    z: DMatrix<f64>,
    a: DVector<f64>,
}

impl From<StudyData> for RawStudyData {
    fn from(s: StudyData) -> Self {
        RawStudyData { x: s.x, z: s.z, a: s.a }
    }
}

impl TryFrom<RawStudyData> for StudyData {
    type Error = Error;
    fn try_from(raw: RawStudyData) -> Result<Self> {
        StudyData::new(raw.x, raw.z, raw.a)
    }
}

impl StudyData {
    /// Builds a study, rejecting negative counts, nonpositive normalizers,
    /// and row-count mismatches. Validation messages use study index 0;
    /// [`MultiStudyDataset::new`] re-validates with the real index.
    pub fn new(x: DMatrix<i64>, z: DMatrix<f64>, a: DVector<f64>) -> Result<Self> {
        let s = StudyData { x, z, a };
        s.validate(0)?;
        Ok(s)
    }

    pub(crate) fn validate(&self, study: usize) -> Result<()> {
        let n = self.x.nrows();
        if self.z.nrows() != n {
            return Err(Error::DimensionMismatch {
                study,
                axis: "Z rows",
                expected: n,
                found: self.z.nrows(),
            });
        }
        if self.a.len() != n {
            return Err(Error::DimensionMismatch {
                study,
                axis: "a length",
                expected: n,
                found: self.a.len(),
            });
        }
        for j in 0..self.x.ncols() {
            for i in 0..n {
                let v = self.x[(i, j)];
                if v < 0 {
                    return Err(Error::NegativeCount {
                        study,
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        for i in 0..n {
            let v = self.a[i];
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NonpositiveNormalizer { study, row: i, value: v });
            }
        }
        Ok(())
    }

    /// Number of observations `n_s`.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of count variables `p`.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of covariates `d`.
    pub fn d(&self) -> usize {
        self.z.ncols()
    }

    /// Count matrix (`n_s × p`).
    pub fn x(&self) -> &DMatrix<i64> {
        &self.x
    }

    /// Covariate matrix (`n_s × d`).
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Normalization factors (length `n_s`).
    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    /// Counts converted to `f64` (exact for values below 2^53).
    pub fn x_f64(&self) -> DMatrix<f64> {
        self.x.map(|v| v as f64)
    }
}

/// An ordered collection of studies sharing the same variables and
/// covariates: every study has equal `p` and `d`; sample sizes may differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset", into = "RawDataset")]
pub struct MultiStudyDataset {
    studies: Vec<StudyData>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawDataset {
    studies: Vec<StudyData>,
}

impl From<MultiStudyDataset> for RawDataset {
    fn from(d: MultiStudyDataset) -> Self {
        RawDataset { studies: d.studies }
    }
}

impl TryFrom<RawDataset> for MultiStudyDataset {
    type Error = Error;
    fn try_from(raw: RawDataset) -> Result<Self> {
        MultiStudyDataset::new(raw.studies)
    }
}

impl MultiStudyDataset {
    /// Builds a dataset from one or more studies, checking that all studies
    /// agree on `p` and `d`.
    pub fn new(studies: Vec<StudyData>) -> Result<Self> {
        let data = MultiStudyDataset { studies };
        validate_dataset(&data)?;
        Ok(data)
    }

    /// Number of studies `S`.
    pub fn n_studies(&self) -> usize {
        self.studies.len()
    }

    /// Shared variable count `p`.
    pub fn p(&self) -> usize {
        self.studies[0].p()
    }

    /// Shared covariate count `d`.
    pub fn d(&self) -> usize {
        self.studies[0].d()
    }

    /// Total observations across studies.
    pub fn n_total(&self) -> usize {
        self.studies.iter().map(|s| s.n()).sum()
    }

    /// Access one study.
    pub fn study(&self, s: usize) -> &StudyData {
        &self.studies[s]
    }

    /// All studies in order.
    pub fn studies(&self) -> &[StudyData] {
        &self.studies
    }
}

/// Re-checks every invariant of a dataset: per-study shape agreement,
/// nonnegative counts, positive normalizers, and cross-study agreement of
/// `p` and `d`. Returns normally iff everything holds.
pub fn validate_dataset(data: &MultiStudyDataset) -> Result<()> {
    if data.studies.is_empty() {
        return Err(Error::Config("a dataset needs at least one study".into()));
    }
    let p = data.studies[0].p();
    let d = data.studies[0].d();
    for (s, study) in data.studies.iter().enumerate() {
        study.validate(s)?;
        if study.p() != p {
            return Err(Error::DimensionMismatch {
                study: s,
                axis: "p (X columns)",
                expected: p,
                found: study.p(),
            });
        }
        if study.d() != d {
            return Err(Error::DimensionMismatch {
                study: s,
                axis: "d (Z columns)",
                expected: d,
                found: study.d(),
            });
        }
    }
    Ok(())
}
