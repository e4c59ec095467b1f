//! Similarity kernels and the (probability-weighted) similarity matrices
//! whose spectra define Vendi entropies.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry tolerance for similarity matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Per-row tolerance on the smallest eigenvalue; the bound is `-PSD_TOL * n`.
pub const PSD_TOL: f64 = 1e-8;

/// A set of points from the domain of the variable of interest.
#[derive(Clone, Debug, PartialEq)]
pub enum Points {
    /// Real vectors, all of the same dimension.
    Real(Vec<Vec<f64>>),
    /// Binary vectors, all of the same length.
    Binary(Vec<Vec<bool>>),
    /// Symbol indices into a finite alphabet.
    Symbol(Vec<usize>),
}

impl Points {
    pub fn scalars(values: &[f64]) -> Self {
        Points::Real(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn len(&self) -> usize {
        match self {
            Points::Real(v) => v.len(),
            Points::Binary(v) => v.len(),
            Points::Symbol(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reorders points so that position `i` holds the old point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        match self {
            Points::Real(v) => Points::Real(perm.iter().map(|&i| v[i].clone()).collect()),
            Points::Binary(v) => Points::Binary(perm.iter().map(|&i| v[i].clone()).collect()),
            Points::Symbol(v) => Points::Symbol(perm.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Selects the points at `idx` (repetition allowed).
    pub fn select(&self, idx: &[usize]) -> Self {
        self.permuted(idx)
    }
}

/// Kernel choice. All kernels satisfy `k(a, a) = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    /// 1 for equal points, 0 otherwise.
    Identity,
    /// `exp(-|a-b|^2 / (2 bandwidth^2))` on real vectors.
    Gaussian { bandwidth: f64 },
    /// `1 - hamming(a, b) / N` on binary vectors of length N.
    Hamming,
    /// Explicit matrix indexed by symbol.
    Custom { matrix: Vec<Vec<f64>> },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gaussian { bandwidth: 1.0 }
    }
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Self {
        KernelSpec::Gaussian { bandwidth }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Gaussian { bandwidth } if !(*bandwidth > 0.0 && bandwidth.is_finite()) => Err(Error::Config(
                format!("gaussian bandwidth must be positive, got {bandwidth}"),
            )),
            KernelSpec::Custom { matrix } => SimilarityMatrix::new(rows_to_matrix(matrix)?).map(|_| ()),
            _ => Ok(()),
        }
    }
}

/// Probability vector: nonnegative weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Probability("empty weight vector".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Probability(format!("invalid weight {w}")));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::Probability(format!("weights sum to {s}")));
        }
        Ok(ProbabilityVector(weights))
    }

    /// Normalizes nonnegative weights; fails if they are all zero.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Probability(format!("invalid weight {w}")));
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Probability("weights sum to zero".into()));
        }
        Ok(ProbabilityVector(weights.into_iter().map(|w| w / s).collect()))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        ProbabilityVector(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Symmetric PSD similarity matrix with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix(DMatrix<f64>);

impl SimilarityMatrix {
    /// Validates symmetry, unit diagonal and positive semidefiniteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let k = SimilarityMatrix(m);
        k.check_invariants()?;
        Ok(k)
    }

    /// Wraps a matrix produced by a kernel that is PSD by construction.
    pub(crate) fn from_kernel(m: DMatrix<f64>) -> Self {
        SimilarityMatrix(m)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let m = &self.0;
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::Shape(format!(
                "similarity matrix is {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        for i in 0..n {
            if (m[(i, i)] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::KernelValidity(format!("diagonal entry {i} is {}", m[(i, i)])));
            }
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::KernelValidity(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        let min_eig = m.clone().symmetric_eigenvalues().min();
        if min_eig < -PSD_TOL * n as f64 {
            return Err(Error::KernelValidity(format!("smallest eigenvalue {min_eig:e}")));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("dimension {a} vs {b}")));
    }
    Ok(())
}

pub fn gaussian_similarity(a: &[f64], b: &[f64], bandwidth: f64) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    if !(bandwidth > 0.0) {
        return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
    }
    Ok((-sq_dist(a, b) / (2.0 * bandwidth * bandwidth)).exp())
}

pub fn hamming_similarity(u: &[bool], v: &[bool]) -> Result<f64> {
    check_dims(u.len(), v.len())?;
    if u.is_empty() {
        return Err(Error::Shape("hamming kernel needs length >= 1".into()));
    }
    let mismatches = u.iter().zip(v).filter(|(a, b)| a != b).count();
    Ok(1.0 - mismatches as f64 / u.len() as f64)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn symmetric_from(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> DMatrix<f64> {
    let mut m = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = f(i, j);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Builds `K[i, j] = k(points[i], points[j])`.
pub fn build_similarity_matrix(points: &Points, spec: &KernelSpec) -> Result<SimilarityMatrix> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Shape("empty point set".into()));
    }
    let m = match (spec, points) {
        (KernelSpec::Identity, Points::Real(v)) => symmetric_from(n, |i, j| if v[i] == v[j] { 1.0 } else { 0.0 }),
        (KernelSpec::Identity, Points::Binary(v)) => symmetric_from(n, |i, j| if v[i] == v[j] { 1.0 } else { 0.0 }),
        (KernelSpec::Identity, Points::Symbol(v)) => symmetric_from(n, |i, j| if v[i] == v[j] { 1.0 } else { 0.0 }),
        (KernelSpec::Gaussian { bandwidth }, Points::Real(v)) => {
            spec.validate()?;
            let d = v[0].len();
            if let Some(p) = v.iter().find(|p| p.len() != d) {
                return Err(Error::Shape(format!("point of dimension {} in a {d}-d set", p.len())));
            }
            let scale = 1.0 / (2.0 * bandwidth * bandwidth);
            symmetric_from(n, |i, j| (-sq_dist(&v[i], &v[j]) * scale).exp())
        }
        (KernelSpec::Hamming, Points::Binary(v)) => {
            let len = v[0].len();
            if len == 0 || v.iter().any(|p| p.len() != len) {
                return Err(Error::Shape("hamming kernel needs equal, nonzero lengths".into()));
            }
            let inv = 1.0 / len as f64;
            symmetric_from(n, |i, j| {
                let mism = v[i].iter().zip(&v[j]).filter(|(a, b)| a != b).count();
                1.0 - mism as f64 * inv
            })
        }
        (KernelSpec::Custom { matrix }, Points::Symbol(v)) => {
            let base = SimilarityMatrix::new(rows_to_matrix(matrix)?)?;
            let size = base.n();
            if let Some(s) = v.iter().find(|&&s| s >= size) {
                return Err(Error::Shape(format!("symbol {s} outside a {size}-symbol kernel")));
            }
            let b = base.matrix();
            return Ok(SimilarityMatrix(symmetric_from(n, |i, j| b[(v[i], v[j])])));
        }
        (spec, _) => {
            return Err(Error::Shape(format!("kernel {spec:?} does not apply to these points")));
        }
    };
    Ok(SimilarityMatrix::from_kernel(m))
}

/// `diag(sqrt p) K diag(sqrt p)`; trace one when `K` has unit diagonal.
pub fn weight_matrix(k: &SimilarityMatrix, p: &ProbabilityVector) -> Result<DMatrix<f64>> {
    check_dims(k.n(), p.len())?;
    let s: Vec<f64> = p.as_slice().iter().map(|w| w.sqrt()).collect();
    let mut m = k.matrix().clone();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] *= s[i] * s[j];
        }
    }
    Ok(m)
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Shape("empty matrix".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::Shape(format!("row of length {} in a {n}-row matrix", r.len())));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Reads a square kernel matrix: `n` rows of `n` comma-separated reals, no header.
pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<SimilarityMatrix> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix_csv(&text)
}

pub fn parse_matrix_csv(text: &str) -> Result<SimilarityMatrix> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        rows.push(row);
    }
    SimilarityMatrix::new(rows_to_matrix(&rows)?)
}
