//! Eigen-spectra of similarity matrices and the Vendi score / Vendi entropy
//! of every order `q`, including the `q = 0`, `q = 1` and `q = inf` limits.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    build_similarity_matrix, weight_matrix, KernelSpec, Points, ProbabilityVector, SimilarityMatrix, PSD_TOL,
};

/// Normalized eigenvalues at or below this value count as zero.
pub const ZERO_EIGENVALUE: f64 = 1e-12;

/// Nonincreasing nonnegative eigenvalues summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum(Vec<f64>);

impl Spectrum {
    pub const SUM_TOL: f64 = 1e-10;

    /// Builds a spectrum from values that already form a distribution.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Probability("spectrum values must be nonnegative".into()));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::Probability(format!("spectrum sums to {s}")));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Spectrum(values))
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn nonzero(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied().filter(|&l| l > ZERO_EIGENVALUE)
    }
}

/// Order `q >= 0` of the Vendi entropy; `f64::INFINITY` is the max-eigenvalue limit.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "OrderRepr", into = "OrderRepr")]
pub struct VendiOrder(f64);

impl VendiOrder {
    pub const SHANNON: VendiOrder = VendiOrder(1.0);
    pub const INFINITY: VendiOrder = VendiOrder(f64::INFINITY);

    pub fn new(q: f64) -> Result<Self> {
        if q.is_nan() || q < 0.0 {
            return Err(Error::Config(format!("order q must be >= 0, got {q}")));
        }
        Ok(VendiOrder(q))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for VendiOrder {
    fn default() -> Self {
        VendiOrder::SHANNON
    }
}

impl fmt::Display for VendiOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for VendiOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" => Ok(VendiOrder::INFINITY),
            t => t
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad order {s:?}: {e}")))
                .and_then(VendiOrder::new),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OrderRepr {
    Num(f64),
    Text(String),
}

impl TryFrom<OrderRepr> for VendiOrder {
    type Error = Error;

    fn try_from(r: OrderRepr) -> Result<Self> {
        match r {
            OrderRepr::Num(q) => VendiOrder::new(q),
            OrderRepr::Text(s) => s.parse(),
        }
    }
}

impl From<VendiOrder> for OrderRepr {
    fn from(q: VendiOrder) -> Self {
        if q.0.is_infinite() {
            OrderRepr::Text("inf".into())
        } else {
            OrderRepr::Num(q.0)
        }
    }
}

/// Logarithm base for reported entropies. Internally everything is in nats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BaseRepr", into = "String")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
    Ten,
}

impl LogBase {
    /// Factor converting nats to this base.
    pub fn from_nats(self) -> f64 {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Two => 1.0 / std::f64::consts::LN_2,
            LogBase::Ten => 1.0 / std::f64::consts::LN_10,
        }
    }

    pub fn convert(self, nats: f64) -> f64 {
        nats * self.from_nats()
    }
}

impl fmt::Display for LogBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogBase::Natural => "e",
            LogBase::Two => "2",
            LogBase::Ten => "10",
        })
    }
}

impl FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "e" | "natural" | "nat" | "nats" | "ln" => Ok(LogBase::Natural),
            "2" | "bits" | "bit" => Ok(LogBase::Two),
            "10" | "dits" | "hartley" => Ok(LogBase::Ten),
            _ => Err(Error::Config(format!("unknown log base {s:?}"))),
        }
    }
}

impl From<LogBase> for String {
    fn from(b: LogBase) -> String {
        b.to_string()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BaseRepr {
    Num(u32),
    Text(String),
}

impl TryFrom<BaseRepr> for LogBase {
    type Error = Error;

    fn try_from(r: BaseRepr) -> Result<Self> {
        match r {
            BaseRepr::Num(n) => n.to_string().parse(),
            BaseRepr::Text(s) => s.parse(),
        }
    }
}

/// Normalized spectrum of a symmetric PSD matrix (eigenvalues of `m / trace(m)`).
pub fn spectrum_of(m: &DMatrix<f64>) -> Result<Spectrum> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::Shape(format!("matrix is {}x{}", m.nrows(), m.ncols())));
    }
    let trace = m.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::KernelValidity(format!("trace {trace}")));
    }
    let scale = 1.0 / trace;
    for i in 0..n {
        for j in 0..i {
            if ((m[(i, j)] - m[(j, i)]) * scale).abs() > 1e-12 {
                return Err(Error::KernelValidity(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    let eig = (m * scale).symmetric_eigenvalues();
    let floor = -PSD_TOL * n as f64;
    let mut values = Vec::with_capacity(n);
    for &l in eig.iter() {
        if l < floor {
            return Err(Error::KernelValidity(format!("eigenvalue {l:e} below tolerance")));
        }
        values.push(l.max(0.0));
    }
    let s: f64 = values.iter().sum();
    for v in &mut values {
        *v /= s;
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(Spectrum(values))
}

/// Vendi entropy (Renyi entropy of the spectrum) in nats.
fn entropy_nats(s: &Spectrum, q: f64) -> f64 {
    let h = if q == 0.0 {
        (s.nonzero().count() as f64).ln()
    } else if q == 1.0 {
        -s.nonzero().map(|l| l * l.ln()).sum::<f64>()
    } else if q.is_infinite() {
        -s.0[0].ln()
    } else {
        s.nonzero().map(|l| l.powf(q)).sum::<f64>().ln() / (1.0 - q)
    };
    h.max(0.0)
}

pub fn vendi_entropy(s: &Spectrum, q: VendiOrder, base: LogBase) -> f64 {
    base.convert(entropy_nats(s, q.value()))
}

/// Vendi entropy of a similarity matrix under sample weights (uniform when `None`).
pub fn matrix_vendi_entropy(
    k: &SimilarityMatrix,
    p: Option<&ProbabilityVector>,
    q: VendiOrder,
    base: LogBase,
) -> Result<f64> {
    let m = match p {
        Some(p) => weight_matrix(k, p)?,
        None => k.matrix() / k.n() as f64,
    };
    Ok(vendi_entropy(&spectrum_of(&m)?, q, base))
}

/// Vendi score of an unweighted sample: an effective count in `[1, n]`.
pub fn vendi_score(points: &Points, spec: &KernelSpec, q: VendiOrder) -> Result<f64> {
    let k = build_similarity_matrix(points, spec)?;
    Ok(matrix_vendi_entropy(&k, None, q, LogBase::Natural)?.exp())
}

pub fn weighted_vendi_entropy(
    points: &Points,
    p: &ProbabilityVector,
    spec: &KernelSpec,
    q: VendiOrder,
    base: LogBase,
) -> Result<f64> {
    let k = build_similarity_matrix(points, spec)?;
    matrix_vendi_entropy(&k, Some(p), q, base)
}

/// Shannon entropy of a probability vector in the requested base.
pub fn shannon_entropy(p: &[f64], base: LogBase) -> f64 {
    base.convert(-p.iter().filter(|&&w| w > 0.0).map(|w| w * w.ln()).sum::<f64>())
}
