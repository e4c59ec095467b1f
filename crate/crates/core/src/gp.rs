//! Gaussian-process surrogate with exact posteriors and pathwise (Matheron)
//! posterior sampling.
//!
//! Prior paths come from random Fourier features of the squared-exponential
//! kernel. A posterior path is the prior path plus the data-dependent
//! correction `k(x, X) (K + s²I)^-1 (y - f(X) - e)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Diagonal jitter tried in order until the Cholesky factorization succeeds.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

pub const DEFAULT_FEATURES: usize = 1024;

/// Squared-exponential kernel hyperparameters plus noise and constant mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpHyper {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    #[serde(default)]
    pub noise_variance: f64,
    #[serde(default)]
    pub mean: f64,
}

impl GpHyper {
    pub fn isotropic(signal_variance: f64, lengthscale: f64, dim: usize, noise_variance: f64) -> Self {
        GpHyper {
            signal_variance,
            lengthscales: vec![lengthscale; dim],
            noise_variance,
            mean: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config("GP lengthscales must be positive and finite".into()));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::Config("GP signal variance must be positive".into()));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Config("GP noise variance must be >= 0".into()));
        }
        if !self.mean.is_finite() {
            return Err(Error::Config("GP mean must be finite".into()));
        }
        Ok(())
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }

    fn cross(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.kernel(&a[i], &b[j]))
    }
}

/// Operation counters for the pathwise sampler. `factor_ops` and `solve_ops`
/// cover the work that depends only on the conditioning set; `apply_ops`
/// covers the work that touches query points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub factor_ops: u64,
    pub solve_ops: u64,
    pub apply_ops: u64,
}

#[derive(Clone, Debug)]
pub struct GPModel {
    hyper: GpHyper,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn check_dims(hyper: &GpHyper, pts: &[Vec<f64>]) -> Result<()> {
    let d = hyper.dim();
    match pts.iter().find(|p| p.len() != d) {
        Some(p) => Err(Error::Shape(format!(
            "GP point of dimension {} for a {d}-d model",
            p.len()
        ))),
        None => Ok(()),
    }
}

impl GPModel {
    pub fn prior(hyper: GpHyper) -> Result<Self> {
        Self::fit(Vec::new(), Vec::new(), hyper)
    }

    pub fn fit(inputs: Vec<Vec<f64>>, outputs: Vec<f64>, hyper: GpHyper) -> Result<Self> {
        hyper.validate()?;
        if inputs.len() != outputs.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        check_dims(&hyper, &inputs)?;
        if outputs.iter().any(|y| !y.is_finite()) {
            return Err(Error::Numerical("non-finite GP observation".into()));
        }
        if inputs.is_empty() {
            return Ok(GPModel {
                hyper,
                inputs,
                outputs,
                chol: None,
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }
        let mut gram = hyper.cross(&inputs, &inputs);
        for i in 0..inputs.len() {
            gram[(i, i)] += hyper.noise_variance;
        }
        let (chol, jitter) = JITTER_LADDER
            .iter()
            .find_map(|&j| {
                let mut m = gram.clone();
                for i in 0..m.nrows() {
                    m[(i, i)] += j;
                }
                Cholesky::new(m).map(|c| (c, j))
            })
            .ok_or_else(|| Error::Numerical("GP kernel matrix not PD after maximum jitter".into()))?;
        if jitter > 0.0 {
            log::debug!("GP factorization needed jitter {jitter}");
        }
        let resid = DVector::from_iterator(outputs.len(), outputs.iter().map(|y| y - hyper.mean));
        let alpha = chol.solve(&resid);
        Ok(GPModel {
            hyper,
            inputs,
            outputs,
            chol: Some(chol),
            alpha,
            jitter,
        })
    }

    /// A new model with `extra` observations appended.
    pub fn condition(&self, extra: &[(Vec<f64>, f64)]) -> Result<Self> {
        if extra.is_empty() {
            return Ok(self.clone());
        }
        let mut x = self.inputs.clone();
        let mut y = self.outputs.clone();
        for (xi, yi) in extra {
            x.push(xi.clone());
            y.push(*yi);
        }
        Self::fit(x, y, self.hyper.clone())
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Diagonal jitter the factorization ended up using.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn posterior_moments(&self, query: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dims(&self.hyper, query)?;
        let mut means = Vec::with_capacity(query.len());
        let mut sds = Vec::with_capacity(query.len());
        for x in query {
            let prior_var = self.hyper.kernel(x, x);
            match &self.chol {
                None => {
                    means.push(self.hyper.mean);
                    sds.push(prior_var.sqrt());
                }
                Some(chol) => {
                    let k = DVector::from_iterator(self.len(), self.inputs.iter().map(|xi| self.hyper.kernel(x, xi)));
                    means.push(self.hyper.mean + k.dot(&self.alpha));
                    let v = chol
                        .l_dirty()
                        .solve_lower_triangular(&k)
                        .expect("cholesky factor is invertible");
                    sds.push((prior_var - v.norm_squared()).max(0.0).sqrt());
                }
            }
        }
        Ok((means, sds))
    }

    /// Posterior covariance of the latent function over `query`.
    pub fn posterior_covariance(&self, query: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        check_dims(&self.hyper, query)?;
        let prior = self.hyper.cross(query, query);
        match &self.chol {
            None => Ok(prior),
            Some(chol) => {
                let kx = self.hyper.cross(&self.inputs, query);
                let v = chol
                    .l_dirty()
                    .solve_lower_triangular(&kx)
                    .expect("cholesky factor is invertible");
                Ok(prior - v.transpose() * v)
            }
        }
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let Some(chol) = &self.chol else { return 0.0 };
        let n = self.len() as f64;
        let resid = DVector::from_iterator(self.len(), self.outputs.iter().map(|y| y - self.hyper.mean));
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        -0.5 * resid.dot(&self.alpha) - 0.5 * logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Refit with the lengthscale multiplier from `grid` that maximizes the
    /// marginal likelihood.
    pub fn refit_lengthscales(&self, grid: &[f64]) -> Result<Self> {
        let mut best = self.clone();
        let mut best_lml = self.log_marginal_likelihood();
        for &m in grid {
            let mut h = self.hyper.clone();
            h.lengthscales.iter_mut().for_each(|l| *l *= m);
            let cand = Self::fit(self.inputs.clone(), self.outputs.clone(), h)?;
            let lml = cand.log_marginal_likelihood();
            if lml > best_lml {
                best_lml = lml;
                best = cand;
            }
        }
        Ok(best)
    }
}

fn gauss(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random Fourier features for the squared-exponential kernel.
#[derive(Clone, Debug)]
pub struct RandomFeatures {
    omega: DMatrix<f64>,
    phase: DVector<f64>,
    scale: f64,
}

impl RandomFeatures {
    pub fn draw(hyper: &GpHyper, count: usize, rng: &mut Rng) -> Self {
        let d = hyper.dim();
        let omega = DMatrix::from_fn(count, d, |_, j| gauss(rng) / hyper.lengthscales[j]);
        let phase = DVector::from_fn(count, |_, _| rng.random_range(0.0..std::f64::consts::TAU));
        RandomFeatures {
            omega,
            phase,
            scale: (2.0 * hyper.signal_variance / count as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    /// Feature matrix, one column per point.
    pub fn features(&self, pts: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), pts.len(), |f, j| {
            let dot: f64 = pts[j].iter().enumerate().map(|(c, x)| self.omega[(f, c)] * x).sum();
            self.scale * (dot + self.phase[f]).cos()
        })
    }
}

/// Joint draws over a query set, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSamples {
    pub values: DMatrix<f64>,
}

impl PathSamples {
    pub fn count(&self) -> usize {
        self.values.nrows()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }
}

pub fn pathwise_posterior_samples(
    model: &GPModel,
    query: &[Vec<f64>],
    count: usize,
    fantasies: &[(Vec<f64>, f64)],
    rng: &mut Rng,
) -> Result<PathSamples> {
    pathwise_posterior_samples_counted(
        model,
        query,
        count,
        fantasies,
        DEFAULT_FEATURES,
        rng,
        &mut OpCounts::default(),
    )
}

/// Posterior paths conditioned on the model's data plus `fantasies`.
///
/// Prior features and weights are drawn before the observation noise, so
/// the prior paths of a batch do not depend on how many fantasies are added.
pub fn pathwise_posterior_samples_counted(
    model: &GPModel,
    query: &[Vec<f64>],
    count: usize,
    fantasies: &[(Vec<f64>, f64)],
    features: usize,
    rng: &mut Rng,
    ops: &mut OpCounts,
) -> Result<PathSamples> {
    if count == 0 || features == 0 {
        return Err(Error::Config(
            "pathwise sampling needs count >= 1 and features >= 1".into(),
        ));
    }
    check_dims(model.hyper(), query)?;
    let model = model.condition(fantasies)?;
    let hyper = model.hyper();
    let rff = RandomFeatures::draw(hyper, features, rng);
    let weights = DMatrix::from_fn(count, features, |_, _| gauss(rng));
    let prior_q = (&weights * rff.features(query)).add_scalar(hyper.mean);
    ops.apply_ops += (count * features * query.len()) as u64;
    let Some(chol) = &model.chol else {
        return Ok(PathSamples { values: prior_q });
    };
    let n = model.len();
    let noise_sd = hyper.noise_variance.sqrt();
    let noise = DMatrix::from_fn(n, count, |_, _| noise_sd * gauss(rng));
    let prior_x = (&weights * rff.features(model.inputs())).add_scalar(hyper.mean);
    let y = DVector::from_column_slice(model.outputs());
    // n x count residuals y - f(X) - e
    let mut resid = -prior_x.transpose() - noise;
    for mut col in resid.column_iter_mut() {
        col += &y;
    }
    let solved = chol.solve(&resid);
    ops.factor_ops += (n * n * n / 3) as u64;
    ops.solve_ops += (2 * n * n * count + count * features * n) as u64;
    let kqx = hyper.cross(query, model.inputs());
    ops.apply_ops += (query.len() * n * count) as u64;
    Ok(PathSamples {
        values: prior_q + (kqx * solved).transpose(),
    })
}

/// Rank-one Matheron update of posterior paths over a fixed pool after a
/// fantasy observation `y_star` at pool index `idx`.
///
/// `cov_col` is the current posterior covariance between the pool and the
/// fantasy location. Each path gets its own observation-noise draw.
pub fn matheron_fantasy_update(
    paths: &mut DMatrix<f64>,
    cov_col: &[f64],
    idx: usize,
    y_star: f64,
    noise_variance: f64,
    noise_draws: &[f64],
    ops: &mut OpCounts,
) {
    let denom = cov_col[idx] + noise_variance;
    ops.solve_ops += 1;
    if denom <= 0.0 {
        return;
    }
    for (s, mut row) in paths.row_iter_mut().enumerate() {
        let coef = (y_star - row[idx] - noise_draws[s]) / denom;
        for (j, v) in row.iter_mut().enumerate() {
            *v += coef * cov_col[j];
        }
    }
    ops.apply_ops += (paths.nrows() * paths.ncols()) as u64;
}
