//! Level-set estimation over a discrete pool: which pool labels exceed a
//! threshold `h`, learned from few queries with a GP surrogate.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{matheron_fantasy_update, pathwise_posterior_samples, GPModel, GpHyper, OpCounts};
use crate::kernels::{KernelSpec, ProbabilityVector, SimilarityMatrix};
use crate::rng::{substream, Rng};
use crate::spectra::{matrix_vendi_entropy, LogBase, VendiOrder};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LsePool {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub threshold: f64,
}

impl LsePool {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<f64>, threshold: f64) -> Result<Self> {
        if points.len() < 2 || points.len() != labels.len() {
            return Err(Error::Shape("pool needs N >= 2 points with one label each".into()));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(Error::Shape("pool points must share a nonzero dimension".into()));
        }
        if !threshold.is_finite() || labels.iter().any(|y| !y.is_finite()) {
            return Err(Error::Numerical("non-finite pool label or threshold".into()));
        }
        Ok(LsePool {
            points,
            labels,
            threshold,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn truth(&self) -> Vec<bool> {
        theta_vector(&self.labels, self.threshold)
    }
}

/// `I[y_i > h]`, strict.
pub fn theta_vector(labels: &[f64], h: f64) -> Vec<bool> {
    labels.iter().map(|&y| y > h).collect()
}

pub fn straddle_score(mu: f64, sigma: f64, h: f64) -> f64 {
    1.96 * sigma - (mu - h).abs()
}

/// Confidence-interval ambiguity.
pub fn gotovos_score(mu: f64, sigma: f64, h: f64, sqrt_beta: f64) -> f64 {
    (mu + sqrt_beta * sigma - h).min(h - (mu - sqrt_beta * sigma))
}

/// Linear-interpolation quantile of `values` (type 7).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("quantile {q} of {} values", values.len())));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Pool CSV: header row, `d` coordinate columns, label in the last column;
/// the threshold is the `threshold_quantile` label quantile.
pub fn load_pool_csv(path: impl AsRef<Path>, threshold_quantile: f64) -> Result<LsePool> {
    parse_pool_csv(&std::fs::read_to_string(path)?, threshold_quantile)
}

pub fn parse_pool_csv(text: &str, threshold_quantile: f64) -> Result<LsePool> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: "header needs coordinate columns and a label column".into(),
        });
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                msg: format!("expected {width} columns, found {}", rec.len()),
            });
        }
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    msg: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        labels.push(vals[width - 1]);
        points.push(vals[..width - 1].to_vec());
    }
    let h = quantile(&labels, threshold_quantile)?;
    LsePool::new(points, labels, h)
}

/// Synthetic pool: Latin-hypercube points in `[0,1]^d`, labels from an exact
/// GP prior draw, threshold at a label quantile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPool {
    pub d: usize,
    #[serde(default)]
    pub size: Option<usize>,
    /// Prior lengthscale; defaults to [`default_lengthscale`].
    #[serde(default)]
    pub lengthscale: Option<f64>,
    #[serde(default = "d_quantile")]
    pub threshold_quantile: f64,
}

/// Default prior lengthscale per dimension, growing with the typical
/// spacing of the default pool so the level set stays learnable.
pub fn default_lengthscale(d: usize) -> f64 {
    match d {
        1 => 0.05,
        2 => 0.15,
        3 => 0.25,
        _ => 0.4,
    }
}

fn d_quantile() -> f64 {
    0.8
}

/// Default pool size per dimension.
pub fn default_pool_size(d: usize) -> usize {
    match d {
        1 => 100,
        2 => 400,
        3 => 1000,
        _ => 2000,
    }
}

pub fn latin_hypercube(n: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    for c in 0..d {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, p) in pts.iter_mut().enumerate() {
            p[c] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

impl SyntheticPool {
    pub fn hyper(&self) -> GpHyper {
        GpHyper::isotropic(1.0, self.lengthscale(), self.d, 1e-6)
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale.unwrap_or_else(|| default_lengthscale(self.d))
    }

    pub fn generate(&self, rng: &mut Rng) -> Result<LsePool> {
        if self.d == 0 || !(self.lengthscale() > 0.0) {
            return Err(Error::Config(
                "synthetic pool needs d >= 1 and a positive lengthscale".into(),
            ));
        }
        let n = self.size.unwrap_or_else(|| default_pool_size(self.d));
        let points = if self.d == 1 {
            let mut p: Vec<Vec<f64>> = latin_hypercube(n, 1, rng);
            p.sort_by(|a, b| a[0].total_cmp(&b[0]));
            p
        } else {
            latin_hypercube(n, self.d, rng)
        };
        let cov = GPModel::prior(self.hyper())?.posterior_covariance(&points)?;
        let chol = crate::gp::JITTER_LADDER
            .iter()
            .skip(1)
            .find_map(|&j| nalgebra::Cholesky::new(&cov + DMatrix::identity(n, n) * j))
            .ok_or_else(|| Error::Numerical("pool covariance not PD".into()))?;
        let z = nalgebra::DVector::from_fn(n, |_, _| {
            let v: f64 = StandardNormal.sample(rng);
            v
        });
        let labels: Vec<f64> = (chol.l() * z).iter().copied().collect();
        let h = quantile(&labels, self.threshold_quantile)?;
        LsePool::new(points, labels, h)
    }
}

/// Binary vectors packed into words for fast Hamming distances.
fn pack(v: &[bool]) -> Vec<u64> {
    v.chunks(64)
        .map(|c| c.iter().enumerate().fold(0u64, |w, (i, &b)| w | (u64::from(b) << i)))
        .collect()
}

/// Vendi entropy (nats) of a uniform multiset of level-set vectors under a
/// Hamming or identity kernel; repeated vectors merge into count weights.
pub fn level_set_entropy(vectors: &[Vec<bool>], spec: &KernelSpec, q: VendiOrder) -> Result<f64> {
    if vectors.is_empty() {
        return Err(Error::Shape("no level-set vectors".into()));
    }
    let len = vectors[0].len();
    let mut packed: Vec<Vec<u64>> = vectors.iter().map(|v| pack(v)).collect();
    packed.sort();
    let mut distinct: Vec<(Vec<u64>, f64)> = Vec::new();
    for p in packed {
        match distinct.last_mut() {
            Some((last, c)) if *last == p => *c += 1.0,
            _ => distinct.push((p, 1.0)),
        }
    }
    let m = distinct.len();
    let k = match spec {
        KernelSpec::Identity => DMatrix::identity(m, m),
        KernelSpec::Hamming => DMatrix::from_fn(m, m, |i, j| {
            let d: u32 = distinct[i]
                .0
                .iter()
                .zip(&distinct[j].0)
                .map(|(a, b)| (a ^ b).count_ones())
                .sum();
            1.0 - d as f64 / len as f64
        }),
        other => {
            return Err(Error::Config(format!(
                "kernel {other:?} does not apply to level-set vectors"
            )))
        }
    };
    let w = ProbabilityVector::normalized(distinct.iter().map(|d| d.1).collect())?;
    matrix_vendi_entropy(&SimilarityMatrix::from_kernel(k), Some(&w), q, LogBase::Natural)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LseFantasy {
    #[serde(default = "d_label_draws")]
    pub label_draws: usize,
    #[serde(default = "d_path_samples")]
    pub path_samples: usize,
}

fn d_label_draws() -> usize {
    8
}

fn d_path_samples() -> usize {
    32
}

impl Default for LseFantasy {
    fn default() -> Self {
        LseFantasy {
            label_draws: d_label_draws(),
            path_samples: d_path_samples(),
        }
    }
}

/// Per-iteration state shared by every candidate: posterior paths over the
/// pool and the pool posterior covariance. A fantasy at a candidate is a
/// rank-one Matheron update of the shared paths.
pub struct FantasyScorer {
    paths: DMatrix<f64>,
    cov: DMatrix<f64>,
    noise_variance: f64,
    threshold: f64,
    fantasy: LseFantasy,
}

impl FantasyScorer {
    pub fn new(model: &GPModel, pool: &LsePool, fantasy: LseFantasy, rng: &mut Rng) -> Result<Self> {
        if fantasy.label_draws == 0 || fantasy.path_samples == 0 {
            return Err(Error::Config("fantasy counts must be positive".into()));
        }
        let paths = pathwise_posterior_samples(model, &pool.points, fantasy.path_samples, &[], rng)?.values;
        Ok(FantasyScorer {
            paths,
            cov: model.posterior_covariance(&pool.points)?,
            noise_variance: model.hyper().noise_variance,
            threshold: pool.threshold,
            fantasy,
        })
    }

    fn thresholded(&self, paths: &DMatrix<f64>) -> Vec<Vec<bool>> {
        paths
            .row_iter()
            .map(|r| r.iter().map(|&v| v > self.threshold).collect())
            .collect()
    }

    pub fn prior_entropy(&self, spec: &KernelSpec, q: VendiOrder) -> Result<f64> {
        level_set_entropy(&self.thresholded(&self.paths), spec, q)
    }

    /// Mean Vendi entropy of the level-set samples after fantasizing labels
    /// at pool index `idx`.
    pub fn conditional_entropy(
        &self,
        idx: usize,
        spec: &KernelSpec,
        q: VendiOrder,
        rng: &mut Rng,
        ops: &mut OpCounts,
    ) -> Result<f64> {
        let s = self.fantasy.path_samples;
        let sd = self.noise_variance.sqrt();
        let col: Vec<f64> = self.cov.column(idx).iter().copied().collect();
        let mut total = 0.0;
        for l in 0..self.fantasy.label_draws {
            let z: f64 = StandardNormal.sample(rng);
            let y = self.paths[(l % s, idx)] + sd * z;
            let noise: Vec<f64> = (0..s)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(rng);
                    sd * e
                })
                .collect();
            let mut cond = self.paths.clone();
            matheron_fantasy_update(&mut cond, &col, idx, y, self.noise_variance, &noise, ops);
            total += level_set_entropy(&self.thresholded(&cond), spec, q)?;
        }
        Ok(total / self.fantasy.label_draws as f64)
    }
}

/// `H_V(D) - mean_i H_V(D_{y_i})` over level-set vectors, in nats.
#[allow(clippy::too_many_arguments)]
pub fn vig_lse_score(
    model: &GPModel,
    pool: &LsePool,
    idx: usize,
    spec: &KernelSpec,
    q: VendiOrder,
    fantasy: LseFantasy,
    rng: &mut Rng,
) -> Result<f64> {
    if idx >= pool.len() {
        return Err(Error::Shape(format!("candidate {idx} outside pool of {}", pool.len())));
    }
    let scorer = FantasyScorer::new(model, pool, fantasy, rng)?;
    Ok(scorer.prior_entropy(spec, q)? - scorer.conditional_entropy(idx, spec, q, rng, &mut OpCounts::default())?)
}

/// Sampled MI: plug-in Shannon entropy over distinct level-set vectors.
pub fn mi_lse_score(model: &GPModel, pool: &LsePool, idx: usize, fantasy: LseFantasy, rng: &mut Rng) -> Result<f64> {
    vig_lse_score(
        model,
        pool,
        idx,
        &KernelSpec::Identity,
        VendiOrder::SHANNON,
        fantasy,
        rng,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LsePolicy {
    Vig {
        #[serde(default)]
        q: VendiOrder,
    },
    Mi,
    Straddle,
    Gotovos {
        #[serde(default = "d_sqrt_beta")]
        sqrt_beta: f64,
    },
    Uncertainty,
    Random,
}

fn d_sqrt_beta() -> f64 {
    1.96
}

impl LsePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            LsePolicy::Vig { .. } => "vig",
            LsePolicy::Mi => "mi",
            LsePolicy::Straddle => "straddle",
            LsePolicy::Gotovos { .. } => "gotovos",
            LsePolicy::Uncertainty => "uncertainty",
            LsePolicy::Random => "random",
        }
    }
}

/// F1 of the "exceeds h" class; both sets empty counts as perfect.
pub fn f1_score(pred: &[bool], truth: &[bool]) -> f64 {
    let tp = pred.iter().zip(truth).filter(|(p, t)| **p && **t).count() as f64;
    let fp = pred.iter().zip(truth).filter(|(p, t)| **p && !**t).count() as f64;
    let fn_ = pred.iter().zip(truth).filter(|(p, t)| !**p && **t).count() as f64;
    if tp + fp + fn_ == 0.0 {
        return 1.0;
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LseSettings {
    pub hyper: GpHyper,
    #[serde(default)]
    pub fantasy: LseFantasy,
    /// Observation noise added to revealed labels.
    #[serde(default)]
    pub observation_noise_sd: f64,
    /// Refit lengthscales every this many queries (never when absent).
    #[serde(default)]
    pub refit_every: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LseRun {
    pub policy: String,
    pub seed: u64,
    /// Pool indices in query order, the random initial point first.
    pub queries: Vec<usize>,
    /// F1 after each query; entry 0 is after the initial point.
    pub f1: Vec<f64>,
    pub final_prediction: Vec<bool>,
}

fn predict(model: &GPModel, pool: &LsePool) -> Result<Vec<bool>> {
    let (mu, _) = model.posterior_moments(&pool.points)?;
    Ok(theta_vector(&mu, pool.threshold))
}

/// Argmax with ties broken uniformly at random.
fn argmax_random_tie(scores: &[(usize, f64)], rng: &mut Rng) -> usize {
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = scores.iter().filter(|s| s.1 == best).map(|s| s.0).collect();
    ties[rng.random_range(0..ties.len())]
}

/// Query loop; `budget` counts the random initial point.
pub fn run_lse(pool: &LsePool, policy: &LsePolicy, budget: usize, settings: &LseSettings, seed: u64) -> Result<LseRun> {
    if budget == 0 || budget > pool.len() {
        return Err(Error::Config(format!("budget {budget} outside 1..={}", pool.len())));
    }
    if settings.hyper.dim() != pool.dim() {
        return Err(Error::Shape("GP dimension differs from pool dimension".into()));
    }
    let truth = pool.truth();
    let observe = |i: usize, it: usize| {
        let mut r = substream(seed, &[1, it as u64]);
        let z: f64 = StandardNormal.sample(&mut r);
        pool.labels[i] + settings.observation_noise_sd * z
    };
    let first = substream(seed, &[0]).random_range(0..pool.len());
    let mut queries = vec![first];
    let mut model = GPModel::fit(
        vec![pool.points[first].clone()],
        vec![observe(first, 0)],
        settings.hyper.clone(),
    )?;
    let mut f1 = vec![f1_score(&predict(&model, pool)?, &truth)];
    for it in 1..budget {
        let open: Vec<usize> = (0..pool.len()).filter(|i| !queries.contains(i)).collect();
        let pick = choose(&model, pool, policy, &open, settings.fantasy, seed, it)?;
        queries.push(pick);
        let y = observe(pick, it);
        model = model.condition(&[(pool.points[pick].clone(), y)])?;
        if settings.refit_every.is_some_and(|k| k > 0 && it % k == 0) {
            model = model.refit_lengthscales(&[0.5, 0.75, 1.25, 1.5, 2.0])?;
        }
        f1.push(f1_score(&predict(&model, pool)?, &truth));
    }
    Ok(LseRun {
        policy: policy.name().to_string(),
        seed,
        queries,
        f1,
        final_prediction: predict(&model, pool)?,
    })
}

fn choose(
    model: &GPModel,
    pool: &LsePool,
    policy: &LsePolicy,
    open: &[usize],
    fantasy: LseFantasy,
    seed: u64,
    it: usize,
) -> Result<usize> {
    let mut tie_rng = substream(seed, &[2, it as u64]);
    let h = pool.threshold;
    let scores: Vec<(usize, f64)> = match policy {
        LsePolicy::Random => return Ok(open[tie_rng.random_range(0..open.len())]),
        LsePolicy::Straddle | LsePolicy::Gotovos { .. } | LsePolicy::Uncertainty => {
            let (mu, sd) = model.posterior_moments(&pool.points)?;
            open.iter()
                .map(|&i| {
                    let s = match policy {
                        LsePolicy::Straddle => straddle_score(mu[i], sd[i], h),
                        LsePolicy::Gotovos { sqrt_beta } => gotovos_score(mu[i], sd[i], h, *sqrt_beta),
                        _ => sd[i],
                    };
                    (i, s)
                })
                .collect()
        }
        LsePolicy::Vig { .. } | LsePolicy::Mi => {
            let (spec, q) = match policy {
                LsePolicy::Vig { q } => (KernelSpec::Hamming, *q),
                _ => (KernelSpec::Identity, VendiOrder::SHANNON),
            };
            let scorer = FantasyScorer::new(model, pool, fantasy, &mut substream(seed, &[3, it as u64]))?;
            let prior = scorer.prior_entropy(&spec, q)?;
            open.par_iter()
                .map(|&i| {
                    let mut r = substream(seed, &[4, it as u64, i as u64]);
                    let c = scorer.conditional_entropy(i, &spec, q, &mut r, &mut OpCounts::default())?;
                    Ok((i, prior - c))
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(argmax_random_tie(&scores, &mut tie_rng))
}

/// Query trace for map-style plots.
#[derive(Clone, Debug, Serialize)]
pub struct QueryTrace<'a> {
    pub points: &'a [Vec<f64>],
    pub labels: &'a [f64],
    pub threshold: f64,
    pub truth: Vec<bool>,
    pub runs: &'a [LseRun],
}
