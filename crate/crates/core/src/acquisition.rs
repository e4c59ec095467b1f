//! Active data acquisition over an explicit posterior for `theta`: the
//! select, observe, update loop with VIG, MI and random policies, and the
//! step-function, death-process and location-sensing tasks.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::estimators::knn_entropy;
use crate::kernels::{build_similarity_matrix, KernelSpec, Points, ProbabilityVector};
use crate::rng::{substream, Rng};
use crate::spectra::{matrix_vendi_entropy, shannon_entropy, LogBase, VendiOrder};

/// How the posterior over `theta` is stored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Fixed 1-d grid with the given spacing; never resampled.
    Grid { step: f64 },
    /// Weighted particles; resampled and rejuvenated when the ESS halves.
    Particles,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticlePosterior {
    particles: Vec<Vec<f64>>,
    weights: Vec<f64>,
    repr: Representation,
    history: Vec<(Vec<f64>, f64)>,
}

impl ParticlePosterior {
    pub fn new(particles: Vec<Vec<f64>>, weights: Vec<f64>, repr: Representation) -> Result<Self> {
        if particles.is_empty() || particles.len() != weights.len() {
            return Err(Error::Shape("particle and weight counts differ or are zero".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Probability("negative particle weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Probability("particle weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(ParticlePosterior {
            particles,
            weights,
            repr,
            history: Vec::new(),
        })
    }

    pub fn particles(&self) -> &[Vec<f64>] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn representation(&self) -> Representation {
        self.repr
    }

    pub fn history(&self) -> &[(Vec<f64>, f64)] {
        &self.history
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.particles[0].len();
        let mut m = vec![0.0; d];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += w * pi;
            }
        }
        m
    }

    /// `n` uniform-weight draws by systematic resampling.
    pub fn resample(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        systematic_indices(&self.weights, n, rng)
            .into_iter()
            .map(|i| self.particles[i].clone())
            .collect()
    }
}

pub fn systematic_indices(weights: &[f64], n: usize, rng: &mut Rng) -> Vec<usize> {
    let u0 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for j in 0..n {
        let u = u0 + j as f64 / n as f64;
        while u > cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

fn normalize_log_weights(prev: &[f64], loglik: &[f64]) -> Result<Vec<f64>> {
    let max = prev
        .iter()
        .zip(loglik)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::DegenerateEvidence);
    }
    let mut w: Vec<f64> = prev.iter().zip(loglik).map(|(w, l)| w * (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateEvidence);
    }
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Task configuration; unstated constants default to desk-scale values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Step {
        #[serde(default = "d_grid")]
        grid_points: usize,
        #[serde(default = "d_step_candidates")]
        candidates: usize,
        #[serde(default = "d_components")]
        components: usize,
    },
    Death {
        #[serde(default = "d_grid")]
        grid_points: usize,
        #[serde(default = "d_pop")]
        population: u64,
        #[serde(default = "d_death_candidates")]
        candidates: usize,
        #[serde(default = "d_theta_max")]
        theta_max: f64,
        #[serde(default)]
        particles: Option<usize>,
    },
    Location {
        #[serde(default = "d_particles")]
        particles: usize,
        #[serde(default = "d_side")]
        grid_side: usize,
        #[serde(default = "d_background")]
        background: f64,
        #[serde(default = "d_alpha")]
        alpha: f64,
        #[serde(default = "d_m")]
        m: f64,
        #[serde(default = "d_noise")]
        noise_sd: f64,
    },
}

fn d_grid() -> usize {
    1001
}
fn d_step_candidates() -> usize {
    101
}
fn d_components() -> usize {
    3
}
fn d_pop() -> u64 {
    50
}
fn d_death_candidates() -> usize {
    100
}
fn d_theta_max() -> f64 {
    10.0
}
fn d_particles() -> usize {
    4096
}
fn d_side() -> usize {
    10
}
fn d_background() -> f64 {
    0.1
}
fn d_alpha() -> f64 {
    1.0
}
fn d_m() -> f64 {
    1e-4
}
fn d_noise() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq)]
enum Model {
    Step {
        mixture: Vec<(f64, f64)>,
    },
    Death {
        population: u64,
        theta_max: f64,
    },
    Location {
        background: f64,
        alpha: f64,
        m: f64,
        noise_sd: f64,
    },
}

/// Prior, likelihood, simulator, candidate set and error metric for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionTask {
    model: Model,
    candidates: Vec<Vec<f64>>,
    initial: ParticlePosterior,
    /// Random-walk scale for rejuvenation and kNN de-duplication jitter.
    move_scale: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Step { .. } => "step",
            TaskConfig::Death { .. } => "death",
            TaskConfig::Location { .. } => "location",
        }
    }

    /// Default similarity over `theta` for the VIG policy.
    pub fn default_kernel(&self) -> KernelSpec {
        match self {
            TaskConfig::Step { .. } => KernelSpec::gaussian(0.1),
            TaskConfig::Death { .. } => KernelSpec::gaussian(1.0),
            TaskConfig::Location { .. } => KernelSpec::gaussian(0.2),
        }
    }

    /// Instantiate; randomized prior parameters are drawn from `rng`.
    pub fn build(&self, rng: &mut Rng) -> Result<AcquisitionTask> {
        match *self {
            TaskConfig::Step {
                grid_points,
                candidates,
                components,
            } => {
                if grid_points < 2 || candidates == 0 || components == 0 {
                    return Err(Error::Config(
                        "step task needs grid >= 2, candidates and components".into(),
                    ));
                }
                let mixture: Vec<(f64, f64)> = (0..components)
                    .map(|_| (rng.random_range(1.0..10.0), rng.random_range(1.0..10.0)))
                    .collect();
                let grid = linspace(0.0, 1.0, grid_points);
                let model = Model::Step { mixture };
                let w: Vec<f64> = grid.iter().map(|&t| model.log_prior(&[t]).exp()).collect();
                let initial = ParticlePosterior::new(
                    grid.iter().map(|&t| vec![t]).collect(),
                    w,
                    Representation::Grid {
                        step: 1.0 / (grid_points - 1) as f64,
                    },
                )?;
                Ok(AcquisitionTask {
                    model,
                    candidates: linspace(0.0, 1.0, candidates).into_iter().map(|x| vec![x]).collect(),
                    initial,
                    move_scale: 0.02,
                })
            }
            TaskConfig::Death {
                grid_points,
                population,
                candidates,
                theta_max,
                particles,
            } => {
                if grid_points < 2 || candidates == 0 || population == 0 || !(theta_max > 0.0) {
                    return Err(Error::Config(
                        "death task needs grid >= 2, candidates, population and theta_max > 0".into(),
                    ));
                }
                let model = Model::Death { population, theta_max };
                let initial = match particles {
                    None => {
                        let step = theta_max / grid_points as f64;
                        let grid: Vec<Vec<f64>> = (1..=grid_points).map(|i| vec![i as f64 * step]).collect();
                        ParticlePosterior::new(grid, vec![1.0; grid_points], Representation::Grid { step })?
                    }
                    Some(n) => {
                        let pts: Vec<Vec<f64>> =
                            (0..n).map(|_| vec![theta_max * (1.0 - rng.random::<f64>())]).collect();
                        ParticlePosterior::new(pts, vec![1.0; n], Representation::Particles)?
                    }
                };
                Ok(AcquisitionTask {
                    model,
                    candidates: linspace(0.05, 5.0, candidates).into_iter().map(|x| vec![x]).collect(),
                    initial,
                    move_scale: 0.1,
                })
            }
            TaskConfig::Location {
                particles,
                grid_side,
                background,
                alpha,
                m,
                noise_sd,
            } => {
                if particles == 0 || grid_side == 0 || !(noise_sd > 0.0) || !(m > 0.0) || background < 0.0 {
                    return Err(Error::Config("location task parameters out of range".into()));
                }
                let pts: Vec<Vec<f64>> = (0..particles)
                    .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
                    .collect();
                let side: Vec<f64> = (0..grid_side).map(|i| (i as f64 + 0.5) / grid_side as f64).collect();
                let candidates = side
                    .iter()
                    .flat_map(|&a| side.iter().map(move |&b| vec![a, b]))
                    .collect();
                Ok(AcquisitionTask {
                    model: Model::Location {
                        background,
                        alpha,
                        m,
                        noise_sd,
                    },
                    candidates,
                    initial: ParticlePosterior::new(pts, vec![1.0; particles], Representation::Particles)?,
                    move_scale: 0.05,
                })
            }
        }
    }
}

impl Model {
    fn log_prior(&self, t: &[f64]) -> f64 {
        match self {
            Model::Step { mixture } => {
                if !(0.0..=1.0).contains(&t[0]) {
                    return f64::NEG_INFINITY;
                }
                let dens: f64 = mixture
                    .iter()
                    .map(|&(a, b)| Beta::new(a, b).expect("beta parameters in [1, 10]").pdf(t[0]))
                    .sum::<f64>()
                    / mixture.len() as f64;
                dens.ln()
            }
            Model::Death { theta_max, .. } => {
                if t[0] > 0.0 && t[0] <= *theta_max {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Model::Location { .. } => {
                if t.iter().all(|v| (0.0..=1.0).contains(v)) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn log_likelihood(&self, t: &[f64], x: &[f64], y: f64) -> f64 {
        match *self {
            Model::Step { .. } => {
                if (x[0] >= t[0]) == (y > 0.5) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Model::Death { population, .. } => {
                let rate = t[0] * x[0];
                let k = y as u64;
                let ln_p = (-(-rate).exp_m1()).ln();
                ln_binomial(population, k) + y * ln_p - (population as f64 - y) * rate
            }
            Model::Location { noise_sd, .. } => {
                let z = (y - self.log_intensity(t, x)) / noise_sd;
                -0.5 * z * z
            }
        }
    }

    fn log_intensity(&self, t: &[f64], x: &[f64]) -> f64 {
        let Model::Location {
            background, alpha, m, ..
        } = *self
        else {
            unreachable!()
        };
        let mut total = background;
        for s in t.chunks(2) {
            let d2 = (x[0] - s[0]).powi(2) + (x[1] - s[1]).powi(2);
            total += alpha / (m + d2);
        }
        total.ln()
    }

    fn simulate(&self, t: &[f64], x: &[f64], rng: &mut Rng) -> f64 {
        match *self {
            Model::Step { .. } => f64::from(u8::from(x[0] >= t[0])),
            Model::Death { population, .. } => {
                let p = -(-t[0] * x[0]).exp_m1();
                (0..population).filter(|_| rng.random::<f64>() < p).count() as f64
            }
            Model::Location { noise_sd, .. } => {
                self.log_intensity(t, x) + Normal::new(0.0, noise_sd).expect("positive sd").sample(rng)
            }
        }
    }

    fn sample_truth(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Model::Step { mixture } => {
                let &(a, b) = mixture.choose(rng).expect("nonempty mixture");
                vec![rand_distr::Beta::new(a, b).expect("valid beta").sample(rng)]
            }
            Model::Death { theta_max, .. } => vec![theta_max * (1.0 - rng.random::<f64>())],
            Model::Location { .. } => (0..4).map(|_| rng.random::<f64>()).collect(),
        }
    }

    fn error(&self, map: &[f64], truth: &[f64]) -> f64 {
        match self {
            Model::Location { .. } => {
                let dist = |a: &[f64], b: &[f64]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                let same = dist(&map[..2], &truth[..2]) + dist(&map[2..], &truth[2..]);
                let swap = dist(&map[..2], &truth[2..]) + dist(&map[2..], &truth[..2]);
                same.min(swap)
            }
            _ => (map[0] - truth[0]).abs(),
        }
    }
}

impl AcquisitionTask {
    pub fn candidates(&self) -> &[Vec<f64>] {
        &self.candidates
    }

    pub fn initial_posterior(&self) -> &ParticlePosterior {
        &self.initial
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        self.model.log_prior(theta)
    }

    pub fn log_likelihood(&self, theta: &[f64], x: &[f64], y: f64) -> f64 {
        self.model.log_likelihood(theta, x, y)
    }

    pub fn simulate(&self, theta: &[f64], x: &[f64], rng: &mut Rng) -> f64 {
        self.model.simulate(theta, x, rng)
    }

    pub fn sample_truth(&self, rng: &mut Rng) -> Vec<f64> {
        self.model.sample_truth(rng)
    }

    pub fn error(&self, map: &[f64], truth: &[f64]) -> f64 {
        self.model.error(map, truth)
    }

    fn conditional_weights(&self, p: &ParticlePosterior, x: &[f64], y: f64) -> Result<Vec<f64>> {
        let ll: Vec<f64> = p.particles.iter().map(|t| self.log_likelihood(t, x, y)).collect();
        normalize_log_weights(&p.weights, &ll)
    }

    fn log_posterior(&self, t: &[f64], history: &[(Vec<f64>, f64)]) -> f64 {
        let lp = self.log_prior(t);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + history.iter().map(|(x, y)| self.log_likelihood(t, x, *y)).sum::<f64>()
    }

    /// MAP estimate. Grids take the argmax of the weights smoothed with a
    /// gaussian of one grid step; particles take the highest log-posterior
    /// particle.
    pub fn map_estimate(&self, p: &ParticlePosterior) -> Vec<f64> {
        match p.repr {
            Representation::Grid { .. } => {
                let w = &p.weights;
                let n = w.len();
                let kern: Vec<f64> = (0..=5).map(|j| (-0.5 * (j * j) as f64).exp()).collect();
                let best = (0..n)
                    .map(|i| {
                        let lo = i.saturating_sub(5);
                        let hi = (i + 5).min(n - 1);
                        (lo..=hi).map(|j| w[j] * kern[i.abs_diff(j)]).sum::<f64>()
                    })
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (i, s)| if s > acc.1 { (i, s) } else { acc },
                    );
                p.particles[best.0].clone()
            }
            Representation::Particles => {
                let mut best = (0, f64::NEG_INFINITY);
                for (i, t) in p.particles.iter().enumerate() {
                    if p.weights[i] > 0.0 {
                        let lp = self.log_posterior(t, &p.history);
                        if lp > best.1 {
                            best = (i, lp);
                        }
                    }
                }
                p.particles[best.0].clone()
            }
        }
    }
}

/// Bayes update with systematic resampling and a random-walk Metropolis move
/// for particle posteriors once the ESS drops below half the particle count.
pub fn posterior_update(
    p: &ParticlePosterior,
    task: &AcquisitionTask,
    x: &[f64],
    y: f64,
    rng: &mut Rng,
) -> Result<ParticlePosterior> {
    let weights = task.conditional_weights(p, x, y)?;
    let mut history = p.history.clone();
    history.push((x.to_vec(), y));
    let mut next = ParticlePosterior {
        particles: p.particles.clone(),
        weights,
        repr: p.repr,
        history,
    };
    if next.repr == Representation::Particles && next.ess() < next.len() as f64 / 2.0 {
        let n = next.len();
        let mut particles = next.resample(n, rng);
        let step = Normal::new(0.0, task.move_scale).expect("positive move scale");
        for _ in 0..2 {
            for t in particles.iter_mut() {
                let cur = task.log_posterior(t, &next.history);
                let prop: Vec<f64> = t.iter().map(|v| v + step.sample(rng)).collect();
                let new = task.log_posterior(&prop, &next.history);
                if new - cur >= rng.random::<f64>().ln() {
                    *t = prop;
                }
            }
        }
        next.particles = particles;
        next.weights = vec![1.0 / n as f64; n];
    }
    Ok(next)
}

/// Entropy estimator behind the MI policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiEntropy {
    /// Exact Shannon entropy of the grid weights.
    GridExact,
    /// k-NN differential entropy (k = 3) of jittered resampled particles.
    Knn,
    /// Plug-in entropy of the resampled particle multiset.
    PlugIn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Policy {
    Vig {
        #[serde(default)]
        kernel: Option<KernelSpec>,
        #[serde(default)]
        q: VendiOrder,
    },
    Mi {
        #[serde(default)]
        entropy: Option<MiEntropy>,
    },
    Random,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Vig { .. } => "vig",
            Policy::Mi { .. } => "mi",
            Policy::Random => "random",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FantasyBudget {
    #[serde(default = "d_labels")]
    pub label_draws: usize,
    #[serde(default = "d_thetas")]
    pub theta_samples: usize,
}

fn d_labels() -> usize {
    16
}
fn d_thetas() -> usize {
    64
}

impl Default for FantasyBudget {
    fn default() -> Self {
        FantasyBudget {
            label_draws: d_labels(),
            theta_samples: d_thetas(),
        }
    }
}

/// Vendi entropy of a uniform multiset. Repeated points are merged into
/// count weights, which leaves the nonzero spectrum unchanged.
fn sample_set_entropy(pts: Vec<Vec<f64>>, spec: &KernelSpec, q: VendiOrder) -> Result<f64> {
    let n = pts.len() as f64;
    let mut distinct: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut sorted = pts;
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for p in sorted {
        match distinct.last_mut() {
            Some((last, c)) if *last == p => *c += 1.0,
            _ => distinct.push((p, 1.0)),
        }
    }
    let (points, counts): (Vec<Vec<f64>>, Vec<f64>) = distinct.into_iter().unzip();
    let k = build_similarity_matrix(&Points::Real(points), spec)?;
    let w = ProbabilityVector::normalized(counts.into_iter().map(|c| c / n).collect())?;
    matrix_vendi_entropy(&k, Some(&w), q, LogBase::Natural)
}

/// Mean of `entropy` over fantasized posteriors at `x`: draw
/// `theta ~ p`, `y ~ p(y | x, theta)`, condition on `y`. Each distinct
/// fantasy label is conditioned and scored once and weighted by its count.
fn mean_fantasy_entropy(
    p: &ParticlePosterior,
    task: &AcquisitionTask,
    x: &[f64],
    draws: usize,
    rng: &mut Rng,
    mut entropy: impl FnMut(&ParticlePosterior, &mut Rng) -> Result<f64>,
) -> Result<f64> {
    let idx = systematic_indices(&p.weights, draws, rng);
    let ys: Vec<f64> = idx
        .into_iter()
        .map(|i| task.simulate(&p.particles[i], x, rng))
        .collect();
    let mut seen: Vec<(u64, f64)> = Vec::new();
    let mut total = 0.0;
    for y in ys {
        let h = match seen.iter().find(|(bits, _)| *bits == y.to_bits()) {
            Some(&(_, h)) => h,
            None => {
                let w = task.conditional_weights(p, x, y)?;
                let f = ParticlePosterior {
                    particles: p.particles.clone(),
                    weights: w,
                    repr: p.repr,
                    history: Vec::new(),
                };
                let h = entropy(&f, rng)?;
                seen.push((y.to_bits(), h));
                h
            }
        };
        total += h;
    }
    Ok(total / draws as f64)
}

/// `H_V(D) - mean_i H_V(D_{y_i})` in nats over uniform resampled sets.
/// `prior_set` is the resampled prior `D`; pass the same set to every
/// candidate of an iteration.
#[allow(clippy::too_many_arguments)]
pub fn vig_policy_score(
    p: &ParticlePosterior,
    prior_set: &[Vec<f64>],
    task: &AcquisitionTask,
    x: &[f64],
    spec: &KernelSpec,
    q: VendiOrder,
    budget: FantasyBudget,
    rng: &mut Rng,
) -> Result<f64> {
    check_budget(budget)?;
    let prior = sample_set_entropy(prior_set.to_vec(), spec, q)?;
    let post = mean_fantasy_entropy(p, task, x, budget.label_draws, rng, |f, r| {
        sample_set_entropy(f.resample(budget.theta_samples, r), spec, q)
    })?;
    Ok(prior - post)
}

fn check_budget(b: FantasyBudget) -> Result<()> {
    if b.label_draws == 0 || b.theta_samples == 0 {
        return Err(Error::Config("fantasy draw counts must be positive".into()));
    }
    Ok(())
}

fn mi_entropy(p: &ParticlePosterior, mode: MiEntropy, n: usize, jitter: f64, rng: &mut Rng) -> Result<f64> {
    match mode {
        MiEntropy::GridExact => Ok(shannon_entropy(&p.weights, LogBase::Natural)),
        MiEntropy::PlugIn => {
            let set = p.resample(n, rng);
            sample_set_entropy(set, &KernelSpec::Identity, VendiOrder::SHANNON)
        }
        MiEntropy::Knn => {
            let noise = Normal::new(0.0, jitter).expect("positive jitter");
            let set: Vec<Vec<f64>> = p
                .resample(n, rng)
                .into_iter()
                .map(|t| t.into_iter().map(|v| v + noise.sample(rng)).collect())
                .collect();
            knn_entropy(&set, 3)
        }
    }
}

pub fn default_mi_entropy(p: &ParticlePosterior) -> MiEntropy {
    match p.repr {
        Representation::Grid { .. } => MiEntropy::GridExact,
        Representation::Particles => MiEntropy::Knn,
    }
}

/// `H(theta) - mean_i H(theta | x, y_i)` in nats.
pub fn mi_policy_score(
    p: &ParticlePosterior,
    task: &AcquisitionTask,
    x: &[f64],
    mode: MiEntropy,
    budget: FantasyBudget,
    rng: &mut Rng,
) -> Result<f64> {
    check_budget(budget)?;
    let prior = mi_entropy(p, mode, budget.theta_samples, task.move_scale, rng)?;
    let post = mean_fantasy_entropy(p, task, x, budget.label_draws, rng, |f, r| {
        mi_entropy(f, mode, budget.theta_samples, task.move_scale, r)
    })?;
    Ok(prior - post)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub map: Vec<f64>,
    pub error: f64,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub task: String,
    pub policy: String,
    pub seed: u64,
    pub truth: Vec<f64>,
    pub prior_map: Vec<f64>,
    pub prior_error: f64,
    pub steps: Vec<StepRecord>,
}

impl RunRecord {
    pub fn final_error(&self) -> f64 {
        self.steps.last().map_or(self.prior_error, |s| s.error)
    }

    /// Error after each iteration, starting with the prior error.
    pub fn error_curve(&self) -> Vec<f64> {
        std::iter::once(self.prior_error)
            .chain(self.steps.iter().map(|s| s.error))
            .collect()
    }
}

/// Runs `budget` select, observe, update iterations. The task instance, the
/// hidden `theta` and the observation noise depend only on `seed`, so
/// different policies with the same seed face the same problem.
pub fn run_acquisition(
    cfg: &TaskConfig,
    policy: &Policy,
    budget: usize,
    fantasy: FantasyBudget,
    seed: u64,
) -> Result<RunRecord> {
    let task = cfg.build(&mut substream(seed, &[0]))?;
    let truth = task.sample_truth(&mut substream(seed, &[1]));
    let mut post = task.initial.clone();
    let prior_map = task.map_estimate(&post);
    let prior_error = task.error(&prior_map, &truth);
    let mut steps = Vec::with_capacity(budget);
    for it in 0..budget {
        let (choice, scores) = select(&task, cfg, policy, &post, fantasy, seed, it)?;
        let x = task.candidates[choice].clone();
        let y = task.simulate(&truth, &x, &mut substream(seed, &[2, it as u64]));
        post = posterior_update(&post, &task, &x, y, &mut substream(seed, &[3, it as u64]))?;
        let map = task.map_estimate(&post);
        let error = task.error(&map, &truth);
        steps.push(StepRecord {
            iteration: it + 1,
            x,
            y,
            map,
            error,
            scores,
        });
    }
    Ok(RunRecord {
        task: cfg.name().to_string(),
        policy: policy.name().to_string(),
        seed,
        truth,
        prior_map,
        prior_error,
        steps,
    })
}

fn select(
    task: &AcquisitionTask,
    cfg: &TaskConfig,
    policy: &Policy,
    post: &ParticlePosterior,
    fantasy: FantasyBudget,
    seed: u64,
    it: usize,
) -> Result<(usize, Vec<f64>)> {
    let key = |c: usize| substream(seed, &[4, it as u64, c as u64]);
    let scores: Vec<f64> = match policy {
        Policy::Random => {
            return Ok((key(usize::MAX).random_range(0..task.candidates.len()), Vec::new()));
        }
        Policy::Vig { kernel, q } => {
            let spec = kernel.clone().unwrap_or_else(|| cfg.default_kernel());
            let prior_set = post.resample(fantasy.theta_samples, &mut key(usize::MAX));
            task.candidates
                .par_iter()
                .enumerate()
                .map(|(c, x)| vig_policy_score(post, &prior_set, task, x, &spec, *q, fantasy, &mut key(c)))
                .collect::<Result<_>>()?
        }
        Policy::Mi { entropy } => {
            let mode = entropy.unwrap_or_else(|| default_mi_entropy(post));
            task.candidates
                .par_iter()
                .enumerate()
                .map(|(c, x)| mi_policy_score(post, task, x, mode, fantasy, &mut key(c)))
                .collect::<Result<_>>()?
        }
    };
    let best = scores.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc },
    );
    Ok((best.0, scores))
}
