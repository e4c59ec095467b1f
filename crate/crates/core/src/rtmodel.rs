//! Response times of a Bayesian decoder that reads Poisson spike counts and
//! stops once the realized information gain about the message crosses a
//! threshold.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{ProbabilityVector, SimilarityMatrix};
use crate::rng::{substream, Rng};
use crate::spectra::{matrix_vendi_entropy, shannon_entropy, LogBase, VendiOrder};

/// Message `m` drives channel `m` at `high_rate`; every other channel fires
/// at `low_rate`. Messages 0 and 1 have similarity `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageModel {
    #[serde(default = "d_messages")]
    pub messages: usize,
    #[serde(default = "d_high")]
    pub high_rate: f64,
    #[serde(default = "d_low")]
    pub low_rate: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_cap")]
    pub time_cap: f64,
    #[serde(default)]
    pub s: f64,
}

fn d_messages() -> usize {
    3
}
fn d_high() -> f64 {
    20.0
}
fn d_low() -> f64 {
    5.0
}
fn d_dt() -> f64 {
    0.01
}
fn d_cap() -> f64 {
    10.0
}

impl Default for MessageModel {
    fn default() -> Self {
        MessageModel {
            messages: 3,
            high_rate: 20.0,
            low_rate: 5.0,
            dt: 0.01,
            time_cap: 10.0,
            s: 0.0,
        }
    }
}

impl MessageModel {
    pub fn with_similarity(&self, s: f64) -> Self {
        MessageModel { s, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.messages < 2 {
            return Err(Error::Config("need at least 2 messages".into()));
        }
        if !(self.high_rate > 0.0 && self.low_rate > 0.0) {
            return Err(Error::Config("rates must be positive".into()));
        }
        if !(self.dt > 0.0 && self.time_cap >= self.dt) {
            return Err(Error::Config("need dt > 0 and time_cap >= dt".into()));
        }
        if !(0.0..1.0).contains(&self.s) {
            return Err(Error::Config(format!("similarity s = {} outside [0, 1)", self.s)));
        }
        Ok(())
    }

    pub fn rate(&self, message: usize, channel: usize) -> f64 {
        if message == channel {
            self.high_rate
        } else {
            self.low_rate
        }
    }

    /// `K_s`: identity with `s` between messages 0 and 1.
    pub fn kernel(&self) -> SimilarityMatrix {
        let mut k = DMatrix::identity(self.messages, self.messages);
        k[(0, 1)] = self.s;
        k[(1, 0)] = self.s;
        SimilarityMatrix::from_kernel(k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodingState {
    pub t: f64,
    pub posterior: Vec<f64>,
    pub counts: Vec<u64>,
}

impl DecodingState {
    pub fn initial(model: &MessageModel) -> Self {
        let n = model.messages;
        DecodingState {
            t: 0.0,
            posterior: vec![1.0 / n as f64; n],
            counts: vec![0; n],
        }
    }
}

/// One time step: Poisson counts under `truth`, Bayes update over messages.
pub fn step(state: &DecodingState, model: &MessageModel, truth: usize, rng: &mut Rng) -> DecodingState {
    let n = model.messages;
    let counts: Vec<u64> = (0..n)
        .map(|c| {
            let lambda = model.rate(truth, c) * model.dt;
            Poisson::new(lambda).expect("positive rate").sample(rng) as u64
        })
        .collect();
    update(state, model, &counts)
}

/// Bayes update for observed per-channel counts over one step.
pub fn update(state: &DecodingState, model: &MessageModel, counts: &[u64]) -> DecodingState {
    let n = model.messages;
    let loglik: Vec<f64> = (0..n)
        .map(|m| {
            counts
                .iter()
                .enumerate()
                .map(|(c, &k)| {
                    let lambda = model.rate(m, c) * model.dt;
                    k as f64 * lambda.ln() - lambda
                })
                .sum()
        })
        .collect();
    let max = loglik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut post: Vec<f64> = state
        .posterior
        .iter()
        .zip(&loglik)
        .map(|(p, l)| p * (l - max).exp())
        .collect();
    let z: f64 = post.iter().sum();
    post.iter_mut().for_each(|p| *p /= z);
    DecodingState {
        t: state.t + model.dt,
        posterior: post,
        counts: state.counts.iter().zip(counts).map(|(a, b)| a + b).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Mi,
    Vig,
}

impl Measure {
    pub fn name(&self) -> &'static str {
        match self {
            Measure::Mi => "mi",
            Measure::Vig => "vig",
        }
    }
}

fn entropy_of(posterior: &[f64], model: &MessageModel, measure: Measure, q: VendiOrder, base: LogBase) -> Result<f64> {
    match measure {
        Measure::Mi => Ok(shannon_entropy(posterior, base)),
        Measure::Vig => {
            let p = ProbabilityVector::normalized(posterior.to_vec())?;
            matrix_vendi_entropy(&model.kernel(), Some(&p), q, base)
        }
    }
}

/// Entropy of the uniform prior in the measure's own units.
pub fn prior_entropy(model: &MessageModel, measure: Measure, q: VendiOrder, base: LogBase) -> Result<f64> {
    entropy_of(&DecodingState::initial(model).posterior, model, measure, q, base)
}

/// Prior entropy minus posterior entropy, Shannon for MI and weighted Vendi
/// under `K_s` for VIG.
pub fn realized_ig(
    state: &DecodingState,
    model: &MessageModel,
    measure: Measure,
    q: VendiOrder,
    base: LogBase,
) -> Result<f64> {
    Ok(prior_entropy(model, measure, q, base)? - entropy_of(&state.posterior, model, measure, q, base)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Fraction of the active measure's prior entropy at `s = 0`, shared by
    /// every similarity condition.
    Relative(f64),
    Absolute(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Relative(0.6)
    }
}

impl Threshold {
    pub fn resolve(&self, model: &MessageModel, measure: Measure, q: VendiOrder, base: LogBase) -> Result<f64> {
        let prior = prior_entropy(model, measure, q, base)?;
        let h = match *self {
            Threshold::Relative(f) => f * prior_entropy(&model.with_similarity(0.0), measure, q, base)?,
            Threshold::Absolute(h) => h,
        };
        if !(h >= 0.0 && h < prior) {
            return Err(Error::Config(format!(
                "threshold {h} outside [0, prior entropy {prior})"
            )));
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RtOutcome {
    pub rt: f64,
    pub map: usize,
    pub timed_out: bool,
}

/// Steps until the realized gain exceeds `h` or the time cap is reached.
pub fn simulate_rt(
    model: &MessageModel,
    truth: usize,
    h: f64,
    measure: Measure,
    q: VendiOrder,
    base: LogBase,
    rng: &mut Rng,
) -> Result<RtOutcome> {
    let mut state = DecodingState::initial(model);
    let max_steps = (model.time_cap / model.dt).round() as usize;
    for _ in 0..max_steps {
        state = step(&state, model, truth, rng);
        if realized_ig(&state, model, measure, q, base)? > h {
            return Ok(RtOutcome {
                rt: state.t,
                map: argmax(&state.posterior),
                timed_out: false,
            });
        }
    }
    Ok(RtOutcome {
        rt: state.t,
        map: argmax(&state.posterior),
        timed_out: true,
    })
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, &x)| if x > a.1 { (i, x) } else { a })
        .0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RtConfig {
    #[serde(default)]
    pub model: MessageModel,
    pub similarities: Vec<f64>,
    pub repeats: usize,
    pub measures: Vec<Measure>,
    #[serde(default)]
    pub threshold: Threshold,
    #[serde(default)]
    pub q: VendiOrder,
    #[serde(default = "d_base")]
    pub base: LogBase,
}

fn d_base() -> LogBase {
    LogBase::Two
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RtRow {
    pub measure: String,
    pub s: f64,
    pub repeat: usize,
    pub rt_seconds: f64,
    pub correct_map: bool,
    pub timed_out: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RtSummary {
    pub measure: String,
    pub s: f64,
    pub threshold: f64,
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
    pub accuracy: f64,
    pub timeouts: usize,
}

/// RT samples per (s, measure). The true message and the spike trains of
/// repeat `r` depend only on `(seed, r)`, so they are shared across `s` and
/// measures.
pub fn rt_experiment(cfg: &RtConfig, seed: u64) -> Result<(Vec<RtRow>, Vec<RtSummary>)> {
    if cfg.repeats == 0 || cfg.similarities.is_empty() || cfg.measures.is_empty() {
        return Err(Error::Config(
            "rt experiment needs repeats, similarities and measures".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &measure in &cfg.measures {
        for &s in &cfg.similarities {
            let model = cfg.model.with_similarity(s);
            model.validate()?;
            let h = cfg.threshold.resolve(&model, measure, cfg.q, cfg.base)?;
            let outs: Vec<(usize, RtOutcome)> = (0..cfg.repeats)
                .into_par_iter()
                .map(|r| {
                    let mut rng = substream(seed, &[r as u64]);
                    let truth = rng.random_range(0..model.messages);
                    Ok((
                        truth,
                        simulate_rt(&model, truth, h, measure, cfg.q, cfg.base, &mut rng)?,
                    ))
                })
                .collect::<Result<_>>()?;
            let mut rts: Vec<f64> = outs.iter().map(|o| o.1.rt).collect();
            rts.sort_by(|a, b| a.total_cmp(b));
            let q = |p: f64| crate::lse::quantile(&rts, p).expect("nonempty");
            summary.push(RtSummary {
                measure: measure.name().into(),
                s,
                threshold: h,
                q10: q(0.1),
                median: q(0.5),
                q90: q(0.9),
                accuracy: outs.iter().filter(|(t, o)| *t == o.map).count() as f64 / cfg.repeats as f64,
                timeouts: outs.iter().filter(|o| o.1.timed_out).count(),
            });
            rows.extend(outs.into_iter().enumerate().map(|(r, (truth, o))| RtRow {
                measure: measure.name().into(),
                s,
                repeat: r,
                rt_seconds: o.rt,
                correct_map: truth == o.map,
                timed_out: o.timed_out,
            }));
        }
    }
    Ok((rows, summary))
}
