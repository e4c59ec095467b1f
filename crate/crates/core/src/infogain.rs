//! Vendi information gain (VIG) and Shannon mutual information over
//! discrete channels and weighted sample sets.
//!
//! VIG is the prior Vendi entropy of the variable of interest minus the
//! expected Vendi entropy of its posterior. With the identity kernel and
//! `q = 1` it coincides with mutual information.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::{build_similarity_matrix, sq_dist, KernelSpec, Points, ProbabilityVector};
use crate::spectra::{matrix_vendi_entropy, shannon_entropy, LogBase, VendiOrder};

const ROW_TOL: f64 = 1e-12;

/// Finite-alphabet channel `P(y = j | theta = i)`.
#[derive(Clone, Debug)]
pub struct DiscreteChannel {
    input_values: Points,
    input_prior: ProbabilityVector,
    transition: DMatrix<f64>,
}

impl DiscreteChannel {
    pub fn new(input_values: Points, input_prior: ProbabilityVector, transition: DMatrix<f64>) -> Result<Self> {
        let n = input_values.len();
        if input_prior.len() != n || transition.nrows() != n {
            return Err(Error::Shape(format!(
                "{n} inputs, {} prior weights, {} transition rows",
                input_prior.len(),
                transition.nrows()
            )));
        }
        if transition.ncols() == 0 {
            return Err(Error::Shape("channel has no outputs".into()));
        }
        for (i, row) in transition.row_iter().enumerate() {
            if row.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::Probability(format!("negative transition entry in row {i}")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::Probability(format!("transition row {i} sums to {s}")));
            }
        }
        Ok(DiscreteChannel {
            input_values,
            input_prior,
            transition,
        })
    }

    /// Channel with a uniform input prior.
    pub fn uniform(input_values: Points, transition: DMatrix<f64>) -> Result<Self> {
        let n = input_values.len();
        if n == 0 {
            return Err(Error::Shape("channel has no inputs".into()));
        }
        Self::new(input_values, ProbabilityVector::uniform(n), transition)
    }

    pub fn input_values(&self) -> &Points {
        &self.input_values
    }

    pub fn input_prior(&self) -> &ProbabilityVector {
        &self.input_prior
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn n_outputs(&self) -> usize {
        self.transition.ncols()
    }

    fn output_prob(&self, j: usize) -> f64 {
        let p = self.input_prior.as_slice();
        (0..p.len()).map(|i| p[i] * self.transition[(i, j)]).sum()
    }

    fn posterior_weights(&self, j: usize, py: f64) -> Vec<f64> {
        let p = self.input_prior.as_slice();
        (0..p.len()).map(|i| p[i] * self.transition[(i, j)] / py).collect()
    }

    /// `(P(y), P(theta | y))` for every output of positive probability.
    fn live_posteriors(&self) -> Result<Vec<(f64, ProbabilityVector)>> {
        (0..self.n_outputs())
            .filter_map(|j| {
                let py = self.output_prob(j);
                (py > 0.0).then(|| Ok((py, ProbabilityVector::normalized(self.posterior_weights(j, py))?)))
            })
            .collect()
    }
}

/// Points with probability weights.
#[derive(Clone, Debug)]
pub struct WeightedSampleSet {
    pub points: Points,
    pub weights: ProbabilityVector,
}

impl WeightedSampleSet {
    pub fn new(points: Points, weights: ProbabilityVector) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} points, {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::Shape("empty sample set".into()));
        }
        Ok(WeightedSampleSet { points, weights })
    }

    pub fn uniform(points: Points) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Shape("empty sample set".into()));
        }
        let n = points.len();
        Self::new(points, ProbabilityVector::uniform(n))
    }
}

/// Output marginals and the Bayes-inverted posterior for each output.
#[derive(Clone, Debug)]
pub struct PosteriorFamily {
    pub output_probs: ProbabilityVector,
    pub posteriors: Vec<ProbabilityVector>,
}

pub fn channel_posteriors(c: &DiscreteChannel) -> Result<PosteriorFamily> {
    let mut probs = Vec::with_capacity(c.n_outputs());
    let mut posteriors = Vec::with_capacity(c.n_outputs());
    for j in 0..c.n_outputs() {
        let py = c.output_prob(j);
        if !(py > 0.0) {
            return Err(Error::DegenerateOutput { output: j });
        }
        probs.push(py);
        posteriors.push(ProbabilityVector::normalized(c.posterior_weights(j, py))?);
    }
    Ok(PosteriorFamily {
        output_probs: ProbabilityVector::normalized(probs)?,
        posteriors,
    })
}

/// Exact discrete mutual information `I(theta; y)`.
pub fn channel_mi(c: &DiscreteChannel, base: LogBase) -> f64 {
    let prior = shannon_entropy(c.input_prior.as_slice(), base);
    let posteriors = c.live_posteriors().expect("posterior of a validated channel");
    let cond: f64 = posteriors
        .iter()
        .map(|(py, post)| py * shannon_entropy(post.as_slice(), base))
        .sum();
    (prior - cond).max(0.0)
}

/// VIG of the channel input given its output, using probability-weighted kernels.
pub fn channel_vig(c: &DiscreteChannel, spec: &KernelSpec, q: VendiOrder, base: LogBase) -> Result<f64> {
    let k = build_similarity_matrix(&c.input_values, spec)?;
    let prior = matrix_vendi_entropy(&k, Some(&c.input_prior), q, base)?;
    let mut cond = 0.0;
    for (py, post) in c.live_posteriors()? {
        cond += py * matrix_vendi_entropy(&k, Some(&post), q, base)?;
    }
    Ok(prior - cond)
}

/// Expected `|theta - theta'|` where `theta'` is an independent posterior draw
/// given the output produced by `theta`.
pub fn channel_mae(c: &DiscreteChannel) -> Result<f64> {
    let values = match &c.input_values {
        Points::Real(v) => v,
        _ => return Err(Error::UnsupportedMetric("MAE needs real-valued inputs".into())),
    };
    let n = values.len();
    let dist = DMatrix::from_fn(n, n, |i, j| sq_dist(&values[i], &values[j]).sqrt());
    let mut mae = 0.0;
    for (py, post) in c.live_posteriors()? {
        let w = post.as_slice();
        let mut inner = 0.0;
        for i in 0..n {
            for j in 0..n {
                inner += w[i] * w[j] * dist[(i, j)];
            }
        }
        mae += py * inner;
    }
    Ok(mae)
}

/// Prior Vendi entropy minus the probability-weighted posterior Vendi entropies.
pub fn vig_from_sample_sets(
    prior: &WeightedSampleSet,
    posteriors: &[(f64, WeightedSampleSet)],
    spec: &KernelSpec,
    q: VendiOrder,
    base: LogBase,
) -> Result<f64> {
    if posteriors.is_empty() {
        return Err(Error::Shape("no posterior sets".into()));
    }
    let probs = ProbabilityVector::new(posteriors.iter().map(|(p, _)| *p).collect())?;
    let entropy = |set: &WeightedSampleSet| {
        let k = build_similarity_matrix(&set.points, spec)?;
        matrix_vendi_entropy(&k, Some(&set.weights), q, base)
    };
    let h_prior = entropy(prior)?;
    let mut cond = 0.0;
    for (py, (_, set)) in probs.as_slice().iter().zip(posteriors) {
        if *py > 0.0 {
            cond += py * entropy(set)?;
        }
    }
    Ok(h_prior - cond)
}
