//! Sample-based MI and VIG estimators, the synthetic labeled-sample
//! generators they are stress-tested on, and the sweep harness.
//!
//! Every generator draws `theta` uniformly from a region and labels it by a
//! deterministic rule, so the exact MI between `theta` and the label is the
//! label entropy `H(y)`.

use std::collections::HashMap;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::kernels::{build_similarity_matrix, sq_dist, KernelSpec, Points};
use crate::rng::{substream, Rng};
use crate::spectra::{matrix_vendi_entropy, shannon_entropy, LogBase, VendiOrder};

/// Distance floor applied to nearest-neighbor distances (duplicate points).
pub const DISTANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledSamples {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points grouped by label, in ascending label order.
    pub fn classes(&self) -> Vec<(usize, Vec<Vec<f64>>)> {
        let mut groups: std::collections::BTreeMap<usize, Vec<Vec<f64>>> = Default::default();
        for (p, &y) in self.points.iter().zip(&self.labels) {
            groups.entry(y).or_default().push(p.clone());
        }
        groups.into_iter().collect()
    }
}

/// Log-volume of the radius-`r` ball in `d` dimensions.
fn ln_ball_volume(d: usize, r: f64) -> f64 {
    let h = d as f64 / 2.0;
    h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0) + d as f64 * r.ln()
}

fn uniform_ball(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let r = rng.random::<f64>().powf(1.0 / d as f64);
            return g.into_iter().map(|x| x / norm * r).collect();
        }
    }
}

fn uniform_cube(d: usize, rng: &mut Rng) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Inner radius splitting the unit `d`-ball into two equal-volume regions.
pub fn equal_volume_radius(d: usize) -> f64 {
    0.5f64.powf(1.0 / d as f64)
}

/// Uniform points in the unit ball, labeled 1 inside the equal-volume inner ball.
pub fn gen_sphere_shell(d: usize, n: usize, rng: &mut Rng) -> LabeledSamples {
    gen_sphere_shell_with_radius(d, n, equal_volume_radius(d), rng)
}

pub fn gen_sphere_shell_with_radius(d: usize, n: usize, inner: f64, rng: &mut Rng) -> LabeledSamples {
    assert!(d >= 1);
    let mut out = LabeledSamples::default();
    for _ in 0..n {
        let p = uniform_ball(d, rng);
        let r = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.labels.push(usize::from(r < inner));
        out.points.push(p);
    }
    out
}

/// Uniform points in `[-1, 1]^d`, labeled by the sign of the coordinate product.
pub fn gen_sign_product(d: usize, n: usize, rng: &mut Rng) -> LabeledSamples {
    assert!(d >= 1);
    let mut out = LabeledSamples::default();
    for _ in 0..n {
        let p = uniform_cube(d, rng);
        out.labels.push(usize::from(p.iter().product::<f64>() > 0.0));
        out.points.push(p);
    }
    out
}

fn check_cube_spheres(d: usize, offset: f64, radius: f64) -> Result<()> {
    if !(radius > 0.0 && offset > 0.0) {
        return Err(Error::Config("sphere offset and radius must be positive".into()));
    }
    if offset + radius > 1.0 {
        return Err(Error::Config(format!(
            "spheres at {offset} with radius {radius} leave the cube"
        )));
    }
    let gap = if d >= 2 { offset * 2f64.sqrt() } else { 2.0 * offset };
    if gap < 2.0 * radius {
        return Err(Error::Config(format!(
            "spheres at offset {offset} with radius {radius} overlap"
        )));
    }
    Ok(())
}

/// Uniform points in `[-1, 1]^d`, labeled 1 inside any of the `2d` spheres
/// centered at `±offset · e_k`.
pub fn gen_cube_spheres(d: usize, n: usize, offset: f64, radius: f64, rng: &mut Rng) -> Result<LabeledSamples> {
    check_cube_spheres(d, offset, radius)?;
    let mut out = LabeledSamples::default();
    for _ in 0..n {
        let p = uniform_cube(d, rng);
        out.labels.push(usize::from(in_axis_sphere(&p, offset, radius)));
        out.points.push(p);
    }
    Ok(out)
}

fn in_axis_sphere(p: &[f64], offset: f64, radius: f64) -> bool {
    let total: f64 = p.iter().map(|x| x * x).sum();
    let r2 = radius * radius;
    p.iter().any(|&x| {
        let rest = total - x * x;
        rest + (x - offset).powi(2) < r2 || rest + (x + offset).powi(2) < r2
    })
}

/// Synthetic labeled-sample generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// Unit ball split at `inner_radius` (equal-volume radius when absent).
    SphereShell {
        #[serde(default)]
        inner_radius: Option<f64>,
    },
    SignProduct,
    CubeSpheres {
        offset: f64,
        radius: f64,
    },
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::SphereShell { .. } => "sphere_shell",
            Generator::SignProduct => "sign_product",
            Generator::CubeSpheres { .. } => "cube_spheres",
        }
    }

    pub fn sample(&self, d: usize, n: usize, rng: &mut Rng) -> Result<LabeledSamples> {
        if d == 0 {
            return Err(Error::Config("dimension must be >= 1".into()));
        }
        match *self {
            Generator::SphereShell { inner_radius } => {
                let r = inner_radius.unwrap_or_else(|| equal_volume_radius(d));
                if !(r > 0.0 && r < 1.0) {
                    return Err(Error::Config(format!("inner radius {r} outside (0, 1)")));
                }
                Ok(gen_sphere_shell_with_radius(d, n, r, rng))
            }
            Generator::SignProduct => Ok(gen_sign_product(d, n, rng)),
            Generator::CubeSpheres { offset, radius } => gen_cube_spheres(d, n, offset, radius, rng),
        }
    }

    /// Probability of label 1.
    pub fn class_one_probability(&self, d: usize) -> Result<f64> {
        match *self {
            Generator::SphereShell { inner_radius } => Ok(inner_radius.map_or(0.5, |r| r.powi(d as i32))),
            Generator::SignProduct => Ok(0.5),
            Generator::CubeSpheres { offset, radius } => {
                check_cube_spheres(d, offset, radius)?;
                let ln_frac = (2.0 * d as f64).ln() + ln_ball_volume(d, radius) - d as f64 * 2f64.ln();
                Ok(ln_frac.exp())
            }
        }
    }

    /// Exact `I(theta; y) = H(y)`.
    pub fn exact_mi(&self, d: usize, base: LogBase) -> Result<f64> {
        let p = self.class_one_probability(d)?;
        Ok(shannon_entropy(&[p, 1.0 - p], base))
    }
}

/// Kozachenko-Leonenko differential entropy estimate in nats.
pub fn knn_entropy(points: &[Vec<f64>], k: usize) -> Result<f64> {
    let n = points.len();
    if k == 0 || n <= k {
        return Err(Error::Config(format!(
            "knn entropy needs n > k >= 1 (n = {n}, k = {k})"
        )));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::Shape("points must share a nonzero dimension".into()));
    }
    let sum_ln_eps: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            // k smallest squared distances, kept sorted ascending
            let mut best = vec![f64::INFINITY; k];
            for (j, q) in points.iter().enumerate() {
                if j == i {
                    continue;
                }
                let dist = sq_dist(&points[i], q);
                if dist < best[k - 1] {
                    let pos = best.partition_point(|&b| b <= dist);
                    best.insert(pos, dist);
                    best.pop();
                }
            }
            best[k - 1].sqrt().max(DISTANCE_FLOOR).ln()
        })
        .sum();
    Ok(digamma(n as f64) - digamma(k as f64) + ln_ball_volume(d, 1.0) + d as f64 * sum_ln_eps / n as f64)
}

/// `H(theta) - sum_y (n_y / n) H(theta | y)` with k-NN entropies, in nats.
pub fn mi_estimate_labeled(samples: &LabeledSamples, k: usize) -> Result<f64> {
    let classes = samples.classes();
    if classes.len() < 2 {
        return Ok(0.0);
    }
    let n = samples.len() as f64;
    let mut cond = 0.0;
    for (label, pts) in &classes {
        if pts.len() < k + 1 {
            log::warn!(
                "class {label} has {} points, fewer than k + 1 = {}; contributes zero",
                pts.len(),
                k + 1
            );
            continue;
        }
        cond += pts.len() as f64 / n * knn_entropy(pts, k)?;
    }
    Ok(knn_entropy(&samples.points, k)? - cond)
}

/// Plug-in MI between the label and an equal-width histogram cell, in nats.
pub fn mi_estimate_histogram(samples: &LabeledSamples, bins: usize) -> Result<f64> {
    if samples.is_empty() || bins == 0 {
        return Err(Error::Config("histogram MI needs samples and bins >= 1".into()));
    }
    let d = samples.points[0].len();
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..d)
        .map(|c| {
            samples
                .points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                    (a.min(p[c]), b.max(p[c]))
                })
        })
        .unzip();
    let cell = |p: &Vec<f64>| -> Vec<usize> {
        (0..d)
            .map(|c| {
                let w = hi[c] - lo[c];
                if w <= 0.0 {
                    0
                } else {
                    (((p[c] - lo[c]) / w * bins as f64) as usize).min(bins - 1)
                }
            })
            .collect()
    };
    let mut joint: HashMap<(Vec<usize>, usize), f64> = HashMap::new();
    let mut cells: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut labels: HashMap<usize, f64> = HashMap::new();
    let n = samples.len() as f64;
    for (p, &y) in samples.points.iter().zip(&samples.labels) {
        let c = cell(p);
        *joint.entry((c.clone(), y)).or_default() += 1.0 / n;
        *cells.entry(c).or_default() += 1.0 / n;
        *labels.entry(y).or_default() += 1.0 / n;
    }
    let h = |m: Vec<f64>| shannon_entropy(&m, LogBase::Natural);
    Ok(h(labels.into_values().collect()) + h(cells.into_values().collect()) - h(joint.into_values().collect()))
}

/// Median pairwise Euclidean distance.
pub fn median_bandwidth(points: &[Vec<f64>]) -> f64 {
    let mut dists = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in 0..i {
            dists.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

fn uniform_vendi_entropy(pts: &[Vec<f64>], spec: &KernelSpec, q: VendiOrder, base: LogBase) -> Result<f64> {
    let k = build_similarity_matrix(&Points::Real(pts.to_vec()), spec)?;
    matrix_vendi_entropy(&k, None, q, base)
}

/// VIG with uniform weights: pooled Vendi entropy minus the label-weighted
/// per-class Vendi entropies.
pub fn vig_estimate_labeled(samples: &LabeledSamples, spec: &KernelSpec, q: VendiOrder, base: LogBase) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Shape("VIG estimate needs at least 2 samples".into()));
    }
    let classes = samples.classes();
    let total: usize = classes.iter().map(|(_, p)| p.len()).sum();
    let mut cond = 0.0;
    for (_, pts) in classes.iter().filter(|(_, p)| !p.is_empty()) {
        cond += pts.len() as f64 / total as f64 * uniform_vendi_entropy(pts, spec, q, base)?;
    }
    Ok(uniform_vendi_entropy(&samples.points, spec, q, base)? - cond)
}

/// Expected distance from a sample to an independent draw from its own
/// class (the empirical posterior given the label).
pub fn conditional_mae(samples: &LabeledSamples) -> f64 {
    let n = samples.len() as f64;
    samples
        .classes()
        .iter()
        .map(|(_, pts)| {
            let m = pts.len() as f64;
            let mut s = 0.0;
            for i in 0..pts.len() {
                for j in 0..i {
                    s += 2.0 * sq_dist(&pts[i], &pts[j]).sqrt();
                }
            }
            m / n * s / (m * m)
        })
        .sum()
}

/// How the gaussian bandwidth of the VIG estimator is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Median pairwise distance of the pooled sample.
    Median,
    Fixed(f64),
}

impl BandwidthRule {
    pub fn kernel_for(&self, points: &[Vec<f64>]) -> KernelSpec {
        match *self {
            BandwidthRule::Median => KernelSpec::gaussian(median_bandwidth(points)),
            BandwidthRule::Fixed(b) => KernelSpec::gaussian(b),
        }
    }
}

impl std::fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BandwidthRule::Median => write!(f, "median"),
            BandwidthRule::Fixed(b) => write!(f, "fixed:{b}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub generator: Generator,
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    pub seeds: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: BandwidthRule,
    #[serde(default)]
    pub q: VendiOrder,
    #[serde(default)]
    pub base: LogBase,
    pub reference_size: usize,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_bandwidth() -> BandwidthRule {
    BandwidthRule::Median
}

fn default_k() -> usize {
    3
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.sizes.is_empty() || self.seeds == 0 {
            return Err(Error::Config("sweep needs dims, sizes and seeds".into()));
        }
        if self.dims.contains(&0) {
            return Err(Error::Config("dimensions must be >= 1".into()));
        }
        if self.sizes.iter().any(|&n| n < 2) {
            return Err(Error::Config("sample sizes must be >= 2".into()));
        }
        let max = *self.sizes.iter().max().unwrap();
        if self.reference_size < max {
            return Err(Error::Config(format!(
                "reference size {} below sweep size {max}",
                self.reference_size
            )));
        }
        if let BandwidthRule::Fixed(b) = self.bandwidth {
            KernelSpec::gaussian(b).validate()?;
        }
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub generator: String,
    pub d: usize,
    pub n: usize,
    pub seed: usize,
    pub mi_est: f64,
    pub vig_est: f64,
    pub mi_ref: f64,
    pub vig_ref: f64,
    pub mae: f64,
}

fn vig_with_rule(s: &LabeledSamples, rule: BandwidthRule, q: VendiOrder, base: LogBase) -> Result<f64> {
    vig_estimate_labeled(s, &rule.kernel_for(&s.points), q, base)
}

/// MI/VIG estimates over dimensions × sizes × seeds; deterministic in `run_seed`.
pub fn run_sweep(cfg: &SweepConfig, run_seed: u64) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let refs: Vec<(usize, f64)> = cfg
        .dims
        .par_iter()
        .map(|&d| {
            let mut rng = substream(run_seed, &[d as u64, u64::MAX]);
            let s = cfg.generator.sample(d, cfg.reference_size, &mut rng)?;
            Ok((d, vig_with_rule(&s, cfg.bandwidth, cfg.q, cfg.base)?))
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize, usize)> = cfg
        .dims
        .iter()
        .flat_map(|&d| {
            cfg.sizes
                .iter()
                .flat_map(move |&n| (0..cfg.seeds).map(move |s| (d, n, s)))
        })
        .collect();
    cells
        .par_iter()
        .map(|&(d, n, seed)| {
            let mut rng = substream(run_seed, &[d as u64, n as u64, seed as u64]);
            let s = cfg.generator.sample(d, n, &mut rng)?;
            let mi_est = if n > cfg.k {
                mi_estimate_labeled(&s, cfg.k)?
            } else {
                0.0
            };
            Ok(SweepRow {
                generator: cfg.generator.name().to_string(),
                d,
                n,
                seed,
                mi_est: cfg.base.convert(mi_est),
                vig_est: vig_with_rule(&s, cfg.bandwidth, cfg.q, cfg.base)?,
                mi_ref: cfg.generator.exact_mi(d, cfg.base)?,
                vig_ref: refs.iter().find(|r| r.0 == d).map(|r| r.1).unwrap_or(f64::NAN),
                mae: conditional_mae(&s),
            })
        })
        .collect()
}

/// Sweep of one generator characteristic at fixed dimension and size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacteristicConfig {
    /// `sphere_shell`: inner radius; `sign_product`: dimension; `cube_spheres`: offset.
    pub generator: Generator,
    pub values: Vec<f64>,
    pub d: usize,
    pub n: usize,
    pub seeds: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: BandwidthRule,
    #[serde(default)]
    pub q: VendiOrder,
    #[serde(default)]
    pub base: LogBase,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CharacteristicRow {
    pub generator: String,
    pub param: f64,
    pub seed: usize,
    pub mi_ref: f64,
    pub vig_est: f64,
    pub mae: f64,
}

fn with_characteristic(g: &Generator, d: usize, v: f64) -> Result<(Generator, usize)> {
    match g {
        Generator::SphereShell { .. } => Ok((Generator::SphereShell { inner_radius: Some(v) }, d)),
        Generator::SignProduct => {
            if v < 1.0 || v.fract() != 0.0 {
                return Err(Error::Config(format!(
                    "sign_product characteristic is a dimension, got {v}"
                )));
            }
            Ok((Generator::SignProduct, v as usize))
        }
        Generator::CubeSpheres { radius, .. } => Ok((
            Generator::CubeSpheres {
                offset: v,
                radius: *radius,
            },
            d,
        )),
    }
}

pub fn run_characteristic_sweep(cfg: &CharacteristicConfig, run_seed: u64) -> Result<Vec<CharacteristicRow>> {
    if cfg.values.is_empty() || cfg.seeds == 0 || cfg.n < 2 || cfg.d == 0 {
        return Err(Error::Config(
            "characteristic sweep needs values, seeds, n >= 2 and d >= 1".into(),
        ));
    }
    let cells: Vec<(usize, usize)> = (0..cfg.values.len())
        .flat_map(|i| (0..cfg.seeds).map(move |s| (i, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(i, seed)| {
            let v = cfg.values[i];
            let (g, d) = with_characteristic(&cfg.generator, cfg.d, v)?;
            let mut rng = substream(run_seed, &[i as u64, seed as u64]);
            let s = g.sample(d, cfg.n, &mut rng)?;
            Ok(CharacteristicRow {
                generator: g.name().to_string(),
                param: v,
                seed,
                mi_ref: g.exact_mi(d, cfg.base)?,
                vig_est: vig_with_rule(&s, cfg.bandwidth, cfg.q, cfg.base)?,
                mae: conditional_mae(&s),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn label_fraction(s: &LabeledSamples) -> f64 {
        s.labels.iter().sum::<usize>() as f64 / s.len() as f64
    }

    #[test]
    fn sphere_shell_radius_and_balance() {
        assert_abs_diff_eq!(equal_volume_radius(1), 0.5);
        assert_abs_diff_eq!(equal_volume_radius(2), 0.5f64.sqrt(), epsilon = 1e-15);
        for d in [1, 2, 5] {
            let s = gen_sphere_shell(d, 100_000, &mut rng(d as u64));
            assert!((label_fraction(&s) - 0.5).abs() < 0.01);
            assert!(s.points.iter().all(|p| p.iter().map(|x| x * x).sum::<f64>() <= 1.0));
        }
        let g = Generator::SphereShell { inner_radius: None };
        assert_abs_diff_eq!(g.exact_mi(7, LogBase::Natural).unwrap(), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn sign_product_labels() {
        let s = gen_sign_product(1, 1000, &mut rng(1));
        for (p, &y) in s.points.iter().zip(&s.labels) {
            assert_eq!(y, usize::from(p[0] > 0.0));
        }
        let s = gen_sign_product(2, 1000, &mut rng(2));
        for (p, &y) in s.points.iter().zip(&s.labels) {
            assert_eq!(y == 1, (p[0] > 0.0) == (p[1] > 0.0));
        }
        for d in [1, 3, 6] {
            assert!((label_fraction(&gen_sign_product(d, 100_000, &mut rng(d as u64))) - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn cube_spheres_geometry() {
        assert!(!in_axis_sphere(&[0.0, 0.0], 0.5, 0.2));
        assert!(in_axis_sphere(&[0.5, 0.0], 0.5, 0.2));
        assert!(in_axis_sphere(&[0.0, -0.45], 0.5, 0.2));
        let g = Generator::CubeSpheres {
            offset: 0.5,
            radius: 0.2,
        };
        let p = g.class_one_probability(2).unwrap();
        assert_abs_diff_eq!(p, std::f64::consts::PI * 0.04, epsilon = 1e-12);
        let s = gen_cube_spheres(2, 200_000, 0.5, 0.2, &mut rng(3)).unwrap();
        assert!((label_fraction(&s) - 0.1257).abs() < 0.005);
        assert!(matches!(
            gen_cube_spheres(2, 10, 0.2, 0.2, &mut rng(0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            gen_cube_spheres(2, 10, 0.9, 0.2, &mut rng(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn knn_entropy_closed_forms() {
        let mut r = rng(11);
        let u: Vec<Vec<f64>> = (0..10_000).map(|_| vec![r.random::<f64>()]).collect();
        assert_abs_diff_eq!(knn_entropy(&u, 3).unwrap(), 0.0, epsilon = 0.05);
        let g: Vec<Vec<f64>> = (0..10_000).map(|_| vec![StandardNormal.sample(&mut r)]).collect();
        let want = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert_abs_diff_eq!(knn_entropy(&g, 3).unwrap(), want, epsilon = 0.05);
        let same = vec![vec![0.25, 0.5]; 10];
        assert!(knn_entropy(&same, 3).unwrap().is_finite());
        assert!(knn_entropy(&same[..3], 3).is_err());
    }

    #[test]
    fn knn_mi_recovers_log_two_in_one_dimension() {
        let s = gen_sphere_shell(1, 5000, &mut rng(5));
        assert_abs_diff_eq!(mi_estimate_labeled(&s, 3).unwrap(), 2f64.ln(), epsilon = 0.1);
    }

    #[test]
    fn mi_of_independent_or_single_class_labels() {
        let mut r = rng(9);
        let mut s = gen_sign_product(2, 4000, &mut r);
        for y in s.labels.iter_mut() {
            *y = r.random_range(0..2);
        }
        assert!(mi_estimate_labeled(&s, 3).unwrap().abs() < 0.05);
        s.labels.iter_mut().for_each(|y| *y = 0);
        assert_eq!(mi_estimate_labeled(&s, 3).unwrap(), 0.0);
        s.points.truncate(200);
        s.labels.truncate(200);
        assert_eq!(
            vig_estimate_labeled(&s, &KernelSpec::gaussian(1.0), VendiOrder::SHANNON, LogBase::Natural).unwrap(),
            0.0
        );
    }

    #[test]
    fn identity_kernel_vig_is_plugin_mi() {
        // Discretized atoms: repeated values make the identity kernel a
        // block matrix whose spectrum is the empirical distribution.
        let mut r = rng(4);
        let atoms = [0.0, 0.25, 0.5, 0.75];
        let mut s = LabeledSamples::default();
        for _ in 0..200 {
            let a = r.random_range(0..4);
            s.points.push(vec![atoms[a]]);
            s.labels.push(usize::from(a >= 2 || r.random::<f64>() < 0.3));
        }
        let vig = vig_estimate_labeled(&s, &KernelSpec::Identity, VendiOrder::SHANNON, LogBase::Natural).unwrap();
        // plug-in oracle from counts
        let mut joint = [[0.0f64; 2]; 4];
        for (p, &y) in s.points.iter().zip(&s.labels) {
            let a = atoms.iter().position(|&x| x == p[0]).unwrap();
            joint[a][y] += 1.0 / 200.0;
        }
        let pa: Vec<f64> = joint.iter().map(|r| r[0] + r[1]).collect();
        let py: Vec<f64> = (0..2).map(|y| joint.iter().map(|r| r[y]).sum()).collect();
        let mut mi = 0.0;
        for a in 0..4 {
            for y in 0..2 {
                if joint[a][y] > 0.0 {
                    mi += joint[a][y] * (joint[a][y] / (pa[a] * py[y])).ln();
                }
            }
        }
        assert_abs_diff_eq!(vig, mi, epsilon = 1e-9);
    }

    #[test]
    fn conditional_mae_examples() {
        let same = LabeledSamples {
            points: vec![vec![1.0]; 5],
            labels: vec![0, 1, 0, 1, 0],
        };
        assert_eq!(conditional_mae(&same), 0.0);
        let split = LabeledSamples {
            points: vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]],
            labels: vec![0, 0, 1, 1],
        };
        assert_eq!(conditional_mae(&split), 0.0);
        let mut r = rng(8);
        let u = LabeledSamples {
            points: (0..3000).map(|_| vec![r.random::<f64>()]).collect(),
            labels: vec![0; 3000],
        };
        assert_abs_diff_eq!(conditional_mae(&u), 1.0 / 3.0, epsilon = 0.01);
    }

    #[test]
    fn small_sample_vig_is_positive_and_less_noisy_than_knn_mi() {
        let rule = BandwidthRule::Median;
        let (mut vig, mut mi) = (Vec::new(), Vec::new());
        for i in 0..20 {
            let s = gen_sphere_shell(2, 50, &mut rng(200 + i));
            vig.push(
                vig_estimate_labeled(&s, &rule.kernel_for(&s.points), VendiOrder::SHANNON, LogBase::Natural).unwrap(),
            );
            mi.push(mi_estimate_labeled(&s, 3).unwrap());
        }
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        assert!(vig.iter().all(|&v| v > 0.0));
        assert!(sd(&vig) <= sd(&mi), "vig sd {} mi sd {}", sd(&vig), sd(&mi));
    }

    #[test]
    fn small_sample_vig_mean_tracks_large_reference() {
        let rule = BandwidthRule::Median;
        let est = |s: &LabeledSamples| {
            vig_estimate_labeled(s, &rule.kernel_for(&s.points), VendiOrder::SHANNON, LogBase::Natural).unwrap()
        };
        let reference = est(&gen_sphere_shell(2, 2000, &mut rng(100)));
        let mean = (0..20)
            .map(|i| est(&gen_sphere_shell(2, 50, &mut rng(300 + i))))
            .sum::<f64>()
            / 20.0;
        assert!(
            (mean - reference).abs() <= 0.25 * reference,
            "n=50 mean {mean} vs reference {reference}"
        );
    }

    #[test]
    fn sweep_shape_and_determinism() {
        let cfg = SweepConfig {
            generator: Generator::SphereShell { inner_radius: None },
            dims: vec![1, 3],
            sizes: vec![20, 40],
            seeds: 2,
            bandwidth: BandwidthRule::Median,
            q: VendiOrder::SHANNON,
            base: LogBase::Natural,
            reference_size: 60,
            k: 3,
        };
        let a = run_sweep(&cfg, 1).unwrap();
        assert_eq!(a.len(), 2 * 2 * 2);
        assert!(a.iter().all(|r| (r.mi_ref - 2f64.ln()).abs() < 1e-15));
        assert_eq!(a, run_sweep(&cfg, 1).unwrap());
        let bad = SweepConfig {
            reference_size: 10,
            ..cfg
        };
        assert!(run_sweep(&bad, 1).is_err());
    }

    #[test]
    fn characteristic_sweep_keeps_mi_flat_for_offsets() {
        let cfg = CharacteristicConfig {
            generator: Generator::CubeSpheres {
                offset: 0.5,
                radius: 0.2,
            },
            values: vec![0.3, 0.5, 0.7],
            d: 2,
            n: 200,
            seeds: 2,
            bandwidth: BandwidthRule::Median,
            q: VendiOrder::SHANNON,
            base: LogBase::Natural,
        };
        let rows = run_characteristic_sweep(&cfg, 3).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| (r.mi_ref - rows[0].mi_ref).abs() < 1e-15));
    }
}
