//! Configuration files and drivers behind the `vig` binary.
//!
//! Every config is TOML with a top-level `version = 1`; unknown keys are
//! rejected. Tabular outputs are CSV files that start with `# config-hash:`
//! and `# seed:` comment lines, so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::acquisition::{run_acquisition, FantasyBudget, Policy, RunRecord, TaskConfig};
use crate::error::{Error, Result};
use crate::estimators::{run_characteristic_sweep, run_sweep, CharacteristicConfig, SweepConfig};
use crate::gp::GpHyper;
use crate::infogain::{channel_mae, channel_mi, channel_vig, DiscreteChannel};
use crate::kernels::{build_similarity_matrix, KernelSpec, Points, ProbabilityVector};
use crate::lse::{
    load_pool_csv, run_lse, LseFantasy, LsePolicy, LsePool, LseRun, LseSettings, QueryTrace, SyntheticPool,
};
use crate::rng::substream;
use crate::rtmodel::{rt_experiment, RtConfig};
use crate::spectra::{matrix_vendi_entropy, LogBase, VendiOrder};

pub const CONFIG_VERSION: i64 = 1;

#[derive(Debug, Parser)]
#[command(name = "vig", version, about = "Vendi information gain workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Overrides the Vendi order everywhere in the config (`inf` allowed).
    #[arg(long, global = true)]
    pub q: Option<VendiOrder>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Vendi score and entropy of a point set, as JSON.
    Entropy(EntropyArgs),
    /// MI, VIG and MAE of discrete channels, as JSON.
    Channel,
    /// MI and VIG estimator sweeps on synthetic data.
    Compare,
    /// Active acquisition runs over a task.
    Acquire,
    /// Level-set estimation runs over a pool.
    Lse,
    /// Response-time simulations.
    Rt,
}

#[derive(Debug, Default, Args)]
pub struct EntropyArgs {
    /// Headerless CSV, one real point per row.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Inline real points: rows split by `;`, coordinates by `,`.
    #[arg(long)]
    pub inline: Option<String>,
    /// Inline symbols split by `,`; equal strings are the same symbol.
    #[arg(long)]
    pub symbols: Option<String>,
    /// identity, gaussian or hamming.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub base: Option<LogBase>,
}

/// Parses a versioned TOML config into `T`.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    match table.remove("version") {
        Some(toml::Value::Integer(CONFIG_VERSION)) => {}
        Some(v) => return Err(Error::Config(format!("unsupported config version {v}"))),
        None => return Err(Error::Config("missing `version`".into())),
    }
    T::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// SHA-256 of the effective config as JSON.
pub fn config_hash(cfg: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(cfg).expect("configs serialize");
    hex::encode(Sha256::digest(bytes))
}

fn require_config(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this subcommand".into()))
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be >= 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let mut stdout = std::io::stdout().lock();
    match &cli.command {
        Command::Entropy(args) => {
            let cfg = entropy_config(cli, args)?;
            writeln!(
                stdout,
                "{}",
                serde_json::to_string_pretty(&cmd_entropy(&cfg)?).expect("json")
            )?;
        }
        Command::Channel => {
            let mut cfg: ChannelConfig = load_config(require_config(cli)?)?;
            if let Some(q) = cli.q {
                cfg.vig.iter_mut().for_each(|r| r.q = q);
                cfg.default_q = Some(q);
            }
            writeln!(
                stdout,
                "{}",
                serde_json::to_string_pretty(&cmd_channel(&cfg)?).expect("json")
            )?;
        }
        Command::Compare => {
            let mut cfg: CompareConfig = load_config(require_config(cli)?)?;
            if let Some(q) = cli.q {
                cfg.override_q(q);
            }
            report(&mut stdout, cmd_compare(&cfg, cli.seed, &cli.out_dir)?)?;
        }
        Command::Acquire => {
            let mut cfg: AcquireConfig = load_config(require_config(cli)?)?;
            if let Some(q) = cli.q {
                cfg.override_q(q);
            }
            report(&mut stdout, cmd_acquire(&cfg, cli.seed, &cli.out_dir)?)?;
        }
        Command::Lse => {
            let mut cfg: LseConfig = load_config(require_config(cli)?)?;
            if let Some(q) = cli.q {
                cfg.override_q(q);
            }
            report(&mut stdout, cmd_lse(&cfg, cli.seed, &cli.out_dir)?)?;
        }
        Command::Rt => {
            let mut cfg: RtConfig = load_config(require_config(cli)?)?;
            if let Some(q) = cli.q {
                cfg.q = q;
            }
            report(&mut stdout, cmd_rt(&cfg, cli.seed, &cli.out_dir)?)?;
        }
    }
    Ok(())
}

fn report(out: &mut impl std::io::Write, files: Vec<PathBuf>) -> Result<()> {
    for f in files {
        writeln!(out, "wrote {}", f.display())?;
    }
    Ok(())
}

// ---------------------------------------------------------------- entropy

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyConfig {
    #[serde(default)]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub points_file: Option<PathBuf>,
    #[serde(default)]
    pub symbols: Option<Vec<String>>,
    /// Bit strings such as `"0110"`, compared with the Hamming kernel.
    #[serde(default)]
    pub binary: Option<Vec<String>>,
    /// Defaults to identity for symbols, Hamming for bit strings and a unit
    /// Gaussian for reals.
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub q: VendiOrder,
    #[serde(default)]
    pub base: LogBase,
}

fn entropy_config(cli: &Cli, a: &EntropyArgs) -> Result<EntropyConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => EntropyConfig::default(),
    };
    if let Some(p) = &a.points {
        cfg.points_file = Some(p.clone());
    }
    if let Some(s) = &a.inline {
        cfg.points = Some(parse_inline(s)?);
    }
    if let Some(s) = &a.symbols {
        cfg.symbols = Some(s.split(',').map(|t| t.trim().to_string()).collect());
    }
    if let Some(k) = &a.kernel {
        cfg.kernel = Some(match k.to_ascii_lowercase().as_str() {
            "identity" => KernelSpec::Identity,
            "hamming" => KernelSpec::Hamming,
            "gaussian" => KernelSpec::gaussian(a.bandwidth.unwrap_or(1.0)),
            other => return Err(Error::Config(format!("unknown kernel {other:?}"))),
        });
    } else if let Some(b) = a.bandwidth {
        cfg.kernel = Some(KernelSpec::gaussian(b));
    }
    if let Some(b) = a.base {
        cfg.base = b;
    }
    if let Some(q) = cli.q {
        cfg.q = q;
    }
    Ok(cfg)
}

fn parse_inline(s: &str) -> Result<Vec<Vec<f64>>> {
    s.split(';')
        .filter(|r| !r.trim().is_empty())
        .enumerate()
        .map(|(i, row)| {
            row.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("inline row {row:?}: {e}"),
                })
        })
        .collect()
}

fn read_points_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("{}: {e}", path.display()),
            })?;
        rows.push(row);
    }
    Ok(rows)
}

fn intern(symbols: &[String]) -> Vec<usize> {
    let mut seen: Vec<&String> = Vec::new();
    symbols
        .iter()
        .map(|s| match seen.iter().position(|t| *t == s) {
            Some(i) => i,
            None => {
                seen.push(s);
                seen.len() - 1
            }
        })
        .collect()
}

fn parse_bits(rows: &[String]) -> Result<Vec<Vec<bool>>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            r.chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(Error::Parse {
                        line: i + 1,
                        msg: format!("bit string {r:?}"),
                    }),
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyReport {
    pub config: EntropyConfig,
    pub n: usize,
    pub kernel: KernelSpec,
    pub vendi_score: f64,
    pub entropy: f64,
}

pub fn cmd_entropy(cfg: &EntropyConfig) -> Result<EntropyReport> {
    let sources = [
        cfg.points.is_some(),
        cfg.points_file.is_some(),
        cfg.symbols.is_some(),
        cfg.binary.is_some(),
    ];
    if sources.iter().filter(|&&s| s).count() != 1 {
        return Err(Error::Config(
            "give exactly one of points, points_file, symbols, binary".into(),
        ));
    }
    let (points, default_kernel) = if let Some(p) = &cfg.points {
        (Points::Real(p.clone()), KernelSpec::gaussian(1.0))
    } else if let Some(f) = &cfg.points_file {
        (Points::Real(read_points_csv(f)?), KernelSpec::gaussian(1.0))
    } else if let Some(s) = &cfg.symbols {
        (Points::Symbol(intern(s)), KernelSpec::Identity)
    } else {
        (
            Points::Binary(parse_bits(cfg.binary.as_deref().unwrap_or_default())?),
            KernelSpec::Hamming,
        )
    };
    if points.is_empty() {
        return Err(Error::Config("no points".into()));
    }
    let kernel = cfg.kernel.clone().unwrap_or(default_kernel);
    kernel.validate()?;
    let k = build_similarity_matrix(&points, &kernel)?;
    let nats = matrix_vendi_entropy(&k, None, cfg.q, LogBase::Natural)?;
    Ok(EntropyReport {
        config: cfg.clone(),
        n: points.len(),
        kernel,
        vendi_score: nats.exp(),
        entropy: cfg.base.convert(nats),
    })
}

// ---------------------------------------------------------------- channel

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default)]
    pub base: LogBase,
    #[serde(rename = "channel")]
    pub channels: Vec<ChannelSpec>,
    /// VIG rows; a unit-bandwidth Gaussian row when empty.
    #[serde(default)]
    pub vig: Vec<VigRow>,
    /// Order of the implicit default row.
    #[serde(default)]
    pub default_q: Option<VendiOrder>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub name: String,
    /// Real input values, or `symbols` for a categorical alphabet.
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub symbols: Option<Vec<String>>,
    /// Row `i` is `P(y | input i)`.
    pub transition: Vec<Vec<f64>>,
    /// Uniform when absent.
    #[serde(default)]
    pub prior: Option<Vec<f64>>,
    /// Replaces the kernel of every VIG row for this channel.
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    /// Replaces the top-level base for this channel.
    #[serde(default)]
    pub base: Option<LogBase>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VigRow {
    pub label: String,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub q: VendiOrder,
    /// Falls back to the channel's base.
    #[serde(default)]
    pub base: Option<LogBase>,
}

impl ChannelSpec {
    pub fn build(&self) -> Result<DiscreteChannel> {
        let inputs = match (&self.values, &self.symbols) {
            (Some(v), None) => Points::scalars(v),
            (None, Some(s)) => Points::Symbol(intern(s)),
            _ => {
                return Err(Error::Config(format!(
                    "channel {}: give exactly one of values, symbols",
                    self.name
                )))
            }
        };
        let n = inputs.len();
        if self.transition.len() != n {
            return Err(Error::Shape(format!(
                "channel {}: {} transition rows for {n} inputs",
                self.name,
                self.transition.len()
            )));
        }
        let m = self.transition.first().map_or(0, Vec::len);
        if self.transition.iter().any(|r| r.len() != m) || m == 0 {
            return Err(Error::Shape(format!("channel {}: ragged transition matrix", self.name)));
        }
        let t = DMatrix::from_fn(n, m, |i, j| self.transition[i][j]);
        match &self.prior {
            Some(p) => DiscreteChannel::new(inputs, ProbabilityVector::new(p.clone())?, t),
            None => DiscreteChannel::uniform(inputs, t),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VigValue {
    pub label: String,
    pub kernel: KernelSpec,
    pub q: VendiOrder,
    pub base: LogBase,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChannelResult {
    pub name: String,
    pub base: LogBase,
    pub mi: f64,
    /// Absent for symbolic alphabets.
    pub mae: Option<f64>,
    pub vig: Vec<VigValue>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChannelReport {
    pub config_hash: String,
    pub channels: Vec<ChannelResult>,
}

pub fn cmd_channel(cfg: &ChannelConfig) -> Result<ChannelReport> {
    if cfg.channels.is_empty() {
        return Err(Error::Config("no [[channel]] entries".into()));
    }
    let rows = if cfg.vig.is_empty() {
        vec![VigRow {
            label: "default".into(),
            kernel: KernelSpec::gaussian(1.0),
            q: cfg.default_q.unwrap_or_default(),
            base: None,
        }]
    } else {
        cfg.vig.clone()
    };
    let channels = cfg
        .channels
        .iter()
        .map(|spec| {
            let c = spec.build()?;
            let base = spec.base.unwrap_or(cfg.base);
            let vig = rows
                .iter()
                .map(|r| {
                    let kernel = spec.kernel.clone().unwrap_or_else(|| r.kernel.clone());
                    let b = r.base.unwrap_or(base);
                    let value = channel_vig(&c, &kernel, r.q, b)?;
                    Ok(VigValue {
                        label: r.label.clone(),
                        kernel,
                        q: r.q,
                        base: b,
                        value,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ChannelResult {
                name: spec.name.clone(),
                base,
                mi: channel_mi(&c, base),
                mae: spec.values.as_ref().map(|_| channel_mae(&c)).transpose()?,
                vig,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelReport {
        config_hash: config_hash(cfg),
        channels,
    })
}

// ---------------------------------------------------------------- csv output

struct CsvOut {
    path: PathBuf,
    w: csv::Writer<fs::File>,
}

impl CsvOut {
    fn create(dir: &Path, name: &str, hash: &str, seed: u64, header: &[&str]) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        let mut f = fs::File::create(&path)?;
        writeln!(f, "# config-hash: {hash}")?;
        writeln!(f, "# seed: {seed}")?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(header)?;
        Ok(CsvOut { path, w })
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        self.w.write_record(fields.into_iter().collect::<Vec<_>>())?;
        Ok(())
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.w.flush()?;
        Ok(self.path)
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

/// Seed of replicate `r` under the global seed.
fn replicate_seed(seed: u64, r: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(r)
}

// ---------------------------------------------------------------- compare

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub characteristic: Option<CharacteristicConfig>,
}

impl CompareConfig {
    fn override_q(&mut self, q: VendiOrder) {
        if let Some(s) = &mut self.sweep {
            s.q = q;
        }
        if let Some(c) = &mut self.characteristic {
            c.q = q;
        }
    }
}

pub fn cmd_compare(cfg: &CompareConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    if cfg.sweep.is_none() && cfg.characteristic.is_none() {
        return Err(Error::Config("compare needs [sweep] or [characteristic]".into()));
    }
    let hash = config_hash(cfg);
    let mut files = Vec::new();
    if let Some(s) = &cfg.sweep {
        let rows = run_sweep(s, seed)?;
        let header = [
            "generator",
            "d",
            "n",
            "seed",
            "mi_est",
            "vig_est",
            "mi_ref",
            "vig_ref",
            "mae",
        ];
        let mut w = CsvOut::create(out, "compare_sweep.csv", &hash, seed, &header)?;
        for r in rows {
            w.row([
                r.generator,
                r.d.to_string(),
                r.n.to_string(),
                r.seed.to_string(),
                r.mi_est.to_string(),
                r.vig_est.to_string(),
                r.mi_ref.to_string(),
                r.vig_ref.to_string(),
                r.mae.to_string(),
            ])?;
        }
        files.push(w.finish()?);
    }
    if let Some(c) = &cfg.characteristic {
        let rows = run_characteristic_sweep(c, seed)?;
        let header = ["generator", "param", "seed", "mi_ref", "vig_est", "mae"];
        let mut w = CsvOut::create(out, "compare_characteristic.csv", &hash, seed, &header)?;
        for r in rows {
            w.row([
                r.generator,
                r.param.to_string(),
                r.seed.to_string(),
                r.mi_ref.to_string(),
                r.vig_est.to_string(),
                r.mae.to_string(),
            ])?;
        }
        files.push(w.finish()?);
    }
    Ok(files)
}

// ---------------------------------------------------------------- acquire

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquireConfig {
    pub task: TaskConfig,
    pub policies: Vec<Policy>,
    pub budget: usize,
    /// Number of replicates.
    pub seeds: u64,
    #[serde(default)]
    pub fantasy: FantasyBudget,
}

impl AcquireConfig {
    fn override_q(&mut self, q: VendiOrder) {
        for p in &mut self.policies {
            if let Policy::Vig { q: pq, .. } = p {
                *pq = q;
            }
        }
    }
}

fn acquire_label(p: &Policy) -> String {
    match p {
        Policy::Vig { q, .. } => format!("vig_q{q}"),
        other => other.name().to_string(),
    }
}

pub fn cmd_acquire(cfg: &AcquireConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    if cfg.policies.is_empty() || cfg.seeds == 0 {
        return Err(Error::Config("acquire needs policies and seeds >= 1".into()));
    }
    let hash = config_hash(cfg);
    let jobs: Vec<(usize, u64)> = (0..cfg.policies.len())
        .flat_map(|p| (0..cfg.seeds).map(move |r| (p, r)))
        .collect();
    let runs: Vec<(String, RunRecord)> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let policy = &cfg.policies[p];
            let rec = run_acquisition(&cfg.task, policy, cfg.budget, cfg.fantasy, replicate_seed(seed, r))?;
            Ok((acquire_label(policy), rec))
        })
        .collect::<Result<_>>()?;

    let header = ["task", "policy", "seed", "iteration", "x", "y", "map", "error"];
    let mut w = CsvOut::create(out, "acquire_runs.csv", &hash, seed, &header)?;
    for (label, rec) in &runs {
        w.row([
            rec.task.clone(),
            label.clone(),
            rec.seed.to_string(),
            "0".into(),
            String::new(),
            String::new(),
            join(&rec.prior_map),
            rec.prior_error.to_string(),
        ])?;
        for s in &rec.steps {
            w.row([
                rec.task.clone(),
                label.clone(),
                rec.seed.to_string(),
                s.iteration.to_string(),
                join(&s.x),
                s.y.to_string(),
                join(&s.map),
                s.error.to_string(),
            ])?;
        }
    }
    let runs_file = w.finish()?;

    let mut curves: BTreeMap<(usize, String), Vec<Vec<f64>>> = BTreeMap::new();
    for (i, (label, rec)) in runs.iter().enumerate() {
        let policy_idx = jobs[i].0;
        curves
            .entry((policy_idx, label.clone()))
            .or_default()
            .push(rec.error_curve());
    }
    let mut w = CsvOut::create(
        out,
        "acquire_summary.csv",
        &hash,
        seed,
        &["policy", "iteration", "mean_error", "se"],
    )?;
    for ((_, label), cs) in &curves {
        for it in 0..=cfg.budget {
            let v: Vec<f64> = cs.iter().map(|c| c[it]).collect();
            let (mean, se) = mean_se(&v);
            w.row([label.clone(), it.to_string(), mean.to_string(), se.to_string()])?;
        }
    }
    Ok(vec![runs_file, w.finish()?])
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------- lse

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolSource {
    /// A fresh pool per replicate.
    Synthetic(SyntheticPool),
    /// CSV with a header, coordinate columns and a label column.
    Csv {
        path: PathBuf,
        #[serde(default = "d_quantile")]
        threshold_quantile: f64,
        /// GP prior used by every policy.
        hyper: GpHyper,
    },
}

fn d_quantile() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LseConfig {
    pub pool: PoolSource,
    pub policies: Vec<LsePolicy>,
    /// Labels revealed per run, including the random initial point.
    pub budget: usize,
    pub seeds: u64,
    #[serde(default)]
    pub fantasy: LseFantasy,
    #[serde(default)]
    pub observation_noise_sd: f64,
    #[serde(default)]
    pub refit_every: Option<usize>,
}

impl LseConfig {
    fn override_q(&mut self, q: VendiOrder) {
        for p in &mut self.policies {
            if let LsePolicy::Vig { q: pq } = p {
                *pq = q;
            }
        }
    }
}

fn lse_label(p: &LsePolicy) -> String {
    match p {
        LsePolicy::Vig { q } => format!("vig_q{q}"),
        other => other.name().to_string(),
    }
}

#[derive(Serialize)]
struct SeedTrace<'a> {
    seed: u64,
    #[serde(flatten)]
    trace: QueryTrace<'a>,
}

pub fn cmd_lse(cfg: &LseConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    if cfg.policies.is_empty() || cfg.seeds == 0 {
        return Err(Error::Config("lse needs policies and seeds >= 1".into()));
    }
    let hash = config_hash(cfg);
    let fixed = match &cfg.pool {
        PoolSource::Csv {
            path,
            threshold_quantile,
            hyper,
        } => Some((load_pool_csv(path, *threshold_quantile)?, hyper.clone())),
        PoolSource::Synthetic(_) => None,
    };
    let pool_size = match (&cfg.pool, &fixed) {
        (_, Some((p, _))) => p.len(),
        (PoolSource::Synthetic(s), None) => s.size.unwrap_or_else(|| crate::lse::default_pool_size(s.d)),
        _ => unreachable!(),
    };
    if cfg.budget == 0 || cfg.budget > pool_size {
        return Err(Error::Config(format!("budget {} outside 1..={pool_size}", cfg.budget)));
    }

    let pools: Vec<(u64, LsePool, GpHyper)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|r| {
            let s = replicate_seed(seed, r);
            match (&cfg.pool, &fixed) {
                (_, Some((p, h))) => Ok((s, p.clone(), h.clone())),
                (PoolSource::Synthetic(sp), None) => Ok((s, sp.generate(&mut substream(s, &[100]))?, sp.hyper())),
                _ => unreachable!(),
            }
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..pools.len())
        .flat_map(|i| (0..cfg.policies.len()).map(move |p| (i, p)))
        .collect();
    let runs: Vec<LseRun> = jobs
        .par_iter()
        .map(|&(i, p)| {
            let (s, pool, hyper) = &pools[i];
            let settings = LseSettings {
                hyper: hyper.clone(),
                fantasy: cfg.fantasy,
                observation_noise_sd: cfg.observation_noise_sd,
                refit_every: cfg.refit_every,
            };
            let mut run = run_lse(pool, &cfg.policies[p], cfg.budget, &settings, *s)?;
            run.policy = lse_label(&cfg.policies[p]);
            Ok(run)
        })
        .collect::<Result<_>>()?;

    let header = ["policy", "seed", "iteration", "index", "f1"];
    let mut w = CsvOut::create(out, "lse_runs.csv", &hash, seed, &header)?;
    for run in &runs {
        for (it, (idx, f1)) in run.queries.iter().zip(&run.f1).enumerate() {
            w.row([
                run.policy.clone(),
                run.seed.to_string(),
                (it + 1).to_string(),
                idx.to_string(),
                f1.to_string(),
            ])?;
        }
    }
    let runs_file = w.finish()?;

    let per_pool = cfg.policies.len();
    let traces: Vec<SeedTrace> = pools
        .iter()
        .enumerate()
        .map(|(i, (s, pool, _))| SeedTrace {
            seed: *s,
            trace: QueryTrace {
                points: &pool.points,
                labels: &pool.labels,
                threshold: pool.threshold,
                truth: pool.truth(),
                runs: &runs[i * per_pool..(i + 1) * per_pool],
            },
        })
        .collect();
    let trace_path = out.join("lse_trace.json");
    let doc = json!({ "config_hash": hash, "seed": seed, "traces": traces });
    fs::write(&trace_path, serde_json::to_string(&doc).expect("json") + "\n")?;
    Ok(vec![runs_file, trace_path])
}

// ---------------------------------------------------------------- rt

pub fn cmd_rt(cfg: &RtConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let hash = config_hash(cfg);
    let (rows, summary) = rt_experiment(cfg, seed)?;
    let header = ["measure", "s", "repeat", "rt_seconds", "correct_map", "timed_out"];
    let mut w = CsvOut::create(out, "rt_samples.csv", &hash, seed, &header)?;
    for r in rows {
        w.row([
            r.measure,
            r.s.to_string(),
            r.repeat.to_string(),
            format!("{:.2}", r.rt_seconds),
            u8::from(r.correct_map).to_string(),
            u8::from(r.timed_out).to_string(),
        ])?;
    }
    let samples = w.finish()?;
    let header = [
        "measure",
        "s",
        "threshold",
        "q10",
        "median",
        "q90",
        "accuracy",
        "timeouts",
    ];
    let mut w = CsvOut::create(out, "rt_summary.csv", &hash, seed, &header)?;
    for r in summary {
        w.row([
            r.measure,
            r.s.to_string(),
            r.threshold.to_string(),
            format!("{:.3}", r.q10),
            format!("{:.3}", r.median),
            format!("{:.3}", r.q90),
            r.accuracy.to_string(),
            r.timeouts.to_string(),
        ])?;
    }
    Ok(vec![samples, w.finish()?])
}
