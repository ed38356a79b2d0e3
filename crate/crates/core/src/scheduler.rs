//! Throughput simulator for sharded data-parallel training with blocking collectives.
//!
//! Time is abstract. Ranks inside a sharding group synchronize on every
//! microbatch, so a group microstep lasts as long as its slowest member. After
//! `accum` microsteps every group meets at the gradient all-reduce, so an
//! optimizer step lasts as long as the slowest group's accumulated total.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Encoder/decoder overhead as a fraction of linear-plus-attention cost.
pub const DEFAULT_ENC_FRAC: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterConfig {
    ranks: usize,
    group_size: usize,
}

impl ClusterConfig {
    pub fn new(ranks: usize, group_size: usize) -> Result<Self> {
        if ranks == 0 || group_size == 0 || !ranks.is_multiple_of(group_size) {
            return Err(Error::Config(format!(
                "group size {group_size} must divide a positive rank count {ranks}"
            )));
        }
        Ok(ClusterConfig { ranks, group_size })
    }

    /// 96 ranks in sharding groups of 8.
    pub fn reference() -> Self {
        ClusterConfig { ranks: 96, group_size: 8 }
    }

    pub fn ranks(&self) -> usize {
        self.ranks
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups(&self) -> usize {
        self.ranks / self.group_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCost {
    pub name: String,
    /// Spatial dimensionality, 2 or 3.
    pub dim: usize,
    /// Tokens per sample under uniform batching.
    pub tokens: f64,
    /// Non-linear (attention) share of block cost, in `[0, 1)`.
    pub surcharge: f64,
    pub enc_frac: f64,
}

impl DatasetCost {
    pub fn new(name: impl Into<String>, dim: usize, tokens: f64, surcharge: f64, enc_frac: f64) -> Result<Self> {
        let name = name.into();
        if dim != 2 && dim != 3 {
            return Err(Error::Config(format!("dataset `{name}` has dimension {dim}, expected 2 or 3")));
        }
        if !(tokens.is_finite() && tokens > 0.0) {
            return Err(Error::Config(format!("dataset `{name}` needs a positive token count")));
        }
        if !(0.0..1.0).contains(&surcharge) {
            return Err(Error::Config(format!("dataset `{name}` surcharge {surcharge} outside [0, 1)")));
        }
        if !(enc_frac.is_finite() && enc_frac >= 0.0) {
            return Err(Error::Config(format!("dataset `{name}` encoder fraction must be nonnegative")));
        }
        Ok(DatasetCost { name, dim, tokens, surcharge, enc_frac })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Every rank draws its own dataset.
    NaiveIndependent,
    /// One draw per sharding group, shared by its ranks.
    GroupTied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batching {
    Uniform,
    /// 2D microbatches carry more samples and longer histories.
    Differential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Strategy {
    pub sampling: Sampling,
    pub batching: Batching,
    /// Microbatches accumulated per optimizer step, at least 1.
    pub accum: usize,
}

impl Strategy {
    pub fn new(sampling: Sampling, batching: Batching, accum: usize) -> Result<Self> {
        if accum == 0 {
            return Err(Error::Config("accumulation steps must be at least 1".into()));
        }
        Ok(Strategy { sampling, batching, accum })
    }

    /// The four configurations in order of stacked mitigations.
    pub fn ladder(accum: usize) -> [Strategy; 4] {
        use Batching::*;
        use Sampling::*;
        [
            Strategy { sampling: NaiveIndependent, batching: Uniform, accum: 1 },
            Strategy { sampling: GroupTied, batching: Uniform, accum: 1 },
            Strategy { sampling: GroupTied, batching: Differential, accum: 1 },
            Strategy { sampling: GroupTied, batching: Differential, accum },
        ]
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.sampling {
            Sampling::NaiveIndependent => "naive",
            Sampling::GroupTied => "tied",
        };
        let b = match self.batching {
            Batching::Uniform => "uniform",
            Batching::Differential => "differential",
        };
        write!(f, "{s}/{b}/A={}", self.accum)
    }
}

impl FromStr for Sampling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Sampling::NaiveIndependent),
            "tied" => Ok(Sampling::GroupTied),
            _ => Err(Error::Config(format!("unknown sampling strategy `{s}`"))),
        }
    }
}

impl FromStr for Batching {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Batching::Uniform),
            "differential" => Ok(Batching::Differential),
            _ => Err(Error::Config(format!("unknown batching mode `{s}`"))),
        }
    }
}

/// What one rank processes in one microstep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Microbatch {
    pub samples: f64,
    pub tokens: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    datasets: Vec<DatasetCost>,
    per_token: f64,
    /// Sample and history multipliers applied to 2D data under differential batching.
    batch_2d: f64,
    history_2d: f64,
}

impl CostModel {
    pub fn new(datasets: Vec<DatasetCost>) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::Config("cost catalog is empty".into()));
        }
        Ok(CostModel { datasets, per_token: 1.0, batch_2d: 2.0, history_2d: 2.0 })
    }

    pub fn with_differential(mut self, batch_2d: f64, history_2d: f64) -> Result<Self> {
        if !(batch_2d >= 1.0 && history_2d >= 1.0 && batch_2d.is_finite() && history_2d.is_finite()) {
            return Err(Error::Config("differential multipliers must be finite and at least 1".into()));
        }
        self.batch_2d = batch_2d;
        self.history_2d = history_2d;
        Ok(self)
    }

    /// 14 two-dimensional and 5 three-dimensional datasets. 2D samples are
    /// 32x32 token frames with a 3-step history and 5% attention share; 3D
    /// samples are 16^3 frames with a 3-step history and 20% attention share.
    pub fn reference() -> Self {
        let mut ds = Vec::new();
        for i in 0..14 {
            ds.push(DatasetCost::new(format!("planar-{i:02}"), 2, 32.0 * 32.0 * 3.0, 0.05, DEFAULT_ENC_FRAC).unwrap());
        }
        for i in 0..5 {
            ds.push(DatasetCost::new(format!("volume-{i:02}"), 3, 16.0f64.powi(3) * 3.0, 0.20, DEFAULT_ENC_FRAC).unwrap());
        }
        CostModel::new(ds).unwrap()
    }

    /// One dataset per line: `name dim tokens surcharge [enc_frac]`.
    /// Blank lines and `#` comments are skipped.
    pub fn parse_catalog(text: &str) -> Result<Self> {
        let mut ds = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if !(4..=5).contains(&cols.len()) {
                return Err(Error::parse(line, "expected `name dim tokens surcharge [enc_frac]`"));
            }
            let num = |i: usize, what: &str| -> Result<f64> {
                cols[i].parse::<f64>().map_err(|_| Error::parse(line, format!("bad {what} `{}`", cols[i])))
            };
            let dim = cols[1].parse::<usize>().map_err(|_| Error::parse(line, format!("bad dim `{}`", cols[1])))?;
            let enc = if cols.len() == 5 { num(4, "enc_frac")? } else { DEFAULT_ENC_FRAC };
            let d = DatasetCost::new(cols[0], dim, num(2, "tokens")?, num(3, "surcharge")?, enc)
                .map_err(|e| Error::parse(line, e.to_string()))?;
            ds.push(d);
        }
        CostModel::new(ds)
    }

    pub fn to_catalog(&self) -> String {
        self.datasets
            .iter()
            .map(|d| format!("{} {} {} {} {}\n", d.name, d.dim, d.tokens, d.surcharge, d.enc_frac))
            .collect()
    }

    pub fn datasets(&self) -> &[DatasetCost] {
        &self.datasets
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn microbatch(&self, id: usize, batching: Batching) -> Microbatch {
        let d = &self.datasets[id];
        let (samples, history) = match (batching, d.dim) {
            (Batching::Differential, 2) => (self.batch_2d, self.history_2d),
            _ => (1.0, 1.0),
        };
        let tokens = samples * history * d.tokens;
        let cost = tokens * self.per_token / (1.0 - d.surcharge) * (1.0 + d.enc_frac);
        Microbatch { samples, tokens, cost }
    }

    /// Mean microbatch cost under a uniform draw over the catalog.
    pub fn mean_cost(&self, batching: Batching) -> f64 {
        (0..self.len()).map(|i| self.microbatch(i, batching).cost).sum::<f64>() / self.len() as f64
    }
}

/// Dataset id per rank for one microstep.
pub fn sample_assignment<R: Rng>(
    sampling: Sampling,
    catalog_len: usize,
    cluster: &ClusterConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if catalog_len == 0 {
        return Err(Error::Config("cannot sample from an empty catalog".into()));
    }
    Ok(match sampling {
        Sampling::NaiveIndependent => (0..cluster.ranks).map(|_| rng.gen_range(0..catalog_len)).collect(),
        Sampling::GroupTied => (0..cluster.groups())
            .flat_map(|_| std::iter::repeat_n(rng.gen_range(0..catalog_len), cluster.group_size))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOutcome {
    pub time: f64,
    /// Sum of every rank's microbatch cost.
    pub busy: f64,
    pub samples: f64,
    pub tokens: f64,
}

/// Wall time of one optimizer step given `accum` per-rank assignments.
pub fn step_time(
    microsteps: &[Vec<usize>],
    model: &CostModel,
    batching: Batching,
    cluster: &ClusterConfig,
) -> Result<StepOutcome> {
    let mut out = StepOutcome::default();
    out.time = accumulate_step(microsteps, model, batching, cluster, &mut out)?;
    Ok(out)
}

/// Adds busy, samples, and tokens into `acc` cost by cost, so running totals
/// over many steps equal a flat sum of assignment costs exactly.
fn accumulate_step(
    microsteps: &[Vec<usize>],
    model: &CostModel,
    batching: Batching,
    cluster: &ClusterConfig,
    acc: &mut StepOutcome,
) -> Result<f64> {
    let mut group_totals = vec![0.0; cluster.groups()];
    for assign in microsteps {
        if assign.len() != cluster.ranks {
            return Err(Error::Dimension(format!(
                "assignment covers {} ranks, cluster has {}",
                assign.len(),
                cluster.ranks
            )));
        }
        if let Some(&bad) = assign.iter().find(|&&id| id >= model.len()) {
            return Err(Error::Range(format!("dataset id {bad} outside catalog of {}", model.len())));
        }
        for (g, total) in group_totals.iter_mut().enumerate() {
            let mut slowest = 0.0f64;
            for &id in &assign[g * cluster.group_size..(g + 1) * cluster.group_size] {
                let mb = model.microbatch(id, batching);
                slowest = slowest.max(mb.cost);
                acc.busy += mb.cost;
                acc.samples += mb.samples;
                acc.tokens += mb.tokens;
            }
            *total += slowest;
        }
    }
    Ok(group_totals.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputReport {
    pub strategy: Strategy,
    pub steps: usize,
    pub time: f64,
    pub busy: f64,
    pub samples: f64,
    pub tokens: f64,
}

impl ThroughputReport {
    pub fn samples_per_time(&self) -> f64 {
        self.samples / self.time
    }

    pub fn tokens_per_time(&self) -> f64 {
        self.tokens / self.time
    }

    pub fn mean_step_time(&self) -> f64 {
        self.time / self.steps as f64
    }

    /// `1 - busy / (ranks * time)`.
    pub fn idle_fraction(&self, cluster: &ClusterConfig) -> f64 {
        1.0 - self.busy / (cluster.ranks as f64 * self.time)
    }

    pub const TSV_HEADER: &'static str =
        "strategy\tsteps\ttime\tsamples_per_time\ttokens_per_time\tidle_fraction\tspeedup_samples\tspeedup_tokens";

    /// One row; speedups are relative to `base`.
    pub fn tsv_row(&self, cluster: &ClusterConfig, base: &ThroughputReport) -> String {
        format!(
            "{}\t{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6}\t{:.4}\t{:.4}",
            self.strategy,
            self.steps,
            self.time,
            self.samples_per_time(),
            self.tokens_per_time(),
            self.idle_fraction(cluster),
            self.samples_per_time() / base.samples_per_time(),
            self.tokens_per_time() / base.tokens_per_time(),
        )
    }
}

/// Deterministic given `seed`.
pub fn simulate(
    strategy: &Strategy,
    model: &CostModel,
    cluster: &ClusterConfig,
    steps: usize,
    seed: u64,
) -> Result<ThroughputReport> {
    if steps == 0 {
        return Err(Error::Config("simulation needs at least one step".into()));
    }
    if strategy.accum == 0 {
        return Err(Error::Config("accumulation steps must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = StepOutcome::default();
    let mut micro = Vec::with_capacity(strategy.accum);
    for _ in 0..steps {
        micro.clear();
        for _ in 0..strategy.accum {
            micro.push(sample_assignment(strategy.sampling, model.len(), cluster, &mut rng)?);
        }
        acc.time += accumulate_step(&micro, model, strategy.batching, cluster, &mut acc)?;
    }
    let report = ThroughputReport {
        strategy: *strategy,
        steps,
        time: acc.time,
        busy: acc.busy,
        samples: acc.samples,
        tokens: acc.tokens,
    };
    Ok(report)
}

/// Samples per unit time if accumulation removed all barrier waiting.
pub fn throughput_ceiling(model: &CostModel, batching: Batching, cluster: &ClusterConfig) -> f64 {
    let n = model.len() as f64;
    let samples: f64 = (0..model.len()).map(|i| model.microbatch(i, batching).samples).sum::<f64>() / n;
    cluster.ranks as f64 * samples / model.mean_cost(batching)
}
