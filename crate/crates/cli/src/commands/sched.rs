use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use patchwork::scheduler::{simulate, Batching, ClusterConfig, CostModel, Sampling, Strategy, ThroughputReport};
use serde::Serialize;

use crate::manifest::{finish, prepare, write_text};
use crate::{Common, Failure, Outcome};

#[derive(Debug, Args, Serialize)]
pub struct SchedArgs {
    /// Catalog file, one `name dim tokens surcharge [enc_frac]` per line.
    /// The built-in 19-dataset catalog is used when absent.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// `naive` or `tied`.
    #[arg(long, default_value = "tied")]
    pub strategy: String,
    /// `uniform` or `differential`.
    #[arg(long, default_value = "differential")]
    pub batch: String,
    /// Microbatches accumulated per optimizer step.
    #[arg(long, default_value_t = 4)]
    pub accum: usize,
    /// Optimizer steps to simulate.
    #[arg(long, default_value_t = 10_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 96)]
    pub ranks: usize,
    /// Ranks per sharding group.
    #[arg(long, default_value_t = 8)]
    pub group_size: usize,
    /// Sample multiplier for 2-d data under differential batching.
    #[arg(long, default_value_t = 2.0)]
    pub batch_2d: f64,
    /// History multiplier for 2-d data under differential batching.
    #[arg(long, default_value_t = 2.0)]
    pub history_2d: f64,
    /// Report all four stacked configurations instead of one strategy.
    #[arg(long)]
    pub ladder: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

pub fn run(a: &SchedArgs) -> Outcome {
    let dir = prepare(&a.common)?;
    let mut outputs = Vec::new();
    let res = body(a, &dir, &mut outputs);
    finish("simulate-sched", &a.common, a, &outputs, res)
}

fn body(a: &SchedArgs, dir: &Path, outputs: &mut Vec<PathBuf>) -> Outcome {
    let model = match &a.catalog {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
            CostModel::parse_catalog(&text)?
        }
        None => CostModel::reference(),
    }
    .with_differential(a.batch_2d, a.history_2d)?;
    let cluster = ClusterConfig::new(a.ranks, a.group_size)?;
    let strategies: Vec<Strategy> = if a.ladder {
        Strategy::ladder(a.accum).to_vec()
    } else {
        let s: Sampling = a.strategy.parse()?;
        let b: Batching = a.batch.parse()?;
        vec![Strategy::new(s, b, a.accum)?]
    };
    let base = simulate(&Strategy::ladder(1)[0], &model, &cluster, a.steps, a.common.seed)?;
    let reports = strategies
        .iter()
        .map(|s| simulate(s, &model, &cluster, a.steps, a.common.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = format!("{}\n", ThroughputReport::TSV_HEADER);
    for r in &reports {
        let _ = writeln!(table, "{}", r.tsv_row(&cluster, &base));
    }
    print!("{table}");
    outputs.push(write_text(dir, "throughput.tsv", &table)?);
    outputs.push(write_text(dir, "catalog.txt", &model.to_catalog())?);
    Ok(())
}
