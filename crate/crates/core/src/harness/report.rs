use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rounds to six decimals, the precision of every exported float.
pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
}

/// Flow-run aggregates of one seed, plus the suite's collision and waiting figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub vehicles: u64,
    pub finished: u64,
    pub collided: u64,
    pub censored: u64,
    pub travel_time: f64,
    pub waiting_time: f64,
    pub average_speed: f64,
    pub collision_rate: f64,
    pub suite_collision_rate: f64,
    pub suite_waiting_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub flow_rate: f64,
    pub horizon: f64,
    pub travel_time: MetricStats,
    pub waiting_time: MetricStats,
    pub average_speed: MetricStats,
    pub collision_rate: MetricStats,
    /// Mean seconds per learned decision; absent for baselines.
    pub inference_secs: Option<f64>,
    pub per_seed: Vec<SeedReport>,
}

impl EvaluationReport {
    /// Sorts seeds and derives the cross-seed statistics.
    pub fn assemble(
        method: String,
        config_hash: String,
        flow_rate: f64,
        horizon: f64,
        mut per_seed: Vec<SeedReport>,
        inference_secs: Option<f64>,
    ) -> Self {
        per_seed.sort_by_key(|r| r.seed);
        let stat = |f: fn(&SeedReport) -> f64| MetricStats::over(&per_seed.iter().map(f).collect::<Vec<_>>());
        Self {
            method,
            config_hash,
            seeds: per_seed.iter().map(|r| r.seed).collect(),
            flow_rate: round6(flow_rate),
            horizon: round6(horizon),
            travel_time: stat(|r| r.travel_time),
            waiting_time: stat(|r| r.waiting_time),
            average_speed: stat(|r| r.average_speed),
            collision_rate: stat(|r| r.collision_rate),
            inference_secs: inference_secs.map(|x| (x * 1e9).round() / 1e9),
            per_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Usage(format!("unknown report format `{other}` (expected csv or json)"))),
        }
    }
}

impl ReportFormat {
    /// Format implied by a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        path.extension().and_then(|e| e.to_str()).unwrap_or("").parse()
    }
}

const META_KEYS: [&str; 15] = [
    "method",
    "config_hash",
    "seeds",
    "flow_rate",
    "horizon",
    "travel_time_mean",
    "travel_time_std",
    "waiting_time_mean",
    "waiting_time_std",
    "average_speed_mean",
    "average_speed_std",
    "collision_rate_mean",
    "collision_rate_std",
    "inference_secs",
    "seed_count",
];

fn meta_values(r: &EvaluationReport) -> Vec<String> {
    vec![
        r.method.clone(),
        r.config_hash.clone(),
        r.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";"),
        r.flow_rate.to_string(),
        r.horizon.to_string(),
        r.travel_time.mean.to_string(),
        r.travel_time.std.to_string(),
        r.waiting_time.mean.to_string(),
        r.waiting_time.std.to_string(),
        r.average_speed.mean.to_string(),
        r.average_speed.std.to_string(),
        r.collision_rate.mean.to_string(),
        r.collision_rate.std.to_string(),
        r.inference_secs.map(|x| x.to_string()).unwrap_or_default(),
        r.seeds.len().to_string(),
    ]
}

/// CSV layout: `# key,value` provenance lines, then one row per seed.
pub fn write_csv<W: Write>(report: &EvaluationReport, mut out: W) -> Result<()> {
    for (k, v) in META_KEYS.iter().zip(meta_values(report)) {
        writeln!(out, "# {k},{v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    if report.per_seed.is_empty() {
        w.write_record(SEED_HEADER)?;
    }
    for r in &report.per_seed {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

const SEED_HEADER: [&str; 11] = [
    "seed",
    "vehicles",
    "finished",
    "collided",
    "censored",
    "travel_time",
    "waiting_time",
    "average_speed",
    "collision_rate",
    "suite_collision_rate",
    "suite_waiting_time",
];

pub fn read_csv<R: BufRead>(input: R) -> Result<EvaluationReport> {
    let mut meta = std::collections::BTreeMap::new();
    let mut body = String::new();
    for line in input.lines() {
        let line = line?;
        match line.strip_prefix("# ") {
            Some(kv) => {
                let (k, v) = kv.split_once(',').ok_or_else(|| Error::Contract(format!("bad report metadata line `{line}`")))?;
                meta.insert(k.to_string(), v.to_string());
            }
            None => {
                body.push_str(&line);
                body.push('\n');
            }
        }
    }
    let get = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Contract(format!("report metadata lacks `{k}`")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Contract(format!("bad number for `{k}`"))) };
    let stats = |k: &str| -> Result<MetricStats> { Ok(MetricStats { mean: num(&format!("{k}_mean"))?, std: num(&format!("{k}_std"))? }) };
    let seeds_text = get("seeds")?;
    let seeds = if seeds_text.is_empty() {
        Vec::new()
    } else {
        seeds_text.split(';').map(|s| s.parse().map_err(|_| Error::Contract(format!("bad seed `{s}`")))).collect::<Result<_>>()?
    };
    let inference = get("inference_secs")?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let per_seed = rdr.deserialize().collect::<Result<Vec<SeedReport>, _>>()?;
    Ok(EvaluationReport {
        method: get("method")?,
        config_hash: get("config_hash")?,
        seeds,
        flow_rate: num("flow_rate")?,
        horizon: num("horizon")?,
        travel_time: stats("travel_time")?,
        waiting_time: stats("waiting_time")?,
        average_speed: stats("average_speed")?,
        collision_rate: stats("collision_rate")?,
        inference_secs: if inference.is_empty() { None } else { Some(num("inference_secs")?) },
        per_seed,
    })
}

pub fn export_report(report: &EvaluationReport, path: &Path, format: ReportFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        ReportFormat::Csv => write_csv(report, &mut out)?,
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, report)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn import_report(path: &Path, format: ReportFormat) -> Result<EvaluationReport> {
    let input = BufReader::new(File::open(path)?);
    match format {
        ReportFormat::Csv => read_csv(input),
        ReportFormat::Json => Ok(serde_json::from_reader(input)?),
    }
}
