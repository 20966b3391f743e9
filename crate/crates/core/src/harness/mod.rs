//! Run orchestration and persistence.
//!
//! A run directory holds fixed filenames:
//!
//! * `config.snapshot`: the effective configuration (TOML)
//! * `trace.jsonl`: one header line, then one record per schedule entry per trajectory
//! * `theta.ckpt`: final parameters, noise fields and lattice renders (JSON)
//! * `renders/trajectory_NNNN.csv`: plot-ready lattice grids
//! * `metrics.json`
//!
//! Every file carries the config hash and the crate version.

mod config;
mod oracle;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baselines::GradientAscent;
use crate::diffrep::{DiffRep, NoiseField};
use crate::error::{Error, Result};
use crate::metrics::{
    default_mode_radius, mean_pairwise_distance, mmd_permutation_test, mode_coverage, shell_stats, SampleBatch,
};
use crate::sampler::{trajectory_rng, DdrepSampler, StepRecord};

pub use config::{ConditionSpec, MetricsSpec, RepSpec, RunConfig, ScheduleSpec, ScoreSpec, TargetSpec};
pub use oracle::{oracle_check, CheckStatus, OracleCheck};

/// Version string embedded in every artifact.
pub const VERSION: &str = concat!("diffrep-core v", env!("CARGO_PKG_VERSION"));

pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const CHECKPOINT_FILE: &str = "theta.ckpt";
pub const RENDERS_DIR: &str = "renders";
pub const METRICS_FILE: &str = "metrics.json";

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub endpoint: Option<String>,
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Sample,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub config_hash: String,
    pub version: String,
    pub kind: RunKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCheckpoint {
    pub trajectory: u64,
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseField>,
    /// Final render of the whole lattice.
    pub render: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub version: String,
    pub kind: RunKind,
    pub param_dim: usize,
    pub lattice_shape: (usize, usize, usize),
    pub trajectories: Vec<TrajectoryCheckpoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub metrics: serde_json::Value,
}

fn effective_config(config: &RunConfig, opts: &RunOptions) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = config.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &opts.out {
        cfg.output = Some(out.clone());
    }
    if let Some(endpoint) = &opts.endpoint {
        cfg.score.endpoint = Some(endpoint.clone());
    }
    let out = cfg.output.clone().ok_or_else(|| Error::Config {
        key: "output".into(),
        message: "no output directory given (set `output` or pass --out)".into(),
    })?;
    Ok((cfg, out))
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))
}

/// Runs `f(0..n)` on `jobs` workers; results come back in index order.
pub fn par_trajectories<T, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    thread_pool(jobs)?.install(|| (0..n as u64).into_par_iter().map(&f).collect())
}

struct Artifacts {
    dir: PathBuf,
    hash: String,
}

impl Artifacts {
    fn create(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir.join(RENDERS_DIR))?;
        let hash = cfg.hash()?;
        let snapshot = format!("# config_hash={hash} version={VERSION}\n{}", cfg.to_toml_string()?);
        fs::write(dir.join(CONFIG_SNAPSHOT), snapshot)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash,
        })
    }

    fn write_trace(&self, kind: RunKind, records: &[Vec<StepRecord>]) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(self.dir.join(TRACE_FILE))?);
        let header = TraceHeader {
            config_hash: self.hash.clone(),
            version: VERSION.into(),
            kind,
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for r in records.iter().flatten() {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_renders(&self, rep: &dyn DiffRep, ckpt: &Checkpoint) -> Result<()> {
        let (rows, cols, ch) = rep.lattice_shape();
        for t in &ckpt.trajectories {
            let path = self.dir.join(RENDERS_DIR).join(format!("trajectory_{:04}.csv", t.trajectory));
            let mut w = BufWriter::new(fs::File::create(path)?);
            writeln!(
                w,
                "# config_hash={} version={VERSION} rows={rows} cols={cols} channels={ch}",
                self.hash
            )?;
            for r in 0..rows {
                let row = &t.render[r * cols * ch..(r + 1) * cols * ch];
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            w.flush()?;
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(self.dir.join(name))?);
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Summary statistics of final renders against the configured target.
fn batch_metrics(cfg: &RunConfig, renders: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<serde_json::Value> {
    let mut m = serde_json::Map::new();
    if renders.len() >= 2 {
        let shell = shell_stats(renders)?;
        m.insert("shell".into(), serde_json::to_value(shell)?);
        m.insert("mean_pairwise_distance".into(), json!(mean_pairwise_distance(renders)?));
    }
    let mixture = cfg.target.mixture()?;
    if mixture.n_components() >= 2 {
        let means = mixture.means().to_vec();
        let radius = match cfg.metrics.mode_radius {
            Some(r) => r,
            None => default_mode_radius(&means)?,
        };
        let within = mode_coverage(renders, &means, radius)?;
        let nearest = mode_coverage(renders, &means, f64::INFINITY)?;
        m.insert(
            "mode_coverage".into(),
            json!({ "radius": radius, "within_radius": within, "nearest_mean": nearest }),
        );
    }
    if cfg.metrics.mmd_permutations > 0 && renders.len() >= 2 {
        let reference: Vec<Vec<f64>> = (0..renders.len()).map(|_| mixture.sample(rng)).collect();
        let test = mmd_permutation_test(renders, &reference, cfg.metrics.bandwidth, cfg.metrics.mmd_permutations, rng)?;
        m.insert("mmd_vs_target".into(), serde_json::to_value(test)?);
    }
    Ok(serde_json::Value::Object(m))
}

/// Stream reserved for metric computations (trajectories use streams `0..n`).
const METRICS_STREAM: u64 = u64::MAX;

/// Separated-noise sampling of `trajectories` independent parameter sets.
pub fn run_sample(config: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let (cfg, out) = effective_config(config, opts)?;
    cfg.validate()?;
    let rep = cfg.rep.build()?;
    let score = cfg.score_model(None)?;
    let schedule = cfg.schedule.build()?;
    let repaint = cfg.repaint_schedule()?;
    let sampler = DdrepSampler::new(rep.as_ref(), score.as_ref(), &schedule, &repaint, &cfg.sampler)?;
    log::info!(
        "sampling {} trajectories, {} schedule entries each ({} reverse)",
        cfg.trajectories,
        repaint.len(),
        repaint.reverse_count()
    );
    let outputs = par_trajectories(cfg.trajectories, opts.jobs, |t| {
        let mut rng = trajectory_rng(cfg.seed, t);
        let out = sampler.sample(cfg.seed, t, &mut rng)?;
        log::debug!("trajectory {t} finished with {} NFE", out.state.nfe);
        Ok(out)
    })?;

    let art = Artifacts::create(&out, &cfg)?;
    let records: Vec<Vec<StepRecord>> = outputs.iter().map(|o| o.records.clone()).collect();
    art.write_trace(RunKind::Sample, &records)?;
    let mut trajectories = Vec::with_capacity(outputs.len());
    for (t, o) in outputs.iter().enumerate() {
        trajectories.push(TrajectoryCheckpoint {
            trajectory: t as u64,
            theta: o.state.theta.clone(),
            noise: Some(o.state.noise.clone()),
            render: rep.render_lattice(&o.state.theta)?,
        });
    }
    let ckpt = Checkpoint {
        config_hash: art.hash.clone(),
        version: VERSION.into(),
        kind: RunKind::Sample,
        param_dim: rep.param_dim(),
        lattice_shape: rep.lattice_shape(),
        trajectories,
    };
    art.write_json(CHECKPOINT_FILE, &ckpt)?;
    art.write_renders(rep.as_ref(), &ckpt)?;

    let renders = final_views(rep.as_ref(), &ckpt)?;
    let mut rng = trajectory_rng(cfg.seed, METRICS_STREAM);
    let mut metrics = batch_metrics(&cfg, &renders, &mut rng)?;
    let nfe: Vec<usize> = outputs.iter().map(|o| o.state.nfe).collect();
    let obj = metrics.as_object_mut().expect("object");
    obj.insert("nfe_per_trajectory".into(), json!(nfe));
    wrap_metrics(&art, RunKind::Sample, &cfg, metrics)
}

fn wrap_metrics(art: &Artifacts, kind: RunKind, cfg: &RunConfig, metrics: serde_json::Value) -> Result<RunSummary> {
    let run_id = format!("{:?}-{}", kind, &art.hash[..12]).to_lowercase();
    let doc = json!({
        "run_id": run_id,
        "config_hash": art.hash,
        "version": VERSION,
        "kind": kind,
        "seed": cfg.seed,
        "trajectories": cfg.trajectories,
        "metrics": metrics,
    });
    art.write_json(METRICS_FILE, &doc)?;
    Ok(RunSummary {
        out_dir: art.dir.clone(),
        config_hash: art.hash.clone(),
        metrics: doc,
    })
}

/// The values a single view sees for each trajectory. Single-view
/// representations yield the whole render; panoramas yield the window at origin 0.
fn final_views(rep: &dyn DiffRep, ckpt: &Checkpoint) -> Result<Vec<Vec<f64>>> {
    let view = match rep.view_distribution() {
        crate::diffrep::ViewDistribution::Singleton => crate::diffrep::View::Whole,
        crate::diffrep::ViewDistribution::Panorama { .. } => crate::diffrep::View::Window { origin: 0.0 },
    };
    ckpt.trajectories.iter().map(|t| rep.render(&t.theta, &view)).collect()
}

/// Gradient-ascent baseline runs from random starts.
pub fn run_baseline(config: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let (cfg, out) = effective_config(config, opts)?;
    cfg.validate()?;
    let rep = cfg.rep.build()?;
    let score = cfg.score_model(None)?;
    let schedule = cfg.schedule.build()?;
    let ga = GradientAscent::new(rep.as_ref(), score.as_ref(), &schedule, &cfg.baseline)?;
    log::info!("gradient ascent: {} runs x {} iterations", cfg.trajectories, cfg.baseline.iterations);
    let outputs = par_trajectories(cfg.trajectories, opts.jobs, |t| {
        let mut rng = trajectory_rng(cfg.seed, t);
        let theta0 = rep.random_params(&mut rng);
        ga.run(theta0, cfg.seed, t, &mut rng)
    })?;

    let art = Artifacts::create(&out, &cfg)?;
    let records: Vec<Vec<StepRecord>> = outputs.iter().map(|o| o.records.clone()).collect();
    art.write_trace(RunKind::Baseline, &records)?;
    let mut trajectories = Vec::with_capacity(outputs.len());
    for (t, o) in outputs.iter().enumerate() {
        trajectories.push(TrajectoryCheckpoint {
            trajectory: t as u64,
            theta: o.theta.clone(),
            noise: None,
            render: rep.render_lattice(&o.theta)?,
        });
    }
    let ckpt = Checkpoint {
        config_hash: art.hash.clone(),
        version: VERSION.into(),
        kind: RunKind::Baseline,
        param_dim: rep.param_dim(),
        lattice_shape: rep.lattice_shape(),
        trajectories,
    };
    art.write_json(CHECKPOINT_FILE, &ckpt)?;
    art.write_renders(rep.as_ref(), &ckpt)?;

    let renders = final_views(rep.as_ref(), &ckpt)?;
    let mut rng = trajectory_rng(cfg.seed, METRICS_STREAM);
    let mut metrics = batch_metrics(&cfg, &renders, &mut rng)?;
    let grads: Vec<serde_json::Value> = outputs
        .iter()
        .map(|o| json!({ "initial": o.initial_grad_norm, "final": o.final_grad_norm }))
        .collect();
    metrics
        .as_object_mut()
        .expect("object")
        .insert("grad_norm".into(), json!(grads));
    wrap_metrics(&art, RunKind::Baseline, &cfg, metrics)
}

/// A sample batch from a run directory (final single-view renders) or a
/// JSON [`SampleBatch`] file.
pub fn load_batch(path: &Path) -> Result<SampleBatch> {
    if path.is_dir() {
        let text = fs::read_to_string(path.join(CHECKPOINT_FILE))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        let cfg_text = fs::read_to_string(path.join(CONFIG_SNAPSHOT))?;
        let cfg = RunConfig::from_toml_str(&cfg_text)?;
        let rep = cfg.rep.build()?;
        return SampleBatch::new(path.display().to_string(), final_views(rep.as_ref(), &ckpt)?);
    }
    let text = fs::read_to_string(path)?;
    let batch: SampleBatch = serde_json::from_str(&text)?;
    batch.validate()?;
    Ok(batch)
}

/// Two-sample comparison: MMD permutation test plus diversity of each side.
pub fn compare_batches(a: &SampleBatch, b: &SampleBatch, permutations: usize, seed: u64) -> Result<serde_json::Value> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            context: "batch comparison",
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut rng = trajectory_rng(seed, METRICS_STREAM);
    let test = mmd_permutation_test(&a.samples, &b.samples, None, permutations, &mut rng)?;
    let da = mean_pairwise_distance(&a.samples)?;
    let db = mean_pairwise_distance(&b.samples)?;
    Ok(json!({
        "a": { "tag": a.tag, "n": a.len(), "shell": shell_stats(&a.samples)?, "mean_pairwise_distance": da },
        "b": { "tag": b.tag, "n": b.len(), "shell": shell_stats(&b.samples)?, "mean_pairwise_distance": db },
        "diversity_ratio": if db > 0.0 { json!(da / db) } else { serde_json::Value::Null },
        "mmd": test,
        "version": VERSION,
    }))
}

/// Reads a trace file back (header, records).
pub fn read_trace(path: &Path) -> Result<(TraceHeader, Vec<StepRecord>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: TraceHeader = serde_json::from_str(lines.next().unwrap_or(""))?;
    let records = lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
    Ok((header, records))
}
