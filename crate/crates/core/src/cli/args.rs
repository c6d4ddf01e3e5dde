use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::detectors::{DetectorKind, DetectorSpec, LatencyModel};
use crate::motion::{MotionEstimatorParams, SearchMethod, DEFAULT_BLOCK_SIZE, DEFAULT_SEARCH_RANGE};
use crate::pipeline::ExecutionMode;
use crate::propagation::AggregationKind;

#[derive(Debug, Parser)]
#[command(name = "movex", version, about = "Motion-vector box propagation for low-latency video detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the propagation pipeline over a frame directory.
    Run(RunArgs),
    /// Estimate block motion for every consecutive frame pair and write an MVF sidecar.
    EstimateFlow(EstimateFlowArgs),
    /// Generate a seeded synthetic sequence with gt.txt and det.txt.
    Synth(SynthArgs),
    /// Score MOT-format detections against ground truth.
    Eval(EvalArgs),
    /// Report the per-frame propagation step latency distribution.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArgs {
    /// TOML file with defaults for any of these flags; flags win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub frames: Option<PathBuf>,
    /// estimate | sidecar:PATH
    #[arg(long)]
    pub flow: Option<String>,
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long)]
    pub search_range: Option<usize>,
    /// full | threestep
    #[arg(long)]
    pub search: Option<String>,
    /// median | mean
    #[arg(long)]
    pub agg: Option<String>,
    /// oracle:PATH | mock:PATH
    #[arg(long)]
    pub detector: Option<String>,
    /// frames:N | ms:N | schedule:PATH
    #[arg(long)]
    pub det_latency: Option<String>,
    #[arg(long)]
    pub score_threshold: Option<f64>,
    /// realtime | deterministic
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub out_dets: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out_stats: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Per-frame CSV of step latency and prior age.
    #[arg(long, value_name = "PATH")]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateFlowArgs {
    #[arg(long, value_name = "DIR")]
    pub frames: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,
    #[arg(long, default_value_t = DEFAULT_SEARCH_RANGE)]
    pub search_range: usize,
    #[arg(long, default_value = "full")]
    pub search: String,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Trajectory description (TOML or JSON). Defaults to the built-in benchmark.
    #[arg(long, value_name = "PATH")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,
    #[arg(long, default_value_t = crate::eval::DEFAULT_IOU_THRESHOLD)]
    pub iou: f64,
    /// Also write the report here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowChoice {
    Estimate,
    Sidecar(PathBuf),
}

impl FromStr for FlowChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "estimate" => Ok(FlowChoice::Estimate),
            Some(("sidecar", p)) if !p.is_empty() => Ok(FlowChoice::Sidecar(p.into())),
            _ => bail!("--flow expects 'estimate' or 'sidecar:PATH', got '{s}'"),
        }
    }
}

pub fn parse_search(s: &str) -> Result<SearchMethod> {
    match s {
        "full" => Ok(SearchMethod::FullSearch),
        "threestep" => Ok(SearchMethod::ThreeStep),
        _ => bail!("--search expects 'full' or 'threestep', got '{s}'"),
    }
}

fn parse_agg(s: &str) -> Result<AggregationKind> {
    match s {
        "median" => Ok(AggregationKind::MedianXY),
        "mean" => Ok(AggregationKind::MeanXY),
        _ => bail!("--agg expects 'median' or 'mean', got '{s}'"),
    }
}

fn parse_mode(s: &str) -> Result<ExecutionMode> {
    match s {
        "realtime" => Ok(ExecutionMode::RealTime),
        "deterministic" => Ok(ExecutionMode::Deterministic),
        _ => bail!("--mode expects 'realtime' or 'deterministic', got '{s}'"),
    }
}

fn parse_latency(s: &str) -> Result<LatencyModel> {
    let (kind, val) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("--det-latency expects frames:N, ms:N or schedule:PATH, got '{s}'"))?;
    match kind {
        "frames" => Ok(LatencyModel::FixedFrames(
            val.parse().with_context(|| format!("invalid frame count '{val}'"))?,
        )),
        "ms" => Ok(LatencyModel::FixedWallClock {
            ms: val.parse().with_context(|| format!("invalid milliseconds '{val}'"))?,
        }),
        "schedule" => Ok(LatencyModel::load_schedule(Path::new(val))?),
        _ => bail!("--det-latency expects frames:N, ms:N or schedule:PATH, got '{s}'"),
    }
}

fn parse_detector(s: &str, score_threshold: f64) -> Result<DetectorKind> {
    match s.split_once(':') {
        Some(("oracle", p)) if !p.is_empty() => Ok(DetectorKind::FileOracle {
            path: p.into(),
            score_threshold,
        }),
        Some(("mock", p)) if !p.is_empty() => Ok(DetectorKind::ScriptedMock { path: p.into() }),
        _ => bail!("--detector expects 'oracle:PATH' or 'mock:PATH', got '{s}'"),
    }
}

/// Fully resolved `run` / `bench` settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub frames: PathBuf,
    pub flow: FlowChoice,
    pub estimator: MotionEstimatorParams,
    pub detector: DetectorSpec,
    pub aggregation: AggregationKind,
    pub mode: ExecutionMode,
    pub out_dets: Option<PathBuf>,
    pub out_stats: Option<PathBuf>,
}

impl RunArgs {
    /// Fills unset flags from the config file, if any.
    pub fn merged(self) -> Result<RunArgs> {
        let Some(path) = &self.config else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: RunArgs = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(RunArgs {
            config: self.config,
            frames: self.frames.or(file.frames),
            flow: self.flow.or(file.flow),
            block_size: self.block_size.or(file.block_size),
            search_range: self.search_range.or(file.search_range),
            search: self.search.or(file.search),
            agg: self.agg.or(file.agg),
            detector: self.detector.or(file.detector),
            det_latency: self.det_latency.or(file.det_latency),
            score_threshold: self.score_threshold.or(file.score_threshold),
            mode: self.mode.or(file.mode),
            out_dets: self.out_dets.or(file.out_dets),
            out_stats: self.out_stats.or(file.out_stats),
        })
    }

    /// Validates everything that can be checked before frames are read.
    pub fn resolve(self) -> Result<RunConfig> {
        let a = self.merged()?;
        let frames = a.frames.ok_or_else(|| anyhow!("--frames is required"))?;
        if !frames.is_dir() {
            bail!("frame directory {} does not exist", frames.display());
        }
        let flow: FlowChoice = a.flow.as_deref().unwrap_or("estimate").parse()?;
        if let FlowChoice::Sidecar(p) = &flow {
            ensure_readable(p, "flow sidecar")?;
        }
        let estimator = MotionEstimatorParams {
            block_size: a.block_size.unwrap_or(DEFAULT_BLOCK_SIZE),
            search_range: a.search_range.unwrap_or(DEFAULT_SEARCH_RANGE),
            method: parse_search(a.search.as_deref().unwrap_or("full"))?,
            zero_bias: 0.0,
        };
        estimator.validate()?;
        let score_threshold = a.score_threshold.unwrap_or(0.0);
        let kind = parse_detector(
            a.detector.as_deref().ok_or_else(|| anyhow!("--detector is required"))?,
            score_threshold,
        )?;
        match &kind {
            DetectorKind::FileOracle { path, .. } | DetectorKind::ScriptedMock { path } => {
                ensure_readable(path, "detector file")?
            }
        }
        let latency = parse_latency(a.det_latency.as_deref().unwrap_or("frames:0"))?;
        let mode = parse_mode(a.mode.as_deref().unwrap_or("deterministic"))?;
        if mode == ExecutionMode::Deterministic && latency.frames().is_none() {
            bail!("--mode deterministic needs --det-latency frames:N");
        }
        for p in [&a.out_dets, &a.out_stats].into_iter().flatten() {
            ensure_writable_parent(p)?;
        }
        Ok(RunConfig {
            frames,
            flow,
            estimator,
            detector: DetectorSpec { kind, latency },
            aggregation: parse_agg(a.agg.as_deref().unwrap_or("median"))?,
            mode,
            out_dets: a.out_dets,
            out_stats: a.out_stats,
        })
    }
}

fn ensure_readable(p: &Path, what: &str) -> Result<()> {
    std::fs::File::open(p).with_context(|| format!("{what} {} is not readable", p.display()))?;
    Ok(())
}

fn ensure_writable_parent(p: &Path) -> Result<()> {
    let parent = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        bail!("output directory {} does not exist", parent.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_choices() {
        assert_eq!("estimate".parse::<FlowChoice>().unwrap(), FlowChoice::Estimate);
        assert_eq!(
            "sidecar:/tmp/a.mvf".parse::<FlowChoice>().unwrap(),
            FlowChoice::Sidecar("/tmp/a.mvf".into())
        );
        assert!("sidecar:".parse::<FlowChoice>().is_err());
        assert!("flownet".parse::<FlowChoice>().is_err());
    }

    #[test]
    fn latency_and_detector_values() {
        assert_eq!(parse_latency("frames:5").unwrap(), LatencyModel::FixedFrames(5));
        assert_eq!(parse_latency("ms:40").unwrap(), LatencyModel::FixedWallClock { ms: 40 });
        assert!(parse_latency("frames:-1").is_err());
        assert!(parse_latency("5").is_err());
        assert!(parse_detector("yolo:x", 0.0).is_err());
        assert_eq!(
            parse_detector("oracle:d.txt", 0.3).unwrap(),
            DetectorKind::FileOracle {
                path: "d.txt".into(),
                score_threshold: 0.3
            }
        );
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "agg = \"mean\"\nmode = \"realtime\"\nsearch_range = 4\n").unwrap();
        let args = RunArgs {
            config: Some(cfg),
            mode: Some("deterministic".into()),
            ..Default::default()
        };
        let m = args.merged().unwrap();
        assert_eq!(m.agg.as_deref(), Some("mean"));
        assert_eq!(m.mode.as_deref(), Some("deterministic"));
        assert_eq!(m.search_range, Some(4));
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "agregation = \"mean\"\n").unwrap();
        let args = RunArgs {
            config: Some(cfg),
            ..Default::default()
        };
        assert!(args.merged().is_err());
    }
}
