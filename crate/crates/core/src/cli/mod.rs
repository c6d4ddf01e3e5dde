//! Command-line front end. Every subcommand is also callable as a function.

mod args;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;

pub use args::{
    parse_search, BenchArgs, Cli, Command, EstimateFlowArgs, EvalArgs, FlowChoice, RunArgs, RunConfig, SynthArgs,
};

use crate::eval::{average_precision, ApReport};
use crate::mot::{read_detections, read_ground_truth, write_detections};
use crate::motion::{estimate_motion, read_frame_dir, write_mvf, Frame, MotionEstimatorParams, MotionVectorField};
use crate::pipeline::{
    measure_latency, run_pipeline, Distribution, ExecutionMode, FlowSource, PipelineConfig, PipelineOutput,
    PriorAgeStats,
};
use crate::propagation::AggregationKind;
use crate::synth::{generate, write_dataset, SynthSpec};

/// Written by `--out-stats`.
#[derive(Debug, Clone, Serialize)]
pub struct RunStats {
    pub frames: usize,
    pub mode: &'static str,
    pub aggregation: &'static str,
    pub step_ms: Distribution,
    pub prior_age: PriorAgeStats,
    pub detector_requests: usize,
    pub detector_ms: Option<Distribution>,
}

impl RunStats {
    pub fn of(output: &PipelineOutput, cfg: &RunConfig) -> Result<Self> {
        let summary = measure_latency(&output.frames)?;
        let det: Vec<f64> = output
            .detector_latencies
            .iter()
            .map(|d| d.as_secs_f64() * 1e3)
            .collect();
        Ok(Self {
            frames: summary.frames,
            mode: match cfg.mode {
                ExecutionMode::RealTime => "realtime",
                ExecutionMode::Deterministic => "deterministic",
            },
            aggregation: match cfg.aggregation {
                AggregationKind::MedianXY => "median",
                AggregationKind::MeanXY => "mean",
            },
            step_ms: summary.step_ms,
            prior_age: summary.prior_age,
            detector_requests: det.len(),
            detector_ms: Distribution::of(&det),
        })
    }
}

pub fn pipeline_config(cfg: &RunConfig) -> PipelineConfig {
    let flow = match &cfg.flow {
        FlowChoice::Estimate => FlowSource::Estimator(cfg.estimator),
        FlowChoice::Sidecar(p) => FlowSource::Sidecar(p.clone()),
    };
    let mut pc = PipelineConfig::new(flow, cfg.detector.clone());
    pc.aggregation = cfg.aggregation;
    pc.mode = cfg.mode;
    pc
}

fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    let frames = read_frame_dir(dir).with_context(|| format!("motion: reading frames from {}", dir.display()))?;
    if frames.is_empty() {
        bail!("motion: no .pgm/.ppm frames in {}", dir.display());
    }
    Ok(frames)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Runs the pipeline and writes whichever outputs `cfg` names.
pub fn cmd_run(cfg: &RunConfig) -> Result<(PipelineOutput, RunStats)> {
    let frames = load_frames(&cfg.frames)?;
    let output = run_pipeline(&frames, &pipeline_config(cfg))?;
    let stats = RunStats::of(&output, cfg)?;
    if let Some(path) = &cfg.out_dets {
        let sets = output.frames.iter().map(|r| &r.detections);
        write_detections(sets, create(path)?).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &cfg.out_stats {
        write_json(path, &stats)?;
    }
    Ok((output, stats))
}

pub fn cmd_bench(args: BenchArgs) -> Result<RunStats> {
    if let Some(p) = &args.out_csv {
        if p.parent().is_some_and(|d| !d.as_os_str().is_empty() && !d.is_dir()) {
            bail!("output directory for {} does not exist", p.display());
        }
    }
    let cfg = args.run.resolve()?;
    let (output, stats) = cmd_run(&cfg)?;
    if let Some(path) = &args.out_csv {
        let mut w = create(path)?;
        writeln!(w, "frame,step_ms,prior_age")?;
        for r in &output.frames {
            writeln!(
                w,
                "{},{},{}",
                r.frame_index,
                r.step_latency.as_secs_f64() * 1e3,
                r.prior_age
            )?;
        }
        w.flush()?;
    }
    Ok(stats)
}

/// Fields for every consecutive pair in `frames`.
pub fn estimate_all(frames: &[Frame], params: &MotionEstimatorParams) -> Result<Vec<MotionVectorField>> {
    frames
        .windows(2)
        .map(|w| {
            estimate_motion(&w[0], &w[1], params).with_context(|| format!("motion: frame {}", w[1].index()))
        })
        .collect()
}

pub fn cmd_estimate_flow(args: &EstimateFlowArgs) -> Result<usize> {
    let params = MotionEstimatorParams {
        block_size: args.block_size,
        search_range: args.search_range,
        method: parse_search(&args.search)?,
        zero_bias: 0.0,
    };
    params.validate()?;
    let frames = load_frames(&args.frames)?;
    if frames.len() < 2 {
        bail!("motion: need at least two frames, found {}", frames.len());
    }
    let fields = estimate_all(&frames, &params)?;
    let mut w = create(&args.out)?;
    write_mvf(&fields, &mut w).with_context(|| format!("writing {}", args.out.display()))?;
    w.flush()?;
    Ok(fields.len())
}

pub fn load_synth_spec(path: &Path) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    };
    Ok(spec)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<SynthSpec> {
    let mut spec = match &args.spec {
        Some(p) => load_synth_spec(p).context("synth")?,
        None => SynthSpec::benchmark(0),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let data = generate(&spec).context("synth")?;
    write_dataset(&data, &args.out).context("synth")?;
    Ok(spec)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<ApReport> {
    let open = |p: &Path| -> Result<BufReader<File>> {
        Ok(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))
    };
    let gt = read_ground_truth(open(&args.gt)?).with_context(|| format!("eval: {}", args.gt.display()))?;
    let table = read_detections(open(&args.pred)?).with_context(|| format!("eval: {}", args.pred.display()))?;
    let preds: Vec<_> = table.frames().map(|(f, _)| table.get(f)).collect();
    let report = average_precision(&preds, &gt, args.iou).context("eval")?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(report)
}

/// Runs a parsed command line, printing reports to stdout.
pub fn execute(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    match cli.command {
        Command::Run(a) => {
            let cfg = a.resolve()?;
            let (_, stats) = cmd_run(&cfg)?;
            if cfg.out_stats.is_none() {
                serde_json::to_writer_pretty(stdout.lock(), &stats)?;
                println!();
            }
        }
        Command::Bench(a) => {
            let stats = cmd_bench(a)?;
            serde_json::to_writer_pretty(stdout.lock(), &stats)?;
            println!();
        }
        Command::EstimateFlow(a) => {
            let n = cmd_estimate_flow(&a)?;
            println!("wrote {n} fields to {}", a.out.display());
        }
        Command::Synth(a) => {
            let spec = cmd_synth(&a)?;
            println!(
                "wrote {} frames of {}x{} with {} objects to {}",
                spec.frames,
                spec.width,
                spec.height,
                spec.objects.len(),
                a.out.display()
            );
        }
        Command::Eval(a) => {
            let report = cmd_eval(&a)?;
            serde_json::to_writer_pretty(stdout.lock(), &report)?;
            println!();
        }
    }
    Ok(())
}

/// Precomputed flow for repeated runs over the same frames.
pub fn precomputed(fields: Vec<MotionVectorField>) -> FlowSource {
    FlowSource::Precomputed(Arc::new(fields))
}
