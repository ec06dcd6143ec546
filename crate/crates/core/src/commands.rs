//! Command orchestration shared by the binary and the integration tests.
//!
//! Settings come from a flat `key=value` file (`filter.sigma0=5.0`, `#`
//! comments allowed) overlaid with command-line values; later sources win.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::eval::{benchmark_accuracy, benchmark_throughput, heatmap, FbeReport, GridConfig, Pipeline, ThroughputReport};
use crate::filter::{EstimateMode, FilterConfig};
use crate::grid::make_grid;
use crate::imaging::{Point2, VideoSequence, DEFAULT_FRAME_RATE};
use crate::io::{
    load_sequence, save_frame_dir, write_comparison_csv, write_ground_truth_csv, write_pgm, write_report_csv,
    write_throughput_csv, write_tracks_csv, ComparisonRow,
};
use crate::synth::{EnrichmentKind, MotionKind, Scene, SceneConfig};
use crate::tracker::{BaseTracker, LkTrackerConfig, NccTrackerConfig, TrackerKind, TrackerPort};

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "CYCLEFILTER_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineKind {
    Raw,
    Filtered,
}

/// A pipeline family on one base tracker; filtered variants expand over the particle counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineChoice {
    pub kind: PipelineKind,
    pub tracker: Option<TrackerKind>,
}

impl std::str::FromStr for PipelineChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, tail) = s.split_once('-').map_or((s, None), |(h, t)| (h, Some(t)));
        let kind = match head {
            "raw" => PipelineKind::Raw,
            "filtered" => PipelineKind::Filtered,
            _ => return Err(Error::Config(format!("unknown pipeline '{s}'"))),
        };
        let tracker = tail.map(str::parse).transpose()?;
        Ok(Self { kind, tracker })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub tracker: TrackerKind,
    pub ncc: NccTrackerConfig,
    pub lk: LkTrackerConfig,
    pub filter: FilterConfig,
    /// Particle counts swept by `bench`; `track` uses `filter.num_particles`.
    pub particle_counts: Vec<usize>,
    pub pipelines: Vec<PipelineChoice>,
    pub grid_spacing: f64,
    pub box_side: f64,
    pub scene: SceneConfig,
    /// Frame rate assumed for loaded sequences.
    pub frame_rate: f64,
    pub workers: Option<usize>,
    /// First frame of the post-enrichment segment; half the sequence when unset.
    pub split: Option<usize>,
    pub repetitions: usize,
    /// Frames used by the throughput measurement.
    pub throughput_frames: usize,
    pub heatmap_clip: f64,
    pub heatmap_cell: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: PathBuf::from("out"),
            tracker: TrackerKind::Ncc,
            ncc: NccTrackerConfig::default(),
            lk: LkTrackerConfig::default(),
            filter: FilterConfig::default(),
            particle_counts: vec![3],
            pipelines: vec![
                PipelineChoice {
                    kind: PipelineKind::Raw,
                    tracker: None,
                },
                PipelineChoice {
                    kind: PipelineKind::Filtered,
                    tracker: None,
                },
            ],
            grid_spacing: 32.0,
            box_side: 100.0,
            scene: SceneConfig::default(),
            frame_rate: DEFAULT_FRAME_RATE,
            workers: None,
            split: None,
            repetitions: 3,
            throughput_frames: 64,
            heatmap_clip: crate::eval::HEATMAP_CLIP,
            heatmap_cell: 1,
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    /// Applies settings in key order, except that `scene.seed` goes first so
    /// the individual seed keys can refine it.
    pub fn apply(&mut self, settings: &BTreeMap<String, String>) -> Result<()> {
        if let Some(v) = settings.get("scene.seed") {
            self.set("scene.seed", v)?;
        }
        for (k, v) in settings.iter().filter(|(k, _)| k.as_str() != "scene.seed") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.scene;
        match key {
            "input" => self.input = Some(PathBuf::from(v)),
            "output" => self.output = PathBuf::from(v),
            "tracker" | "tracker.kind" => self.tracker = v.parse()?,
            "ncc.patch_radius" => self.ncc.patch_radius = parse(key, v)?,
            "ncc.search_radius" => self.ncc.search_radius = parse(key, v)?,
            "ncc.subpixel_refine" => self.ncc.subpixel_refine = parse(key, v)?,
            "lk.window_radius" => self.lk.window_radius = parse(key, v)?,
            "lk.pyramid_levels" => self.lk.pyramid_levels = parse(key, v)?,
            "lk.max_iterations" => self.lk.max_iterations = parse(key, v)?,
            "lk.epsilon" => self.lk.epsilon = parse(key, v)?,
            "filter.particles" => {
                self.particle_counts = parse_list(key, v)?;
                self.filter.num_particles = self.particle_counts[0];
            }
            "filter.sigma0" => self.filter.init_sigma = parse(key, v)?,
            "filter.sigma" => self.filter.likelihood_sigma = parse(key, v)?,
            "filter.alpha" => self.filter.resample_alpha = parse(key, v)?,
            "filter.window" => self.filter.window_len = parse(key, v)?,
            "filter.seed" => self.filter.rng_seed = parse(key, v)?,
            "filter.jitter" => self.filter.jitter_sigma = parse(key, v)?,
            "filter.estimate" => self.filter.estimate_mode = v.parse::<EstimateMode>()?,
            "grid.spacing" => self.grid_spacing = parse(key, v)?,
            "grid.box_side" => self.box_side = parse(key, v)?,
            "run.workers" => self.workers = Some(parse(key, v)?),
            "run.frame_rate" => self.frame_rate = parse(key, v)?,
            "bench.pipelines" => {
                self.pipelines = v
                    .split(',')
                    .filter(|p| !p.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "bench.split" => self.split = Some(parse(key, v)?),
            "bench.repetitions" => self.repetitions = parse(key, v)?,
            "bench.throughput_frames" => self.throughput_frames = parse(key, v)?,
            "bench.heatmap_clip" => self.heatmap_clip = parse(key, v)?,
            "bench.heatmap_cell" => self.heatmap_cell = parse(key, v)?,
            "scene.seed" => {
                let seed: u64 = parse(key, v)?;
                s.texture_seed = seed;
                s.motion.field_seed = seed.wrapping_add(1);
                s.enrichment.vessel_mask_seed = seed.wrapping_add(2);
            }
            "scene.width" => s.width = parse(key, v)?,
            "scene.height" => s.height = parse(key, v)?,
            "scene.frames" => s.frames = parse(key, v)?,
            "scene.frame_rate" => s.frame_rate = parse(key, v)?,
            "scene.texture_seed" => s.texture_seed = parse(key, v)?,
            "scene.noise_sigma" => s.noise_sigma = parse(key, v)?,
            "scene.blur_radius" => s.blur_radius = parse(key, v)?,
            "scene.texture_contrast" => s.texture_contrast = parse(key, v)?,
            "scene.vessel_density" => s.vessel_density = parse(key, v)?,
            "motion.kind" => s.motion.kind = v.parse::<MotionKind>()?,
            "motion.amplitude" => s.motion.amplitude = parse(key, v)?,
            "motion.period" => s.motion.period = parse(key, v)?,
            "motion.phase_map" => s.motion.phase_map = parse(key, v)?,
            "motion.seed" => s.motion.field_seed = parse(key, v)?,
            "enrichment.kind" => s.enrichment.kind = v.parse::<EnrichmentKind>()?,
            "enrichment.onset" => s.enrichment.onset = parse(key, v)?,
            "enrichment.duration" => s.enrichment.duration = parse(key, v)?,
            "enrichment.seed" => s.enrichment.vessel_mask_seed = parse(key, v)?,
            "enrichment.peak_gain" => s.enrichment.peak_gain = parse(key, v)?,
            "enrichment.vessel_contrast" => s.enrichment.vessel_contrast = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown setting '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.ncc.validate()?;
        self.lk.validate()?;
        if self.particle_counts.is_empty() || self.particle_counts.contains(&0) {
            return Err(Error::Config("particle counts must be positive".into()));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::Config(format!("frame rate {} must be > 0", self.frame_rate)));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("worker count must be positive".into()));
        }
        if self.repetitions < 3 {
            return Err(Error::Config("bench.repetitions must be at least 3".into()));
        }
        if self.throughput_frames < self.filter.window_len.max(2) {
            return Err(Error::Config(format!(
                "bench.throughput_frames {} is shorter than the {}-frame window",
                self.throughput_frames, self.filter.window_len
            )));
        }
        if !(self.heatmap_clip.is_finite() && self.heatmap_clip > 0.0) || self.heatmap_cell == 0 {
            return Err(Error::Config("heatmap clip and cell size must be positive".into()));
        }
        if self.input.is_none() {
            self.scene.validate()?;
        }
        Ok(())
    }

    pub fn base_tracker(&self, kind: TrackerKind) -> Result<BaseTracker> {
        match kind {
            TrackerKind::Ncc => BaseTracker::ncc(self.ncc),
            TrackerKind::Lk => BaseTracker::lk(self.lk),
        }
    }

    /// Every pipeline variant requested for `bench`, in request order.
    pub fn bench_pipelines(&self) -> Result<Vec<Pipeline>> {
        if self.pipelines.is_empty() {
            return Err(Error::Config("no pipelines requested".into()));
        }
        let mut out = Vec::new();
        for choice in &self.pipelines {
            let tracker = self.base_tracker(choice.tracker.unwrap_or(self.tracker))?;
            match choice.kind {
                PipelineKind::Raw => out.push(Pipeline::raw(tracker)),
                PipelineKind::Filtered => {
                    for &m in &self.particle_counts {
                        out.push(Pipeline::filtered(
                            tracker,
                            FilterConfig {
                                num_particles: m,
                                ..self.filter
                            },
                        ));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Worker count: the environment override, then the setting, then all cores.
    pub fn resolved_workers(&self) -> Result<usize> {
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            let n: usize = parse(WORKERS_ENV, &v)?;
            if n == 0 {
                return Err(Error::Config(format!("{WORKERS_ENV} must be positive")));
            }
            return Ok(n);
        }
        Ok(self
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
    }

    fn grid_for(&self, width: usize, height: usize) -> Result<GridConfig> {
        GridConfig::new(self.grid_spacing, self.box_side, width, height)
    }
}

/// Loads `--config` and overlays the command-line settings.
pub fn build_run_config(config_file: Option<&Path>, overrides: &BTreeMap<String, String>) -> Result<RunConfig> {
    let mut run = RunConfig::default();
    if let Some(path) = config_file {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        run.apply(&parse_config_text(&text)?)?;
    }
    run.apply(overrides)?;
    run.validate()?;
    Ok(run)
}

fn with_pool<R: Send>(run: &RunConfig, f: impl FnOnce(usize) -> Result<R> + Send) -> Result<R> {
    let workers = run.resolved_workers()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| f(workers))
}

/// Input sequence, or the configured synthetic scene with its generator.
fn acquire(run: &RunConfig) -> Result<(VideoSequence<f32>, Option<Scene>)> {
    match &run.input {
        Some(path) => Ok((load_sequence(path, run.frame_rate)?, None)),
        None => {
            let scene = Scene::new(&run.scene)?;
            Ok((scene.render()?, Some(scene)))
        }
    }
}

fn summary_line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}={value}");
}

/// Tracks every grid anchor with the filtered pipeline and writes
/// `trajectories.csv` and `report.csv`. Returns the `key=value` summary.
pub fn cmd_track(run: &RunConfig) -> Result<String> {
    with_pool(run, |workers| {
        let (seq, scene) = acquire(run)?;
        let grid = run.grid_for(seq.width(), seq.height())?;
        let pipeline = Pipeline::filtered(run.base_tracker(run.tracker)?, run.filter);
        let tracker = pipeline.tracker;
        let pyr = tracker.prepare(&seq)?;
        let truth = scene.as_ref().map(|s| anchor_truth(s, &grid, 0)).transpose()?;
        let start = Instant::now();
        let report = benchmark_accuracy(&pipeline, &pyr, &grid, truth.as_deref(), None)?;
        let wall = start.elapsed().as_secs_f64();
        fs::create_dir_all(&run.output)?;
        let tracks: Vec<_> = report.per_anchor.iter().map(|a| (a.anchor_id, a.forward.clone())).collect();
        write_tracks_csv(&run.output.join("trajectories.csv"), &tracks, 0)?;
        write_report_csv(&run.output.join("report.csv"), &report)?;
        let mut out = String::new();
        summary_line(&mut out, "pipeline", &report.pipeline);
        summary_line(&mut out, "anchors", report.per_anchor.len());
        summary_line(&mut out, "frames", report.frames);
        summary_line(&mut out, "mean_fbe", report.mean);
        summary_line(&mut out, "std_fbe", report.std);
        if let Some(gt) = report.mean_gt_error() {
            summary_line(&mut out, "mean_gt_error", gt);
        }
        summary_line(&mut out, "diverged", report.diverged_count());
        summary_line(&mut out, "fps", format!("{:.2}", report.frames as f64 / wall));
        summary_line(&mut out, "workers", workers);
        Ok(out)
    })
}

fn anchor_truth(scene: &Scene, grid: &GridConfig, start: usize) -> Result<Vec<Vec<Point2<f64>>>> {
    let points: Vec<Point2<f64>> = make_grid::<f64>(grid)?.iter().map(|(a, _)| a.position).collect();
    Ok(scene.trajectories_from(&points, start))
}

/// Renders the configured scene into `frames/` plus `ground_truth.csv`.
pub fn cmd_synth(run: &RunConfig) -> Result<String> {
    with_pool(run, |_| {
        let scene = Scene::new(&run.scene)?;
        let seq: VideoSequence<f32> = scene.render()?;
        let gt = scene.ground_truth()?;
        fs::create_dir_all(&run.output)?;
        save_frame_dir(&run.output.join("frames"), &seq)?;
        write_ground_truth_csv(&run.output.join("ground_truth.csv"), &gt)?;
        let mut out = String::new();
        summary_line(&mut out, "frames", seq.len());
        summary_line(&mut out, "width", seq.width());
        summary_line(&mut out, "height", seq.height());
        summary_line(&mut out, "anchors", gt.anchors.len());
        Ok(out)
    })
}

/// Accuracy on the enrichment segment, the post-enrichment segment and the
/// whole sequence, plus throughput, for every requested pipeline.
pub fn cmd_bench(run: &RunConfig) -> Result<String> {
    let pipelines = run.bench_pipelines()?;
    with_pool(run, |workers| {
        let (seq, scene) = acquire(run)?;
        let n = seq.len();
        let split = run.split.unwrap_or(n / 2);
        let window = pipelines
            .iter()
            .filter_map(|p| p.filter.map(|f| f.window_len))
            .max()
            .unwrap_or(2);
        if split < window || n - split < window {
            return Err(Error::Config(format!(
                "split at frame {split} leaves a segment shorter than the {window}-frame window"
            )));
        }
        let grid = run.grid_for(seq.width(), seq.height())?;
        let truth = |start: usize| scene.as_ref().map(|s| anchor_truth(s, &grid, start)).transpose();
        let truth_full = truth(0)?;
        let truth_pe = truth(split)?;
        let truth_ae: Option<Vec<Vec<Point2<f64>>>> =
            truth_full.as_ref().map(|t| t.iter().map(|tr| tr[..split].to_vec()).collect());
        fs::create_dir_all(&run.output)?;
        let mut rows = Vec::new();
        let mut throughput = Vec::new();
        let mut out = String::new();
        for pipeline in &pipelines {
            let pyr = pipeline.tracker.prepare(&seq)?;
            let name = pipeline.to_string();
            let ae = benchmark_accuracy(pipeline, &pyr.segment(0, split)?, &grid, truth_ae.as_deref(), None)?;
            let pe = benchmark_accuracy(pipeline, &pyr.segment(split, n)?, &grid, truth_pe.as_deref(), None)?;
            let total = benchmark_accuracy(pipeline, &pyr, &grid, truth_full.as_deref(), None)?;
            let tp_view = pyr.segment(0, run.throughput_frames.min(n))?;
            let tp: ThroughputReport = benchmark_throughput(pipeline, &tp_view, &grid, run.repetitions, None)?;
            for (suffix, report) in [("ae", &ae), ("pe", &pe), ("total", &total)] {
                write_report_csv(&run.output.join(format!("report_{name}_{suffix}.csv")), report)?;
            }
            write_heatmap(run, &total, &run.output.join(format!("heatmap_{name}.pgm")))?;
            summary_line(&mut out, &format!("{name}.fbe_ae"), ae.mean);
            summary_line(&mut out, &format!("{name}.fbe_pe"), pe.mean);
            summary_line(&mut out, &format!("{name}.fbe_total"), total.mean);
            for (seg, report) in [("ae", &ae), ("pe", &pe), ("total", &total)] {
                if let Some(gt) = report.mean_gt_error() {
                    summary_line(&mut out, &format!("{name}.gt_error_{seg}"), gt);
                }
            }
            summary_line(&mut out, &format!("{name}.fps"), format!("{:.2}", tp.fps));
            rows.push(ComparisonRow {
                pipeline: name,
                fps: tp.fps,
                fbe_ae: ae.mean,
                fbe_pe: pe.mean,
                fbe_total: total.mean,
            });
            throughput.push(tp);
        }
        write_comparison_csv(&run.output.join("comparison.csv"), &rows)?;
        write_throughput_csv(&run.output.join("throughput.csv"), &throughput)?;
        summary_line(&mut out, "split", split);
        summary_line(&mut out, "workers", workers);
        Ok(out)
    })
}

fn write_heatmap(run: &RunConfig, report: &FbeReport, path: &Path) -> Result<()> {
    let (w, h, bytes) = heatmap(report, run.heatmap_clip, run.heatmap_cell)?;
    write_pgm(path, w, h, &bytes)
}
