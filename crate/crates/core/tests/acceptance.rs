//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line.
//!
//! Criteria 5 and 6 share one multi-seed study which takes several minutes
//! in an optimised build.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use cyclefilter::commands::{build_run_config, cmd_bench};
use cyclefilter::eval::{benchmark_accuracy, benchmark_throughput, fbe_points, make_grid, GridConfig, Pipeline};
use cyclefilter::filter::{likelihood, mixture, resample_plan, universal_select, FilterConfig};
use cyclefilter::synth::{Scene, SceneConfig};
use cyclefilter::{BaseTracker, Point2, TrackerKind, TrackerPort};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Serialises the criteria so timings are not disturbed by sibling tests.
fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes past the test harness's output capture so passing criteria show too.
fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn report(id: u32, ok: bool, detail: String) {
    say(&format!("{} criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" }));
    assert!(ok, "criterion {id} failed: {detail}");
}

#[test]
fn criterion_1_likelihood_exactness() {
    let _g = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let sigma: f64 = rng.random_range(0.1..20.0);
        let cfg = FilterConfig {
            likelihood_sigma: sigma,
            ..FilterConfig::default()
        };
        let f = Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let d = Point2::new(rng.random_range(-2.0..2.0) * sigma, rng.random_range(-2.0..2.0) * sigma);
        let got: f64 = likelihood(&cfg, f, f + d);
        // 2x2 covariance diag(s^2, s^2): |S| = s^4, d' S^-1 d = |d|^2 / s^2
        let det = sigma.powi(4);
        let maha = (d.x * d.x + d.y * d.y) / (sigma * sigma);
        let want = (-0.5 * maha).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
        worst = worst.max(((got - want) / want).abs());
    }
    let p = Point2::new(3.0, 4.0);
    let peak: f64 = likelihood(&FilterConfig::default(), p, p);
    let peak_want = 1.0 / (18.0 * std::f64::consts::PI);
    let peak_err = ((peak - peak_want) / peak_want).abs();
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        worst <= 1e-12 && peak_err <= 1e-12 && secs < 1.0,
        format!("max rel err {worst:.2e}, peak rel err {peak_err:.2e}, {secs:.3}s"),
    );
}

#[test]
fn criterion_2_resampling() {
    let _g = exclusive();
    let start = Instant::now();
    let w = [0.8f64, 0.2];
    let q = mixture(&w, 0.5);
    let q_ok = (q[0] - 0.65).abs() < 1e-12 && (q[1] - 0.35).abs() < 1e-12;
    let plan = resample_plan(&w, 0.5, 0.5);
    let offspring: Vec<f64> = plan.iter().map(|p| p.1).collect();
    let plan_ok = plan[0].0 == 0
        && plan[1].0 == 1
        && (offspring[0] - 1.2308).abs() < 1e-4
        && (offspring[1] - 0.5714).abs() < 1e-4;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = 5usize;
    let calls = 100_000usize;
    let mut counts_ok = true;
    let mut freq = vec![0usize; m];
    let mut weights = vec![0.0f64; m];
    let fixed: Vec<f64> = {
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    };
    for call in 0..calls {
        // every call checks the floor/ceil bound on fresh weights; the
        // frequency check uses a fixed set so there is one target q
        let target = call % 2 == 0;
        if target {
            weights.copy_from_slice(&fixed);
        } else {
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            weights.iter_mut().zip(&raw).for_each(|(w, r)| *w = r / s);
        }
        let alpha = if target { 0.5 } else { rng.random_range(0.0..=1.0) };
        let q = mixture(&weights, alpha);
        let picks = universal_select(&q, rng.random_range(0.0..1.0));
        let mut c = vec![0usize; m];
        picks.iter().for_each(|&a| c[a] += 1);
        for (a, &n) in c.iter().enumerate() {
            let e = m as f64 * q[a];
            if (n as f64) < e.floor() - 1e-9 || (n as f64) > e.ceil() + 1e-9 {
                counts_ok = false;
            }
            if target {
                freq[a] += n;
            }
        }
    }
    let qf = mixture(&fixed, 0.5);
    let draws = (m * calls / 2) as f64;
    let mut worst_z = 0.0f64;
    for a in 0..m {
        let f = freq[a] as f64 / draws;
        let se = (qf[a] * (1.0 - qf[a]) / draws).sqrt();
        worst_z = worst_z.max((f - qf[a]).abs() / se);
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        q_ok && plan_ok && counts_ok && worst_z <= 3.0 && secs < 10.0,
        format!(
            "q=({:.4},{:.4}) offspring=({:.4},{:.4}) floor/ceil over {calls} calls: {counts_ok}, max |z| {worst_z:.2}, {secs:.2}s",
            q[0], q[1], offspring[0], offspring[1]
        ),
    );
}

#[test]
fn criterion_3_fbe_metric() {
    let _g = exclusive();
    let start = Instant::now();
    let a: Vec<Point2<f64>> = (0..10).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
    let zero_ok = fbe_points(&a, &a, false).unwrap() == 0.0;
    let mut b = a.clone();
    b[4].y += 1e-9;
    let nonzero_ok = fbe_points(&a, &b, false).unwrap() > 0.0;
    let shifted: Vec<Point2<f64>> = a.iter().map(|p| Point2::new(p.x + 3.0, p.y)).collect();
    let raw = fbe_points(&a, &shifted, false).unwrap();
    let norm = fbe_points(&a, &shifted, true).unwrap();
    let example_ok = raw == 30.0 && norm == 3.0;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let f: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0))).collect();
        let g: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0))).collect();
        let mut oracle = 0.0;
        for i in 0..n {
            oracle += ((g[i].0 - f[i].0).powi(2) + (g[i].1 - f[i].1).powi(2)).sqrt();
        }
        let fp: Vec<_> = f.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        let gp: Vec<_> = g.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        worst = worst.max((fbe_points(&fp, &gp, false).unwrap() - oracle).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        zero_ok && nonzero_ok && example_ok && worst <= 1e-9 && secs < 1.0,
        format!("offset example raw {raw} / normalised {norm}, oracle max abs diff {worst:.1e}, {secs:.3}s"),
    );
}

#[test]
fn criterion_4_grid() {
    let _g = exclusive();
    let grid = GridConfig::new(32.0, 100.0, 512, 384).unwrap();
    let anchors = make_grid::<f64>(&grid).unwrap();
    let ok = anchors.len() == 117 && grid.columns() == 13 && grid.rows() == 9;
    report(4, ok, format!("{} anchors, {} columns x {} rows", anchors.len(), grid.columns(), grid.rows()));
}

/// Scene used by the trend study: beating-heart motion with a vessel ramp
/// in the first half.
fn trend_scene(seed: u64) -> SceneConfig {
    let mut cfg = SceneConfig::default();
    cfg.frames = 750;
    cfg.texture_seed = 100 + seed;
    cfg.motion.field_seed = 200 + seed;
    cfg.enrichment.vessel_mask_seed = 300 + seed;
    cfg.noise_sigma = 0.03;
    cfg.texture_contrast = 0.03;
    cfg.vessel_density = 2.0;
    cfg.enrichment.vessel_contrast = 0.1;
    cfg
}

const TREND_SEEDS: u64 = 20;

/// Seed count; `CYCLEFILTER_TREND_SEEDS` shortens local runs, but the
/// criterion only passes with at least `TREND_SEEDS`.
fn trend_seeds() -> u64 {
    std::env::var("CYCLEFILTER_TREND_SEEDS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(TREND_SEEDS)
}
/// Every 29th grid anchor: ids 0, 29, 58, 87, 116 spread over the frame.
const TREND_ANCHORS: [usize; 5] = [0, 29, 58, 87, 116];
const TREND_PARTICLES: [usize; 3] = [3, 5, 25];

/// Seed-averaged results per pipeline (raw first, then each M):
/// ground-truth error, AE FBE, PE FBE.
struct Trend {
    names: Vec<String>,
    gt: Vec<f64>,
    fbe_ae: Vec<f64>,
    fbe_pe: Vec<f64>,
    seconds: f64,
    seeds: u64,
}

fn trend() -> &'static Trend {
    static TREND: OnceLock<Trend> = OnceLock::new();
    TREND.get_or_init(|| {
        let start = Instant::now();
        let tracker = BaseTracker::default_for(TrackerKind::Ncc);
        let mut pipelines = vec![Pipeline::raw(tracker)];
        for m in TREND_PARTICLES {
            pipelines.push(Pipeline::filtered(tracker, FilterConfig::with_particles(m)));
        }
        let n = pipelines.len();
        let (mut gt, mut ae, mut pe) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let seeds = trend_seeds();
        for seed in 0..seeds {
            eprintln!("  trend seed {seed} at {:.0}s", start.elapsed().as_secs_f64());
            let cfg = trend_scene(seed);
            let scene = Scene::new(&cfg).unwrap();
            let seq = scene.render::<f32>().unwrap();
            let pyr = tracker.prepare(&seq).unwrap();
            let grid = cfg.grid();
            let split = cfg.frames / 2;
            let points: Vec<Point2<f64>> = make_grid::<f64>(&grid).unwrap().iter().map(|(a, _)| a.position).collect();
            let segments = [(0, pyr.segment(0, split).unwrap()), (split, pyr.segment(split, cfg.frames).unwrap())];
            for (k, pipeline) in pipelines.iter().enumerate() {
                let filter = pipeline.filter.map(|f| FilterConfig { rng_seed: seed, ..f });
                let pipeline = Pipeline { filter, ..*pipeline };
                for (s, (first, view)) in segments.iter().enumerate() {
                    let truth: Vec<Vec<Point2<f64>>> = scene
                        .trajectories_from(&points, *first)
                        .into_iter()
                        .map(|mut tr| {
                            tr.truncate(view.len());
                            tr
                        })
                        .collect();
                    let r = benchmark_accuracy(&pipeline, view, &grid, Some(&truth), Some(&TREND_ANCHORS)).unwrap();
                    gt[k] += r.mean_gt_error().unwrap() / 2.0;
                    if s == 0 {
                        ae[k] += r.mean;
                    } else {
                        pe[k] += r.mean;
                    }
                }
            }
        }
        let s = seeds as f64;
        Trend {
            names: pipelines.iter().map(|p| p.to_string()).collect(),
            gt: gt.iter().map(|v| v / s).collect(),
            fbe_ae: ae.iter().map(|v| v / s).collect(),
            fbe_pe: pe.iter().map(|v| v / s).collect(),
            seconds: start.elapsed().as_secs_f64(),
            seeds,
        }
    })
}

#[test]
fn criterion_5_trend_with_particle_count() {
    let _g = exclusive();
    let t = trend();
    for (i, name) in t.names.iter().enumerate() {
        say(&format!("  {name}: gt error {:.3} px", t.gt[i]));
    }
    // gt = [raw, M3, M5, M25]
    let ordered = t.gt[3] <= t.gt[2] && t.gt[2] <= t.gt[1] && t.gt[1] <= t.gt[0];
    let gain = 1.0 - t.gt[1] / t.gt[0];
    report(
        5,
        ordered && gain >= 0.20 && t.seeds >= TREND_SEEDS && t.seconds < 1800.0,
        format!(
            "gt error raw {:.3} / M3 {:.3} / M5 {:.3} / M25 {:.3}, M3 gain {:.1}% over {} seeds, {:.0}s",
            t.gt[0],
            t.gt[1],
            t.gt[2],
            t.gt[3],
            100.0 * gain,
            t.seeds,
            t.seconds
        ),
    );
}

#[test]
fn criterion_6_enrichment_robustness() {
    let _g = exclusive();
    let t = trend();
    let ratios: Vec<f64> = t.fbe_ae.iter().zip(&t.fbe_pe).map(|(a, p)| a / p).collect();
    for (i, name) in t.names.iter().enumerate() {
        say(&format!("  {name}: fbe AE {:.3} PE {:.3} ratio {:.2}", t.fbe_ae[i], t.fbe_pe[i], ratios[i]));
    }
    let ok = ratios[0] >= 1.5 && ratios[1..].iter().all(|&r| r <= 1.3) && t.seeds >= TREND_SEEDS;
    report(
        6,
        ok,
        format!(
            "raw AE/PE {:.2} (need >= 1.5), filtered AE/PE {} (need <= 1.3)",
            ratios[0],
            ratios[1..].iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join("/")
        ),
    );
}

fn bench_settings(out: &std::path::Path) -> std::collections::BTreeMap<String, String> {
    [
        ("output", out.to_str().unwrap()),
        ("scene.frames", "64"),
        ("scene.seed", "3"),
        ("filter.seed", "3"),
        ("filter.particles", "3"),
        ("bench.pipelines", "raw,filtered"),
        ("bench.throughput_frames", "16"),
        ("run.workers", "1"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Drops the wall-clock `fps` column, the one field timing makes irreproducible.
fn without_fps(text: &str) -> String {
    text.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            if f.len() > 1 {
                f.remove(1);
            }
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_7_bench_determinism() {
    let _g = exclusive();
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let run = build_run_config(None, &bench_settings(dir.path())).unwrap();
        cmd_bench(&run).unwrap();
    }
    let mut files: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "throughput.csv")
        .collect();
    files.sort();
    let mut mismatched = Vec::new();
    for f in &files {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        let same = if f == "comparison.csv" {
            without_fps(&String::from_utf8_lossy(&x)) == without_fps(&String::from_utf8_lossy(&y))
        } else {
            x == y
        };
        if !same {
            mismatched.push(f.clone());
        }
    }
    let heatmaps = files.iter().filter(|f| f.ends_with(".pgm")).count();
    report(
        7,
        mismatched.is_empty() && heatmaps == 2 && files.len() >= 9,
        format!(
            "{} files compared ({heatmaps} heatmaps), mismatches {mismatched:?}, {:.1}s",
            files.len(),
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_8_throughput_scaling() {
    let _g = exclusive();
    let mut cfg = SceneConfig::default();
    cfg.frames = 48;
    let seq = Scene::new(&cfg).unwrap().render::<f32>().unwrap();
    let tracker = BaseTracker::default_for(TrackerKind::Ncc);
    let pyr = tracker.prepare(&seq).unwrap();
    let grid = cfg.grid();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (few, all, m25) = pool.install(|| {
        let m3 = Pipeline::filtered(tracker, FilterConfig::with_particles(3));
        let m25 = Pipeline::filtered(tracker, FilterConfig::with_particles(25));
        (
            benchmark_throughput(&m3, &pyr, &grid, 3, Some(13)).unwrap(),
            benchmark_throughput(&m3, &pyr, &grid, 3, None).unwrap(),
            benchmark_throughput(&m25, &pyr, &grid, 3, None).unwrap(),
        )
    });
    let per_anchor = all.per_anchor_ms / few.per_anchor_ms;
    let cost = m25.wall_seconds / all.wall_seconds;
    report(
        8,
        (0.5..=2.0).contains(&per_anchor) && (3.0..=12.0).contains(&cost),
        format!(
            "per-anchor {:.1} ms (117) vs {:.1} ms (13), ratio {per_anchor:.2}; M25/M3 wall {cost:.2}; M3 {:.1} fps on 1 worker",
            all.per_anchor_ms, few.per_anchor_ms, all.fps
        ),
    );
}
