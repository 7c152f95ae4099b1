//! Scenario evaluation: percentile error curves, dense heatmaps, latency
//! statistics, and CSV/JSON export for plotting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;
use std::sync::Mutex;

use crate::channel::{simulate_measurements, ReflectionMatrix};
use crate::direct::{direct_search_config, estimate_direct, EstimationResult};
use crate::error::{Error, Result};
use crate::hybrid::{estimate_hybrid, HybridConfig};
use crate::neural::{predict, ModelBundle};
use crate::scene::{PhaseSchedule, Scene};
use num_complex::Complex64;

/// Percentile grid used throughout the error curves.
pub const PERCENTILE_GRID: [f64; 14] = [
    10.0, 25.0, 40.0, 50.0, 60.0, 65.0, 70.0, 75.0, 80.0, 85.0, 90.0, 92.5, 95.0, 98.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Pso,
    Lstm,
    Hybrid,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pso" => Ok(EstimatorKind::Pso),
            "lstm" => Ok(EstimatorKind::Lstm),
            "hybrid" => Ok(EstimatorKind::Hybrid),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Where evaluation positions come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PositionSource {
    Random { n: usize },
    Grid { resolution: f64 },
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub estimator: EstimatorKind,
    pub positions: PositionSource,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub scenario: String,
    pub estimator: EstimatorKind,
    /// Per-sample planar errors in centimeters.
    pub errors_cm: Vec<f64>,
    /// (percentile, error_cm) pairs on the standard grid.
    pub percentiles: Vec<(f64, f64)>,
    pub latency: LatencyStats,
    pub scenario_fingerprint: String,
    pub multipath: bool,
    pub mount_height_z: f64,
}

/// Linear-interpolation percentile (closest-ranks method).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = rank - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Percentile table at the given grid, via linear interpolation.
pub fn percentile_curve(errors: &[f64], percentiles: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::Config("empty error list".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentiles
        .iter()
        .map(|&p| (p, percentile(&sorted, p)))
        .collect())
}

pub fn planar_error_cm(estimate: &[f64; 2], truth: &[f64; 2]) -> f64 {
    (((estimate[0] - truth[0]).powi(2) + (estimate[1] - truth[1]).powi(2)).sqrt()) * 100.0
}

/// Inclusive-endpoint grid over the UE region at the given resolution.
pub fn grid_points(scene: &Scene, resolution: f64) -> Result<Vec<[f64; 2]>> {
    if resolution <= 0.0 {
        return Err(Error::Config("resolution must be > 0".into()));
    }
    let r = scene.config.ue_region;
    let nx = (r.width() / resolution).floor() as usize;
    let ny = (r.height() / resolution).floor() as usize;
    let mut pts = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            pts.push([
                r.x_min + resolution * i as f64,
                r.y_min + resolution * j as f64,
            ]);
        }
    }
    Ok(pts)
}

/// The estimator interface used by the harness: given one simulated sample,
/// produce an estimate. A `Mutex` keeps the mutable bundle shareable across
/// the rayon workers.
pub enum Estimator<'a> {
    DirectPso,
    Lstm(&'a Mutex<ModelBundle>),
    Hybrid(&'a Mutex<ModelBundle>, HybridConfig),
    /// Returns the truth; test-only oracle for harness geometry checks.
    Oracle,
}

impl Estimator<'_> {
    pub fn run(
        &self,
        scene: &Scene,
        y: &[Complex64],
        beta: &ReflectionMatrix,
        truth: &[f64; 2],
        seed: u64,
    ) -> Result<EstimationResult> {
        match self {
            Estimator::DirectPso => {
                let cfg = direct_search_config(scene, seed);
                estimate_direct(y, beta, scene, &cfg)
            }
            Estimator::Lstm(bundle) => {
                let start = std::time::Instant::now();
                let (p, _) = predict(&mut bundle.lock().unwrap(), y, beta)?;
                Ok(EstimationResult {
                    position: p,
                    phi0: None,
                    nn_position: Some(p),
                    residual_cost: None,
                    latency: start.elapsed(),
                    evaluations: 0,
                })
            }
            Estimator::Hybrid(bundle, cfg) => {
                let mut cfg = cfg.clone();
                cfg.search.refine.seed = seed;
                estimate_hybrid(y, beta, scene, &mut bundle.lock().unwrap(), &cfg)
            }
            Estimator::Oracle => Ok(EstimationResult {
                position: *truth,
                phi0: None,
                nn_position: None,
                residual_cost: None,
                latency: std::time::Duration::ZERO,
                evaluations: 0,
            }),
        }
    }
}

/// Evaluate the estimator at every grid point with a fresh simulated sample
/// per point. Estimator failures become NaN cells rather than aborting.
pub fn heatmap(
    scene: &Scene,
    schedule: &PhaseSchedule,
    estimator: &Estimator,
    resolution: f64,
    base_seed: u64,
) -> Result<Vec<(f64, f64, f64)>> {
    let pts = grid_points(scene, resolution)?;
    let cells: Vec<(f64, f64, f64)> = pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let seed = base_seed ^ (i as u64).wrapping_mul(0x9E3779B97F4A7C15);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi0 = TAU * ((i as f64 * 0.61803398875) % 1.0);
            let sim = simulate_measurements(scene, schedule, *p, phi0, &mut rng);
            let err = match sim {
                Ok((m, beta)) => match estimator.run(scene, &m.y, &beta, p, seed) {
                    Ok(r) => planar_error_cm(&r.position, p),
                    Err(_) => f64::NAN,
                },
                Err(_) => f64::NAN,
            };
            (p[0], p[1], err)
        })
        .collect();
    Ok(cells)
}

/// Run one scenario: simulate samples, estimate, aggregate errors and
/// latency. Deterministic under the scenario seed regardless of thread count.
pub fn run_scenario(
    scene: &Scene,
    schedule: &PhaseSchedule,
    spec: &ScenarioSpec,
    estimator: &Estimator,
) -> Result<ErrorReport> {
    let positions: Vec<[f64; 2]> = match &spec.positions {
        PositionSource::Grid { resolution } => grid_points(scene, *resolution)?,
        PositionSource::Random { n } => {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let r = scene.config.ue_region;
            (0..*n)
                .map(|_| {
                    [
                        rng.gen_range(r.x_min..r.x_max),
                        rng.gen_range(r.y_min..r.y_max),
                    ]
                })
                .collect()
        }
    };

    let results: Vec<(f64, f64)> = positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| -> Result<(f64, f64)> {
            let seed = spec.seed ^ (i as u64).wrapping_mul(0x9E3779B97F4A7C15);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            use rand::Rng;
            let phi0 = rng.gen_range(0.0..TAU);
            let (m, beta) = simulate_measurements(scene, schedule, *p, phi0, &mut rng)?;
            let r = estimator.run(scene, &m.y, &beta, p, seed)?;
            Ok((
                planar_error_cm(&r.position, p),
                r.latency.as_secs_f64() * 1e3,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let errors_cm: Vec<f64> = results.iter().map(|r| r.0).collect();
    let mut lat: Vec<f64> = results.iter().map(|r| r.1).collect();
    lat.sort_by(f64::total_cmp);
    let latency = LatencyStats {
        p50_ms: percentile(&lat, 50.0),
        p95_ms: percentile(&lat, 95.0),
        mean_ms: lat.iter().sum::<f64>() / lat.len() as f64,
    };
    let percentiles = percentile_curve(&errors_cm, &PERCENTILE_GRID)?;
    Ok(ErrorReport {
        scenario: spec.name.clone(),
        estimator: spec.estimator,
        errors_cm,
        percentiles,
        latency,
        scenario_fingerprint: scene.config.fingerprint(),
        multipath: scene.config.multipath.enabled,
        mount_height_z: scene.config.mount_height_z,
    })
}

/// percentiles.csv: percentile, error_cm
pub fn write_percentiles_csv(report: &ErrorReport, path: &Path) -> Result<()> {
    let mut out = String::from("percentile,error_cm\n");
    for (p, e) in &report.percentiles {
        out.push_str(&format!("{p},{e}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// heatmap.csv: x_m, y_m, error_cm (row-major over the grid)
pub fn write_heatmap_csv(cells: &[(f64, f64, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("x_m,y_m,error_cm\n");
    for (x, y, e) in cells {
        out.push_str(&format!("{x},{y},{e}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// latency.csv: estimator, p50_ms, p95_ms
pub fn write_latency_csv(report: &ErrorReport, path: &Path) -> Result<()> {
    let est = match report.estimator {
        EstimatorKind::Pso => "pso",
        EstimatorKind::Lstm => "lstm",
        EstimatorKind::Hybrid => "hybrid",
    };
    let out = format!(
        "estimator,p50_ms,p95_ms\n{est},{},{}\n",
        report.latency.p50_ms, report.latency.p95_ms
    );
    std::fs::write(path, out)?;
    Ok(())
}

/// JSON run summary with config hashes.
pub fn write_summary_json(report: &ErrorReport, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Summary<'a> {
        scenario: &'a str,
        estimator: &'a EstimatorKind,
        n_samples: usize,
        multipath: bool,
        mount_height_z: f64,
        scenario_fingerprint: &'a str,
        median_error_cm: f64,
        p98_error_cm: f64,
        latency: &'a LatencyStats,
    }
    let median = report
        .percentiles
        .iter()
        .find(|(p, _)| *p == 50.0)
        .map(|(_, e)| *e)
        .unwrap_or(f64::NAN);
    let p98 = report
        .percentiles
        .iter()
        .find(|(p, _)| *p == 98.0)
        .map(|(_, e)| *e)
        .unwrap_or(f64::NAN);
    let s = Summary {
        scenario: &report.scenario,
        estimator: &report.estimator,
        n_samples: report.errors_cm.len(),
        multipath: report.multipath,
        mount_height_z: report.mount_height_z,
        scenario_fingerprint: &report.scenario_fingerprint,
        median_error_cm: median,
        p98_error_cm: p98,
        latency: &report.latency,
    };
    std::fs::write(path, serde_json::to_string_pretty(&s)?)?;
    Ok(())
}
