//! `risloc` — RIS-assisted indoor localization workbench CLI.

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use risloc::channel::simulate_measurements;
use risloc::dataset::{fit_norm_stats, generate_dataset, load_dataset, save_dataset};
use risloc::direct::{direct_search_config, estimate_direct};
use risloc::error::{Error, Result};
use risloc::eval::{
    heatmap, run_scenario, write_heatmap_csv, write_latency_csv, write_percentiles_csv,
    write_summary_json, Estimator, EstimatorKind, PositionSource, ScenarioSpec,
};
use risloc::hybrid::{estimate_hybrid, HybridConfig};
use risloc::neural::{
    load_bundle, predict, save_bundle, train, write_loss_history_csv, ModelConfig, TrainConfig,
};
use risloc::scene::{build_scene, generate_schedule, Scene, SceneConfig};

/// Top-level config file. An empty JSON object resolves to the full-size
/// default scenario with default training hyperparameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AppConfig {
    scene: SceneConfig,
    train: TrainConfig,
    schedule_levels: usize,
    schedule_seed: u64,
}

impl AppConfig {
    fn resolved(mut self) -> Self {
        if self.schedule_levels == 0 {
            self.schedule_levels = 4;
        }
        self
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "risloc",
    version,
    about = "RIS-assisted NLOS indoor localization workbench"
)]
struct Cli {
    /// JSON config file; omitted fields fall back to the default scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config scene seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap rayon worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output root; defaults to $RISLOC_OUT_DIR, then the current directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Scenario preset: z1, z3, z1_mp, z3_mp (mount height / multipath).
    #[arg(long, global = true)]
    scenario: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Print the resolved scene (tiles, wavelength, fingerprint).
    Scene,
    /// Simulate a dataset and write it with its JSON sidecar.
    Generate(GenerateArgs),
    /// Train the LSTM regressor on a stored dataset.
    Train(TrainArgs),
    /// Evaluate an estimator over random positions; write CSV/JSON reports.
    Eval(EvalArgs),
    /// Evaluate on a dense grid; write heatmap.csv.
    Heatmap(HeatmapArgs),
    /// Localize one simulated sample; print truth vs estimates.
    Locate(LocateArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Number of samples.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Output file name under the output root.
    #[arg(long, default_value = "dataset.bin")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset file written by `generate`.
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint file name under the output root.
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// Model preset: `desk` (hidden 64) or `full` (hidden 500, 31M params).
    #[arg(long, default_value = "desk")]
    model: String,
    /// Override the config epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Estimator to evaluate.
    #[arg(long, default_value = "pso")]
    estimator: EstimatorKind,
    /// Number of random evaluation positions.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Evaluate on a grid at this resolution (m) instead of random draws.
    #[arg(long)]
    resolution: Option<f64>,
    /// Model checkpoint (required for lstm / hybrid).
    #[arg(long)]
    bundle: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    /// Grid resolution in meters.
    #[arg(long, default_value_t = 0.1)]
    resolution: f64,
    #[arg(long, default_value = "pso")]
    estimator: EstimatorKind,
    #[arg(long)]
    bundle: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LocateArgs {
    /// True UE position (x y), meters.
    #[arg(long, num_args = 2, allow_negative_numbers = true)]
    pos: Vec<f64>,
    /// Override the noise power (0 = noiseless).
    #[arg(long)]
    sigma2: Option<f64>,
    /// Model checkpoint; enables the lstm and hybrid rows.
    #[arg(long)]
    bundle: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    subcommand: String,
    scene_fingerprint: String,
    seed: u64,
    schedule_seed: u64,
    scenario: Option<String>,
    outputs: Vec<(String, String)>, // (path, sha256 or "-")
    elapsed_s: f64,
}

fn apply_scenario(scene: &mut SceneConfig, name: &str) -> Result<()> {
    match name {
        "z1" => {
            scene.mount_height_z = 1.0;
            scene.multipath.enabled = false;
        }
        "z3" => {
            scene.mount_height_z = 3.0;
            scene.multipath.enabled = false;
        }
        "z1_mp" | "z1_multipath" => {
            scene.mount_height_z = 1.0;
            scene.multipath.enabled = true;
        }
        "z3_mp" | "z3_multipath" => {
            scene.mount_height_z = 3.0;
            scene.multipath.enabled = true;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown scenario '{other}' (expected z1, z3, z1_mp, z3_mp)"
            )))
        }
    }
    Ok(())
}

fn load_app_config(cli: &Cli) -> Result<AppConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str::<AppConfig>(&text)
                .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?
        }
        None => AppConfig::default(),
    }
    .resolved();
    if let Some(name) = &cli.scenario {
        apply_scenario(&mut cfg.scene, name)?;
    }
    if let Some(seed) = cli.seed {
        cfg.scene.seed = seed;
        cfg.train.seed = seed;
        cfg.schedule_seed = seed.wrapping_add(0x5C4E);
    } else if cfg.schedule_seed == 0 {
        cfg.schedule_seed = cfg.scene.seed.wrapping_add(0x5C4E);
    }
    cfg.scene.validate()?;
    Ok(cfg)
}

fn out_root(cli: &Cli) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| std::env::var_os("RISLOC_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn out_path(root: &Path, name: &Path) -> PathBuf {
    if name.is_absolute() {
        name.to_path_buf()
    } else {
        root.join(name)
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(bytes_hex(&h.finalize()))
}

fn bytes_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn print_manifest(m: &RunManifest) {
    println!(
        "{}",
        serde_json::to_string_pretty(m).expect("manifest serializes")
    );
}

fn build_estimator<'a>(
    kind: EstimatorKind,
    bundle: &'a Option<Mutex<risloc::neural::ModelBundle>>,
    seed: u64,
) -> Result<Estimator<'a>> {
    match kind {
        EstimatorKind::Pso => Ok(Estimator::DirectPso),
        EstimatorKind::Lstm => match bundle {
            Some(b) => Ok(Estimator::Lstm(b)),
            None => Err(Error::Config("lstm estimator requires --bundle".into())),
        },
        EstimatorKind::Hybrid => match bundle {
            Some(b) => Ok(Estimator::Hybrid(b, HybridConfig::new(seed))),
            None => Err(Error::Config("hybrid estimator requires --bundle".into())),
        },
    }
}

fn load_bundle_checked(
    path: &Option<PathBuf>,
    scene: &Scene,
) -> Result<Option<Mutex<risloc::neural::ModelBundle>>> {
    let Some(path) = path else { return Ok(None) };
    let bundle = load_bundle(path)?;
    let expected = 2 * scene.config.pilots_t * (scene.tiles.len() + 1);
    if bundle.model.config.input_dim != expected {
        return Err(Error::ArtifactMismatch(format!(
            "bundle input_dim {} does not match scene feature size {expected}",
            bundle.model.config.input_dim
        )));
    }
    if !bundle.meta.scene_fingerprint.is_empty()
        && bundle.meta.scene_fingerprint != scene.config.fingerprint()
    {
        eprintln!(
            "warning: bundle was trained on a different scene (fingerprint {} vs {})",
            bundle.meta.scene_fingerprint,
            scene.config.fingerprint()
        );
    }
    Ok(Some(Mutex::new(bundle)))
}

/// The RIS schedule is part of the feature distribution a network was trained
/// on, so inference with a bundle must replay the schedule recorded in it.
fn schedule_for_bundle(
    scene: &Scene,
    default: &risloc::scene::PhaseSchedule,
    bundle: &Option<Mutex<risloc::neural::ModelBundle>>,
) -> Result<risloc::scene::PhaseSchedule> {
    match bundle {
        Some(b) => {
            let meta = &b.lock().unwrap().meta;
            generate_schedule(
                scene.config.pilots_t,
                scene.tiles.len(),
                meta.schedule_levels,
                meta.schedule_seed,
            )
        }
        None => Ok(default.clone()),
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load_app_config(cli)?;
    let root = out_root(cli);
    std::fs::create_dir_all(&root)?;
    let scene = build_scene(&cfg.scene)?;
    let schedule = generate_schedule(
        scene.config.pilots_t,
        scene.tiles.len(),
        cfg.schedule_levels,
        cfg.schedule_seed,
    )?;
    let started = Instant::now();
    let mut outputs: Vec<(String, String)> = Vec::new();
    let subcommand;

    match &cli.cmd {
        Cmd::Scene => {
            subcommand = "scene".to_string();
            println!("{}", serde_json::to_string_pretty(&cfg.scene)?);
            println!(
                "tiles: {}  pilots: {}  wavelength_m: {:.6}  fingerprint: {}",
                scene.tiles.len(),
                scene.config.pilots_t,
                scene.config.wavelength(),
                scene.config.fingerprint()
            );
        }
        Cmd::Generate(a) => {
            subcommand = "generate".to_string();
            let ds = generate_dataset(&scene, &schedule, a.n, cfg.scene.seed)?;
            let stats = fit_norm_stats(&ds)?;
            let path = out_path(&root, &a.out);
            let meta = save_dataset(&ds, &cfg.scene, &schedule, Some(&stats), &path)?;
            outputs.push((path.display().to_string(), meta.content_hash.clone()));
            let sidecar = risloc::dataset::sidecar_path(&path);
            outputs.push((sidecar.display().to_string(), file_sha256(&sidecar)?));
            eprintln!("generated {} samples, split {:?}", meta.n, meta.split_sizes);
        }
        Cmd::Train(a) => {
            subcommand = "train".to_string();
            let (ds, _meta) = load_dataset(&a.dataset)?;
            let model_config = match a.model.as_str() {
                "desk" => ModelConfig::desk_scale(ds.pilots_t, ds.tiles_k),
                "full" => ModelConfig::full_scale(ds.pilots_t, ds.tiles_k),
                other => {
                    return Err(Error::Config(format!(
                        "unknown model preset '{other}' (expected desk or full)"
                    )))
                }
            };
            let mut tc = cfg.train.clone();
            if let Some(e) = a.epochs {
                tc.epochs = e;
            }
            let bundle = train(&model_config, &ds, &tc)?;
            let ckpt = out_path(&root, &a.out);
            save_bundle(&bundle, &ckpt)?;
            let csv = ckpt.with_extension("loss.csv");
            write_loss_history_csv(&bundle.history, &csv)?;
            outputs.push((ckpt.display().to_string(), file_sha256(&ckpt)?));
            outputs.push((csv.display().to_string(), "-".to_string()));
            eprintln!(
                "trained {} params; best val mse {:.6e} at epoch {}",
                bundle.model.param_count(),
                bundle.meta.best_val_loss,
                bundle.meta.best_epoch
            );
        }
        Cmd::Eval(a) => {
            subcommand = "eval".to_string();
            let bundle = load_bundle_checked(&a.bundle, &scene)?;
            let schedule = schedule_for_bundle(&scene, &schedule, &bundle)?;
            let estimator = build_estimator(a.estimator, &bundle, cfg.scene.seed)?;
            let spec = ScenarioSpec {
                name: cli.scenario.clone().unwrap_or_else(|| "custom".into()),
                estimator: a.estimator,
                positions: match a.resolution {
                    Some(r) => PositionSource::Grid { resolution: r },
                    None => PositionSource::Random { n: a.n },
                },
                seed: cfg.scene.seed,
            };
            let report = run_scenario(&scene, &schedule, &spec, &estimator)?;
            type Writer = fn(&risloc::eval::ErrorReport, &Path) -> Result<()>;
            for (name, writer) in [
                ("percentiles.csv", write_percentiles_csv as Writer),
                ("latency.csv", write_latency_csv as Writer),
                ("summary.json", write_summary_json as Writer),
            ] {
                let path = root.join(name);
                writer(&report, &path)?;
                outputs.push((path.display().to_string(), "-".to_string()));
            }
            for (p, e) in &report.percentiles {
                println!("p{p}: {e:.4} cm");
            }
        }
        Cmd::Heatmap(a) => {
            subcommand = "heatmap".to_string();
            let bundle = load_bundle_checked(&a.bundle, &scene)?;
            let schedule = schedule_for_bundle(&scene, &schedule, &bundle)?;
            let estimator = build_estimator(a.estimator, &bundle, cfg.scene.seed)?;
            let cells = heatmap(&scene, &schedule, &estimator, a.resolution, cfg.scene.seed)?;
            let path = root.join("heatmap.csv");
            write_heatmap_csv(&cells, &path)?;
            outputs.push((path.display().to_string(), file_sha256(&path)?));
            eprintln!("heatmap: {} points", cells.len());
        }
        Cmd::Locate(a) => {
            subcommand = "locate".to_string();
            if a.pos.len() != 2 {
                return Err(Error::Config("--pos needs exactly two values".into()));
            }
            let mut scene_cfg = cfg.scene.clone();
            if let Some(s2) = a.sigma2 {
                scene_cfg.noise_power_sigma2 = s2;
            }
            scene_cfg.validate()?;
            let scene = build_scene(&scene_cfg)?;
            let p = [a.pos[0], a.pos[1]];
            if !scene_cfg.ue_region.contains(p[0], p[1]) {
                return Err(Error::Config(format!(
                    "position ({}, {}) is outside the UE region",
                    p[0], p[1]
                )));
            }
            let bundle = load_bundle_checked(&a.bundle, &scene)?;
            let schedule = schedule_for_bundle(&scene, &schedule, &bundle)?;
            let mut rng = ChaCha8Rng::seed_from_u64(scene_cfg.seed);
            let phi0 = rng.gen_range(0.0..TAU);
            let (m, beta) = simulate_measurements(&scene, &schedule, p, phi0, &mut rng)?;
            println!("truth: x={:.4} y={:.4} phi0={:.4}", p[0], p[1], phi0);

            let search_cfg = direct_search_config(&scene, scene_cfg.seed);
            let r = estimate_direct(&m.y, &beta, &scene, &search_cfg)?;
            println!(
                "pso:    x={:.4} y={:.4} error={:.4} cm ({:.1} ms)",
                r.position[0],
                r.position[1],
                risloc::eval::planar_error_cm(&r.position, &p),
                r.latency.as_secs_f64() * 1e3
            );

            match bundle {
                Some(bundle) => {
                    let mut b = bundle.into_inner().unwrap();
                    let (pl, lat) = predict(&mut b, &m.y, &beta)?;
                    println!(
                        "lstm:   x={:.4} y={:.4} error={:.4} cm ({:.1} ms)",
                        pl[0],
                        pl[1],
                        risloc::eval::planar_error_cm(&pl, &p),
                        lat.as_secs_f64() * 1e3
                    );
                    let hc = HybridConfig::new(scene_cfg.seed);
                    let rh = estimate_hybrid(&m.y, &beta, &scene, &mut b, &hc)?;
                    println!(
                        "hybrid: x={:.4} y={:.4} error={:.4} cm ({:.1} ms)",
                        rh.position[0],
                        rh.position[1],
                        risloc::eval::planar_error_cm(&rh.position, &p),
                        rh.latency.as_secs_f64() * 1e3
                    );
                }
                None => println!("lstm/hybrid: skipped (no --bundle)"),
            }
        }
    }

    print_manifest(&RunManifest {
        subcommand,
        scene_fingerprint: cfg.scene.fingerprint(),
        seed: cfg.scene.seed,
        schedule_seed: cfg.schedule_seed,
        scenario: cli.scenario.clone(),
        outputs,
        elapsed_s: started.elapsed().as_secs_f64(),
    });
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
