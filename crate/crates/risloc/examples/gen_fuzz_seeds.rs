//! Regenerate the fuzz corpus seeds (one small valid artifact per decoder).
//!
//! Run from the repository root:
//! `cargo run --example gen_fuzz_seeds`

use std::fs;
use std::path::Path;

use risloc::dataset::{dataset_to_bytes, generate_dataset, NormStats};
use risloc::neural::checkpoint::bundle_to_bytes;
use risloc::neural::{Model, ModelBundle, ModelConfig, TrainMeta};
use risloc::scene::{build_scene, generate_schedule, SceneConfig};

fn main() -> risloc::Result<()> {
    let root = Path::new("fuzz/corpus");

    let mut cfg = SceneConfig::desk_scale();
    cfg.num_tiles_k = 4;
    cfg.pilots_t = 4;
    let scene = build_scene(&cfg)?;
    let schedule = generate_schedule(cfg.pilots_t, scene.tiles.len(), 4, 1)?;

    let ds = generate_dataset(&scene, &schedule, 10, 1)?;
    fs::create_dir_all(root.join("fuzz_dataset"))?;
    fs::write(root.join("fuzz_dataset/tiny.bin"), dataset_to_bytes(&ds))?;

    let dim = 2 * cfg.pilots_t * (scene.tiles.len() + 1);
    let mc = ModelConfig {
        input_dim: dim,
        hidden: 3,
        dropout: 0.0,
        dense_dims: vec![4],
        output_dim: 2,
        bidirectional: true,
    };
    let bundle = ModelBundle {
        model: Model::new(mc, 1)?,
        norm_stats: NormStats {
            feature_mean: vec![0.0; dim],
            feature_std: vec![1.0; dim],
            target_mean: [0.0, 5.5],
            target_std: [1.0, 1.0],
            degenerate_features: vec![],
        },
        meta: TrainMeta {
            epochs_run: 1,
            best_epoch: 1,
            best_val_loss: 0.1,
            scene_fingerprint: cfg.fingerprint(),
            schedule_seed: schedule.seed,
            schedule_levels: schedule.num_levels,
        },
        history: vec![],
    };
    fs::create_dir_all(root.join("fuzz_checkpoint"))?;
    fs::write(
        root.join("fuzz_checkpoint/tiny.ckpt"),
        bundle_to_bytes(&bundle)?,
    )?;

    fs::create_dir_all(root.join("fuzz_config"))?;
    fs::write(
        root.join("fuzz_config/desk.json"),
        serde_json::to_string_pretty(&cfg)?,
    )?;
    Ok(())
}
