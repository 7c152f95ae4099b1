//! Fingerprint dataset generation, feature extraction, normalization,
//! 80/10/10 splitting and lossless binary persistence.
//!
//! On-disk layout: 16-byte magic `RISLOC-DATASET-1`, u32 version, u64 n,
//! u32 T, u32 K, then n fixed-size little-endian f64 records (features
//! row-major, target, φ₀, truth position). A JSON sidecar `<path>.meta.json`
//! carries the scene config, schedule seed, normalization statistics and a
//! content hash.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::Path;

use crate::channel::{simulate_measurements, ReflectionMatrix};
use crate::error::{Error, Result};
use crate::scene::{hex_string, PhaseSchedule, Scene, SceneConfig};

pub const DATASET_MAGIC: &[u8; 16] = b"RISLOC-DATASET-1";
pub const DATASET_VERSION: u32 = 1;

/// One training sample: the stacked magnitude/phase feature matrix of shape
/// 2T x (K+1) and its ground-truth position.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Array2<f64>,
    pub target: [f64; 2],
    pub phi0: f64,
}

/// Per-feature standardization statistics fitted on the training split.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: [f64; 2],
    pub target_std: [f64; 2],
    /// Indices of features whose std hit the 1e-12 floor.
    pub degenerate_features: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
    pub scene_fingerprint: String,
    pub pilots_t: usize,
    pub tiles_k: usize,
    /// RIS schedule identity; inference must replay the same schedule.
    pub schedule_seed: u64,
    pub schedule_levels: usize,
}

/// Sidecar metadata written next to the binary dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub scene: SceneConfig,
    pub schedule_seed: u64,
    pub schedule_levels: usize,
    pub dataset_seed: u64,
    pub n: usize,
    pub split_sizes: (usize, usize, usize),
    pub norm_stats: Option<NormStats>,
    pub content_hash: String,
}

/// Stack magnitudes over phases: [ |y| | |β| ] on top of [ arg y | arg β ],
/// y as the first column. Phase of an exact zero is 0 by convention.
pub fn featurize(y: &[Complex64], beta: &ReflectionMatrix) -> Result<Array2<f64>> {
    let t = y.len();
    if beta.pilots() != t {
        return Err(Error::Shape(format!(
            "y has {} pilots, beta has {}",
            t,
            beta.pilots()
        )));
    }
    let k = beta.tiles();
    let mut out = Array2::zeros((2 * t, k + 1));
    for (ti, v) in y.iter().enumerate() {
        out[[ti, 0]] = v.norm();
        out[[t + ti, 0]] = if v.norm() == 0.0 { 0.0 } else { v.arg() };
    }
    for ti in 0..t {
        for ki in 0..k {
            let v = beta.beta[[ti, ki]];
            out[[ti, ki + 1]] = v.norm();
            out[[t + ti, ki + 1]] = if v.norm() == 0.0 { 0.0 } else { v.arg() };
        }
    }
    Ok(out)
}

/// Generate n samples with positions uniform over the UE region and φ₀
/// uniform on [0, 2π), then shuffle-split 80/10/10. Deterministic under
/// `seed` regardless of thread count (per-sample sub-seeds).
pub fn generate_dataset(
    scene: &Scene,
    schedule: &PhaseSchedule,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::Config("dataset size must be >= 10".into()));
    }
    let region = scene.config.ue_region;
    let samples: Vec<Sample> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Sample> {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E3779B97F4A7C15));
            let x = rng.gen_range(region.x_min..region.x_max);
            let y = rng.gen_range(region.y_min..region.y_max);
            let phi0 = rng.gen_range(0.0..TAU);
            let (m, beta) = simulate_measurements(scene, schedule, [x, y], phi0, &mut rng)?;
            Ok(Sample {
                features: featurize(&m.y, &beta)?,
                target: [x, y],
                phi0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (train_idx, val_idx, test_idx) = split_indices(n, seed);
    Ok(Dataset {
        samples,
        train_idx,
        val_idx,
        test_idx,
        seed,
        scene_fingerprint: scene.config.fingerprint(),
        pilots_t: scene.config.pilots_t,
        tiles_k: scene.tiles.len(),
        schedule_seed: schedule.seed,
        schedule_levels: schedule.num_levels,
    })
}

/// Shuffle 0..n with the dataset seed and cut 80/10/10.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5157)); // distinct stream from sample gen
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    (train, val, test)
}

const STD_FLOOR: f64 = 1e-12;

/// Fit per-feature and per-target mean/std on the training split only.
pub fn fit_norm_stats(dataset: &Dataset) -> Result<NormStats> {
    if dataset.train_idx.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let d = dataset.samples[0].features.len();
    let n = dataset.train_idx.len() as f64;
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for &i in &dataset.train_idx {
        for (j, &v) in dataset.samples[i].features.iter().enumerate() {
            mean[j] += v;
            m2[j] += v * v;
        }
    }
    let mut degenerate = Vec::new();
    let mut std = vec![0.0; d];
    for j in 0..d {
        mean[j] /= n;
        let var = (m2[j] / n - mean[j] * mean[j]).max(0.0);
        std[j] = var.sqrt();
        if std[j] < STD_FLOOR {
            std[j] = STD_FLOOR;
            degenerate.push(j);
        }
    }
    let mut tmean = [0.0; 2];
    let mut tm2 = [0.0; 2];
    for &i in &dataset.train_idx {
        for a in 0..2 {
            tmean[a] += dataset.samples[i].target[a];
            tm2[a] += dataset.samples[i].target[a] * dataset.samples[i].target[a];
        }
    }
    let mut tstd = [0.0; 2];
    for a in 0..2 {
        tmean[a] /= n;
        tstd[a] = ((tm2[a] / n - tmean[a] * tmean[a]).max(0.0))
            .sqrt()
            .max(STD_FLOOR);
    }
    Ok(NormStats {
        feature_mean: mean,
        feature_std: std,
        target_mean: tmean,
        target_std: tstd,
        degenerate_features: degenerate,
    })
}

/// Standardize a feature matrix in place.
pub fn normalize_features(features: &mut Array2<f64>, stats: &NormStats) {
    for (j, v) in features.iter_mut().enumerate() {
        *v = (*v - stats.feature_mean[j]) / stats.feature_std[j];
    }
}

pub fn normalize_target(target: &[f64; 2], stats: &NormStats) -> [f64; 2] {
    [
        (target[0] - stats.target_mean[0]) / stats.target_std[0],
        (target[1] - stats.target_mean[1]) / stats.target_std[1],
    ]
}

pub fn denormalize_target(t: &[f64; 2], stats: &NormStats) -> [f64; 2] {
    [
        t[0] * stats.target_std[0] + stats.target_mean[0],
        t[1] * stats.target_std[1] + stats.target_mean[1],
    ]
}

fn record_len(t: usize, k: usize) -> usize {
    2 * t * (k + 1) + 2 + 1 + 2 // features + target + phi0 + truth position
}

/// Header size in bytes: magic + version + n + T + K.
pub const DATASET_HEADER_LEN: usize = 16 + 4 + 8 + 4 + 4 + 8 + 4;

/// Serialize the dataset to its binary form.
pub fn dataset_to_bytes(ds: &Dataset) -> Vec<u8> {
    let t = ds.pilots_t;
    let k = ds.tiles_k;
    let mut buf = Vec::with_capacity(DATASET_HEADER_LEN + ds.samples.len() * record_len(t, k) * 8);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.samples.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(k as u32).to_le_bytes());
    buf.extend_from_slice(&ds.schedule_seed.to_le_bytes());
    buf.extend_from_slice(&(ds.schedule_levels as u32).to_le_bytes());
    for s in &ds.samples {
        for &v in s.features.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &s.target {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&s.phi0.to_le_bytes());
        for &v in &s.target {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

/// Parse the binary dataset format. Splits are reconstructed from the seed
/// stored in the sidecar-provided argument.
pub fn dataset_from_bytes(bytes: &[u8], seed: u64, scene_fingerprint: String) -> Result<Dataset> {
    if bytes.len() < DATASET_HEADER_LEN {
        return Err(Error::Format("dataset file truncated in header".into()));
    }
    if &bytes[..16] != DATASET_MAGIC {
        return Err(Error::Format("bad dataset magic".into()));
    }
    let version = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let n = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(bytes[28..32].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(bytes[32..36].try_into().unwrap()) as usize;
    let schedule_seed = u64::from_le_bytes(bytes[36..44].try_into().unwrap());
    let schedule_levels = u32::from_le_bytes(bytes[44..48].try_into().unwrap()) as usize;
    if t == 0 || t > 1 << 16 || k > 1 << 20 || schedule_levels == 0 {
        return Err(Error::Format("implausible dataset dimensions".into()));
    }
    let rec = record_len(t, k);
    let want = DATASET_HEADER_LEN
        + n.checked_mul(rec * 8)
            .ok_or_else(|| Error::Format("dataset size overflow".into()))?;
    if bytes.len() != want {
        return Err(Error::Format(format!(
            "dataset file length {} != expected {}",
            bytes.len(),
            want
        )));
    }
    let mut samples = Vec::with_capacity(n);
    let mut off = DATASET_HEADER_LEN;
    let next = |o: &mut usize| -> f64 {
        let v = f64::from_le_bytes(bytes[*o..*o + 8].try_into().unwrap());
        *o += 8;
        v
    };
    for _ in 0..n {
        let mut features = Array2::zeros((2 * t, k + 1));
        for v in features.iter_mut() {
            *v = next(&mut off);
        }
        let target = [next(&mut off), next(&mut off)];
        let phi0 = next(&mut off);
        let _truth = [next(&mut off), next(&mut off)];
        if features.iter().any(|v| !v.is_finite()) || !phi0.is_finite() {
            return Err(Error::Format("non-finite value in dataset record".into()));
        }
        samples.push(Sample {
            features,
            target,
            phi0,
        });
    }
    let (train_idx, val_idx, test_idx) = split_indices(n, seed);
    Ok(Dataset {
        samples,
        train_idx,
        val_idx,
        test_idx,
        seed,
        scene_fingerprint,
        pilots_t: t,
        tiles_k: k,
        schedule_seed,
        schedule_levels,
    })
}

pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_string(&h.finalize())
}

/// Write the dataset plus its `<path>.meta.json` sidecar.
pub fn save_dataset(
    ds: &Dataset,
    scene_config: &SceneConfig,
    schedule: &PhaseSchedule,
    norm_stats: Option<&NormStats>,
    path: &Path,
) -> Result<DatasetMeta> {
    let bytes = dataset_to_bytes(ds);
    let meta = DatasetMeta {
        scene: scene_config.clone(),
        schedule_seed: schedule.seed,
        schedule_levels: schedule.num_levels,
        dataset_seed: ds.seed,
        n: ds.samples.len(),
        split_sizes: (ds.train_idx.len(), ds.val_idx.len(), ds.test_idx.len()),
        norm_stats: norm_stats.cloned(),
        content_hash: content_hash(&bytes),
    };
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    let meta_path = sidecar_path(path);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}

/// Load a dataset and its sidecar back.
pub fn load_dataset(path: &Path) -> Result<(Dataset, DatasetMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    if content_hash(&bytes) != meta.content_hash {
        return Err(Error::Format("dataset content hash mismatch".into()));
    }
    let ds = dataset_from_bytes(&bytes, meta.dataset_seed, meta.scene.fingerprint())?;
    if ds.samples.len() != meta.n {
        return Err(Error::Format("sidecar n disagrees with file".into()));
    }
    Ok((ds, meta))
}

/// Iterate over training batches of `batch` indices per epoch in the given
/// shuffled order.
pub fn batches(order: &[usize], batch: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch)
}
