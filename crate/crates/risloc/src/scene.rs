//! Physical scene: room, base station, RIS tile geometry and the a-priori
//! phase schedule shared by the simulator and the estimators.
//!
//! The RIS is split into two straight segments along two walls of the room.
//! Each tile carries a local orthonormal frame (x̂_t, ŷ_t, n̂) with n̂ the
//! wall-inward normal; solid angles are always expressed in that frame.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::TAU;

use crate::channel::MultipathConfig;
use crate::error::{Error, Result};

/// Speed of light in vacuum [m/s].
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

fn default_room() -> [f64; 3] {
    [10.0, 10.0, 3.0]
}
fn default_bs() -> [f64; 3] {
    [0.0, 5.0, 1.0]
}
fn default_z() -> f64 {
    1.0
}
fn default_pitch() -> f64 {
    0.2
}
fn default_k() -> usize {
    100
}
fn default_cells() -> (usize, usize) {
    (4, 25)
}
fn default_freq() -> f64 {
    3.5e9
}
fn default_pilots() -> usize {
    32
}
fn default_sigma2() -> f64 {
    // -120.2 dBm expressed in watts
    10f64.powf((-120.2 - 30.0) / 10.0)
}
fn default_gc() -> f64 {
    // 5 dBi boresight cell gain, linear
    10f64.powf(5.0 / 10.0)
}
fn default_q() -> f64 {
    0.57
}
fn default_seed() -> u64 {
    42
}

/// Rectangular UE region at a fixed height.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct UeRegion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z: f64,
}

impl Default for UeRegion {
    fn default() -> Self {
        UeRegion {
            x_min: -4.0,
            x_max: 4.0,
            y_min: 1.0,
            y_max: 10.0,
            z: 1.0,
        }
    }
}

impl UeRegion {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Clamp a point onto the region.
    pub fn clamp(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x.clamp(self.x_min, self.x_max),
            y.clamp(self.y_min, self.y_max),
        )
    }
}

/// Full scenario configuration. An empty JSON object deserializes to the
/// default indoor scenario: 10x10x3 m room, BS at the room center line,
/// K = 100 tiles of 4x25 cells on two walls, 3.5 GHz, T = 32 pilots,
/// noise power -120.2 dBm, UE region (-4, 1)..(4, 10) at z = 1 m.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub room_dims: [f64; 3],
    /// BS position; the z component is overridden by `mount_height_z`
    /// (BS and RIS always share the same mounting plane).
    pub bs_position: [f64; 3],
    pub mount_height_z: f64,
    pub tile_pitch_d: f64,
    pub num_tiles_k: usize,
    pub cells_per_tile: (usize, usize),
    /// Unit-cell pitch (d_x, d_y); `None` means half a wavelength.
    pub cell_pitch: Option<(f64, f64)>,
    pub carrier_freq: f64,
    pub pilots_t: usize,
    pub noise_power_sigma2: f64,
    pub boresight_gain_gc: f64,
    pub radiation_exponent_q: f64,
    pub ue_region: UeRegion,
    pub multipath: MultipathConfig,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            room_dims: default_room(),
            bs_position: default_bs(),
            mount_height_z: default_z(),
            tile_pitch_d: default_pitch(),
            num_tiles_k: default_k(),
            cells_per_tile: default_cells(),
            cell_pitch: None,
            carrier_freq: default_freq(),
            pilots_t: default_pilots(),
            noise_power_sigma2: default_sigma2(),
            boresight_gain_gc: default_gc(),
            radiation_exponent_q: default_q(),
            ue_region: UeRegion::default(),
            multipath: MultipathConfig::default(),
            seed: default_seed(),
        }
    }
}

impl SceneConfig {
    /// Reduced scenario for fast end-to-end runs: 20 tiles at 1 m pitch
    /// (so they still span both walls) and 16 pilots.
    pub fn desk_scale() -> Self {
        SceneConfig {
            num_tiles_k: 20,
            tile_pitch_d: 1.0,
            pilots_t: 16,
            ..SceneConfig::default()
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tiles_k == 0 {
            return Err(Error::Config("num_tiles_k must be > 0".into()));
        }
        if !self.num_tiles_k.is_multiple_of(2) {
            return Err(Error::Config(
                "num_tiles_k must be even (two wall segments)".into(),
            ));
        }
        if self.tile_pitch_d <= 0.0 {
            return Err(Error::Config("tile_pitch_d must be > 0".into()));
        }
        if self.cells_per_tile.0 < 1 || self.cells_per_tile.1 < 1 {
            return Err(Error::Config(
                "cells_per_tile components must be >= 1".into(),
            ));
        }
        if self.carrier_freq <= 0.0 {
            return Err(Error::Config("carrier_freq must be > 0".into()));
        }
        if self.pilots_t == 0 {
            return Err(Error::Config("pilots_t must be > 0".into()));
        }
        if self.noise_power_sigma2 < 0.0 {
            return Err(Error::Config("noise_power_sigma2 must be >= 0".into()));
        }
        if self.radiation_exponent_q <= 0.0 {
            return Err(Error::Config("radiation_exponent_q must be > 0".into()));
        }
        let half_x = self.room_dims[0] / 2.0;
        let r = &self.ue_region;
        if r.x_min < -half_x || r.x_max > half_x || r.y_min < 0.0 || r.y_max > self.room_dims[1] {
            return Err(Error::Config("ue_region exceeds the room footprint".into()));
        }
        if r.x_min >= r.x_max || r.y_min >= r.y_max {
            return Err(Error::Config("ue_region is degenerate".into()));
        }
        if self.multipath.relative_power < 0.0 {
            return Err(Error::Config(
                "multipath relative_power must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Local orthonormal tile frame (x̂_t, ŷ_t, n̂).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Frame {
    pub x_axis: [f64; 3],
    pub y_axis: [f64; 3],
    pub normal: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tile {
    pub index: usize,
    pub centroid: [f64; 3],
    pub frame: Frame,
}

/// Solid angle in a tile frame: θ from the normal, φ in the tile plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolidAngle {
    /// Polar angle from the tile normal, in [0, π].
    pub theta: f64,
    /// Azimuth, in [0, 2π).
    pub phi: f64,
}

/// Immutable scene: resolved configuration plus constructed tile geometry.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SceneConfig,
    pub bs: [f64; 3],
    pub tiles: Vec<Tile>,
    pub wavelength: f64,
    /// Resolved unit-cell pitch (d_x, d_y).
    pub cell_pitch: (f64, f64),
}

impl Scene {
    pub fn num_tiles(&self) -> usize {
        self.tiles.len()
    }

    pub fn num_pilots(&self) -> usize {
        self.config.pilots_t
    }

    /// UE position in 3D at the configured UE height.
    pub fn ue_point(&self, x: f64, y: f64) -> [f64; 3] {
        [x, y, self.config.ue_region.z]
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm3(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Euclidean distance between two 3D points.
pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    norm3(&sub(a, b))
}

/// Build the scene: two RIS segments of K/2 tiles each.
///
/// Segment 1 runs along the wall y = 0 (x from -W/2), normals +ŷ; segment 2
/// along the wall x = +W/2 (y from 0), normals -x̂. Centroids sit at
/// half-pitch offsets so the tiles pack the wall from its start.
pub fn build_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let k = config.num_tiles_k;
    let d = config.tile_pitch_d;
    let z = config.mount_height_z;
    let half = k / 2;
    let wall_x = config.room_dims[0]; // wall y = 0 runs the full room width
    let wall_y = config.room_dims[1];
    if half as f64 * d > wall_x + 1e-9 || half as f64 * d > wall_y + 1e-9 {
        return Err(Error::Config(format!(
            "segment length {} m exceeds wall length",
            half as f64 * d
        )));
    }
    let mut bs = config.bs_position;
    bs[2] = z;
    let hx = config.room_dims[0] / 2.0;
    if bs[0].abs() > hx
        || bs[1] < 0.0
        || bs[1] > config.room_dims[1]
        || bs[2] < 0.0
        || bs[2] > config.room_dims[2]
    {
        return Err(Error::Config(format!(
            "bs position {bs:?} outside the room"
        )));
    }

    let mut tiles = Vec::with_capacity(k);
    // Segment 1: wall y = 0, horizontal axis = global x.
    for j in 0..half {
        tiles.push(Tile {
            index: j,
            centroid: [-hx + d / 2.0 + j as f64 * d, 0.0, z],
            frame: Frame {
                x_axis: [1.0, 0.0, 0.0],
                y_axis: [0.0, 0.0, 1.0],
                normal: [0.0, 1.0, 0.0],
            },
        });
    }
    // Segment 2: wall x = +W/2, horizontal axis = global y.
    for j in 0..half {
        tiles.push(Tile {
            index: half + j,
            centroid: [hx, d / 2.0 + j as f64 * d, z],
            frame: Frame {
                x_axis: [0.0, 1.0, 0.0],
                y_axis: [0.0, 0.0, 1.0],
                normal: [-1.0, 0.0, 0.0],
            },
        });
    }

    let lambda = config.wavelength();
    let cell_pitch = config.cell_pitch.unwrap_or((lambda / 2.0, lambda / 2.0));
    Ok(Scene {
        config: config.clone(),
        bs,
        tiles,
        wavelength: lambda,
        cell_pitch,
    })
}

/// Solid angle of `point` as seen from a tile, in the tile's local frame.
///
/// With the unit direction u = (a, b, c) in frame coordinates (c along n̂):
/// θ = arccos(c) and φ satisfies sinθ·sinφ = a, sinθ·cosφ = b.
pub fn solid_angles(tile: &Tile, point: &[f64; 3]) -> Result<SolidAngle> {
    let v = sub(point, &tile.centroid);
    let r = norm3(&v);
    if r < 1e-15 {
        return Err(Error::Geometry(
            "point coincides with the tile centroid".into(),
        ));
    }
    let a = dot(&v, &tile.frame.x_axis) / r;
    let b = dot(&v, &tile.frame.y_axis) / r;
    let c = (dot(&v, &tile.frame.normal) / r).clamp(-1.0, 1.0);
    let theta = c.acos();
    let phi = if a == 0.0 && b == 0.0 {
        0.0
    } else {
        let p = a.atan2(b);
        if p < 0.0 {
            p + TAU
        } else {
            p
        }
    };
    Ok(SolidAngle { theta, phi })
}

/// Predetermined per-pilot, per-tile phase matrix ψ on a quantized grid.
#[derive(Debug, Clone)]
pub struct PhaseSchedule {
    /// T x K matrix of phases, each on the grid 2πm/num_levels.
    pub psi: Array2<f64>,
    pub num_levels: usize,
    pub seed: u64,
}

/// Draw a T x K schedule i.i.d. uniform over the quantized phase levels.
pub fn generate_schedule(
    t: usize,
    k: usize,
    num_levels: usize,
    seed: u64,
) -> Result<PhaseSchedule> {
    if t < 1 || k < 1 || num_levels < 1 {
        return Err(Error::Config("schedule dimensions must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psi = Array2::from_shape_fn((t, k), |_| {
        let m = rng.gen_range(0..num_levels);
        TAU * m as f64 / num_levels as f64
    });
    Ok(PhaseSchedule {
        psi,
        num_levels,
        seed,
    })
}

impl PhaseSchedule {
    pub fn pilots(&self) -> usize {
        self.psi.nrows()
    }

    pub fn tiles(&self) -> usize {
        self.psi.ncols()
    }
}

/// Quick orthonormality check used by tests and scene validation.
pub fn frame_is_orthonormal(f: &Frame, tol: f64) -> bool {
    let axes = [f.x_axis, f.y_axis, f.normal];
    for i in 0..3 {
        if (norm3(&axes[i]) - 1.0).abs() > tol {
            return false;
        }
        for j in (i + 1)..3 {
            if dot(&axes[i], &axes[j]).abs() > tol {
                return false;
            }
        }
    }
    true
}
