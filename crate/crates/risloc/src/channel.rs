//! Channel physics: cell radiation pattern, array factor, tile reflection
//! coefficients, the cascaded BS-tile-UE channel, multipath and noise, and
//! the simulated pilot measurements.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};
use crate::scene::{distance, solid_angles, PhaseSchedule, Scene, SolidAngle, Tile};

/// Direct-link multipath term added to the measurement.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct MultipathConfig {
    pub enabled: bool,
    /// Multipath power relative to the mean RIS-path power (linear; 1.0 = 0 dB).
    pub relative_power: f64,
    /// Redraw the term for every pilot instead of once per sample.
    pub per_pilot: bool,
    pub seed: u64,
}

impl Default for MultipathConfig {
    fn default() -> Self {
        MultipathConfig {
            enabled: false,
            relative_power: 1.0,
            per_pilot: false,
            seed: 0,
        }
    }
}

/// T x K tile reflection coefficients for one schedule and geometry.
#[derive(Debug, Clone)]
pub struct ReflectionMatrix {
    pub beta: Array2<Complex64>,
}

impl ReflectionMatrix {
    pub fn pilots(&self) -> usize {
        self.beta.nrows()
    }

    pub fn tiles(&self) -> usize {
        self.beta.ncols()
    }
}

/// One simulated acquisition: the T measured pilots plus ground truth.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub y: Vec<Complex64>,
    pub truth_position: [f64; 2],
    pub truth_phi0: f64,
    pub scenario_id: String,
}

/// Normalized per-cell power radiation pattern: cos^q(θ) on the front
/// half-space, zero behind the tile.
pub fn radiation_pattern(angle: &SolidAngle, q: f64) -> f64 {
    if angle.theta >= 0.0 && angle.theta <= FRAC_PI_2 {
        angle.theta.cos().powf(q)
    } else {
        0.0
    }
}

/// Dirichlet ratio sin(N a)/sin(a) with the limit N at a ≡ 0 (mod π).
fn dirichlet_ratio(n: usize, a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r < 1e-12 || (PI - r) < 1e-12 {
        // limit value, with alternating sign for odd multiples when N is even
        let m = (a / PI).round() as i64;
        let sign = if m % 2 == 0 || n % 2 == 1 { 1.0 } else { -1.0 };
        sign * n as f64
    } else {
        (n as f64 * a).sin() / a.sin()
    }
}

/// Uniform rectangular array factor of one tile, normalized by √N_e.
pub fn array_factor(
    angle: &SolidAngle,
    n_x: usize,
    n_y: usize,
    d_x: f64,
    d_y: f64,
    lambda: f64,
) -> f64 {
    let u = angle.theta.sin() * angle.phi.sin();
    let v = angle.theta.sin() * angle.phi.cos();
    let ne = (n_x * n_y) as f64;
    let ax = dirichlet_ratio(n_x, PI * d_x * u / lambda);
    let ay = dirichlet_ratio(n_y, PI * d_y * v / lambda);
    ax * ay / ne.sqrt()
}

/// Tile reflection coefficient β = √(F(Θⁱ)F(Θʳ))·AF(Θⁱ)·AF(Θʳ)·G_c·e^{jψ}.
pub fn reflection_coefficient(
    angle_i: &SolidAngle,
    angle_r: &SolidAngle,
    psi: f64,
    scene: &Scene,
) -> Complex64 {
    let q = scene.config.radiation_exponent_q;
    let (n_x, n_y) = scene.config.cells_per_tile;
    let (d_x, d_y) = scene.cell_pitch;
    let lambda = scene.wavelength;
    let f = (radiation_pattern(angle_i, q) * radiation_pattern(angle_r, q)).sqrt();
    let af = array_factor(angle_i, n_x, n_y, d_x, d_y, lambda)
        * array_factor(angle_r, n_x, n_y, d_x, d_y, lambda);
    let mag = f * af * scene.config.boresight_gain_gc;
    mag * Complex64::from_polar(1.0, psi)
}

/// Cascaded BS-tile-UE channel: product path loss with λ/4π per hop and the
/// propagation phase −2π(dᵢ+dᵣ)/λ plus the BS/UE offset φ₀.
pub fn cascaded_channel(
    tile: &Tile,
    bs: &[f64; 3],
    ue: &[f64; 3],
    phi0: f64,
    lambda: f64,
) -> Result<Complex64> {
    let d_i = distance(bs, &tile.centroid);
    let d_r = distance(ue, &tile.centroid);
    if d_i < 1e-15 || d_r < 1e-15 {
        return Err(Error::Geometry("zero-length propagation path".into()));
    }
    let amp = (lambda / (4.0 * PI)).powi(2) / (d_i * d_r);
    let phase = -TAU * (d_i + d_r) / lambda + phi0;
    Ok(Complex64::from_polar(amp, phase))
}

/// Draw one circularly-symmetric complex normal with the given variance.
pub fn complex_normal<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Multipath term for one pilot: 0 when disabled, otherwise a complex-normal
/// draw scaled to `relative_power` times the mean RIS-path power.
pub fn multipath_component<R: Rng>(
    cfg: &MultipathConfig,
    mean_ris_power: f64,
    rng: &mut R,
) -> Complex64 {
    if !cfg.enabled || cfg.relative_power == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    complex_normal(rng, cfg.relative_power * mean_ris_power)
}

/// Per-tile factors that do not depend on the UE: BS-side pattern, array
/// factor and BS-tile distance. Reused across pilots and samples.
#[derive(Debug, Clone)]
pub struct TileIllumination {
    /// √F(Θⁱ)·AF(Θⁱ)·G_c per tile (ψ and UE side applied later).
    pub bs_side: Vec<f64>,
    pub bs_distance: Vec<f64>,
}

pub fn precompute_illumination(scene: &Scene) -> Result<TileIllumination> {
    let q = scene.config.radiation_exponent_q;
    let (n_x, n_y) = scene.config.cells_per_tile;
    let (d_x, d_y) = scene.cell_pitch;
    let lambda = scene.wavelength;
    let mut bs_side = Vec::with_capacity(scene.tiles.len());
    let mut bs_distance = Vec::with_capacity(scene.tiles.len());
    for tile in &scene.tiles {
        let angle_i = solid_angles(tile, &scene.bs)?;
        let f = radiation_pattern(&angle_i, q).sqrt();
        let af = array_factor(&angle_i, n_x, n_y, d_x, d_y, lambda);
        bs_side.push(f * af * scene.config.boresight_gain_gc);
        bs_distance.push(distance(&scene.bs, &tile.centroid));
    }
    Ok(TileIllumination {
        bs_side,
        bs_distance,
    })
}

/// UE-side factor per tile at position `ue`: √F(Θʳ)·AF(Θʳ) and the complex
/// cascaded channel with zero offset. β_{t,k}·h_k then equals
/// bs_side[k]·ue_side[k]·h0[k]·e^{jψ_{t,k}}·e^{jφ₀}.
pub fn ue_side_factors(
    scene: &Scene,
    illum: &TileIllumination,
    ue: &[f64; 3],
) -> Result<Vec<Complex64>> {
    let q = scene.config.radiation_exponent_q;
    let (n_x, n_y) = scene.config.cells_per_tile;
    let (d_x, d_y) = scene.cell_pitch;
    let lambda = scene.wavelength;
    let mut out = Vec::with_capacity(scene.tiles.len());
    for (k, tile) in scene.tiles.iter().enumerate() {
        let angle_r = solid_angles(tile, ue)?;
        let f = radiation_pattern(&angle_r, q).sqrt();
        let af = array_factor(&angle_r, n_x, n_y, d_x, d_y, lambda);
        let d_i = illum.bs_distance[k];
        let d_r = distance(ue, &tile.centroid);
        if d_r < 1e-15 {
            return Err(Error::Geometry("UE coincides with a tile centroid".into()));
        }
        let amp = (lambda / (4.0 * PI)).powi(2) / (d_i * d_r);
        let phase = -TAU * (d_i + d_r) / lambda;
        out.push(illum.bs_side[k] * f * af * amp * Complex64::from_polar(1.0, phase));
    }
    Ok(out)
}

/// Simulate one acquisition at `ue_position` (UE height from the scene):
/// y_t = f⁽ᵐᵖ⁾ + Σ_k β_{t,k} h_k + w_t, with the pilot symbol fixed to 1.
pub fn simulate_measurements<R: Rng>(
    scene: &Scene,
    schedule: &PhaseSchedule,
    ue_position: [f64; 2],
    phi0: f64,
    rng: &mut R,
) -> Result<(MeasurementSet, ReflectionMatrix)> {
    let t_num = scene.config.pilots_t;
    let k_num = scene.tiles.len();
    if schedule.pilots() != t_num || schedule.tiles() != k_num {
        return Err(Error::Shape(format!(
            "schedule is {}x{}, scene wants {}x{}",
            schedule.pilots(),
            schedule.tiles(),
            t_num,
            k_num
        )));
    }
    let ue = scene.ue_point(ue_position[0], ue_position[1]);

    // β matrix and per-tile cascaded channels
    let mut beta = Array2::zeros((t_num, k_num));
    let mut h = Vec::with_capacity(k_num);
    for (k, tile) in scene.tiles.iter().enumerate() {
        let angle_i = solid_angles(tile, &scene.bs)?;
        let angle_r = solid_angles(tile, &ue)?;
        h.push(cascaded_channel(
            tile,
            &scene.bs,
            &ue,
            phi0,
            scene.wavelength,
        )?);
        for t in 0..t_num {
            beta[[t, k]] = reflection_coefficient(&angle_i, &angle_r, schedule.psi[[t, k]], scene);
        }
    }

    // noiseless RIS-path contribution per pilot
    let mut ris: Vec<Complex64> = Vec::with_capacity(t_num);
    for t in 0..t_num {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..k_num {
            acc += beta[[t, k]] * h[k];
        }
        ris.push(acc);
    }
    let mean_ris_power = ris.iter().map(|v| v.norm_sqr()).sum::<f64>() / t_num as f64;

    let mp_cfg = &scene.config.multipath;
    let sample_mp = if mp_cfg.per_pilot {
        Complex64::new(0.0, 0.0)
    } else {
        multipath_component(mp_cfg, mean_ris_power, rng)
    };

    let sigma2 = scene.config.noise_power_sigma2;
    let mut y = Vec::with_capacity(t_num);
    for &r in &ris {
        let mp = if mp_cfg.per_pilot {
            multipath_component(mp_cfg, mean_ris_power, rng)
        } else {
            sample_mp
        };
        let w = if sigma2 > 0.0 {
            complex_normal(rng, sigma2)
        } else {
            Complex64::new(0.0, 0.0)
        };
        y.push(mp + r + w);
    }

    Ok((
        MeasurementSet {
            y,
            truth_position: ue_position,
            truth_phi0: phi0,
            scenario_id: scene.config.fingerprint()[..16].to_string(),
        },
        ReflectionMatrix { beta },
    ))
}
