//! Maximum-likelihood direct positioning from the weighted sin² phase
//! residual. The clock offset φ₀ is profiled out in closed form, so the
//! search runs over (x, y) only: a dense coarse scan locates candidate
//! basins (the landscape is flat except for a ~wavelength-sized well at the
//! truth), then a small PSO polishes the best candidates.

use num_complex::Complex64;
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::time::Instant;

use crate::channel::{precompute_illumination, ReflectionMatrix, TileIllumination};
use crate::error::{Error, Result};
use crate::pso::{minimize_seeded, Bound, PsoConfig};
use crate::scene::Scene;

/// Everything the cost function needs, immutable and shareable.
pub struct CostContext<'a> {
    /// Measured pilot magnitudes ã_t.
    pub magnitudes: Vec<f64>,
    /// Measured pilot phases φ̃_t.
    pub phases: Vec<f64>,
    /// β_{t,k} row-major T x K.
    beta_flat: Vec<Complex64>,
    /// Pilot weights ã_t²/σ² (ã_t² when σ² = 0).
    weights: Vec<f64>,
    /// w_t · e^{i·2φ̃_t}, precomputed for the φ₀ profile.
    z2: Vec<Complex64>,
    pub scene: &'a Scene,
    pub sigma2: f64,
    illum: TileIllumination,
    tiles: usize,
}

impl<'a> CostContext<'a> {
    pub fn new(y: &[Complex64], beta: &ReflectionMatrix, scene: &'a Scene) -> Result<Self> {
        let t_num = y.len();
        if beta.pilots() != t_num || beta.tiles() != scene.tiles.len() {
            return Err(Error::Shape(format!(
                "beta is {}x{}, expected {}x{}",
                beta.pilots(),
                beta.tiles(),
                t_num,
                scene.tiles.len()
            )));
        }
        let k_num = beta.tiles();
        let mut beta_flat = Vec::with_capacity(t_num * k_num);
        for t in 0..t_num {
            for k in 0..k_num {
                beta_flat.push(beta.beta[[t, k]]);
            }
        }
        let sigma2 = scene.config.noise_power_sigma2;
        let inv_sigma2 = if sigma2 > 0.0 { 1.0 / sigma2 } else { 1.0 };
        let magnitudes: Vec<f64> = y.iter().map(|v| v.norm()).collect();
        let phases: Vec<f64> = y
            .iter()
            .map(|v| if v.norm() == 0.0 { 0.0 } else { v.arg() })
            .collect();
        let weights: Vec<f64> = magnitudes.iter().map(|a| a * a * inv_sigma2).collect();
        let z2 = weights
            .iter()
            .zip(&phases)
            .map(|(&w, &p)| w * Complex64::from_polar(1.0, 2.0 * p))
            .collect();
        Ok(CostContext {
            magnitudes,
            phases,
            beta_flat,
            weights,
            z2,
            scene,
            sigma2,
            illum: precompute_illumination(scene)?,
            tiles: k_num,
        })
    }

    pub fn pilots(&self) -> usize {
        self.magnitudes.len()
    }

    /// Candidate-dependent UE-side channel factors h_k(p, φ₀ = 0): free-space
    /// amplitude and geometric phase over the BS→tile→candidate path. The
    /// direction-dependent magnitude factors live inside β and therefore
    /// cancel out of the phase comparison.
    fn candidate_terms_into(&self, p: &[f64; 2], out: &mut Vec<Complex64>) -> Result<()> {
        let scene = self.scene;
        let ue = scene.ue_point(p[0], p[1]);
        let lambda = scene.wavelength;
        out.clear();
        for (k, tile) in scene.tiles.iter().enumerate() {
            let d_i = self.illum.bs_distance[k];
            let d_r = crate::scene::distance(&ue, &tile.centroid);
            if d_r < 1e-15 {
                return Err(Error::Geometry("candidate coincides with a tile".into()));
            }
            let amp = (lambda / (4.0 * std::f64::consts::PI)).powi(2) / (d_i * d_r);
            let phase = -TAU * (d_i + d_r) / lambda;
            out.push(amp * Complex64::from_polar(1.0, phase));
        }
        Ok(())
    }

    /// Hypothetical pilot sum Σ_k β_{t,k} h_k(p).
    fn pilot_sum(&self, t: usize, h: &[Complex64]) -> Complex64 {
        let row = &self.beta_flat[t * self.tiles..(t + 1) * self.tiles];
        let mut acc = Complex64::new(0.0, 0.0);
        for (b, hk) in row.iter().zip(h) {
            acc += b * hk;
        }
        acc
    }

    /// Cost minimized over φ₀ in closed form, plus the minimizing φ₀.
    /// Σ w_t sin²(δ_t − φ₀) = ½(Σw − Re e^{−2iφ₀} Σ w e^{2iδ_t}), so the
    /// optimum is 2φ₀ = arg S with S = Σ w e^{2iδ_t}, value ½(Σw − |S|).
    fn profiled_with_terms(&self, h: &[Complex64]) -> (f64, f64) {
        let mut s = Complex64::new(0.0, 0.0);
        let mut tot = 0.0;
        for t in 0..self.pilots() {
            let acc = self.pilot_sum(t, h);
            let n2 = acc.norm_sqr();
            // e^{−2i φ_t(p)} without trig; an all-zero sum means φ_t = 0
            let rot = if n2 == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                let c = acc.conj();
                c * c / n2
            };
            s += self.z2[t] * rot;
            tot += self.weights[t];
        }
        let cmin = 0.5 * (tot - s.norm());
        let phi0 = (0.5 * s.arg()).rem_euclid(TAU);
        (cmin.max(0.0), phi0)
    }
}

/// Hypothetical phase of pilot t at candidate position p, with φ₀ = 0:
/// arg(Σ_k β_{t,k} h_k(p)). Returns (phase, degenerate) where degenerate
/// flags an all-zero sum.
pub fn hypothetical_phase(p: &[f64; 2], t: usize, ctx: &CostContext) -> Result<(f64, bool)> {
    let mut h = Vec::with_capacity(ctx.tiles);
    ctx.candidate_terms_into(p, &mut h)?;
    let acc = ctx.pilot_sum(t, &h);
    if acc.norm() == 0.0 {
        Ok((0.0, true))
    } else {
        Ok((acc.arg(), false))
    }
}

/// Weighted phase-residual cost Σ_t (ã_t²/σ²)·sin²(φ̃_t − φ_t(p) − φ₀).
/// With σ² = 0 the 1/σ² weight is replaced by 1 (pure residual scale).
pub fn cost(p: &[f64; 2], phi0: f64, ctx: &CostContext) -> Result<f64> {
    let mut h = Vec::with_capacity(ctx.tiles);
    ctx.candidate_terms_into(p, &mut h)?;
    let mut total = 0.0;
    for t in 0..ctx.pilots() {
        let acc = ctx.pilot_sum(t, &h);
        let phi_t = if acc.norm() == 0.0 { 0.0 } else { acc.arg() };
        let resid = (ctx.phases[t] - phi_t - phi0).sin();
        total += ctx.weights[t] * resid * resid;
    }
    Ok(total)
}

/// Cost at p minimized over φ₀ analytically: (value, argmin φ₀).
pub fn profiled_cost(p: &[f64; 2], ctx: &CostContext) -> Result<(f64, f64)> {
    let mut h = Vec::with_capacity(ctx.tiles);
    ctx.candidate_terms_into(p, &mut h)?;
    Ok(ctx.profiled_with_terms(&h))
}

/// Result of any of the three estimators.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub position: [f64; 2],
    pub phi0: Option<f64>,
    /// Neural first guess, when a network was involved.
    pub nn_position: Option<[f64; 2]>,
    pub residual_cost: Option<f64>,
    pub latency: std::time::Duration,
    pub evaluations: usize,
}

/// Two-stage search profile: dense scan resolution, local-minimum
/// suppression radius, number of candidates kept, and the PSO polish.
#[derive(Debug, Clone)]
pub struct DirectConfig {
    /// Coarse scan pitch (m); must under-sample the ~½-wavelength basin.
    pub scan_resolution: f64,
    /// Bucket size (m) for keeping at most one candidate per neighborhood.
    pub suppression_radius: f64,
    /// Number of best scan candidates polished by PSO.
    pub candidates: usize,
    /// Half-width (m) of each candidate's polish box.
    pub refine_halfwidth: f64,
    /// PSO template for the polish stage (bounds rebuilt per candidate).
    pub refine: PsoConfig,
}

impl DirectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scan_resolution <= 0.0 {
            return Err(Error::Config("scan_resolution must be > 0".into()));
        }
        if self.suppression_radius < self.scan_resolution {
            return Err(Error::Config(
                "suppression_radius must be >= scan_resolution".into(),
            ));
        }
        if self.candidates == 0 {
            return Err(Error::Config("candidates must be >= 1".into()));
        }
        if self.refine_halfwidth < self.scan_resolution / 2.0 {
            return Err(Error::Config(
                "refine_halfwidth must cover at least half a scan cell".into(),
            ));
        }
        Ok(())
    }
}

/// Default search profile for blind direct positioning over the full
/// region. The 5 mm scan pitch keeps the true basin (≈ 1 cm radius at
/// 3.5 GHz) visible above the spurious-minimum floor.
pub fn direct_search_config(_scene: &Scene, seed: u64) -> DirectConfig {
    let mut refine = PsoConfig::new(vec![Bound::new(0.0, 1.0), Bound::new(0.0, 1.0)]);
    refine.swarm_size = 24;
    refine.iterations = 150;
    refine.stop_patience = 40;
    refine.seed = seed;
    DirectConfig {
        scan_resolution: 0.005,
        suppression_radius: 0.05,
        candidates: 48,
        refine_halfwidth: 0.01,
        refine,
    }
}

/// Scan + polish inside the rectangle [lo, hi]. `extra_seeds` are always
/// polished too (the hybrid estimator passes the network guess so the
/// refined cost can never exceed the cost there).
pub fn search_box(
    ctx: &CostContext,
    lo: [f64; 2],
    hi: [f64; 2],
    cfg: &DirectConfig,
    extra_seeds: &[[f64; 2]],
) -> Result<(EstimationResult, usize)> {
    cfg.validate()?;
    if !(lo[0] < hi[0] && lo[1] < hi[1]) {
        return Err(Error::Config("degenerate search box".into()));
    }
    let start = Instant::now();
    let res = cfg.scan_resolution;
    let nx = ((hi[0] - lo[0]) / res).floor() as usize;
    let ny = ((hi[1] - lo[1]) / res).floor() as usize;
    let mut evals = 0usize;

    // Stage 1: dense scan of the profiled cost, one surviving candidate per
    // suppression bucket.
    let mut buckets: HashMap<(i64, i64), (f64, [f64; 2])> = HashMap::new();
    let mut h = Vec::with_capacity(ctx.tiles);
    for j in 0..=ny {
        let y = lo[1] + res * j as f64;
        for i in 0..=nx {
            let x = lo[0] + res * i as f64;
            ctx.candidate_terms_into(&[x, y], &mut h)?;
            let (c, _) = ctx.profiled_with_terms(&h);
            evals += 1;
            let key = (
                ((x - lo[0]) / cfg.suppression_radius).floor() as i64,
                ((y - lo[1]) / cfg.suppression_radius).floor() as i64,
            );
            let entry = buckets.entry(key).or_insert((f64::INFINITY, [x, y]));
            if c < entry.0 {
                *entry = (c, [x, y]);
            }
        }
    }
    type Bucket = ((i64, i64), (f64, [f64; 2]));
    let mut ranked: Vec<Bucket> = buckets.into_iter().collect();
    ranked.sort_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)));
    let mut candidates: Vec<[f64; 2]> = ranked
        .into_iter()
        .take(cfg.candidates)
        .map(|(_, (_, p))| p)
        .collect();
    candidates.extend(extra_seeds.iter().copied());

    // Stage 2: PSO polish in a small box around each candidate.
    let mut best: Option<(f64, [f64; 2])> = None;
    for (idx, cand) in candidates.iter().enumerate() {
        let hw = cfg.refine_halfwidth;
        let bx = Bound::new((cand[0] - hw).max(lo[0]), (cand[0] + hw).min(hi[0]));
        let by = Bound::new((cand[1] - hw).max(lo[1]), (cand[1] + hw).min(hi[1]));
        if !(bx.lo < bx.hi && by.lo < by.hi) {
            continue;
        }
        let mut pso = cfg.refine.clone();
        pso.bounds = vec![bx, by];
        pso.seed = cfg.refine.seed ^ (idx as u64).wrapping_mul(0x9E3779B97F4A7C15);
        let r = minimize_seeded(
            |v| match profiled_cost(&[v[0], v[1]], ctx) {
                Ok((c, _)) => c,
                Err(_) => f64::NAN,
            },
            &pso,
            &[vec![cand[0], cand[1]]],
        )?;
        evals += r.evaluations;
        let point = [r.best_point[0], r.best_point[1]];
        if best.is_none() || r.best_value < best.unwrap().0 {
            best = Some((r.best_value, point));
        }
    }
    let (residual, position) =
        best.ok_or_else(|| Error::Numeric("no candidate survived".into()))?;
    let (_, phi0) = profiled_cost(&position, ctx)?;
    Ok((
        EstimationResult {
            position,
            phi0: Some(phi0),
            nn_position: None,
            residual_cost: Some(residual),
            latency: start.elapsed(),
            evaluations: evals,
        },
        evals,
    ))
}

/// Blind joint estimate of (x, y) over the UE region, φ₀ profiled out.
pub fn estimate_direct(
    y: &[Complex64],
    beta: &ReflectionMatrix,
    scene: &Scene,
    cfg: &DirectConfig,
) -> Result<EstimationResult> {
    let ctx = CostContext::new(y, beta, scene)?;
    let r = scene.config.ue_region;
    let (result, _) = search_box(&ctx, [r.x_min, r.y_min], [r.x_max, r.y_max], cfg, &[])?;
    Ok(result)
}
