//! Neural-first-guess plus bounded refinement of the direct-positioning
//! cost over a neighborhood box around the network estimate.

use num_complex::Complex64;
use std::time::Instant;

use crate::channel::ReflectionMatrix;
use crate::direct::{search_box, CostContext, DirectConfig, EstimationResult};
use crate::error::Result;
use crate::neural::{predict, ModelBundle};
use crate::pso::{Bound, PsoConfig};
use crate::scene::Scene;

#[derive(Debug, Clone)]
pub struct HybridConfig {
    /// Half-width of the refinement box around the neural estimate, per axis.
    pub neighborhood_halfwidth: f64,
    pub search: DirectConfig,
    /// Intersect the box with the UE region before refining.
    pub clamp_to_region: bool,
}

impl HybridConfig {
    /// Default refinement profile: 0.5 m neighborhood, same scan-and-polish
    /// search as the blind estimator but with a lighter candidate budget.
    pub fn new(seed: u64) -> Self {
        let mut refine = PsoConfig::new(vec![Bound::new(0.0, 1.0), Bound::new(0.0, 1.0)]);
        refine.swarm_size = 24;
        refine.iterations = 120;
        refine.stop_patience = 30;
        refine.seed = seed;
        HybridConfig {
            neighborhood_halfwidth: 0.5,
            search: DirectConfig {
                scan_resolution: 0.005,
                suppression_radius: 0.05,
                candidates: 24,
                refine_halfwidth: 0.01,
                refine,
            },
            clamp_to_region: true,
        }
    }
}

/// Run the network, box its output, and refine the phase cost inside the
/// box. The neural estimate is always polished too, so the refined cost can
/// never exceed the cost at the network's own guess.
pub fn estimate_hybrid(
    y: &[Complex64],
    beta: &ReflectionMatrix,
    scene: &Scene,
    bundle: &mut ModelBundle,
    cfg: &HybridConfig,
) -> Result<EstimationResult> {
    let start = Instant::now();
    let (p_nn, _) = predict(bundle, y, beta)?;
    let hw = cfg.neighborhood_halfwidth;
    let region = scene.config.ue_region;

    let mut lo = [p_nn[0] - hw, p_nn[1] - hw];
    let mut hi = [p_nn[0] + hw, p_nn[1] + hw];
    if cfg.clamp_to_region {
        let clo = (lo[0].max(region.x_min), lo[1].max(region.y_min));
        let chi = (hi[0].min(region.x_max), hi[1].min(region.y_max));
        if clo.0 < chi.0 && clo.1 < chi.1 {
            lo = [clo.0, clo.1];
            hi = [chi.0, chi.1];
        } else {
            // network escaped the region entirely: recenter on the nearest
            // region point, keep the unclamped box width
            let (cx, cy) = region.clamp(p_nn[0], p_nn[1]);
            lo = [cx - hw, cy - hw];
            hi = [cx + hw, cy + hw];
        }
    }

    let ctx = CostContext::new(y, beta, scene)?;
    let seed_nn = [p_nn[0].clamp(lo[0], hi[0]), p_nn[1].clamp(lo[1], hi[1])];
    let (result, _) = search_box(&ctx, lo, hi, &cfg.search, &[seed_nn])?;

    Ok(EstimationResult {
        nn_position: Some(p_nn),
        latency: start.elapsed(),
        ..result
    })
}
