//! Bounded particle swarm minimizer with seedable determinism, per-dimension
//! periodic wrapping for angular variables, and early stopping on stagnation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One search dimension: a closed interval, optionally periodic (angles wrap
/// instead of clamping).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
    pub periodic: bool,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Bound {
            lo,
            hi,
            periodic: false,
        }
    }

    pub fn periodic(lo: f64, hi: f64) -> Self {
        Bound {
            lo,
            hi,
            periodic: true,
        }
    }

    fn span(&self) -> f64 {
        self.hi - self.lo
    }

    fn apply(&self, x: f64) -> f64 {
        if self.periodic {
            self.lo + (x - self.lo).rem_euclid(self.span())
        } else {
            x.clamp(self.lo, self.hi)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub bounds: Vec<Bound>,
    /// Velocity limit as a fraction of each dimension's range.
    pub velocity_clamp: f64,
    pub seed: u64,
    /// Improvement below this for `stop_patience` iterations stops early.
    pub stop_tol: f64,
    pub stop_patience: usize,
}

impl PsoConfig {
    /// Constriction-equivalent defaults.
    pub fn new(bounds: Vec<Bound>) -> Self {
        PsoConfig {
            swarm_size: 60,
            iterations: 400,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            bounds,
            velocity_clamp: 0.5,
            seed: 0,
            stop_tol: 1e-12,
            stop_patience: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::Config("swarm_size must be >= 2".into()));
        }
        if !(self.inertia > 0.0 && self.inertia < 1.0) {
            return Err(Error::Config("inertia must lie in (0,1)".into()));
        }
        if self.cognitive <= 0.0 || self.social <= 0.0 {
            return Err(Error::Config("c1, c2 must be > 0".into()));
        }
        if self.bounds.is_empty() {
            return Err(Error::Config("at least one dimension required".into()));
        }
        for b in &self.bounds {
            if !b.lo.is_finite() || !b.hi.is_finite() || b.lo >= b.hi {
                return Err(Error::Config(format!("bad bound [{}, {}]", b.lo, b.hi)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub iterations_run: usize,
    pub evaluations: usize,
}

/// Minimize `cost` over the configured box.
pub fn minimize<F: Fn(&[f64]) -> f64>(cost: F, config: &PsoConfig) -> Result<OptResult> {
    minimize_seeded(cost, config, &[])
}

/// Like [`minimize`], with `seeds` injected as the first initial particles
/// (used by the hybrid estimator to guarantee it never worsens the
/// neural initialization).
pub fn minimize_seeded<F: Fn(&[f64]) -> f64>(
    cost: F,
    config: &PsoConfig,
    seeds: &[Vec<f64>],
) -> Result<OptResult> {
    config.validate()?;
    let dim = config.bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.swarm_size;

    let eval = |x: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let v = cost(x);
        if !v.is_finite() {
            return Err(Error::NonFiniteCost {
                point: x.to_vec(),
                value: v,
            });
        }
        Ok(v)
    };

    let mut evals = 0usize;
    let mut pos: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut vel: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let p: Vec<f64> = if i < seeds.len() {
            seeds[i]
                .iter()
                .zip(&config.bounds)
                .map(|(&x, b)| b.apply(x))
                .collect()
        } else {
            config
                .bounds
                .iter()
                .map(|b| rng.gen_range(b.lo..=b.hi))
                .collect()
        };
        let v: Vec<f64> = config
            .bounds
            .iter()
            .map(|b| {
                let vmax = config.velocity_clamp * b.span();
                rng.gen_range(-vmax..=vmax)
            })
            .collect();
        pos.push(p);
        vel.push(v);
    }

    let mut pbest = pos.clone();
    let mut pbest_val: Vec<f64> = Vec::with_capacity(n);
    for p in &pos {
        pbest_val.push(eval(p, &mut evals)?);
    }
    // deterministic reduction order: lowest index wins ties
    let mut gbest_idx = 0;
    for i in 1..n {
        if pbest_val[i] < pbest_val[gbest_idx] {
            gbest_idx = i;
        }
    }
    let mut gbest = pbest[gbest_idx].clone();
    let mut gbest_val = pbest_val[gbest_idx];

    let mut stagnant = 0usize;
    let mut iterations_run = 0usize;
    for _ in 0..config.iterations {
        iterations_run += 1;
        let prev_best = gbest_val;
        for i in 0..n {
            for d in 0..dim {
                let b = &config.bounds[d];
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                let mut dp = pbest[i][d] - pos[i][d];
                let mut dg = gbest[d] - pos[i][d];
                if b.periodic {
                    // shortest signed displacement on the circle
                    let half = b.span() / 2.0;
                    dp = (dp + half).rem_euclid(b.span()) - half;
                    dg = (dg + half).rem_euclid(b.span()) - half;
                }
                let mut v = config.inertia * vel[i][d]
                    + config.cognitive * r1 * dp
                    + config.social * r2 * dg;
                let vmax = config.velocity_clamp * b.span();
                v = v.clamp(-vmax, vmax);
                vel[i][d] = v;
                pos[i][d] = b.apply(pos[i][d] + v);
            }
            let val = eval(&pos[i], &mut evals)?;
            if val < pbest_val[i] {
                pbest_val[i] = val;
                pbest[i].clone_from(&pos[i]);
                if val < gbest_val {
                    gbest_val = val;
                    gbest.clone_from(&pos[i]);
                }
            }
        }
        if prev_best - gbest_val < config.stop_tol {
            stagnant += 1;
            if stagnant >= config.stop_patience {
                break;
            }
        } else {
            stagnant = 0;
        }
    }

    Ok(OptResult {
        best_point: gbest,
        best_value: gbest_val,
        iterations_run,
        evaluations: evals,
    })
}
