//! The position-regression network: flatten -> (bi)LSTM over the flattened
//! vector as a one-step sequence -> dropout -> FC stack with ReLU -> linear
//! output.

use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Dense, Dropout, LstmCell, Relu};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Flattened input size, 2·T·(K+1).
    pub input_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub dense_dims: Vec<usize>,
    pub output_dim: usize,
    pub bidirectional: bool,
}

impl ModelConfig {
    /// Full-size configuration: T = 32, K = 100, bidirectional hidden 500,
    /// FC stack 2048/512/64, 2 outputs.
    pub fn full_scale(pilots_t: usize, tiles_k: usize) -> Self {
        ModelConfig {
            input_dim: 2 * pilots_t * (tiles_k + 1),
            hidden: 500,
            dropout: 0.4,
            dense_dims: vec![2048, 512, 64],
            output_dim: 2,
            bidirectional: true,
        }
    }

    /// Small configuration for fast end-to-end runs.
    pub fn desk_scale(pilots_t: usize, tiles_k: usize) -> Self {
        ModelConfig {
            input_dim: 2 * pilots_t * (tiles_k + 1),
            hidden: 64,
            dropout: 0.4,
            dense_dims: vec![256, 64],
            output_dim: 2,
            bidirectional: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.output_dim == 0 {
            return Err(Error::Config("model dims must be >= 1".into()));
        }
        if self.dense_dims.contains(&0) {
            return Err(Error::Config("dense dims must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count for this architecture.
    pub fn param_count(&self) -> usize {
        let dirs = if self.bidirectional { 2 } else { 1 };
        let lstm = dirs * 4 * ((self.input_dim + self.hidden) * self.hidden + self.hidden);
        let mut fc = 0;
        let mut prev = dirs * self.hidden;
        for &d in self
            .dense_dims
            .iter()
            .chain(std::iter::once(&self.output_dim))
        {
            fc += prev * d + d;
            prev = d;
        }
        lstm + fc
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    lstm_fwd: LstmCell,
    lstm_bwd: Option<LstmCell>,
    dropout: Dropout,
    fcs: Vec<Dense>,
    relus: Vec<Relu>,
}

impl Model {
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let lstm_fwd = LstmCell::new(config.input_dim, config.hidden, &mut rng);
        let lstm_bwd = if config.bidirectional {
            Some(LstmCell::new(config.input_dim, config.hidden, &mut rng))
        } else {
            None
        };
        let dirs = if config.bidirectional { 2 } else { 1 };
        let mut fcs = Vec::new();
        let mut prev = dirs * config.hidden;
        for &d in config
            .dense_dims
            .iter()
            .chain(std::iter::once(&config.output_dim))
        {
            fcs.push(Dense::new(prev, d, &mut rng));
            prev = d;
        }
        let relus = vec![Relu::default(); config.dense_dims.len()];
        Ok(Model {
            dropout: Dropout::new(config.dropout),
            config,
            lstm_fwd,
            lstm_bwd,
            fcs,
            relus,
        })
    }

    /// Forward pass over a batch (rows = samples, cols = flattened features).
    /// Dropout masks are drawn from `rng` when `train` is set.
    pub fn forward<R: Rng>(
        &mut self,
        x: &Array2<f64>,
        train: bool,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "input has {} features, model wants {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        let n = x.nrows();
        let h_dim = self.config.hidden;
        let zeros = Array2::zeros((n, h_dim));
        let (h_f, _) = self.lstm_fwd.forward(x, &zeros, &zeros, train);
        let mut h = match self.lstm_bwd.as_mut() {
            Some(bwd) => {
                let (h_b, _) = bwd.forward(x, &zeros, &zeros, train);
                concatenate(Axis(1), &[h_f.view(), h_b.view()]).expect("concat")
            }
            None => h_f,
        };
        h = self.dropout.forward(&h, train, rng);
        let last = self.fcs.len() - 1;
        for i in 0..self.fcs.len() {
            h = self.fcs[i].forward(&h, train);
            if i < last {
                h = self.relus[i].forward(&h, train);
            }
        }
        Ok(h)
    }

    /// Backward pass; accumulates gradients on every parameter.
    pub fn backward(&mut self, dout: &Array2<f64>) {
        let mut d = dout.clone();
        let last = self.fcs.len() - 1;
        for i in (0..self.fcs.len()).rev() {
            if i < last {
                d = self.relus[i].backward(&d);
            }
            d = self.fcs[i].backward(&d);
        }
        d = self.dropout.backward(&d);
        let h_dim = self.config.hidden;
        let n = d.nrows();
        let zeros = Array2::zeros((n, h_dim));
        if let Some(bwd) = self.lstm_bwd.as_mut() {
            let d_b = d.slice(ndarray::s![.., h_dim..2 * h_dim]).to_owned();
            bwd.backward(&d_b, &zeros);
            let d_f = d.slice(ndarray::s![.., 0..h_dim]).to_owned();
            self.lstm_fwd.backward(&d_f, &zeros);
        } else {
            self.lstm_fwd.backward(&d, &zeros);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.lstm_fwd.num_params();
        if let Some(b) = &self.lstm_bwd {
            n += b.num_params();
        }
        n + self.fcs.iter().map(Dense::num_params).sum::<usize>()
    }

    /// Visit every (parameter, gradient) pair in a fixed canonical order.
    pub fn for_each_param<F: FnMut(&mut f64, &mut f64)>(&mut self, mut f: F) {
        let visit_cell = |cell: &mut LstmCell, f: &mut F| {
            for (v, g) in cell.wx.v.iter_mut().zip(cell.wx.g.iter_mut()) {
                f(v, g);
            }
            for (v, g) in cell.wh.v.iter_mut().zip(cell.wh.g.iter_mut()) {
                f(v, g);
            }
            for (v, g) in cell.b.v.iter_mut().zip(cell.b.g.iter_mut()) {
                f(v, g);
            }
        };
        visit_cell(&mut self.lstm_fwd, &mut f);
        if let Some(b) = self.lstm_bwd.as_mut() {
            visit_cell(b, &mut f);
        }
        for fc in &mut self.fcs {
            for (v, g) in fc.w.v.iter_mut().zip(fc.w.g.iter_mut()) {
                f(v, g);
            }
            for (v, g) in fc.b.v.iter_mut().zip(fc.b.g.iter_mut()) {
                f(v, g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.for_each_param(|_, g| *g = 0.0);
    }

    /// Visit every parameter immutably in the same canonical order.
    pub fn for_each_param_ref<F: FnMut(&f64)>(&self, mut f: F) {
        let visit_cell = |cell: &LstmCell, f: &mut F| {
            cell.wx.v.iter().for_each(&mut *f);
            cell.wh.v.iter().for_each(&mut *f);
            cell.b.v.iter().for_each(&mut *f);
        };
        visit_cell(&self.lstm_fwd, &mut f);
        if let Some(b) = self.lstm_bwd.as_ref() {
            visit_cell(b, &mut f);
        }
        for fc in &self.fcs {
            fc.w.v.iter().for_each(&mut f);
            fc.b.v.iter().for_each(&mut f);
        }
    }

    /// Flat parameter vector in canonical order.
    pub fn export_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_param_ref(|v| out.push(*v));
        out
    }

    pub fn import_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ArtifactMismatch(format!(
                "parameter blob has {} values, model wants {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut it = params.iter();
        self.for_each_param(|v, _| *v = *it.next().unwrap());
        Ok(())
    }

    /// Sum of squared gradients (diagnostics for NaN aborts).
    pub fn grad_norm(&mut self) -> f64 {
        let mut s = 0.0;
        self.for_each_param(|_, g| s += *g * *g);
        s.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_dim: 6,
            hidden: 4,
            dropout: 0.0,
            dense_dims: vec![5],
            output_dim: 2,
            bidirectional: true,
        }
    }

    #[test]
    fn full_scale_model_parameter_count() {
        let cfg = ModelConfig::full_scale(32, 100);
        assert_eq!(cfg.input_dim, 6464);
        assert_eq!(cfg.param_count(), 30_992_098);
    }

    #[test]
    fn constructed_count_matches_closed_form() {
        for cfg in [
            tiny_config(),
            ModelConfig::desk_scale(16, 20),
            ModelConfig {
                bidirectional: false,
                ..tiny_config()
            },
        ] {
            let model = Model::new(cfg.clone(), 0).unwrap();
            assert_eq!(model.param_count(), cfg.param_count());
            assert_eq!(model.export_params().len(), cfg.param_count());
        }
    }

    #[test]
    fn eval_mode_deterministic() {
        let mut model = Model::new(
            ModelConfig {
                dropout: 0.4,
                ..tiny_config()
            },
            1,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((3, 6), |_| rng.gen_range(-1.0..1.0));
        let a = model.forward(&x, false, &mut rng).unwrap();
        let b = model.forward(&x, false, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut model = Model::new(tiny_config(), 2).unwrap();
        model.for_each_param(|v, _| *v = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((2, 6), |_| rng.gen_range(-1.0..1.0));
        let out = model.forward(&x, false, &mut rng).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn import_export_round_trip() {
        let model = Model::new(tiny_config(), 3).unwrap();
        let params = model.export_params();
        let mut other = Model::new(tiny_config(), 99).unwrap();
        other.import_params(&params).unwrap();
        assert_eq!(other.export_params(), params);
    }

    #[test]
    fn import_wrong_size_is_mismatch_error() {
        let mut model = Model::new(tiny_config(), 3).unwrap();
        assert!(model.import_params(&[0.0; 3]).is_err());
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        use super::super::layers::mse_loss;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = Model::new(tiny_config(), 4).unwrap();
        let x = Array2::from_shape_fn((3, 6), |_| rng.gen_range(-1.0..1.0));
        let target = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));

        let out = model.forward(&x, true, &mut rng).unwrap();
        let (_, dout) = mse_loss(&out, &target);
        model.zero_grads();
        model.backward(&dout);

        let params = model.export_params();
        let mut grads = Vec::with_capacity(params.len());
        model.for_each_param(|_, g| grads.push(*g));

        let eps = 1e-6;
        for _ in 0..100 {
            let idx = rng.gen_range(0..params.len());
            let mut p = params.clone();
            p[idx] += eps;
            model.import_params(&p).unwrap();
            let lp = mse_loss(&model.forward(&x, false, &mut rng).unwrap(), &target).0;
            p[idx] -= 2.0 * eps;
            model.import_params(&p).unwrap();
            let lm = mse_loss(&model.forward(&x, false, &mut rng).unwrap(), &target).0;
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = grads[idx];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {idx}: analytic {analytic} fd {numeric}");
        }
        model.import_params(&params).unwrap();
    }
}
