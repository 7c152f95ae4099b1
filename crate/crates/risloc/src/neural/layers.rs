//! Layers with explicit forward caches and hand-written backward passes.
//! Everything is f64; batches are row-major (batch x features).

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

/// A weight matrix with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param2 {
    pub v: Array2<f64>,
    pub g: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Param1 {
    pub v: Array1<f64>,
    pub g: Array1<f64>,
}

impl Param2 {
    pub fn init<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let v = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound));
        Param2 {
            g: Array2::zeros(v.raw_dim()),
            v,
        }
    }
}

impl Param1 {
    pub fn init<R: Rng>(len: usize, bound: f64, rng: &mut R) -> Self {
        let v = Array1::from_shape_fn(len, |_| rng.gen_range(-bound..bound));
        Param1 {
            g: Array1::zeros(v.raw_dim()),
            v,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// x·Wᵀ + b with W of shape (out, in). Batches of one row take a
/// row-contiguous matrix-vector path: the general gemm kernel wastes most
/// of its tile on a single-row operand, and inference latency is dominated
/// by exactly that case.
fn affine(w: &Array2<f64>, x: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    if x.nrows() == 1 {
        let v = w.dot(&x.row(0)) + b;
        let n = v.len();
        v.into_shape_with_order((1, n)).expect("row reshape")
    } else {
        x.dot(&w.t()) + b
    }
}

/// Fully connected layer y = x·Wᵀ + b with W of shape (out, in).
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param2,
    pub b: Param1,
    cache_x: Option<Array2<f64>>,
}

impl Dense {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Dense {
            w: Param2::init(out_dim, in_dim, bound, rng),
            b: Param1::init(out_dim, bound, rng),
            cache_x: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.v.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.v.nrows()
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let out = affine(&self.w.v, x, &self.b.v);
        if train {
            self.cache_x = Some(x.clone());
        }
        out
    }

    /// Accumulates parameter gradients, returns dL/dx.
    pub fn backward(&mut self, dout: &Array2<f64>) -> Array2<f64> {
        let x = self
            .cache_x
            .as_ref()
            .expect("forward(train) before backward");
        self.w.g += &dout.t().dot(x);
        self.b.g += &dout.sum_axis(Axis(0));
        dout.dot(&self.w.v)
    }

    pub fn num_params(&self) -> usize {
        self.w.v.len() + self.b.v.len()
    }
}

/// ReLU with a cached activity mask.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Array2<f64>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let out = x.mapv(|v| v.max(0.0));
        if train {
            self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        out
    }

    pub fn backward(&self, dout: &Array2<f64>) -> Array2<f64> {
        dout * self.mask.as_ref().expect("forward(train) before backward")
    }
}

/// Inverted dropout: masks scale by 1/(1-p) at train time, identity in eval.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    mask: Option<Array2<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p));
        Dropout { p, mask: None }
    }

    pub fn forward<R: Rng>(&mut self, x: &Array2<f64>, train: bool, rng: &mut R) -> Array2<f64> {
        if !train || self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.p;
        let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let out = x * &mask;
        self.mask = Some(mask);
        out
    }

    pub fn backward(&self, dout: &Array2<f64>) -> Array2<f64> {
        match &self.mask {
            Some(m) => dout * m,
            None => dout.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct LstmCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

/// Single LSTM cell step. Gate blocks are stacked [i; f; g; o] along the
/// output dimension of `wx` (4H x I), `wh` (4H x H) and `b` (4H): one
/// combined bias vector, so the cell holds 4·((I+H)·H + H) parameters.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub wx: Param2,
    pub wh: Param2,
    pub b: Param1,
    cache: Option<LstmCache>,
}

impl LstmCell {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((input_dim + hidden) as f64).sqrt();
        LstmCell {
            wx: Param2::init(4 * hidden, input_dim, bound, rng),
            wh: Param2::init(4 * hidden, hidden, bound, rng),
            b: Param1::init(4 * hidden, bound, rng),
            cache: None,
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.v.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.wx.v.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.wx.v.len() + self.wh.v.len() + self.b.v.len()
    }

    /// One step: returns (h, c) for a batch.
    pub fn forward(
        &mut self,
        x: &Array2<f64>,
        h_prev: &Array2<f64>,
        c_prev: &Array2<f64>,
        train: bool,
    ) -> (Array2<f64>, Array2<f64>) {
        let h_dim = self.hidden();
        let pre = affine(&self.wx.v, x, &self.b.v)
            + affine(&self.wh.v, h_prev, &Array1::zeros(4 * h_dim));
        let i = pre.slice(s![.., 0..h_dim]).mapv(sigmoid);
        let f = pre.slice(s![.., h_dim..2 * h_dim]).mapv(sigmoid);
        let g = pre.slice(s![.., 2 * h_dim..3 * h_dim]).mapv(f64::tanh);
        let o = pre.slice(s![.., 3 * h_dim..4 * h_dim]).mapv(sigmoid);
        let c = &f * c_prev + &i * &g;
        let tanh_c = c.mapv(f64::tanh);
        let h = &o * &tanh_c;
        if train {
            self.cache = Some(LstmCache {
                x: x.clone(),
                h_prev: h_prev.clone(),
                c_prev: c_prev.clone(),
                i,
                f,
                g,
                o,
                tanh_c,
            });
        }
        (h, c)
    }

    /// Backward through one step given dL/dh and dL/dc (the latter from any
    /// later step; zero for the last one). Returns (dx, dh_prev, dc_prev).
    pub fn backward(
        &mut self,
        dh: &Array2<f64>,
        dc_in: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let cache = self.cache.as_ref().expect("forward(train) before backward");
        let LstmCache {
            x,
            h_prev,
            c_prev,
            i,
            f,
            g,
            o,
            tanh_c,
        } = cache;
        let do_ = dh * tanh_c;
        let dc = dh * o * &tanh_c.mapv(|v| 1.0 - v * v) + dc_in;
        let di = &dc * g;
        let df = &dc * c_prev;
        let dg = &dc * i;
        let dc_prev = &dc * f;

        let dpre_i = di * i * &i.mapv(|v| 1.0 - v);
        let dpre_f = df * f * &f.mapv(|v| 1.0 - v);
        let dpre_g = dg * &g.mapv(|v| 1.0 - v * v);
        let dpre_o = do_ * o * &o.mapv(|v| 1.0 - v);

        let n = dh.nrows();
        let h_dim = self.hidden();
        let mut dpre = Array2::zeros((n, 4 * h_dim));
        dpre.slice_mut(s![.., 0..h_dim]).assign(&dpre_i);
        dpre.slice_mut(s![.., h_dim..2 * h_dim]).assign(&dpre_f);
        dpre.slice_mut(s![.., 2 * h_dim..3 * h_dim]).assign(&dpre_g);
        dpre.slice_mut(s![.., 3 * h_dim..4 * h_dim]).assign(&dpre_o);

        self.wx.g += &dpre.t().dot(x);
        self.wh.g += &dpre.t().dot(h_prev);
        self.b.g += &dpre.sum_axis(Axis(0));

        let dx = dpre.dot(&self.wx.v);
        let dh_prev = dpre.dot(&self.wh.v);
        (dx, dh_prev, dc_prev)
    }
}

/// Mean squared error over all elements; returns (loss, dL/dpred).
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let diff = pred - target;
    let n = diff.len() as f64;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
    let grad = diff.mapv(|v| 2.0 * v / n);
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lstm_zero_params_zero_state_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cell = LstmCell::new(3, 4, &mut rng);
        cell.wx.v.fill(0.0);
        cell.wh.v.fill(0.0);
        cell.b.v.fill(0.0);
        let x = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-1.0..1.0));
        let (h, c) = cell.forward(&x, &Array2::zeros((2, 4)), &Array2::zeros((2, 4)), false);
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_saturated_gates_pass_cell_state_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cell = LstmCell::new(3, 4, &mut rng);
        let h = 4;
        // forget bias -> +inf (50), input gate bias -> -inf
        for j in 0..h {
            cell.b.v[j] = -50.0; // input gate shut
            cell.b.v[h + j] = 50.0; // forget gate open
        }
        cell.wx.v.fill(0.0);
        cell.wh.v.fill(0.0);
        let c_prev = Array2::from_shape_fn((2, h), |_| rng.gen_range(-0.5..0.5));
        let x = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-1.0..1.0));
        let (_, c) = cell.forward(&x, &Array2::zeros((2, h)), &c_prev, false);
        for (a, b) in c.iter().zip(c_prev.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_mean_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut drop = Dropout::new(0.4);
        let x = Array2::from_elem((1, 50), 1.0);
        let n_draws = 10_000;
        let mut mean = Array2::<f64>::zeros((1, 50));
        for _ in 0..n_draws {
            mean += &drop.forward(&x, true, &mut rng);
        }
        mean /= n_draws as f64;
        let avg = mean.iter().sum::<f64>() / 50.0;
        assert!((avg - 1.0).abs() < 0.02, "avg {avg}");
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut drop = Dropout::new(0.4);
        let x = Array2::from_shape_fn((3, 5), |_| rng.gen_range(-1.0..1.0));
        let out = drop.forward(&x, false, &mut rng);
        assert_eq!(out, x);
    }

    #[test]
    fn mse_hand_check() {
        let pred = Array2::from_shape_vec((1, 2), vec![1.0, 2.0]).unwrap();
        let target = Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap();
        let (loss, grad) = mse_loss(&pred, &target);
        assert!((loss - 2.5).abs() < 1e-15);
        assert!((grad[[0, 0]] - 1.0).abs() < 1e-15);
        assert!((grad[[0, 1]] - 2.0).abs() < 1e-15);
    }

    // ---- finite-difference gradient oracles ----

    const FD_EPS: f64 = 1e-6;
    const FD_TOL: f64 = 1e-4;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut layer = Dense::new(5, 3, &mut rng);
        let x = Array2::from_shape_fn((4, 5), |_| rng.gen_range(-1.0..1.0));
        let target = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));

        let out = layer.forward(&x, true);
        let (_, dout) = mse_loss(&out, &target);
        let dx = layer.backward(&dout);

        let loss_fn = |layer: &mut Dense, x: &Array2<f64>| {
            let out = layer.forward(x, false);
            mse_loss(&out, &target).0
        };
        for _ in 0..100 {
            let r = rng.gen_range(0..layer.w.v.len() + layer.b.v.len() + x.len());
            let (analytic, numeric) = if r < layer.w.v.len() {
                let idx = (r / layer.w.v.ncols(), r % layer.w.v.ncols());
                let analytic = layer.w.g[idx];
                let orig = layer.w.v[idx];
                layer.w.v[idx] = orig + FD_EPS;
                let lp = loss_fn(&mut layer, &x);
                layer.w.v[idx] = orig - FD_EPS;
                let lm = loss_fn(&mut layer, &x);
                layer.w.v[idx] = orig;
                (analytic, (lp - lm) / (2.0 * FD_EPS))
            } else if r < layer.w.v.len() + layer.b.v.len() {
                let idx = r - layer.w.v.len();
                let analytic = layer.b.g[idx];
                let orig = layer.b.v[idx];
                layer.b.v[idx] = orig + FD_EPS;
                let lp = loss_fn(&mut layer, &x);
                layer.b.v[idx] = orig - FD_EPS;
                let lm = loss_fn(&mut layer, &x);
                layer.b.v[idx] = orig;
                (analytic, (lp - lm) / (2.0 * FD_EPS))
            } else {
                let r = r - layer.w.v.len() - layer.b.v.len();
                let idx = (r / x.ncols(), r % x.ncols());
                let analytic = dx[idx];
                let mut xp = x.clone();
                xp[idx] += FD_EPS;
                let lp = loss_fn(&mut layer, &xp);
                let mut xm = x.clone();
                xm[idx] -= FD_EPS;
                let lm = loss_fn(&mut layer, &xm);
                (analytic, (lp - lm) / (2.0 * FD_EPS))
            };
            assert!(
                rel_err(analytic, numeric) < FD_TOL,
                "analytic {analytic} vs fd {numeric}"
            );
        }
    }

    #[test]
    fn relu_gradient_matches_finite_differences_off_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // keep inputs away from the kink so central differences are valid
        let x = Array2::from_shape_fn((4, 6), |_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        });
        let target = Array2::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0));
        let mut relu = Relu::default();
        let out = relu.forward(&x, true);
        let (_, dout) = mse_loss(&out, &target);
        let dx = relu.backward(&dout);
        for _ in 0..100 {
            let idx = (rng.gen_range(0..4), rng.gen_range(0..6));
            let mut xp = x.clone();
            xp[idx] += FD_EPS;
            let lp = mse_loss(&relu.clone().forward(&xp, false), &target).0;
            let mut xm = x.clone();
            xm[idx] -= FD_EPS;
            let lm = mse_loss(&relu.clone().forward(&xm, false), &target).0;
            let numeric = (lp - lm) / (2.0 * FD_EPS);
            assert!(rel_err(dx[idx], numeric) < FD_TOL);
        }
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (i_dim, h_dim, n) = (3, 4, 2);
        let mut cell = LstmCell::new(i_dim, h_dim, &mut rng);
        let x = Array2::from_shape_fn((n, i_dim), |_| rng.gen_range(-1.0..1.0));
        let h_prev = Array2::from_shape_fn((n, h_dim), |_| rng.gen_range(-1.0..1.0));
        let c_prev = Array2::from_shape_fn((n, h_dim), |_| rng.gen_range(-1.0..1.0));
        // scalar loss: random projection of h and c
        let wh_proj = Array2::from_shape_fn((n, h_dim), |_| rng.gen_range(-1.0..1.0));
        let wc_proj = Array2::from_shape_fn((n, h_dim), |_| rng.gen_range(-1.0..1.0));

        let loss =
            |cell: &mut LstmCell, x: &Array2<f64>, hp: &Array2<f64>, cp: &Array2<f64>| -> f64 {
                let (h, c) = cell.forward(x, hp, cp, false);
                (&h * &wh_proj).sum() + (&c * &wc_proj).sum()
            };

        let (h, c) = cell.forward(&x, &h_prev, &c_prev, true);
        let _ = (h, c);
        let (dx, dhp, dcp) = cell.backward(&wh_proj, &wc_proj);

        let nw = cell.wx.v.len();
        let nh = cell.wh.v.len();
        let nb = cell.b.v.len();
        let total = nw + nh + nb + x.len() + h_prev.len() + c_prev.len();
        for _ in 0..100 {
            let r = rng.gen_range(0..total);
            let (analytic, numeric) = if r < nw {
                let idx = (r / i_dim, r % i_dim);
                let a = cell.wx.g[idx];
                let orig = cell.wx.v[idx];
                cell.wx.v[idx] = orig + FD_EPS;
                let lp = loss(&mut cell, &x, &h_prev, &c_prev);
                cell.wx.v[idx] = orig - FD_EPS;
                let lm = loss(&mut cell, &x, &h_prev, &c_prev);
                cell.wx.v[idx] = orig;
                (a, (lp - lm) / (2.0 * FD_EPS))
            } else if r < nw + nh {
                let r = r - nw;
                let idx = (r / h_dim, r % h_dim);
                let a = cell.wh.g[idx];
                let orig = cell.wh.v[idx];
                cell.wh.v[idx] = orig + FD_EPS;
                let lp = loss(&mut cell, &x, &h_prev, &c_prev);
                cell.wh.v[idx] = orig - FD_EPS;
                let lm = loss(&mut cell, &x, &h_prev, &c_prev);
                cell.wh.v[idx] = orig;
                (a, (lp - lm) / (2.0 * FD_EPS))
            } else if r < nw + nh + nb {
                let idx = r - nw - nh;
                let a = cell.b.g[idx];
                let orig = cell.b.v[idx];
                cell.b.v[idx] = orig + FD_EPS;
                let lp = loss(&mut cell, &x, &h_prev, &c_prev);
                cell.b.v[idx] = orig - FD_EPS;
                let lm = loss(&mut cell, &x, &h_prev, &c_prev);
                cell.b.v[idx] = orig;
                (a, (lp - lm) / (2.0 * FD_EPS))
            } else if r < nw + nh + nb + x.len() {
                let r = r - nw - nh - nb;
                let idx = (r / i_dim, r % i_dim);
                let mut xp = x.clone();
                xp[idx] += FD_EPS;
                let lp = loss(&mut cell, &xp, &h_prev, &c_prev);
                let mut xm = x.clone();
                xm[idx] -= FD_EPS;
                let lm = loss(&mut cell, &xm, &h_prev, &c_prev);
                (dx[idx], (lp - lm) / (2.0 * FD_EPS))
            } else if r < nw + nh + nb + x.len() + h_prev.len() {
                let r = r - nw - nh - nb - x.len();
                let idx = (r / h_dim, r % h_dim);
                let mut hp = h_prev.clone();
                hp[idx] += FD_EPS;
                let lp = loss(&mut cell, &x, &hp, &c_prev);
                let mut hm = h_prev.clone();
                hm[idx] -= FD_EPS;
                let lm = loss(&mut cell, &x, &hm, &c_prev);
                (dhp[idx], (lp - lm) / (2.0 * FD_EPS))
            } else {
                let r = r - nw - nh - nb - x.len() - h_prev.len();
                let idx = (r / h_dim, r % h_dim);
                let mut cp = c_prev.clone();
                cp[idx] += FD_EPS;
                let lp = loss(&mut cell, &x, &h_prev, &cp);
                let mut cm = c_prev.clone();
                cm[idx] -= FD_EPS;
                let lm = loss(&mut cell, &x, &h_prev, &cm);
                (dcp[idx], (lp - lm) / (2.0 * FD_EPS))
            };
            assert!(
                rel_err(analytic, numeric) < FD_TOL,
                "analytic {analytic} vs fd {numeric}"
            );
        }
    }
}
