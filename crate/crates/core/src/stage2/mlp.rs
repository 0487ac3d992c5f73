//! One-hidden-layer perceptron (ReLU) trained full-batch with Adam. Softmax
//! cross-entropy for single-label tasks, per-disease BCE for multi-label.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::stage1::sigmoid;

use super::TaskMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 300,
            lr: 1e-2,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

pub struct MlpGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Gradient w.r.t. the inputs.
    pub input: Array2<f64>,
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

impl Mlp {
    pub fn new(inputs: usize, hidden: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let s1 = (2.0 / inputs.max(1) as f64).sqrt();
        let s2 = (1.0 / hidden.max(1) as f64).sqrt();
        Self {
            w1: Array2::from_shape_simple_fn((hidden, inputs), || s1 * rng.normal()),
            b1: Array1::zeros(hidden),
            w2: Array2::from_shape_simple_fn((outputs, hidden), || s2 * rng.normal()),
            b2: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w1.ncols()
    }

    fn hidden(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (x.dot(&self.w1.t()) + &self.b1).mapv(|v| v.max(0.0))
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.hidden(x).dot(&self.w2.t()) + &self.b2
    }

    /// Softmax probabilities (single-label) or per-disease sigmoids.
    pub fn scores(&self, x: ArrayView2<f64>, mode: TaskMode) -> Array2<f64> {
        let logits = self.logits(x);
        match mode {
            TaskMode::SingleLabel => softmax_rows(&logits),
            TaskMode::MultiLabel => logits.mapv(sigmoid),
        }
    }

    /// Mean loss over samples and gradients. `targets` is `N x K` in {0, 1}.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        mode: TaskMode,
    ) -> (f64, MlpGrads) {
        let n = x.nrows() as f64;
        let pre = x.dot(&self.w1.t()) + &self.b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        let logits = hidden.dot(&self.w2.t()) + &self.b2;
        let (loss, dlogits) = match mode {
            TaskMode::SingleLabel => {
                let p = softmax_rows(&logits);
                let loss = -(&p.mapv(|v| v.max(1e-300).ln()) * &targets).sum() / n;
                (loss, (&p - &targets) / n)
            }
            TaskMode::MultiLabel => {
                let k = logits.ncols() as f64;
                let p = logits.mapv(sigmoid);
                let mut loss = 0.0;
                for (&z, &t) in logits.iter().zip(targets.iter()) {
                    // log(1 + e^z) - t z
                    let softplus = if z > 0.0 {
                        z + (-z).exp().ln_1p()
                    } else {
                        z.exp().ln_1p()
                    };
                    loss += softplus - t * z;
                }
                (loss / (n * k), (&p - &targets) / (n * k))
            }
        };
        let w2 = dlogits.t().dot(&hidden);
        let b2 = dlogits.sum_axis(Axis(0));
        let dhidden = dlogits.dot(&self.w2) * &pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let w1 = dhidden.t().dot(&x);
        let b1 = dhidden.sum_axis(Axis(0));
        let input = dhidden.dot(&self.w1);
        (
            loss,
            MlpGrads {
                w1,
                b1,
                w2,
                b2,
                input,
            },
        )
    }

    pub fn map_params(&mut self, f: impl Fn(f64) -> f64 + Copy) {
        self.w1.mapv_inplace(f);
        self.b1.mapv_inplace(f);
        self.w2.mapv_inplace(f);
        self.b2.mapv_inplace(f);
    }
}

/// Adam over the four MLP tensors.
pub struct Adam {
    lr: f64,
    weight_decay: f64,
    t: i32,
    m: [Vec<f64>; 4],
    v: [Vec<f64>; 4],
}

impl Adam {
    pub fn new(mlp: &Mlp, lr: f64, weight_decay: f64) -> Self {
        let sizes = [mlp.w1.len(), mlp.b1.len(), mlp.w2.len(), mlp.b2.len()];
        Self {
            lr,
            weight_decay,
            t: 0,
            m: sizes.map(|s| vec![0.0; s]),
            v: sizes.map(|s| vec![0.0; s]),
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let params: [&mut [f64]; 4] = [
            mlp.w1.as_slice_mut().expect("standard layout"),
            mlp.b1.as_slice_mut().expect("standard layout"),
            mlp.w2.as_slice_mut().expect("standard layout"),
            mlp.b2.as_slice_mut().expect("standard layout"),
        ];
        let grads: [&[f64]; 4] = [
            grads.w1.as_slice().expect("standard layout"),
            grads.b1.as_slice().expect("standard layout"),
            grads.w2.as_slice().expect("standard layout"),
            grads.b2.as_slice().expect("standard layout"),
        ];
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            // decay only the weight matrices
            let wd = if k % 2 == 0 { self.weight_decay } else { 0.0 };
            for i in 0..p.len() {
                let gi = g[i] + wd * p[i];
                self.m[k][i] = B1 * self.m[k][i] + (1.0 - B1) * gi;
                self.v[k][i] = B2 * self.v[k][i] + (1.0 - B2) * gi * gi;
                p[i] -= self.lr * (self.m[k][i] / c1) / ((self.v[k][i] / c2).sqrt() + EPS);
            }
        }
    }
}

pub fn fit_mlp(
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    mode: TaskMode,
    params: &MlpParams,
    rng: &mut SeededRng,
) -> Mlp {
    let mut mlp = Mlp::new(x.ncols(), params.hidden, targets.ncols(), rng);
    let mut adam = Adam::new(&mlp, params.lr, params.weight_decay);
    for _ in 0..params.epochs {
        let (_, grads) = mlp.loss_and_grad(x, targets, mode);
        adam.step(&mut mlp, &grads);
    }
    mlp
}
