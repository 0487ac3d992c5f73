//! One-vs-rest L2-regularised logistic regression fitted by Newton's method.
//!
//! Objective per head: `C * sum_i logloss(y_i, w.x_i + b) + |w|^2 / 2`, with
//! the bias unregularised.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::linalg::cholesky_solve;
use crate::stage1::sigmoid;

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;

fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn objective(x: ArrayView2<f64>, y: ArrayView1<f64>, theta: &Array1<f64>, c: f64) -> f64 {
    let e = x.ncols();
    let w = theta.slice(ndarray::s![..e]);
    let margins = x.dot(&w) + theta[e];
    let loss: f64 = margins
        .iter()
        .zip(y.iter())
        .map(|(&m, &t)| if t > 0.5 { log1pexp(-m) } else { log1pexp(m) })
        .sum();
    c * loss + 0.5 * w.dot(&w)
}

/// Fits one binary head; returns `(weights, bias)`.
pub fn fit_binary(x: ArrayView2<f64>, y: ArrayView1<f64>, c: f64) -> (Array1<f64>, f64) {
    let (n, e) = x.dim();
    let mut theta = Array1::<f64>::zeros(e + 1);
    let mut current = objective(x, y, &theta, c);
    for _ in 0..MAX_ITER {
        let w = theta.slice(ndarray::s![..e]);
        let margins = x.dot(&w) + theta[e];
        let mut grad = Array1::<f64>::zeros(e + 1);
        let mut hess = Array2::<f64>::zeros((e + 1, e + 1));
        for i in 0..n {
            let p = sigmoid(margins[i]);
            let r = c * (p - y[i]);
            let s = c * p * (1.0 - p);
            let xi = x.row(i);
            for a in 0..e {
                grad[a] += r * xi[a];
                let sa = s * xi[a];
                for b in 0..=a {
                    hess[[a, b]] += sa * xi[b];
                }
                hess[[e, a]] += sa;
            }
            grad[e] += r;
            hess[[e, e]] += s;
        }
        for a in 0..e {
            grad[a] += theta[a];
            hess[[a, a]] += 1.0;
        }
        for a in 0..=e {
            for b in 0..a {
                hess[[b, a]] = hess[[a, b]];
            }
        }
        // keeps the bias direction well conditioned when all p saturate
        hess[[e, e]] += 1e-12;
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < TOL {
            break;
        }
        let Some(step) = cholesky_solve(&hess, &grad) else {
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-10 {
            let candidate = &theta - &(&step * t);
            let value = objective(x, y, &candidate, c);
            if value <= current {
                theta = candidate;
                improved = current - value > 1e-15 * current.abs().max(1.0);
                current = value;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let bias = theta[e];
    (theta.slice(ndarray::s![..e]).to_owned(), bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn stationary_point_of_regularised_objective() {
        let x = array![
            [0.0, 1.0],
            [1.0, 0.5],
            [2.0, -1.0],
            [3.0, 0.0],
            [0.5, 2.0],
            [2.5, 1.5]
        ];
        let y = array![0.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let (w, b) = fit_binary(x.view(), y.view(), 1.0);
        // gradient of C*loss + |w|^2/2 vanishes
        let mut gw = w.clone();
        let mut gb = 0.0;
        for i in 0..x.nrows() {
            let r = sigmoid(x.row(i).dot(&w) + b) - y[i];
            gw.scaled_add(r, &x.row(i));
            gb += r;
        }
        assert!(gw.iter().all(|g| g.abs() < 1e-8), "{gw:?}");
        assert!(gb.abs() < 1e-8);
    }

    #[test]
    fn separable_data_stays_finite() {
        let x = array![[-2.0], [-1.0], [1.0], [2.0]];
        let y = array![0.0, 0.0, 1.0, 1.0];
        let (w, b) = fit_binary(x.view(), y.view(), 1.0);
        assert!(w[0] > 0.0 && w[0].is_finite() && b.is_finite());
    }
}
