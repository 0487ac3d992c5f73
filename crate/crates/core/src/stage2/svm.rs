//! Linear soft-margin SVM with hinge loss, solved in the dual by coordinate
//! descent. The bias is learned through a constant augmented feature.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::rng::SeededRng;

const MAX_EPOCHS: usize = 2000;
const TOL: f64 = 1e-6;

/// Fits one binary head with labels `y` in {0, 1}; returns `(weights, bias)`.
pub fn fit_binary(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    c: f64,
    rng: &mut SeededRng,
) -> (Array1<f64>, f64) {
    let (n, e) = x.dim();
    let sign: Vec<f64> = y
        .iter()
        .map(|&t| if t > 0.5 { 1.0 } else { -1.0 })
        .collect();
    let q: Vec<f64> = (0..n).map(|i| x.row(i).dot(&x.row(i)) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = Array1::<f64>::zeros(e);
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_EPOCHS {
        rng.shuffle(&mut order);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let xi = x.row(i);
            let g = sign[i] * (w.dot(&xi) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * sign[i];
                w.scaled_add(delta, &xi);
                b += delta;
            }
        }
        if pg_max - pg_min < TOL {
            break;
        }
    }
    (w, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separates_toy_problem_with_margin() {
        let x = array![
            [-2.0, 0.0],
            [-1.5, 1.0],
            [-1.0, -1.0],
            [1.0, 0.5],
            [1.5, -1.0],
            [2.0, 1.0]
        ];
        let y = array![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let (w, b) = fit_binary(x.view(), y.view(), 1.0, &mut SeededRng::new(0));
        for i in 0..6 {
            let m = x.row(i).dot(&w) + b;
            assert_eq!(m >= 0.0, y[i] > 0.5, "row {i} margin {m}");
        }
    }

    #[test]
    fn kkt_conditions_hold() {
        let x = array![
            [0.0, 1.0],
            [1.0, 0.5],
            [2.0, -1.0],
            [3.0, 0.0],
            [0.5, 2.0],
            [2.5, 1.5],
            [1.2, 1.1]
        ];
        let y = array![0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let (w, b) = fit_binary(x.view(), y.view(), 1.0, &mut SeededRng::new(3));
        // points strictly outside the margin band must be classified correctly
        // and points with margin < 1 are bounded support vectors; the primal
        // objective cannot be improved by small perturbations of w.
        let primal = |w: &Array1<f64>, b: f64| {
            0.5 * (w.dot(w) + b * b)
                + (0..7)
                    .map(|i| {
                        let s = if y[i] > 0.5 { 1.0 } else { -1.0 };
                        (1.0 - s * (x.row(i).dot(w) + b)).max(0.0)
                    })
                    .sum::<f64>()
        };
        let best = primal(&w, b);
        let mut rng = SeededRng::new(9);
        for _ in 0..200 {
            let dw = Array1::from_shape_simple_fn(2, || 1e-3 * rng.normal());
            let db = 1e-3 * rng.normal();
            assert!(primal(&(&w + &dw), b + db) >= best - 1e-6);
        }
    }
}
