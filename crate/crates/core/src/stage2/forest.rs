//! Random forest of CART trees (Gini impurity), one binary forest per disease.
//! Each tree votes 0/1; the disease score is the vote fraction.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        vote: bool,
    },
    Split {
        feature: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
}

/// Arena-allocated binary tree; node 0 is the root. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(vote: bool) -> Self {
        Self {
            nodes: vec![Node::Leaf { vote }],
        }
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> bool {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { vote } => return *vote,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= f64::from(*threshold) {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Fraction of trees voting positive.
    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        let votes = self.trees.iter().filter(|t| t.predict(x)).count();
        votes as f64 / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features examined per split; `None` means `ceil(sqrt(E))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

pub fn fit_forest(
    x: ArrayView2<f64>,
    y: &[bool],
    params: &ForestParams,
    rng: &mut SeededRng,
) -> Forest {
    let n = x.nrows();
    let e = x.ncols();
    let max_features = params
        .max_features
        .unwrap_or_else(|| (e as f64).sqrt().ceil() as usize)
        .clamp(1, e.max(1));
    let trees = (0..params.n_trees)
        .map(|_| {
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.below(n)).collect()
            } else {
                (0..n).collect()
            };
            let mut builder = Builder {
                x,
                y,
                params,
                max_features,
                nodes: Vec::new(),
            };
            builder.grow(rows, 0, rng);
            Tree {
                nodes: builder.nodes,
            }
        })
        .collect();
    Forest { trees }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [bool],
    params: &'a ForestParams,
    max_features: usize,
    nodes: Vec<Node>,
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut SeededRng) -> usize {
        let id = self.nodes.len();
        let pos = rows.iter().filter(|&&r| self.y[r]).count();
        // majority vote, ties resolve to absent
        self.nodes.push(Node::Leaf {
            vote: 2 * pos > rows.len(),
        });
        let pure = pos == 0 || pos == rows.len();
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if pure || rows.len() < self.params.min_samples_split.max(2) || !depth_ok {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows, pos, rng) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[[r, feature]] <= f64::from(threshold));
        if left_rows.is_empty() || right_rows.is_empty() {
            return id;
        }
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, rows: &[usize], pos: usize, rng: &mut SeededRng) -> Option<(usize, f32)> {
        let e = self.x.ncols();
        let n = rows.len();
        let parent = gini(pos, n);
        let mut best: Option<(f64, usize, f32)> = None;
        let mut values: Vec<(f32, bool)> = Vec::with_capacity(n);
        for feature in rng.sample_indices(e, self.max_features) {
            values.clear();
            values.extend(
                rows.iter()
                    .map(|&r| (self.x[[r, feature]] as f32, self.y[r])),
            );
            values.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for k in 1..n {
                if values[k - 1].1 {
                    left_pos += 1;
                }
                if values[k].0 <= values[k - 1].0 {
                    continue;
                }
                let impurity = (k as f64 * gini(left_pos, k)
                    + (n - k) as f64 * gini(pos - left_pos, n - k))
                    / n as f64;
                let gain = parent - impurity;
                let threshold = values[k - 1].0 + (values[k].0 - values[k - 1].0) / 2.0;
                // midpoint can round onto the upper value in f32
                let threshold = if threshold >= values[k].0 {
                    values[k - 1].0
                } else {
                    threshold
                };
                let better = match best {
                    None => gain > 1e-12,
                    Some((g, _, _)) => gain > g + 1e-12,
                };
                if better {
                    best = Some((gain, feature, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};

    fn stump(feature: usize, threshold: f32, left: bool, right: bool) -> Tree {
        Tree {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { vote: left },
                Node::Leaf { vote: right },
            ],
        }
    }

    #[test]
    fn vote_fraction_on_hand_built_trees() {
        let forest = Forest {
            trees: vec![Tree::leaf(true), Tree::leaf(false), Tree::leaf(true)],
        };
        let x = Array1::<f64>::zeros(2);
        assert!((forest.score(x.view()) - 2.0 / 3.0).abs() < 1e-15);
        let forest = Forest {
            trees: vec![stump(0, 0.5, false, true), stump(1, -1.0, true, false)],
        };
        assert_eq!(forest.score(array![1.0, 0.0].view()), 0.5);
        assert_eq!(forest.score(array![1.0, -2.0].view()), 1.0);
        assert_eq!(forest.score(array![0.0, 0.0].view()), 0.0);
    }

    #[test]
    fn fits_training_data_without_bootstrap() {
        let mut rng = SeededRng::new(5);
        let x = Array2::from_shape_simple_fn((40, 3), || rng.normal());
        let y: Vec<bool> = x
            .rows()
            .into_iter()
            .map(|r| r[0] + 0.5 * r[2] > 0.1)
            .collect();
        let params = ForestParams {
            n_trees: 5,
            bootstrap: false,
            max_features: Some(3),
            ..Default::default()
        };
        let forest = fit_forest(x.view(), &y, &params, &mut SeededRng::new(1));
        for (i, row) in x.rows().into_iter().enumerate() {
            assert_eq!(forest.score(row) == 1.0, y[i]);
        }
        let again = fit_forest(x.view(), &y, &params, &mut SeededRng::new(1));
        assert_eq!(forest, again);
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        let mut rng = SeededRng::new(2);
        let x = Array2::from_shape_simple_fn((30, 4), || rng.normal());
        let y: Vec<bool> = (0..30).map(|_| rng.bernoulli(0.4)).collect();
        let forest = fit_forest(
            x.view(),
            &y,
            &ForestParams {
                n_trees: 20,
                ..Default::default()
            },
            &mut rng,
        );
        for row in x.rows() {
            let s = forest.score(row);
            assert!((0.0..=1.0).contains(&s));
        }
    }
}
