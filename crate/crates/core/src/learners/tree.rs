//! Histogram-based regression trees, used directly for CART and as the weak learner
//! for gradient boosting.
//!
//! A split on target `t` maximizes the drop in squared error
//! `S_L^2/n_L + S_R^2/n_R - S^2/n`; with 0/1 targets this is proportional to the Gini
//! impurity decrease, so the same grower serves both algorithms.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;

pub const MAX_BINS: usize = 256;

/// Per-feature bin codes for the rows of a fit matrix.
pub struct BinnedMatrix {
    n_rows: usize,
    bins: Vec<Vec<u8>>,
    edges: Vec<Vec<f64>>,
    offsets: Vec<usize>,
    total_bins: usize,
}

fn feature_edges(column: ArrayView1<'_, f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = column.to_vec();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let cuts: Vec<f64> = if vals.len() <= MAX_BINS {
        vals.windows(2)
            .map(|w| {
                let mid = w[0] + (w[1] - w[0]) / 2.0;
                if mid < w[1] {
                    mid
                } else {
                    w[0]
                }
            })
            .collect()
    } else {
        let mut sorted = column.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut c: Vec<f64> = (1..MAX_BINS).map(|b| sorted[b * n / MAX_BINS]).collect();
        c.dedup();
        // the largest value never needs an edge
        if c.last() == vals.last() {
            c.pop();
        }
        c
    };
    cuts
}

impl BinnedMatrix {
    pub fn new(x: ArrayView2<'_, f64>) -> Self {
        let n_rows = x.nrows();
        let mut bins = Vec::with_capacity(x.ncols());
        let mut edges = Vec::with_capacity(x.ncols());
        let mut offsets = Vec::with_capacity(x.ncols());
        let mut total_bins = 0;
        for col in x.columns() {
            let e = feature_edges(col);
            bins.push(col.iter().map(|&v| e.partition_point(|&edge| edge < v) as u8).collect());
            offsets.push(total_bins);
            total_bins += e.len() + 1;
            edges.push(e);
        }
        Self {
            n_rows,
            bins,
            edges,
            offsets,
            total_bins,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn n_bins(&self, f: usize) -> usize {
        self.edges[f].len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_of(&self, row: ArrayView1<'_, f64>) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        match self.nodes[self.leaf_of(row)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    fn set_leaf(&mut self, i: usize, v: f64) {
        self.nodes[i] = Node::Leaf { value: v };
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Split impure nodes even when the best split does not reduce the error. Needed for
    /// patterns such as XOR where no single split helps but two do.
    pub split_without_gain: bool,
}

struct Hist {
    cnt: Vec<u32>,
    sum: Vec<f64>,
}

impl Hist {
    fn build(m: &BinnedMatrix, targets: &[f64], rows: &[u32]) -> Self {
        let mut cnt = vec![0u32; m.total_bins];
        let mut sum = vec![0.0; m.total_bins];
        for (f, col) in m.bins.iter().enumerate() {
            let off = m.offsets[f];
            let (c, s) = (&mut cnt[off..off + m.n_bins(f)], &mut sum[off..off + m.n_bins(f)]);
            for &r in rows {
                let b = col[r as usize] as usize;
                c[b] += 1;
                s[b] += targets[r as usize];
            }
        }
        Self { cnt, sum }
    }

    fn minus(&self, other: &Hist) -> Hist {
        Hist {
            cnt: self.cnt.iter().zip(&other.cnt).map(|(a, b)| a - b).collect(),
            sum: self.sum.iter().zip(&other.sum).map(|(a, b)| a - b).collect(),
        }
    }
}

struct Grower<'a> {
    m: &'a BinnedMatrix,
    targets: &'a [f64],
    params: GrowParams,
    tree: Tree,
    leaf_value: &'a dyn Fn(usize, f64) -> f64,
}

impl Grower<'_> {
    fn best_split(&self, hist: &Hist, n: usize, s: f64) -> Option<(usize, usize)> {
        let min_leaf = self.params.min_leaf.max(1);
        let base = s * s / n as f64;
        let mut best: Option<(f64, usize, usize)> = None;
        for f in 0..self.m.bins.len() {
            let off = self.m.offsets[f];
            let (mut nl, mut sl) = (0usize, 0.0);
            for b in 0..self.m.n_bins(f) - 1 {
                nl += hist.cnt[off + b] as usize;
                sl += hist.sum[off + b];
                let nr = n - nl;
                if nl < min_leaf {
                    continue;
                }
                if nr < min_leaf {
                    break;
                }
                let sr = s - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - base;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, b));
                }
            }
        }
        let (gain, f, b) = best?;
        let tol = 1e-12 * (1.0 + base.abs());
        (gain > tol || (self.params.split_without_gain && gain > -tol)).then_some((f, b))
    }

    fn grow(&mut self, rows: Vec<u32>, hist: Hist, depth: usize) -> usize {
        let n = rows.len();
        let s: f64 = rows.iter().map(|&r| self.targets[r as usize]).sum();
        let id = self.tree.nodes.len();
        self.tree.nodes.push(Node::Leaf {
            value: (self.leaf_value)(n, s),
        });
        let pure = self.targets_constant(&rows);
        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf.max(1) || pure {
            return id;
        }
        let Some((f, b)) = self.best_split(&hist, n, s) else {
            return id;
        };
        let col = &self.m.bins[f];
        let (left, right): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| col[r as usize] as usize <= b);
        drop(rows);
        let (lh, rh) = if left.len() <= right.len() {
            let lh = Hist::build(self.m, self.targets, &left);
            let rh = hist.minus(&lh);
            (lh, rh)
        } else {
            let rh = Hist::build(self.m, self.targets, &right);
            let lh = hist.minus(&rh);
            (lh, rh)
        };
        drop(hist);
        let l = self.grow(left, lh, depth + 1);
        let r = self.grow(right, rh, depth + 1);
        self.tree.nodes[id] = Node::Split {
            feature: f,
            threshold: self.m.edges[f][b],
            left: l,
            right: r,
        };
        id
    }

    fn targets_constant(&self, rows: &[u32]) -> bool {
        let first = self.targets[rows[0] as usize];
        rows.iter().all(|&r| self.targets[r as usize] == first)
    }
}

/// Grows a tree on `rows` of the binned matrix. Leaves get `leaf_value(n, sum_targets)`.
pub fn grow_tree(
    m: &BinnedMatrix,
    targets: &[f64],
    rows: Vec<u32>,
    params: GrowParams,
    leaf_value: &dyn Fn(usize, f64) -> f64,
) -> Tree {
    assert!(!rows.is_empty(), "tree needs at least one row");
    let hist = Hist::build(m, targets, &rows);
    let mut g = Grower {
        m,
        targets,
        params,
        tree: Tree { nodes: Vec::new() },
        leaf_value,
    };
    g.grow(rows, hist, 0);
    g.tree
}

/// Single classification tree with Laplace-smoothed leaf probabilities `(pos+1)/(n+2)`.
pub fn fit_cart(x: ArrayView2<'_, f64>, y: &[f64], max_depth: usize, min_leaf: usize) -> Tree {
    let m = BinnedMatrix::new(x);
    let rows = (0..x.nrows() as u32).collect();
    let params = GrowParams {
        max_depth,
        min_leaf,
        split_without_gain: true,
    };
    grow_tree(&m, y, rows, params, &|n, s| (s + 1.0) / (n as f64 + 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boosted {
    pub init: f64,
    pub trees: Vec<Tree>,
}

impl Boosted {
    pub fn decision(&self, row: ArrayView1<'_, f64>) -> f64 {
        self.init + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn truncated(&self, n_trees: usize) -> Self {
        Self {
            init: self.init,
            trees: self.trees[..n_trees.min(self.trees.len())].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoostParams {
    pub trees: usize,
    pub depth: usize,
    pub shrinkage: f64,
    pub subsample: f64,
    pub min_leaf: usize,
}

fn leaf_loss(f: &[f64], y: &[f64], rows: &[usize], step: f64) -> f64 {
    rows.iter()
        .map(|&i| {
            let z = f[i] + step;
            let sp = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            sp - y[i] * z
        })
        .sum()
}

/// Gradient boosting on the logistic loss. Tree structure is grown on a seeded row
/// subsample; each leaf then takes a shrunken Newton step computed on all rows, halved
/// until the leaf's loss does not increase. Returns the model and the training mean NLL
/// after every round (index 0 is the intercept-only model).
pub fn fit_gbm(x: ArrayView2<'_, f64>, y: &[f64], params: BoostParams, seed: u64) -> (Boosted, Vec<f64>) {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let init = (mean / (1.0 - mean)).ln();
    let mut f = vec![init; n];
    let mut model = Boosted {
        init,
        trees: Vec::with_capacity(params.trees),
    };
    let mut trace = Vec::with_capacity(params.trees + 1);
    let all: Vec<usize> = (0..n).collect();
    trace.push(leaf_loss(&f, y, &all, 0.0) / n as f64);
    if params.trees == 0 {
        return (model, trace);
    }
    let m = BinnedMatrix::new(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sub = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let grow = GrowParams {
        max_depth: params.depth,
        min_leaf: params.min_leaf,
        split_without_gain: false,
    };
    let mut resid = vec![0.0; n];
    for _ in 0..params.trees {
        for i in 0..n {
            resid[i] = y[i] - sigmoid(f[i]);
        }
        let rows: Vec<u32> = if n_sub < n {
            let mut r: Vec<u32> = sample(&mut rng, n, n_sub).into_iter().map(|i| i as u32).collect();
            r.sort_unstable();
            r
        } else {
            (0..n as u32).collect()
        };
        let mut tree = grow_tree(&m, &resid, rows, grow, &|_, _| 0.0);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
        for i in 0..n {
            members[tree.leaf_of(x.row(i))].push(i);
        }
        for (leaf, rows) in members.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let g: f64 = rows.iter().map(|&i| resid[i]).sum();
            let h: f64 = rows
                .iter()
                .map(|&i| {
                    let p = sigmoid(f[i]);
                    p * (1.0 - p)
                })
                .sum();
            let mut step = params.shrinkage * g / h.max(1e-12);
            let base = leaf_loss(&f, y, rows, 0.0);
            let mut tries = 0;
            while step != 0.0 && !(leaf_loss(&f, y, rows, step) <= base) {
                step *= 0.5;
                tries += 1;
                if tries > 50 {
                    step = 0.0;
                }
            }
            tree.set_leaf(leaf, step);
            for &i in rows {
                f[i] += step;
            }
        }
        trace.push(leaf_loss(&f, y, &all, 0.0) / n as f64);
        model.trees.push(tree);
    }
    (model, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn binning_is_exact_for_few_distinct_values() {
        let x = array![[0.0], [1.0], [1.0], [3.0]];
        let m = BinnedMatrix::new(x.view());
        assert_eq!(m.edges[0], vec![0.5, 2.0]);
        assert_eq!(m.bins[0], vec![0, 1, 1, 2]);
    }

    #[test]
    fn binning_caps_bins() {
        let x = Array2::from_shape_fn((5000, 1), |(i, _)| i as f64);
        let m = BinnedMatrix::new(x.view());
        assert!(m.n_bins(0) <= MAX_BINS);
        assert!(m.bins[0].windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn cart_shatters_xor() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let y = [0.0, 0.0, 1.0, 1.0];
        let t = fit_cart(x.view(), &y, usize::MAX, 1);
        for (i, &yi) in y.iter().enumerate() {
            assert_eq!(t.predict_row(x.row(i)) > 0.5, yi == 1.0);
        }
        assert_eq!(t.n_leaves(), 4);
    }

    #[test]
    fn cart_depth_zero_is_laplace_rate() {
        let x = array![[0.0], [1.0], [2.0]];
        let t = fit_cart(x.view(), &[0.0, 1.0, 1.0], 0, 1);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict_row(x.row(0)), 3.0 / 5.0);
    }

    #[test]
    fn gbm_zero_trees_is_rate() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [0.0, 1.0, 0.0, 0.0];
        let params = BoostParams {
            trees: 0,
            depth: 2,
            shrinkage: 0.1,
            subsample: 0.5,
            min_leaf: 1,
        };
        let (m, trace) = fit_gbm(x.view(), &y, params, 1);
        assert!((sigmoid(m.decision(x.row(2))) - 0.25).abs() < 1e-15);
        assert_eq!(trace.len(), 1);
    }
}
