//! CART regression tree used as the random-forest kernel.
//!
//! Splits maximize the decrease in within-node sum of squared errors over
//! `mtry` features drawn per node. Candidate thresholds are midpoints between
//! consecutive distinct values; both children must carry at least `nodesize`
//! samples, and a node with fewer than `2·nodesize` samples is a leaf.
//! Samples routed with `x <= threshold` go left.
//!
//! Fitting works on per-feature presorted index lists (cached on the
//! [`Dataset`]) that are stably partitioned at every split, so no node sorts.
//! Duplicate indices are folded into integer weights, and the per-node feature
//! draw uses a stream derived from the node's path in the tree. Together these
//! make the fitted tree independent of the order of the input indices.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ForestConfig, Kernel, Predictor, TargetPoint};
use crate::rng::RandomStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        prediction: f64,
        count: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Arena; the root is `nodes[0]`.
    nodes: Vec<TreeNode>,
    d: usize,
    pub k_used: usize,
    pub mtry: usize,
    pub nodesize: usize,
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn predict(&self, x: &TargetPoint) -> Result<f64> {
        x.check_dim(self.d)?;
        Ok(self.predict_unchecked(x.coords()))
    }

    #[inline]
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { prediction, .. } => return prediction,
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            TreeNode::Leaf { prediction, count } => Some((prediction, count)),
            TreeNode::Internal { .. } => None,
        })
    }

    fn fmt_node(&self, f: &mut fmt::Formatter<'_>, at: usize, depth: usize) -> fmt::Result {
        let pad = "  ".repeat(depth);
        match &self.nodes[at] {
            TreeNode::Leaf { prediction, count } => writeln!(f, "{pad}leaf {prediction} (n={count})"),
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                writeln!(f, "{pad}x[{feature}] <= {threshold}")?;
                self.fmt_node(f, *left, depth + 1)?;
                self.fmt_node(f, *right, depth + 1)
            }
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_node(f, 0, 0)
    }
}

impl Predictor for Tree {
    fn predict(&self, x: &TargetPoint) -> Result<f64> {
        Tree::predict(self, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeKernel {
    pub mtry: usize,
    pub nodesize: usize,
}

impl TreeKernel {
    pub fn from_config(cfg: &ForestConfig) -> Self {
        Self {
            mtry: cfg.mtry,
            nodesize: cfg.nodesize,
        }
    }
}

impl Kernel for TreeKernel {
    type Fitted = Tree;

    fn fit(&self, data: &Dataset, sample: &[usize], rs: &RandomStream) -> Result<Tree> {
        grow(data, sample, self.mtry, self.nodesize, rs)
    }
}

pub fn fit_tree(data: &Dataset, indices: &[usize], cfg: &ForestConfig, rs: &RandomStream) -> Result<Tree> {
    grow(data, indices, cfg.mtry, cfg.nodesize, rs)
}

pub fn predict_tree(tree: &Tree, x: &TargetPoint) -> Result<f64> {
    tree.predict(x)
}

fn grow(data: &Dataset, indices: &[usize], mtry: usize, nodesize: usize, rs: &RandomStream) -> Result<Tree> {
    if indices.is_empty() {
        return Err(Error::EmptySubsample);
    }
    let d = data.d();
    if mtry == 0 || mtry > d {
        return Err(Error::InvalidData(format!("mtry={mtry} not in 1..={d}")));
    }
    let n = data.n();
    let mut weight = vec![0u32; n];
    for &i in indices {
        if i >= n {
            return Err(Error::IndexOutOfRange(format!("row {i} >= n={n}")));
        }
        weight[i] += 1;
    }
    let m = weight.iter().filter(|&&w| w > 0).count();
    let mut orders = Vec::with_capacity(d * m);
    for f in 0..d {
        orders.extend(data.sorted_by(f).iter().copied().filter(|&j| weight[j as usize] > 0));
    }
    let mut b = Builder {
        data,
        weight,
        orders,
        m,
        scratch: vec![0; m],
        goes_left: vec![false; n],
        features: (0..d).collect(),
        chosen: Vec::with_capacity(mtry),
        nodes: Vec::new(),
        mtry,
        nodesize: nodesize.max(1) as u64,
    };
    b.build(0, m, *rs);
    Ok(Tree {
        nodes: b.nodes,
        d,
        k_used: indices.len(),
        mtry,
        nodesize,
    })
}

struct Builder<'a> {
    data: &'a Dataset,
    weight: Vec<u32>,
    /// `d` blocks of length `m`; block `f` lists the node's samples sorted by
    /// feature `f`, and every node owns the same range `lo..hi` in each block.
    orders: Vec<u32>,
    m: usize,
    scratch: Vec<u32>,
    goes_left: Vec<bool>,
    features: Vec<usize>,
    chosen: Vec<usize>,
    nodes: Vec<TreeNode>,
    mtry: usize,
    nodesize: u64,
}

struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
    /// Number of distinct samples sent left.
    n_left: usize,
}

impl Builder<'_> {
    fn block(&self, f: usize, lo: usize, hi: usize) -> &[u32] {
        &self.orders[f * self.m + lo..f * self.m + hi]
    }

    fn build(&mut self, lo: usize, hi: usize, rs: RandomStream) -> usize {
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            prediction: 0.0,
            count: 0,
        });

        let mut w_total = 0u64;
        let mut sum = 0.0;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for &j in self.block(0, lo, hi) {
            let w = self.weight[j as usize] as u64;
            let y = self.data.y(j as usize);
            w_total += w;
            sum += w as f64 * y;
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        let mean = sum / w_total as f64;
        let leaf = TreeNode::Leaf {
            prediction: if y_min == y_max { y_min } else { mean },
            count: w_total as usize,
        };
        if w_total < 2 * self.nodesize || y_min == y_max {
            self.nodes[at] = leaf;
            return at;
        }

        match self.best_split(lo, hi, w_total, mean, rs) {
            Some(split) => {
                self.partition(lo, hi, &split);
                let mid = lo + split.n_left;
                let left = self.build(lo, mid, rs.child(0));
                let right = self.build(mid, hi, rs.child(1));
                self.nodes[at] = TreeNode::Internal {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                };
            }
            None => self.nodes[at] = leaf,
        }
        at
    }

    fn best_split(&mut self, lo: usize, hi: usize, w_total: u64, mean: f64, rs: RandomStream) -> Option<Split> {
        let d = self.features.len();
        self.chosen.clear();
        if self.mtry >= d {
            self.chosen.extend(0..d);
        } else {
            let mut rng = rs.rng();
            for j in 0..self.mtry {
                let r = j + rng.below(d - j);
                self.features.swap(j, r);
            }
            self.chosen.extend_from_slice(&self.features[..self.mtry]);
            self.chosen.sort_unstable();
            // restore so the draw depends only on the node's stream
            for (f, slot) in self.features.iter_mut().enumerate() {
                *slot = f;
            }
        }

        let mut sse = 0.0;
        let mut total_c = 0.0;
        for &j in self.block(0, lo, hi) {
            let w = self.weight[j as usize] as f64;
            let c = self.data.y(j as usize) - mean;
            sse += w * c * c;
            total_c += w * c;
        }

        let ns = self.nodesize;
        let mut best: Option<Split> = None;
        for ci in 0..self.chosen.len() {
            let f = self.chosen[ci];
            let block = self.block(f, lo, hi);
            let mut wl = 0u64;
            let mut sl = 0.0;
            for p in 0..block.len() - 1 {
                let j = block[p] as usize;
                let w = self.weight[j];
                wl += w as u64;
                sl += w as f64 * (self.data.y(j) - mean);
                let a = self.data.x(j, f);
                let b = self.data.x(block[p + 1] as usize, f);
                if a == b || wl < ns {
                    continue;
                }
                let wr = w_total - wl;
                if wr < ns {
                    break;
                }
                let sr = total_c - sl;
                let gain = sl * sl / wl as f64 + sr * sr / wr as f64;
                if best.as_ref().is_none_or(|s| gain > s.gain) {
                    let mut threshold = 0.5 * (a + b);
                    if !(threshold >= a && threshold < b) {
                        threshold = a;
                    }
                    best = Some(Split {
                        gain,
                        feature: f,
                        threshold,
                        n_left: p + 1,
                    });
                }
            }
        }
        best.filter(|s| s.gain > sse * 1e-12 && s.gain > 0.0)
    }

    fn partition(&mut self, lo: usize, hi: usize, split: &Split) {
        let m = self.m;
        for p in lo..hi {
            let j = self.orders[split.feature * m + p] as usize;
            self.goes_left[j] = p < lo + split.n_left;
        }
        for f in 0..self.features.len() {
            let base = f * m;
            if f == split.feature {
                continue;
            }
            let mut l = lo;
            let mut r = 0;
            for p in lo..hi {
                let j = self.orders[base + p];
                if self.goes_left[j as usize] {
                    self.orders[base + l] = j;
                    l += 1;
                } else {
                    self.scratch[r] = j;
                    r += 1;
                }
            }
            self.orders[base + l..base + hi].copy_from_slice(&self.scratch[..r]);
        }
    }
}
