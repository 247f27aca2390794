//! CART trees with Gini impurity, and bagged forests of them.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::FEATURE_DIM;
use crate::synth::derive_seed;

type Row = [f64; FEATURE_DIM];

/// Gains closer than this are ties; the earlier candidate wins.
const GAIN_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "kebab-case")]
pub enum Node {
    Leaf {
        positive: f64,
        count: usize,
    },
    /// `x[feature] <= threshold` goes to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Positive fraction of the leaf reached by `x`.
    pub fn leaf_value(&self, x: &Row) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { positive, .. } => return *positive,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_split: usize,
    /// Features considered per split; `FEATURE_DIM` means all.
    pub mtry: usize,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Grower<'a, R: Rng> {
    x: &'a [Row],
    y: &'a [bool],
    params: GrowParams,
    rng: Option<&'a mut R>,
    nodes: Vec<Node>,
}

impl<R: Rng> Grower<'_, R> {
    fn candidates(&mut self) -> Vec<usize> {
        match (&mut self.rng, self.params.mtry < FEATURE_DIM) {
            (Some(rng), true) => {
                let mut f = sample(*rng, FEATURE_DIM, self.params.mtry.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..FEATURE_DIM).collect(),
        }
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64)> {
        let n = idx.len();
        let pos = idx.iter().filter(|i| self.y[**i]).count();
        let parent = gini(pos, n);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in self.candidates() {
            order.sort_by(|a, b| self.x[*a][f].total_cmp(&self.x[*b][f]));
            let mut left_pos = 0;
            for k in 1..n {
                if self.y[order[k - 1]] {
                    left_pos += 1;
                }
                let (a, b) = (self.x[order[k - 1]][f], self.x[order[k]][f]);
                if a == b {
                    continue;
                }
                let gain = parent
                    - (k as f64 / n as f64) * gini(left_pos, k)
                    - ((n - k) as f64 / n as f64) * gini(pos - left_pos, n - k);
                if gain > GAIN_EPS && best.is_none_or(|(_, _, g)| gain > g + GAIN_EPS) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    best = Some((f, threshold, gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let n = idx.len();
        let pos = idx.iter().filter(|i| self.y[**i]).count();
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            positive: if n == 0 { 0.0 } else { pos as f64 / n as f64 },
            count: n,
        });
        if depth >= self.params.max_depth || n < self.params.min_split.max(2) || pos == 0 || pos == n {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(&idx) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|i| self.x[*i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

pub(crate) fn grow_tree<R: Rng>(x: &[Row], y: &[bool], idx: Vec<usize>, params: GrowParams, rng: Option<&mut R>) -> Tree {
    let mut g = Grower {
        x,
        y,
        params,
        rng,
        nodes: Vec::new(),
    };
    g.grow(idx, 0);
    Tree { nodes: g.nodes }
}

pub(crate) fn train_tree(x: &[Row], y: &[bool], max_depth: usize, min_split: usize) -> Tree {
    let params = GrowParams {
        max_depth,
        min_split,
        mtry: FEATURE_DIM,
    };
    grow_tree::<ChaCha8Rng>(x, y, (0..x.len()).collect(), params, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Fraction of trees voting positive; a tree votes positive when its leaf
    /// is at least half positive.
    pub fn vote(&self, x: &Row) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        let votes = self.trees.iter().filter(|t| t.leaf_value(x) >= 0.5).count();
        votes as f64 / self.trees.len() as f64
    }
}

pub(crate) fn train_forest(x: &[Row], y: &[bool], n_trees: usize, bootstrap: bool, params: GrowParams, seed: u64) -> Forest {
    let n = x.len();
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
            let idx: Vec<usize> = if bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(x, y, idx, params, Some(&mut rng))
        })
        .collect();
    Forest { trees }
}
