//! Random forest of CART trees grown on bootstrap resamples with Gini splits.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_trainable, LearnError, Predictor};
use crate::data::{Dataset, FeatureStats};
use crate::features::NUM_FEATURES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 8,
            min_samples_leaf: 5,
            // floor(sqrt(10))
            features_per_split: 3,
            seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.to_string()));
        if self.n_trees < 1 {
            return bad("n_trees must be at least 1");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be at least 1");
        }
        if !(1..=NUM_FEATURES).contains(&self.features_per_split) {
            return bad("features_per_split must lie in 1..=10");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// (negative, positive) class proportions.
        proportions: [f64; 2],
        samples: usize,
    },
}

/// A binary decision tree stored in preorder; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(&self, x: &[f64; NUM_FEATURES]) -> &[f64; 2] {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right } as usize;
                }
                Node::Leaf { proportions, .. } => return proportions,
            }
        }
    }

    /// Positive-class proportion of the leaf reached by `x`.
    pub fn predict(&self, x: &[f64; NUM_FEATURES]) -> f64 {
        self.leaf(x)[1]
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
    pub training_stats: FeatureStats,
}

impl Predictor for ForestModel {
    fn predict_row(&self, x: &[f64; NUM_FEATURES]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }
}

/// What happened at one node while growing a tree. Used to audit split
/// optimality.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitTrace {
    /// Training-row indices reaching the node (bootstrap duplicates repeated).
    pub rows: Vec<usize>,
    /// Features sampled at the node, ascending.
    pub candidates: Vec<usize>,
    /// Chosen (feature, threshold, weighted Gini), or `None` for a leaf.
    pub chosen: Option<(usize, f64, f64)>,
    pub depth: usize,
}

/// Gini impurity from class counts.
pub fn gini(neg: usize, pos: usize) -> f64 {
    let n = (neg + pos) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (a, b) = (neg as f64 / n, pos as f64 / n);
    1.0 - a * a - b * b
}

/// Size-weighted Gini impurity of a two-way partition.
pub fn weighted_gini(left: [usize; 2], right: [usize; 2]) -> f64 {
    let nl = (left[0] + left[1]) as f64;
    let nr = (right[0] + right[1]) as f64;
    (nl * gini(left[0], left[1]) + nr * gini(right[0], right[1])) / (nl + nr)
}

const GINI_TIE: f64 = 1e-12;

struct Grower<'a> {
    x: &'a [[f64; NUM_FEATURES]],
    y: &'a [u8],
    cfg: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    trace: Option<Vec<SplitTrace>>,
}

impl Grower<'_> {
    fn counts(&self, rows: &[usize]) -> [usize; 2] {
        let pos = rows.iter().filter(|&&i| self.y[i] == 1).count();
        [rows.len() - pos, pos]
    }

    /// Best split over `features`: lowest weighted Gini; ties (within
    /// `GINI_TIE`) go to the lowest feature index, then the lowest threshold.
    fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<(usize, f64, f64)> {
        let min_leaf = self.cfg.min_samples_leaf;
        let total = self.counts(rows);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(rows.len());
        for &f in features {
            sorted.clear();
            sorted.extend(rows.iter().map(|&i| (self.x[i][f], self.y[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; 2];
            for k in 0..sorted.len() - 1 {
                left[sorted[k].1 as usize] += 1;
                let (v, next) = (sorted[k].0, sorted[k + 1].0);
                if v == next {
                    continue;
                }
                let nl = k + 1;
                if nl < min_leaf || sorted.len() - nl < min_leaf {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                let score = weighted_gini(left, right);
                // scores within rounding noise count as ties
                if best.is_none_or(|(_, _, b)| score < b - GINI_TIE) {
                    let mut threshold = v + (next - v) / 2.0;
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some((f, threshold, score));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let counts = self.counts(&rows);
        let n = rows.len();
        let pure = counts[0] == 0 || counts[1] == 0;
        let mut candidates = Vec::new();
        let mut chosen = None;
        if !pure && depth < self.cfg.max_depth && n >= 2 * self.cfg.min_samples_leaf {
            candidates = index::sample(&mut self.rng, NUM_FEATURES, self.cfg.features_per_split).into_vec();
            candidates.sort_unstable();
            chosen = self
                .best_split(&rows, &candidates)
                .filter(|&(_, _, score)| score < gini(counts[0], counts[1]) - 1e-12);
        }
        if let Some(trace) = self.trace.as_mut() {
            trace.push(SplitTrace {
                rows: rows.clone(),
                candidates,
                chosen,
                depth,
            });
        }
        match chosen {
            None => {
                let p = counts[1] as f64 / n as f64;
                self.nodes.push(Node::Leaf {
                    proportions: [1.0 - p, p],
                    samples: n,
                });
            }
            Some((feature, threshold, _)) => {
                self.nodes.push(Node::Split {
                    feature,
                    threshold,
                    left: 0,
                    right: 0,
                });
                let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| self.x[i][feature] <= threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id as usize] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
        }
        id
    }
}

/// Tree RNG: the forest seed with the tree index as ChaCha stream, so each
/// tree is independent of the order trees are trained in.
fn tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree_index as u64);
    rng
}

fn grow_tree(
    x: &[[f64; NUM_FEATURES]],
    y: &[u8],
    cfg: &ForestConfig,
    tree_index: usize,
    traced: bool,
) -> (Tree, Vec<SplitTrace>) {
    let mut rng = tree_rng(cfg.seed, tree_index);
    let n = x.len();
    let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut grower = Grower {
        x,
        y,
        cfg,
        rng,
        nodes: Vec::new(),
        trace: traced.then(Vec::new),
    };
    grower.grow(bootstrap, 0);
    (Tree { nodes: grower.nodes }, grower.trace.unwrap_or_default())
}

/// Grows tree `tree_index` of a forest exactly as [`train_forest`] would,
/// returning the per-node split record alongside it.
pub fn grow_tree_traced(train: &Dataset, cfg: &ForestConfig, tree_index: usize) -> Result<(Tree, Vec<SplitTrace>), LearnError> {
    cfg.validate()?;
    check_trainable(train)?;
    Ok(grow_tree(&train.rows(), &train.labels(), cfg, tree_index, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    Sequential,
    #[default]
    Parallel,
}

pub fn train_forest(train: &Dataset, cfg: &ForestConfig) -> Result<ForestModel, LearnError> {
    train_forest_with(train, cfg, Schedule::Parallel)
}

/// Trains a forest; the result does not depend on `schedule`.
pub fn train_forest_with(train: &Dataset, cfg: &ForestConfig, schedule: Schedule) -> Result<ForestModel, LearnError> {
    cfg.validate()?;
    check_trainable(train)?;
    let x = train.rows();
    let y = train.labels();
    let build = |t: usize| grow_tree(&x, &y, cfg, t, false).0;
    let trees = match schedule {
        Schedule::Sequential => (0..cfg.n_trees).map(build).collect(),
        Schedule::Parallel => (0..cfg.n_trees).into_par_iter().map(build).collect(),
    };
    Ok(ForestModel {
        config: *cfg,
        trees,
        training_stats: train.stats().clone(),
    })
}
