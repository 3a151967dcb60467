//! CART growth with Gini impurity.
//!
//! Split candidates for a feature are the midpoints between consecutive
//! distinct values among the node's samples; samples with `x <= threshold`
//! go left. Candidate scores are compared exactly in integer arithmetic, so
//! ties are real ties and resolve to the lowest feature index, then the
//! lowest threshold.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::features::FEATURE_COUNT;

pub type Sample = [f64; FEATURE_COUNT];

pub const CLASS_COUNT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf { counts: [u32; CLASS_COUNT] },
}

impl TreeNode {
    /// Class index (0-based) of the leaf reached by `x`.
    pub fn vote(&self, x: &Sample) -> usize {
        let mut node = self;
        loop {
            match node {
                TreeNode::Internal { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
                TreeNode::Leaf { counts } => return majority(counts),
            }
        }
    }

    /// Depth of the deepest leaf; a lone leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
            TreeNode::Leaf { .. } => 0,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Internal { left, right, .. } => 1 + left.node_count() + right.node_count(),
            TreeNode::Leaf { .. } => 1,
        }
    }
}

/// Index of the largest count, lowest index on ties.
pub fn majority<T: PartialOrd + Copy>(counts: &[T]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Gini impurity decrease at the node (parent impurity minus the
    /// size-weighted child impurities).
    pub decrease: f64,
}

/// Sum of squared class counts over node size, kept as an exact fraction.
#[derive(Debug, Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn of_children(left: &[u64; CLASS_COUNT], nl: u64, right: &[u64; CLASS_COUNT], nr: u64) -> Self {
        let sq = |c: &[u64; CLASS_COUNT]| c.iter().map(|&v| u128::from(v) * u128::from(v)).sum::<u128>();
        Self { num: sq(left) * u128::from(nr) + sq(right) * u128::from(nl), den: u128::from(nl) * u128::from(nr) }
    }

    fn of_node(counts: &[u64; CLASS_COUNT], n: u64) -> Self {
        Self { num: counts.iter().map(|&v| u128::from(v) * u128::from(v)).sum(), den: u128::from(n) }
    }

    fn greater_than(self, other: Purity) -> bool {
        self.num * other.den > other.num * self.den
    }

    fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo * 0.5 + hi * 0.5;
    if m >= lo && m < hi {
        m
    } else {
        lo
    }
}

/// Best Gini split of `samples` (indices into `x`/`y`, repeats allowed) over
/// the given features, examined in ascending index order. Returns `None`
/// when no candidate leaves `min_leaf` samples on both sides while strictly
/// reducing impurity.
pub fn best_split(x: &[Sample], y: &[usize], samples: &[usize], features: &[usize], min_leaf: usize) -> Option<Split> {
    let n = samples.len() as u64;
    let mut parent = [0u64; CLASS_COUNT];
    for &s in samples {
        parent[y[s]] += 1;
    }
    let parent_purity = Purity::of_node(&parent, n);

    let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
    let mut best: Option<(usize, f64, Purity)> = None;
    let mut ordered = features.to_vec();
    ordered.sort_unstable();
    for &f in &ordered {
        sorted.clear();
        sorted.extend(samples.iter().map(|&s| (x[s][f], y[s])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0u64; CLASS_COUNT];
        for i in 1..sorted.len() {
            left[sorted[i - 1].1] += 1;
            let (lo, hi) = (sorted[i - 1].0, sorted[i].0);
            if lo >= hi {
                continue;
            }
            let nl = i as u64;
            let nr = n - nl;
            if (nl as usize) < min_leaf || (nr as usize) < min_leaf {
                continue;
            }
            let right: [u64; CLASS_COUNT] = std::array::from_fn(|k| parent[k] - left[k]);
            let score = Purity::of_children(&left, nl, &right, nr);
            if !score.greater_than(parent_purity) {
                continue;
            }
            if best.is_none_or(|(_, _, b)| score.greater_than(b)) {
                best = Some((f, midpoint(lo, hi), score));
            }
        }
    }
    best.map(|(feature, threshold, score)| Split {
        feature,
        threshold,
        decrease: (score.value() - parent_purity.value()) / n as f64,
    })
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub mtry: usize,
}

/// Grows one tree on `samples`. At each splittable node the feature order is
/// shuffled; the first `mtry` features are searched together, and if none
/// yields a valid split the remaining ones are tried one at a time in the
/// shuffled order.
pub(crate) fn grow<R: Rng>(x: &[Sample], y: &[usize], samples: Vec<usize>, p: &GrowParams, rng: &mut R) -> TreeNode {
    grow_node(x, y, samples, 0, p, rng)
}

fn grow_node<R: Rng>(
    x: &[Sample],
    y: &[usize],
    samples: Vec<usize>,
    depth: usize,
    p: &GrowParams,
    rng: &mut R,
) -> TreeNode {
    let mut counts = [0u32; CLASS_COUNT];
    for &s in &samples {
        counts[y[s]] += 1;
    }
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if pure || depth >= p.max_depth || samples.len() < 2 * p.min_samples_leaf {
        return TreeNode::Leaf { counts };
    }

    let mut order: Vec<usize> = (0..FEATURE_COUNT).collect();
    order.shuffle(rng);
    let (first, rest) = order.split_at(p.mtry);
    let split = best_split(x, y, &samples, first, p.min_samples_leaf)
        .or_else(|| rest.iter().find_map(|&f| best_split(x, y, &samples, &[f], p.min_samples_leaf)));
    let Some(split) = split else {
        return TreeNode::Leaf { counts };
    };

    let (left, right): (Vec<usize>, Vec<usize>) =
        samples.into_iter().partition(|&s| x[s][split.feature] <= split.threshold);
    let left = grow_node(x, y, left, depth + 1, p, rng);
    let right = grow_node(x, y, right, depth + 1, p, rng);
    TreeNode::Internal {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}
