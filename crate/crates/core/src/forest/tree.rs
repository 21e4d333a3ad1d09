//! CART regression trees grown by exhaustive variance-reduction search.

use super::{ForestConfig, ForestError};
use crate::dataset::FeatureMatrix;
use crate::rng::SplitMix64;

/// Tree node. Children are indices into [`RegressionTree::nodes`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

/// A fitted tree. Nodes are stored in preorder (node, left subtree, right
/// subtree), so index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    feature_count: usize,
    rng_seed: u64,
}

impl RegressionTree {
    /// Assembles a tree from preorder nodes, checking child links and
    /// feature indices.
    pub fn from_nodes(
        nodes: Vec<Node>,
        feature_count: usize,
        rng_seed: u64,
    ) -> Result<Self, ForestError> {
        if nodes.is_empty() {
            return Err(ForestError::CorruptTree {
                tree: 0,
                reason: "no nodes".into(),
            });
        }
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Internal {
                feature,
                left,
                right,
                ..
            } = *n
            {
                if feature >= feature_count {
                    return Err(ForestError::UnknownFeatureIndex {
                        tree: 0,
                        index: feature,
                    });
                }
                // Preorder puts both children after their parent.
                if left <= i
                    || right <= i
                    || left >= nodes.len()
                    || right >= nodes.len()
                    || left == right
                {
                    return Err(ForestError::CorruptTree {
                        tree: 0,
                        reason: format!("node {i} has invalid children"),
                    });
                }
            }
        }
        Ok(Self {
            nodes,
            feature_count,
            rng_seed,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            max = max.max(d);
            if let Node::Internal { left, right, .. } = self.nodes[i] {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        max
    }

    /// Routes `row` to a leaf; `value <= threshold` goes left. The row width
    /// is not checked here.
    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
                Node::Leaf { value, .. } => return value,
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    feature: usize,
    threshold: f64,
    /// Number of sorted rows going left.
    n_left: usize,
    child_sse: f64,
}

struct Task {
    start: usize,
    end: usize,
    depth: usize,
    /// Parent node and whether this task is its right child.
    parent: Option<(usize, bool)>,
}

/// Grows one tree on `row_indices` (duplicates allowed, as in a bootstrap
/// sample).
///
/// At every node the allowed features are scanned in ascending index order
/// and, per feature, every midpoint between consecutive distinct values in
/// ascending order. The split with the smallest weighted child variance wins;
/// an equal score never replaces an earlier candidate, so ties go to the
/// lowest feature index and then the lowest threshold. A node becomes a leaf
/// when its targets are all equal, `max_depth` is reached, it has fewer than
/// `min_samples_split` rows, or no threshold leaves `min_samples_leaf` rows
/// on both sides.
///
/// When `max_features` is below the column count, each node draws its
/// feature subset from a [`SplitMix64`] seeded with `seed`.
pub fn fit_tree(
    matrix: &FeatureMatrix,
    targets: &[f64],
    row_indices: &[usize],
    config: &ForestConfig,
    seed: u64,
) -> Result<RegressionTree, ForestError> {
    if row_indices.is_empty() {
        return Err(ForestError::EmptyNodeSet);
    }
    let n_features = matrix.n_cols();
    for &r in row_indices {
        if matrix.row(r).iter().any(|v| !v.is_finite()) {
            return Err(ForestError::NonFiniteFeature { row: Some(r) });
        }
        if !targets[r].is_finite() {
            return Err(ForestError::NonFiniteTarget { row: r });
        }
    }
    let n_try = config.max_features.resolve(n_features);
    let mut rng = SplitMix64::new(seed);
    let mut features: Vec<usize> = (0..n_features).collect();

    let mut rows = row_indices.to_vec();
    let mut nodes: Vec<Node> = Vec::new();
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
    let mut buf: Vec<usize> = Vec::with_capacity(rows.len());
    let mut stack = vec![Task {
        start: 0,
        end: rows.len(),
        depth: 0,
        parent: None,
    }];

    while let Some(task) = stack.pop() {
        let id = nodes.len();
        if let Some((parent, is_right)) = task.parent {
            if let Node::Internal { left, right, .. } = &mut nodes[parent] {
                if is_right {
                    *right = id;
                } else {
                    *left = id;
                }
            }
        }
        let node_rows = &mut rows[task.start..task.end];
        let n = node_rows.len();

        let can_split = config.max_depth.is_none_or(|d| task.depth < d)
            && n >= config.min_samples_split
            && n >= 2 * config.min_samples_leaf
            && !is_pure(targets, node_rows);
        let split = if can_split {
            let candidates = if n_try < n_features {
                partial_shuffle(&mut rng, &mut features, n_try);
                let mut chosen = features[..n_try].to_vec();
                chosen.sort_unstable();
                chosen
            } else {
                (0..n_features).collect()
            };
            best_split(
                matrix,
                targets,
                node_rows,
                &candidates,
                config.min_samples_leaf,
                &mut scratch,
            )
        } else {
            None
        };

        match split {
            None => nodes.push(Node::Leaf {
                value: leaf_value(targets, node_rows),
                n_samples: n,
            }),
            Some(s) => {
                stable_partition(
                    node_rows,
                    |r| matrix.get(r, s.feature) <= s.threshold,
                    &mut buf,
                );
                let mid = task.start + s.n_left;
                nodes.push(Node::Internal {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: usize::MAX,
                    right: usize::MAX,
                });
                // Right is pushed first so the left subtree is emitted first.
                stack.push(Task {
                    start: mid,
                    end: task.end,
                    depth: task.depth + 1,
                    parent: Some((id, true)),
                });
                stack.push(Task {
                    start: task.start,
                    end: mid,
                    depth: task.depth + 1,
                    parent: Some((id, false)),
                });
            }
        }
    }

    Ok(RegressionTree {
        nodes,
        feature_count: n_features,
        rng_seed: seed,
    })
}

fn is_pure(targets: &[f64], rows: &[usize]) -> bool {
    let first = targets[rows[0]];
    rows.iter().all(|&r| targets[r] == first)
}

/// Mean of the routed targets, kept inside their range despite rounding.
fn leaf_value(targets: &[f64], rows: &[usize]) -> f64 {
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &r in rows {
        let y = targets[r];
        lo = lo.min(y);
        hi = hi.max(y);
        sum += y;
    }
    (sum / rows.len() as f64).clamp(lo, hi)
}

fn partial_shuffle(rng: &mut SplitMix64, items: &mut [usize], k: usize) {
    for i in 0..k {
        let j = i + rng.below((items.len() - i) as u64) as usize;
        items.swap(i, j);
    }
}

fn stable_partition(rows: &mut [usize], goes_left: impl Fn(usize) -> bool, buf: &mut Vec<usize>) {
    buf.clear();
    buf.extend_from_slice(rows);
    let (left, right): (Vec<usize>, Vec<usize>) = buf.iter().partition(|&&r| goes_left(r));
    rows[..left.len()].copy_from_slice(&left);
    rows[left.len()..].copy_from_slice(&right);
}

/// Midpoint of two adjacent distinct values that still separates them.
#[inline]
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = (lo + hi) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

fn best_split(
    matrix: &FeatureMatrix,
    targets: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
    sorted: &mut Vec<(f64, usize)>,
) -> Option<BestSplit> {
    let n = rows.len();
    // Centering keeps the running sums small relative to the targets.
    let mean = rows.iter().map(|&r| targets[r]).sum::<f64>() / n as f64;
    let (total, total_sq) = rows.iter().fold((0.0, 0.0), |(s, q), &r| {
        let y = targets[r] - mean;
        (s + y, q + y * y)
    });
    let parent_sse = total_sq - total * total / n as f64;
    // Scores closer than this are treated as equal.
    let tol = 1e-10 * parent_sse.abs().max(f64::MIN_POSITIVE);

    let mut best: Option<BestSplit> = None;
    for &f in features {
        sorted.clear();
        sorted.extend(rows.iter().map(|&r| (matrix.get(r, f), r)));
        sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if sorted[0].0 == sorted[n - 1].0 {
            continue;
        }
        let (mut s_left, mut q_left) = (0.0, 0.0);
        for i in 0..n - 1 {
            let y = targets[sorted[i].1] - mean;
            s_left += y;
            q_left += y * y;
            let n_left = i + 1;
            if sorted[i].0 == sorted[i + 1].0 || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let n_right = n - n_left;
            let s_right = total - s_left;
            let q_right = total_sq - q_left;
            let child_sse = (q_left - s_left * s_left / n_left as f64)
                + (q_right - s_right * s_right / n_right as f64);
            let better = match best {
                None => true,
                Some(b) => child_sse < b.child_sse - tol,
            };
            if better {
                best = Some(BestSplit {
                    feature: f,
                    threshold: midpoint(sorted[i].0, sorted[i + 1].0),
                    n_left,
                    child_sse,
                });
            }
        }
    }
    best
}
