use rand::Rng;

use super::EnvError;
use crate::hyperbolicity::DistanceMatrix;

/// Largest tree for which a dense distance matrix is built.
pub const MAX_TREE_NODES: usize = 4096;

/// Complete `branching`-ary tree of the given depth with unit edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TreeSpec {
    pub branching: usize,
    pub depth: usize,
}

impl TreeSpec {
    pub fn new(branching: usize, depth: usize) -> Result<Self, EnvError> {
        let spec = Self { branching, depth };
        spec.node_count()?;
        Ok(spec)
    }

    /// `(b^{d+1} − 1)/(b − 1)`, or an error beyond [`MAX_TREE_NODES`].
    pub fn node_count(&self) -> Result<usize, EnvError> {
        if self.branching < 2 || self.depth < 1 {
            return Err(EnvError::InvalidConfig(format!(
                "tree needs branching ≥ 2 and depth ≥ 1, got {} and {}",
                self.branching, self.depth
            )));
        }
        let mut total = 1usize;
        let mut level = 1usize;
        for _ in 0..self.depth {
            level = level.saturating_mul(self.branching);
            total = total.saturating_add(level);
            if total > MAX_TREE_NODES {
                return Err(EnvError::TreeTooLarge {
                    nodes: total,
                    max: MAX_TREE_NODES,
                });
            }
        }
        Ok(total)
    }

    /// Parent of each node in breadth-first order; node 0 is the root and
    /// node `i > 0` hangs below `(i − 1)/b`.
    pub fn parents(&self) -> Result<Vec<Option<usize>>, EnvError> {
        let n = self.node_count()?;
        Ok((0..n)
            .map(|i| (i > 0).then(|| (i - 1) / self.branching))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct TreeNode {
    pub index: usize,
    pub parent: Option<usize>,
    pub depth: usize,
}

/// Shortest-path metric of the complete tree, with its node list.
pub fn tree_metric(spec: &TreeSpec) -> Result<(DistanceMatrix, Vec<TreeNode>), EnvError> {
    let parents = spec.parents()?;
    let weights = vec![1.0; parents.len()];
    let matrix = weighted_tree_metric(&parents, &weights)?;
    let mut nodes: Vec<TreeNode> = Vec::with_capacity(parents.len());
    for (index, &parent) in parents.iter().enumerate() {
        let depth = parent.map_or(0, |p| nodes[p].depth + 1);
        nodes.push(TreeNode {
            index,
            parent,
            depth,
        });
    }
    Ok((matrix, nodes))
}

/// Shortest-path metric of a tree given by parent links (every parent index
/// smaller than its child) and the weight of each node's parent edge.
pub fn weighted_tree_metric(
    parents: &[Option<usize>],
    weights: &[f64],
) -> Result<DistanceMatrix, EnvError> {
    let n = parents.len();
    if n == 0 || n > MAX_TREE_NODES {
        return Err(EnvError::TreeTooLarge {
            nodes: n,
            max: MAX_TREE_NODES,
        });
    }
    if weights.len() != n {
        return Err(EnvError::InvalidConfig(format!(
            "{} edge weights for {n} nodes",
            weights.len()
        )));
    }
    for (i, p) in parents.iter().enumerate() {
        let ok = match p {
            None => i == 0,
            Some(p) => *p < i && weights[i] > 0.0 && weights[i].is_finite(),
        };
        if !ok {
            return Err(EnvError::InvalidConfig(format!(
                "node {i} has an invalid parent link"
            )));
        }
    }
    // d(i, j) = d(parent(i), j) + w_i for every j outside the subtree of i;
    // processing nodes in index order fills each row from its parent's row.
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, p) in parents.iter().enumerate().skip(1) {
        children[p.expect("validated")].push(i);
    }
    let mut data = vec![0.0; n * n];
    let mut stack = Vec::new();
    for src in 0..n {
        // Depth-first traversal of the tree from `src`.
        stack.clear();
        stack.push((src, usize::MAX));
        while let Some((v, from)) = stack.pop() {
            let dv = data[src * n + v];
            let mut visit = |u: usize, w: f64| {
                if u != from {
                    data[src * n + u] = dv + w;
                    stack.push((u, v));
                }
            };
            if let Some(p) = parents[v] {
                visit(p, weights[v]);
            }
            for &c in &children[v] {
                visit(c, weights[c]);
            }
        }
    }
    Ok(DistanceMatrix::from_trusted(n, data))
}

/// Path `0 − 1 − … − (n−1)` with unit edges.
pub fn path_tree(n: usize) -> Result<DistanceMatrix, EnvError> {
    let parents: Vec<_> = (0..n).map(|i| i.checked_sub(1)).collect();
    weighted_tree_metric(&parents, &vec![1.0; n])
}

/// Star with centre 0 and `n − 1` unit-edge leaves.
pub fn star_tree(n: usize) -> Result<DistanceMatrix, EnvError> {
    let parents: Vec<_> = (0..n).map(|i| (i > 0).then_some(0)).collect();
    weighted_tree_metric(&parents, &vec![1.0; n])
}

/// Random recursive tree with integer edge weights in `1..=max_weight`.
pub fn random_tree(
    n: usize,
    max_weight: u32,
    rng: &mut impl Rng,
) -> Result<DistanceMatrix, EnvError> {
    let parents: Vec<_> = (0..n)
        .map(|i| (i > 0).then(|| rng.random_range(0..i)))
        .collect();
    let weights: Vec<f64> = (0..n)
        .map(|_| f64::from(rng.random_range(1..=max_weight.max(1))))
        .collect();
    weighted_tree_metric(&parents, &weights)
}
