//! Regression trees with second-order split gains.
//!
//! One builder serves two modes. In squared-loss mode the gradients are
//! `−y` with unit hessians, which makes the leaf weight the leaf mean at
//! zero regularization and reproduces classic variance-reduction CART. In
//! boosting mode the caller supplies per-row gradients and hessians.
//!
//! The gain of a split is
//!
//! ```text
//! ½·[ S(G_L)²/(H_L+λ) + S(G_R)²/(H_R+λ) − S(G)²/(H+λ) ] − γ
//! ```
//!
//! with `S` the soft-threshold by the L1 penalty α, and a split is kept
//! only when the gain is positive. Thresholds are midpoints between
//! consecutive distinct sorted values; gain ties resolve to the lowest
//! feature index and then the lowest threshold.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{check_dims, ModelError, Regressor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Maximum number of split levels; 0 grows a single leaf.
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    /// Minimum hessian sum per child (sample count under squared loss).
    pub min_child_weight: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// L1 penalty on leaf weights, applied by soft-thresholding the
    /// gradient sum.
    pub alpha: f64,
    /// Fixed cost per additional split in the gain.
    pub gamma: f64,
    /// Cost-complexity pruning strength for squared-loss trees.
    pub ccp_alpha: f64,
    /// Fraction of features drawn per node; 1.0 disables subsampling.
    pub max_features: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 6,
            min_samples_leaf: 1,
            min_samples_split: 2,
            min_child_weight: 0.0,
            lambda: 0.0,
            alpha: 0.0,
            gamma: 0.0,
            ccp_alpha: 0.0,
            max_features: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { weight: f64 },
}

/// A fitted tree; nodes are stored in preorder with explicit child links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

impl RegressionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { weight } => return *weight,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }
}

impl Regressor for RegressionTree {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        check_dims(self.n_features, x)?;
        let mut out = DVector::zeros(x.nrows());
        let mut row = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = x[(i, j)];
            }
            out[i] = self.predict_row(&row);
        }
        Ok(out)
    }
}

/// What the tree is fit against.
pub enum TreeTarget<'a> {
    /// Plain regression on targets: CART with cost-complexity pruning.
    Squared(&'a DVector<f64>),
    /// Boosting mode: explicit gradient/hessian pairs.
    Gradients { grads: &'a [f64], hessians: &'a [f64] },
}

struct BuildCtx<'a> {
    x: &'a DMatrix<f64>,
    grads: Vec<f64>,
    hessians: Vec<f64>,
    /// Target values for pruning statistics (squared mode only).
    y: Option<Vec<f64>>,
    params: TreeParams,
    allowed_features: Vec<usize>,
}

struct BuildNode {
    grad_sum: f64,
    hess_sum: f64,
    /// Sum of squared deviations from the node mean (squared mode).
    sse: f64,
    kind: BuildKind,
}

enum BuildKind {
    Leaf,
    Split { feature: usize, threshold: f64, left: Box<BuildNode>, right: Box<BuildNode> },
}

fn soft(z: f64, a: f64) -> f64 {
    if z > a {
        z - a
    } else if z < -a {
        z + a
    } else {
        0.0
    }
}

fn leaf_weight(grad_sum: f64, hess_sum: f64, params: &TreeParams) -> f64 {
    -soft(grad_sum, params.alpha) / (hess_sum + params.lambda)
}

fn score(grad_sum: f64, hess_sum: f64, params: &TreeParams) -> f64 {
    let t = soft(grad_sum, params.alpha);
    t * t / (hess_sum + params.lambda)
}

fn node_sse(ctx: &BuildCtx, rows: &[usize]) -> f64 {
    match &ctx.y {
        None => 0.0,
        Some(y) => {
            let mean = rows.iter().map(|r| y[*r]).sum::<f64>() / rows.len() as f64;
            rows.iter().map(|r| (y[*r] - mean) * (y[*r] - mean)).sum()
        }
    }
}

fn build(ctx: &BuildCtx, rows: &mut Vec<usize>, depth: usize, rng: &mut Option<&mut ChaCha12Rng>) -> BuildNode {
    let grad_sum: f64 = rows.iter().map(|r| ctx.grads[*r]).sum();
    let hess_sum: f64 = rows.iter().map(|r| ctx.hessians[*r]).sum();
    let sse = node_sse(ctx, rows);
    let n = rows.len();
    let leaf = |kind| BuildNode { grad_sum, hess_sum, sse, kind };

    if depth >= ctx.params.max_depth || n < ctx.params.min_samples_split {
        return leaf(BuildKind::Leaf);
    }

    // Feature candidates for this node.
    let p = ctx.allowed_features.len();
    let k = if ctx.params.max_features >= 1.0 {
        p
    } else {
        ((ctx.params.max_features * p as f64).round() as usize).clamp(1, p)
    };
    let mut candidates: Vec<usize> = ctx.allowed_features.clone();
    if k < p {
        let rng = rng.as_deref_mut().expect("feature subsampling needs an rng");
        for i in 0..k {
            let j = rng.random_range(i..p);
            candidates.swap(i, j);
        }
        candidates.truncate(k);
        candidates.sort_unstable();
    }

    let parent_score = score(grad_sum, hess_sum, &ctx.params);
    let mut best: Option<(f64, usize, f64)> = None; // gain, feature, threshold

    let mut order: Vec<usize> = Vec::with_capacity(n);
    for &feature in &candidates {
        order.clear();
        order.extend(rows.iter().copied());
        order.sort_by(|a, b| {
            ctx.x[(*a, feature)].partial_cmp(&ctx.x[(*b, feature)]).expect("finite feature values")
        });
        let mut g_left = 0.0;
        let mut h_left = 0.0;
        for pos in 0..n - 1 {
            let r = order[pos];
            g_left += ctx.grads[r];
            h_left += ctx.hessians[r];
            let v = ctx.x[(r, feature)];
            let v_next = ctx.x[(order[pos + 1], feature)];
            if v == v_next {
                continue;
            }
            let n_left = pos + 1;
            let n_right = n - n_left;
            if n_left < ctx.params.min_samples_leaf || n_right < ctx.params.min_samples_leaf {
                continue;
            }
            let h_right = hess_sum - h_left;
            if h_left < ctx.params.min_child_weight || h_right < ctx.params.min_child_weight {
                continue;
            }
            let g_right = grad_sum - g_left;
            let gain = 0.5
                * (score(g_left, h_left, &ctx.params) + score(g_right, h_right, &ctx.params)
                    - parent_score)
                - ctx.params.gamma;
            let threshold = 0.5 * (v + v_next);
            // Strictly-better comparison keeps the first (lowest feature,
            // lowest threshold) among ties.
            if gain > 0.0 && best.map(|(bg, _, _)| gain > bg).unwrap_or(true) {
                best = Some((gain, feature, threshold));
            }
        }
    }

    match best {
        None => leaf(BuildKind::Leaf),
        Some((_, feature, threshold)) => {
            let (mut left_rows, mut right_rows): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|r| ctx.x[(**r, feature)] <= threshold);
            let left = build(ctx, &mut left_rows, depth + 1, rng);
            let right = build(ctx, &mut right_rows, depth + 1, rng);
            leaf(BuildKind::Split { feature, threshold, left: Box::new(left), right: Box::new(right) })
        }
    }
}

/// Weakest-link cost-complexity pruning: collapse any subtree whose per-leaf
/// improvement in training SSE is at most `ccp_alpha`.
fn ccp_prune(node: &mut BuildNode, ccp_alpha: f64) {
    loop {
        let weakest = find_weakest(node);
        match weakest {
            Some(g) if g <= ccp_alpha => {
                collapse_weakest(node, g);
            }
            _ => break,
        }
    }
}

/// (subtree SSE, leaf count) then g(t) per internal node.
fn subtree_stats(node: &BuildNode) -> (f64, usize) {
    match &node.kind {
        BuildKind::Leaf => (node.sse, 1),
        BuildKind::Split { left, right, .. } => {
            let (ls, ln) = subtree_stats(left);
            let (rs, rn) = subtree_stats(right);
            (ls + rs, ln + rn)
        }
    }
}

fn find_weakest(node: &BuildNode) -> Option<f64> {
    match &node.kind {
        BuildKind::Leaf => None,
        BuildKind::Split { left, right, .. } => {
            let (sub_sse, leaves) = subtree_stats(node);
            let own = (node.sse - sub_sse) / (leaves - 1) as f64;
            let mut best = own;
            if let Some(g) = find_weakest(left) {
                best = best.min(g);
            }
            if let Some(g) = find_weakest(right) {
                best = best.min(g);
            }
            Some(best)
        }
    }
}

fn collapse_weakest(node: &mut BuildNode, g: f64) -> bool {
    if matches!(node.kind, BuildKind::Leaf) {
        return false;
    }
    let (sub_sse, leaves) = subtree_stats(node);
    let own = (node.sse - sub_sse) / (leaves - 1) as f64;
    if own <= g {
        node.kind = BuildKind::Leaf;
        return true;
    }
    if let BuildKind::Split { left, right, .. } = &mut node.kind {
        if collapse_weakest(left, g) {
            return true;
        }
        return collapse_weakest(right, g);
    }
    false
}

fn flatten(node: &BuildNode, params: &TreeParams, nodes: &mut Vec<Node>) -> usize {
    let at = nodes.len();
    match &node.kind {
        BuildKind::Leaf => {
            nodes.push(Node::Leaf { weight: leaf_weight(node.grad_sum, node.hess_sum, params) });
        }
        BuildKind::Split { feature, threshold, left, right } => {
            nodes.push(Node::Split { feature: *feature, threshold: *threshold, left: 0, right: 0 });
            let l = flatten(left, params, nodes);
            let r = flatten(right, params, nodes);
            if let Node::Split { left, right, .. } = &mut nodes[at] {
                *left = l;
                *right = r;
            }
        }
    }
    at
}

/// Fit one tree. `rows` restricts training to a row subset (boosting
/// subsampling, bootstrap resamples); `allowed_features` restricts split
/// candidates (per-tree column subsampling); `rng` drives per-node feature
/// draws when `max_features < 1`.
pub fn fit_tree(
    x: &DMatrix<f64>,
    target: TreeTarget<'_>,
    params: &TreeParams,
    rows: Option<&[usize]>,
    allowed_features: Option<Vec<usize>>,
    mut rng: Option<&mut ChaCha12Rng>,
) -> Result<RegressionTree, ModelError> {
    if x.nrows() == 0 {
        return Err(ModelError::EmptyData);
    }
    let (grads, hessians, y) = match target {
        TreeTarget::Squared(y) => {
            if y.len() != x.nrows() {
                return Err(ModelError::DimensionMismatch { expected: x.nrows(), got: y.len() });
            }
            (y.iter().map(|v| -v).collect(), vec![1.0; x.nrows()], Some(y.iter().copied().collect()))
        }
        TreeTarget::Gradients { grads, hessians } => {
            if grads.len() != x.nrows() || hessians.len() != x.nrows() {
                return Err(ModelError::DimensionMismatch { expected: x.nrows(), got: grads.len() });
            }
            (grads.to_vec(), hessians.to_vec(), None)
        }
    };
    let squared_mode = y.is_some();
    let ctx = BuildCtx {
        x,
        grads,
        hessians,
        y,
        params: *params,
        allowed_features: allowed_features.unwrap_or_else(|| (0..x.ncols()).collect()),
    };
    let mut row_idx: Vec<usize> = match rows {
        Some(r) => r.to_vec(),
        None => (0..x.nrows()).collect(),
    };
    if row_idx.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let mut root = build(&ctx, &mut row_idx, 0, &mut rng);
    if squared_mode && params.ccp_alpha > 0.0 {
        ccp_prune(&mut root, params.ccp_alpha);
    }
    let mut nodes = Vec::new();
    flatten(&root, params, &mut nodes);
    Ok(RegressionTree { nodes, n_features: x.ncols() })
}
