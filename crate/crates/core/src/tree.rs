//! Binary regression trees: structure, prior, split-rule sampling and the
//! GROW / PRUNE / CHANGE proposals used by the Metropolis-Hastings step.
//!
//! Trees live in an arena. Every random choice (which leaf to grow, which node
//! to prune) indexes node lists in depth-first order rather than arena order,
//! so a tree rebuilt from its serialized form behaves identically.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::std_normal;

/// Probability mass of the three proposal moves.
pub const P_GROW: f64 = 0.4;
pub const P_PRUNE: f64 = 0.4;
pub const P_CHANGE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub predictor: usize,
    pub cutpoint: f64,
}

impl SplitRule {
    /// Rows with `x_q <= C` go left.
    #[inline]
    pub fn goes_left(&self, value: f64) -> bool {
        value <= self.cutpoint
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Leaf { value: f64 },
    Split { rule: SplitRule, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub depth: usize,
    pub parent: Option<usize>,
}

/// Depth-dependent tree prior and the leaf prior variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePriorParams {
    pub gamma: f64,
    pub beta: f64,
    /// Prior variance of each leaf value (sigma_mu^2 / M).
    pub tau2: f64,
}

impl Default for TreePriorParams {
    fn default() -> Self {
        TreePriorParams {
            gamma: 0.95,
            beta: 0.2,
            tau2: 1.0,
        }
    }
}

/// Probability that a node at depth `d` splits: gamma (1 + d)^-beta.
pub fn split_prob_at_depth(d: usize, params: &TreePriorParams) -> f64 {
    params.gamma * (1.0 + d as f64).powf(-params.beta)
}

#[inline]
fn column(x: &DMatrix<f64>, q: usize) -> &[f64] {
    let n = x.nrows();
    &x.as_slice()[q * n..(q + 1) * n]
}

/// Cutpoints at a node: distinct observed values of predictor `q` over `rows`,
/// excluding the largest, so both children are nonempty.
pub fn valid_cutpoints(x: &DMatrix<f64>, q: usize, rows: &[usize]) -> Vec<f64> {
    let col = column(x, q);
    let mut vals: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    vals.pop();
    vals
}

pub fn cutpoint_count(x: &DMatrix<f64>, q: usize, rows: &[usize]) -> usize {
    valid_cutpoints(x, q, rows).len()
}

fn has_two_values(col: &[f64], rows: &[usize]) -> bool {
    match rows.split_first() {
        Some((&first, rest)) => rest.iter().any(|&r| col[r] != col[first]),
        None => false,
    }
}

/// Total split probability over predictors that admit at least one cutpoint.
pub fn admissible_mass(x: &DMatrix<f64>, s: &[f64], rows: &[usize]) -> f64 {
    if rows.len() < 2 {
        return 0.0;
    }
    s.iter()
        .enumerate()
        .filter(|&(q, _)| has_two_values(column(x, q), rows))
        .map(|(_, p)| p)
        .sum()
}

/// Draw an index from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding: fall back to the last index with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// A sampled split rule together with the number of cutpoints it was drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawnRule {
    pub rule: SplitRule,
    pub n_cutpoints: usize,
}

/// Draw a predictor from `s` and a cutpoint uniformly among the valid ones at
/// `rows`. `None` means the drawn predictor cannot split this node.
pub fn sample_split_rule<R: Rng + ?Sized>(
    s: &[f64],
    x: &DMatrix<f64>,
    rows: &[usize],
    rng: &mut R,
) -> Option<DrawnRule> {
    debug_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    if rows.len() < 2 {
        return None;
    }
    let q = sample_categorical(s, rng);
    let cuts = valid_cutpoints(x, q, rows);
    if cuts.is_empty() {
        return None;
    }
    let c = cuts[rng.random_range(0..cuts.len())];
    Some(DrawnRule {
        rule: SplitRule {
            predictor: q,
            cutpoint: c,
        },
        n_cutpoints: cuts.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    free: Vec<usize>,
}

pub const ROOT: usize = 0;

impl RegressionTree {
    pub fn stump(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node {
                kind: NodeKind::Leaf { value },
                depth: 0,
                parent: None,
            }],
            free: Vec::new(),
        }
    }

    #[inline]
    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    /// Number of arena slots (some may be free).
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        matches!(self.nodes[id].kind, NodeKind::Leaf { .. })
    }

    /// Node ids in depth-first (pre-order, left first) order.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![ROOT];
        while let Some(id) = stack.pop() {
            out.push(id);
            if let NodeKind::Split { left, right, .. } = self.nodes[id].kind {
                stack.push(right);
                stack.push(left);
            }
        }
        out
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.preorder().into_iter().filter(|&i| self.is_leaf(i)).collect()
    }

    pub fn internal_nodes(&self) -> Vec<usize> {
        self.preorder().into_iter().filter(|&i| !self.is_leaf(i)).collect()
    }

    /// Internal nodes whose two children are both leaves.
    pub fn prunable_nodes(&self) -> Vec<usize> {
        self.preorder()
            .into_iter()
            .filter(|&i| match self.nodes[i].kind {
                NodeKind::Split { left, right, .. } => self.is_leaf(left) && self.is_leaf(right),
                NodeKind::Leaf { .. } => false,
            })
            .collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().len()
    }

    pub fn n_internal(&self) -> usize {
        self.internal_nodes().len()
    }

    pub fn max_depth(&self) -> usize {
        self.preorder().into_iter().map(|i| self.nodes[i].depth).max().unwrap_or(0)
    }

    pub fn rule(&self, id: usize) -> Option<SplitRule> {
        match self.nodes[id].kind {
            NodeKind::Split { rule, .. } => Some(rule),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn children(&self, id: usize) -> Option<(usize, usize)> {
        match self.nodes[id].kind {
            NodeKind::Split { left, right, .. } => Some((left, right)),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn leaf_value(&self, id: usize) -> Option<f64> {
        match self.nodes[id].kind {
            NodeKind::Leaf { value } => Some(value),
            NodeKind::Split { .. } => None,
        }
    }

    pub fn set_leaf_value(&mut self, id: usize, v: f64) {
        if let NodeKind::Leaf { value } = &mut self.nodes[id].kind {
            *value = v;
        } else {
            panic!("node {id} is not a leaf");
        }
    }

    fn alloc(&mut self, node: Node) -> usize {
        match self.free.pop() {
            Some(id) => {
                self.nodes[id] = node;
                id
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        }
    }

    /// Split leaf `id` with `rule`; both children start at value 0.
    pub fn grow(&mut self, id: usize, rule: SplitRule) -> (usize, usize) {
        assert!(self.is_leaf(id), "can only grow a leaf");
        let depth = self.nodes[id].depth + 1;
        let child = |parent| Node {
            kind: NodeKind::Leaf { value: 0.0 },
            depth,
            parent: Some(parent),
        };
        let left = self.alloc(child(id));
        let right = self.alloc(child(id));
        self.nodes[id].kind = NodeKind::Split { rule, left, right };
        (left, right)
    }

    /// Collapse an internal node with two leaf children into a leaf.
    pub fn prune(&mut self, id: usize) {
        let (left, right) = self.children(id).expect("prune target must be internal");
        assert!(self.is_leaf(left) && self.is_leaf(right), "children must be leaves");
        self.free.push(right);
        self.free.push(left);
        self.nodes[id].kind = NodeKind::Leaf { value: 0.0 };
    }

    pub fn set_rule(&mut self, id: usize, new_rule: SplitRule) {
        match &mut self.nodes[id].kind {
            NodeKind::Split { rule, .. } => *rule = new_rule,
            NodeKind::Leaf { .. } => panic!("node {id} is a leaf"),
        }
    }

    /// Leaf reached by a regressor row.
    pub fn route<F: Fn(usize) -> f64>(&self, value_of: F) -> usize {
        let mut id = ROOT;
        loop {
            match self.nodes[id].kind {
                NodeKind::Leaf { .. } => return id,
                NodeKind::Split { rule, left, right } => {
                    id = if rule.goes_left(value_of(rule.predictor)) { left } else { right };
                }
            }
        }
    }

    pub fn evaluate(&self, xrow: &[f64]) -> f64 {
        let leaf = self.route(|q| xrow[q]);
        self.leaf_value(leaf).expect("route ends at a leaf")
    }

    /// Leaf id for every row of `x`.
    pub fn assign_leaves(&self, x: &DMatrix<f64>) -> Vec<usize> {
        (0..x.nrows()).map(|r| self.route(|q| x[(r, q)])).collect()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.assign_leaves(x)
            .into_iter()
            .map(|leaf| self.leaf_value(leaf).expect("leaf"))
            .collect()
    }

    /// Rows of `x` reaching each node, indexed by node id (free slots empty).
    pub fn node_rows(&self, x: &DMatrix<f64>) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.nodes.len()];
        rows[ROOT] = (0..x.nrows()).collect();
        for id in self.preorder() {
            if let NodeKind::Split { rule, left, right } = self.nodes[id].kind {
                let parent = std::mem::take(&mut rows[id]);
                let col = column(x, rule.predictor);
                let (l, r): (Vec<usize>, Vec<usize>) =
                    parent.iter().partition(|&&row| rule.goes_left(col[row]));
                rows[left] = l;
                rows[right] = r;
                rows[id] = parent;
            }
        }
        rows
    }

    /// True when every node receives at least one row of `x`.
    pub fn all_nodes_populated(&self, rows: &[Vec<usize>]) -> bool {
        self.preorder().into_iter().all(|id| !rows[id].is_empty())
    }

    /// Add this tree's split counts per predictor into `counts`.
    pub fn accumulate_split_counts(&self, counts: &mut [usize]) {
        for id in self.internal_nodes() {
            if let Some(rule) = self.rule(id) {
                counts[rule.predictor] += 1;
            }
        }
    }

    /// Log prior of the tree structure given split probabilities `s`:
    /// each internal node contributes log p(d) + log s_q - log(#cutpoints) and
    /// each leaf contributes log(1 - p(d) * S), where S is the split mass of
    /// predictors that could still split the leaf's rows.
    pub fn log_structure_prior(&self, params: &TreePriorParams, s: &[f64], x: &DMatrix<f64>) -> f64 {
        let rows = self.node_rows(x);
        self.log_structure_prior_with_rows(params, s, x, &rows)
    }

    pub fn log_structure_prior_with_rows(
        &self,
        params: &TreePriorParams,
        s: &[f64],
        x: &DMatrix<f64>,
        rows: &[Vec<usize>],
    ) -> f64 {
        self.preorder()
            .into_iter()
            .map(|id| {
                let d = self.nodes[id].depth;
                let p = split_prob_at_depth(d, params);
                match self.nodes[id].kind {
                    NodeKind::Leaf { .. } => (1.0 - p * admissible_mass(x, s, &rows[id])).ln(),
                    NodeKind::Split { rule, .. } => {
                        let ncut = cutpoint_count(x, rule.predictor, &rows[id]);
                        if ncut == 0 {
                            return f64::NEG_INFINITY;
                        }
                        p.ln() + s[rule.predictor].ln() - (ncut as f64).ln()
                    }
                }
            })
            .sum()
    }

    /// Draw a tree from its prior over the rows of `x`, with N(0, tau2) leaves.
    pub fn sample_from_prior<R: Rng + ?Sized>(
        params: &TreePriorParams,
        s: &[f64],
        x: &DMatrix<f64>,
        rng: &mut R,
    ) -> Self {
        let mut tree = RegressionTree::stump(0.0);
        let mut pending = vec![(ROOT, (0..x.nrows()).collect::<Vec<usize>>())];
        while let Some((id, rows)) = pending.pop() {
            let d = tree.nodes[id].depth;
            if rng.random::<f64>() < split_prob_at_depth(d, params) {
                if let Some(drawn) = sample_split_rule(s, x, &rows, rng) {
                    let (l, r) = tree.grow(id, drawn.rule);
                    let col = column(x, drawn.rule.predictor);
                    let (lr, rr): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&row| drawn.rule.goes_left(col[row]));
                    pending.push((r, rr));
                    pending.push((l, lr));
                    continue;
                }
            }
            let sd = params.tau2.sqrt();
            tree.set_leaf_value(id, sd * std_normal(rng));
        }
        tree
    }

    pub fn to_record(&self) -> TreeRecord {
        fn build(tree: &RegressionTree, id: usize) -> TreeRecord {
            match tree.nodes[id].kind {
                NodeKind::Leaf { value } => TreeRecord::Leaf { value },
                NodeKind::Split { rule, left, right } => TreeRecord::Split {
                    predictor: rule.predictor,
                    cutpoint: rule.cutpoint,
                    left: Box::new(build(tree, left)),
                    right: Box::new(build(tree, right)),
                },
            }
        }
        build(self, ROOT)
    }

    pub fn from_record(record: &TreeRecord) -> Self {
        fn attach(tree: &mut RegressionTree, id: usize, rec: &TreeRecord) {
            match rec {
                TreeRecord::Leaf { value } => tree.set_leaf_value(id, *value),
                TreeRecord::Split {
                    predictor,
                    cutpoint,
                    left,
                    right,
                } => {
                    let (l, r) = tree.grow(
                        id,
                        SplitRule {
                            predictor: *predictor,
                            cutpoint: *cutpoint,
                        },
                    );
                    attach(tree, l, left);
                    attach(tree, r, right);
                }
            }
        }
        let mut tree = RegressionTree::stump(0.0);
        attach(&mut tree, ROOT, record);
        tree
    }
}

/// Nested serialized form of a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeRecord {
    Leaf {
        value: f64,
    },
    Split {
        predictor: usize,
        cutpoint: f64,
        left: Box<TreeRecord>,
        right: Box<TreeRecord>,
    },
}

impl Serialize for RegressionTree {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_record().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RegressionTree {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(RegressionTree::from_record(&TreeRecord::deserialize(deserializer)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
}

/// A structural proposal and its log forward/backward proposal ratio
/// log q(T | T') - log q(T' | T).
#[derive(Debug, Clone)]
pub struct Proposal {
    pub kind: MoveKind,
    pub tree: RegressionTree,
    pub log_ratio: f64,
    /// Node whose subtree changed.
    pub node: usize,
}

fn choose<R: Rng + ?Sized>(ids: &[usize], rng: &mut R) -> usize {
    ids[rng.random_range(0..ids.len())]
}

/// Propose a GROW, PRUNE or CHANGE move. `rows` must be `tree.node_rows(x)`.
/// `None` is a null proposal (the move is impossible from this tree).
pub fn propose_move<R: Rng + ?Sized>(
    tree: &RegressionTree,
    s: &[f64],
    x: &DMatrix<f64>,
    rows: &[Vec<usize>],
    rng: &mut R,
) -> Option<Proposal> {
    let u: f64 = rng.random();
    if u < P_GROW {
        propose_grow(tree, s, x, rows, rng)
    } else if u < P_GROW + P_PRUNE {
        propose_prune(tree, s, x, rows, rng)
    } else {
        propose_change(tree, s, x, rows, rng)
    }
}

pub fn propose_grow<R: Rng + ?Sized>(
    tree: &RegressionTree,
    s: &[f64],
    x: &DMatrix<f64>,
    rows: &[Vec<usize>],
    rng: &mut R,
) -> Option<Proposal> {
    let leaves = tree.leaves();
    let leaf = choose(&leaves, rng);
    let drawn = sample_split_rule(s, x, &rows[leaf], rng)?;
    let mut proposed = tree.clone();
    proposed.grow(leaf, drawn.rule);
    let prunable_after = proposed.prunable_nodes().len() as f64;
    let forward = P_GROW.ln() - (leaves.len() as f64).ln() + s[drawn.rule.predictor].ln()
        - (drawn.n_cutpoints as f64).ln();
    let backward = P_PRUNE.ln() - prunable_after.ln();
    Some(Proposal {
        kind: MoveKind::Grow,
        tree: proposed,
        log_ratio: backward - forward,
        node: leaf,
    })
}

pub fn propose_prune<R: Rng + ?Sized>(
    tree: &RegressionTree,
    s: &[f64],
    x: &DMatrix<f64>,
    rows: &[Vec<usize>],
    rng: &mut R,
) -> Option<Proposal> {
    let prunable = tree.prunable_nodes();
    if prunable.is_empty() {
        return None;
    }
    let node = choose(&prunable, rng);
    let rule = tree.rule(node).expect("prunable node is internal");
    let ncut = cutpoint_count(x, rule.predictor, &rows[node]) as f64;
    let mut proposed = tree.clone();
    proposed.prune(node);
    let leaves_after = proposed.n_leaves() as f64;
    let forward = P_PRUNE.ln() - (prunable.len() as f64).ln();
    let backward = P_GROW.ln() - leaves_after.ln() + s[rule.predictor].ln() - ncut.ln();
    Some(Proposal {
        kind: MoveKind::Prune,
        tree: proposed,
        log_ratio: backward - forward,
        node,
    })
}

pub fn propose_change<R: Rng + ?Sized>(
    tree: &RegressionTree,
    s: &[f64],
    x: &DMatrix<f64>,
    rows: &[Vec<usize>],
    rng: &mut R,
) -> Option<Proposal> {
    let internal = tree.internal_nodes();
    if internal.is_empty() {
        return None;
    }
    let node = choose(&internal, rng);
    let old = tree.rule(node).expect("internal");
    let drawn = sample_split_rule(s, x, &rows[node], rng)?;
    let old_ncut = cutpoint_count(x, old.predictor, &rows[node]) as f64;
    let mut proposed = tree.clone();
    proposed.set_rule(node, drawn.rule);
    let forward = s[drawn.rule.predictor].ln() - (drawn.n_cutpoints as f64).ln();
    let backward = s[old.predictor].ln() - old_ncut.ln();
    Some(Proposal {
        kind: MoveKind::Change,
        tree: proposed,
        log_ratio: backward - forward,
        node,
    })
}
