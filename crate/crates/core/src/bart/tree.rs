//! Regression trees, forests and the predictor grids they split on.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default cap on the number of candidate cuts per numeric predictor.
pub const MAX_CUTS: usize = 100;

/// How a predictor may be split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Numeric predictor with its candidate cut values (strictly increasing).
    Numeric { cuts: Vec<f64> },
    /// Categorical predictor coded as level indices `0..levels`.
    Categorical { levels: u32 },
}

impl FeatureKind {
    /// Cut grid from the midpoints between consecutive distinct observed values,
    /// thinned to at most `MAX_CUTS` evenly spaced in rank.
    /// A constant column yields an empty grid and is never split on.
    pub fn numeric_from_values(values: &[f64]) -> Self {
        Self::numeric_with_max_cuts(values, MAX_CUTS)
    }

    pub fn numeric_with_max_cuts(values: &[f64], max_cuts: usize) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        let mids: Vec<f64> = v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let cuts = if mids.len() <= max_cuts || max_cuts == 0 {
            mids
        } else {
            let step = mids.len() as f64 / max_cuts as f64;
            let mut c: Vec<f64> = (0..max_cuts).map(|i| mids[((i as f64 + 0.5) * step) as usize]).collect();
            c.dedup();
            c
        };
        FeatureKind::Numeric { cuts }
    }

    /// Grid for a count variable taking values `0..=max`.
    pub fn count(max: u32) -> Self {
        FeatureKind::Numeric { cuts: (0..max).map(|j| j as f64 + 0.5).collect() }
    }

    pub fn categorical(levels: u32) -> Self {
        assert!(levels <= 64, "at most 64 categorical levels are supported");
        FeatureKind::Categorical { levels }
    }

    fn full_mask(levels: u32) -> u64 {
        if levels >= 64 {
            u64::MAX
        } else {
            (1u64 << levels) - 1
        }
    }
}

/// The predictor layout a forest is trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    kinds: Vec<FeatureKind>,
}

impl FeatureSpace {
    pub fn new(kinds: Vec<FeatureKind>) -> Self {
        FeatureSpace { kinds }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, var: usize) -> &FeatureKind {
        &self.kinds[var]
    }

    pub(crate) fn full_region(&self) -> Region {
        let bounds = self
            .kinds
            .iter()
            .map(|k| match k {
                FeatureKind::Numeric { cuts } => VarRange::Cuts { lo: 0, hi: cuts.len() as u32 },
                FeatureKind::Categorical { levels } => {
                    VarRange::Levels(FeatureKind::full_mask(*levels))
                }
            })
            .collect();
        Region { bounds }
    }
}

/// Column-major predictor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Vec::len);
        for c in &columns {
            if c.len() != n_rows {
                return Err(Error::Shape { expected: n_rows, got: c.len() });
            }
        }
        let n_cols = columns.len();
        Ok(Design { n_rows, n_cols, data: columns.concat() })
    }

    pub fn empty(n_cols: usize) -> Self {
        Design { n_rows: 0, n_cols, data: Vec::new() }
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.n_rows + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[col * self.n_rows + row] = value;
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.data[col * self.n_rows..(col + 1) * self.n_rows]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        (0..self.n_cols).map(|c| self.get(row, c)).collect()
    }
}

/// The test applied at an internal node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitTest {
    /// Go left when `x < value`; `index` is the position of `value` in the cut grid.
    Cut { index: u32, value: f64 },
    /// Go left when the level's bit is set.
    Subset(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub var: usize,
    pub test: SplitTest,
}

impl SplitRule {
    #[inline]
    pub fn goes_left(&self, x: f64) -> bool {
        match self.test {
            SplitTest::Cut { value, .. } => x < value,
            SplitTest::Subset(mask) => {
                let level = x as i64;
                (0..64).contains(&level) && mask & (1u64 << level) != 0
            }
        }
    }
}

pub(crate) const NO_NODE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub rule: Option<SplitRule>,
    pub left: u32,
    pub right: u32,
    pub parent: u32,
    pub depth: u32,
    /// Leaf mean; unused on internal nodes.
    pub mu: f64,
}

impl Node {
    fn leaf(parent: u32, depth: u32, mu: f64) -> Self {
        Node { rule: None, left: NO_NODE, right: NO_NODE, parent, depth, mu }
    }

    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.rule.is_none()
    }
}

/// A binary regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
}

impl Tree {
    pub fn stump(mu: f64) -> Self {
        Tree { nodes: vec![Node::leaf(NO_NODE, 0, mu)] }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Index of the leaf reached by the predictor accessor `x`.
    #[inline]
    pub fn leaf_index(&self, x: impl Fn(usize) -> f64) -> usize {
        self.leaf_index_from(0, x)
    }

    /// Leaf reached when starting the descent at node `start`.
    #[inline]
    pub(crate) fn leaf_index_from(&self, start: usize, x: impl Fn(usize) -> f64) -> usize {
        let mut idx = start;
        loop {
            let node = &self.nodes[idx];
            match &node.rule {
                None => return idx,
                Some(rule) => {
                    idx = if rule.goes_left(x(rule.var)) { node.left } else { node.right } as usize
                }
            }
        }
    }

    #[inline]
    pub fn predict_with(&self, x: impl Fn(usize) -> f64) -> f64 {
        self.nodes[self.leaf_index(x)].mu
    }

    pub fn predict(&self, v: &[f64]) -> f64 {
        self.predict_with(|j| v[j])
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn uses_var(&self, var: usize) -> bool {
        self.nodes.iter().any(|n| n.rule.is_some_and(|r| r.var == var))
    }

    pub(crate) fn grow(&mut self, leaf: usize, rule: SplitRule, mu: f64) {
        let depth = self.nodes[leaf].depth + 1;
        let l = self.nodes.len() as u32;
        self.nodes.push(Node::leaf(leaf as u32, depth, mu));
        self.nodes.push(Node::leaf(leaf as u32, depth, mu));
        let node = &mut self.nodes[leaf];
        node.rule = Some(rule);
        node.left = l;
        node.right = l + 1;
    }

    /// Collapse an internal node whose children are leaves, then re-pack the arena.
    /// Returns the old-to-new index map (`NO_NODE` for removed nodes).
    pub(crate) fn prune(&mut self, node: usize, mu: f64) -> Vec<u32> {
        let n = &mut self.nodes[node];
        n.rule = None;
        n.left = NO_NODE;
        n.right = NO_NODE;
        n.mu = mu;
        self.compact()
    }

    /// Re-pack reachable nodes in preorder.
    fn compact(&mut self) -> Vec<u32> {
        let mut map = vec![NO_NODE; self.nodes.len()];
        let mut out: Vec<Node> = Vec::with_capacity(self.nodes.len());
        // (old index, new parent)
        let mut stack = vec![(0usize, NO_NODE)];
        let mut remap: Vec<(usize, bool, u32)> = Vec::new(); // (new parent idx, is_left, child new idx)
        while let Some((old, parent)) = stack.pop() {
            let new_idx = out.len() as u32;
            map[old] = new_idx;
            let mut node = self.nodes[old].clone();
            node.parent = parent;
            let (l, r) = (node.left, node.right);
            out.push(node);
            if parent != NO_NODE {
                let p = &out[parent as usize];
                let is_left = p.left == old as u32;
                remap.push((parent as usize, is_left, new_idx));
            }
            if l != NO_NODE {
                stack.push((r as usize, new_idx));
                stack.push((l as usize, new_idx));
            }
        }
        // Children pointers still hold old indices until remapped; the parent's
        // old child index is matched before it is overwritten, so apply in order.
        for (p, is_left, child) in remap {
            if is_left {
                out[p].left = child;
            } else {
                out[p].right = child;
            }
        }
        self.nodes = out;
        map
    }
}

/// Leaf-mean prior for a forest: the forest-level center and the per-leaf scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafPrior {
    /// Prior center of the forest prediction f(v).
    pub mu0: f64,
    /// Per-leaf prior standard deviation, `tau / K`.
    pub sigma_mu: f64,
}

/// A sum-of-trees model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Residual scale; fixed at 1 for the probit layer.
    pub sigma: f64,
    pub leaf_prior: LeafPrior,
    pub n_features: usize,
}

impl Forest {
    /// K stumps, each carrying an equal share of the prior center.
    pub fn stumps(k: usize, n_features: usize, sigma: f64, leaf_prior: LeafPrior) -> Self {
        let mu = leaf_prior.mu0 / k as f64;
        Forest { trees: vec![Tree::stump(mu); k], sigma, leaf_prior, n_features }
    }

    #[inline]
    pub fn predict_with(&self, x: impl Fn(usize) -> f64 + Copy) -> f64 {
        self.trees.iter().map(|t| t.predict_with(x)).sum()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Forest prediction at `v`: the sum of the leaf means `v` reaches in each tree.
pub fn forest_predict(forest: &Forest, v: &[f64]) -> Result<f64> {
    if v.len() != forest.n_features {
        return Err(Error::Shape { expected: forest.n_features, got: v.len() });
    }
    Ok(forest.predict_with(|j| v[j]))
}

/// Per-variable cut-index range or categorical level mask reachable at a node.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum VarRange {
    Cuts { lo: u32, hi: u32 },
    Levels(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Region {
    pub bounds: Vec<VarRange>,
}

impl Region {
    pub fn restrict(&self, rule: &SplitRule, left: bool) -> Region {
        let mut out = self.clone();
        out.bounds[rule.var] = match (&self.bounds[rule.var], rule.test) {
            (VarRange::Cuts { lo, hi }, SplitTest::Cut { index, .. }) => {
                if left {
                    VarRange::Cuts { lo: *lo, hi: index.min(*hi) }
                } else {
                    VarRange::Cuts { lo: (index + 1).max(*lo), hi: *hi }
                }
            }
            (VarRange::Levels(m), SplitTest::Subset(s)) => {
                VarRange::Levels(if left { m & s } else { m & !s })
            }
            (b, _) => b.clone(),
        };
        out
    }

    /// Number of admissible rules on `var`, as a log count (None when zero).
    pub fn log_choices(&self, var: usize) -> Option<f64> {
        match &self.bounds[var] {
            VarRange::Cuts { lo, hi } => (hi > lo).then(|| ((hi - lo) as f64).ln()),
            VarRange::Levels(m) => {
                let l = m.count_ones();
                (l >= 2).then(|| {
                    // ln(2^l - 2)
                    let l = l as f64;
                    l * std::f64::consts::LN_2 + (-(2f64.powf(1.0 - l))).ln_1p()
                })
            }
        }
    }

    pub fn available_vars(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.bounds.len()).filter(|&v| self.log_choices(v).is_some())
    }

    pub fn n_available(&self) -> usize {
        self.available_vars().count()
    }

    /// Whether `rule` is admissible at a node with this region.
    pub fn admits(&self, rule: &SplitRule) -> bool {
        match (&self.bounds[rule.var], rule.test) {
            (VarRange::Cuts { lo, hi }, SplitTest::Cut { index, .. }) => index >= *lo && index < *hi,
            (VarRange::Levels(m), SplitTest::Subset(s)) => m & s != 0 && m & !s != 0,
            _ => false,
        }
    }
}

/// Regions of every node, indexed like `tree.nodes`.
pub(crate) fn node_regions(tree: &Tree, space: &FeatureSpace) -> Vec<Region> {
    let mut regions: Vec<Option<Region>> = vec![None; tree.nodes.len()];
    regions[0] = Some(space.full_region());
    // Arena order is not guaranteed topological after grows, so walk from the root.
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        let node = &tree.nodes[i];
        if let Some(rule) = &node.rule {
            let r = regions[i].as_ref().unwrap();
            let (l, rr) = (node.left as usize, node.right as usize);
            let (left, right) = (r.restrict(rule, true), r.restrict(rule, false));
            regions[l] = Some(left);
            regions[rr] = Some(right);
            stack.push(l);
            stack.push(rr);
        }
    }
    regions.into_iter().map(|r| r.expect("unreachable node in tree arena")).collect()
}
