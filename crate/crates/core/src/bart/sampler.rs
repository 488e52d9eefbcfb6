//! Bayesian backfitting: Metropolis-Hastings tree moves, conjugate leaf updates,
//! and the residual-variance draw.

use super::hyper::{BartHyperparams, Link};
use super::tree::{
    node_regions, Design, FeatureKind, FeatureSpace, Forest, Region, SplitRule, SplitTest, Tree, VarRange,
    NO_NODE,
};
use crate::error::{param, Error, Result};
use crate::normal::sample_truncated_std;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

/// Base proposal mix: grow, prune, change, swap.
pub const MOVE_MIX: [f64; 4] = [0.25, 0.25, 0.40, 0.10];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Grow,
    Prune,
    Change,
    Swap,
}

/// Acceptance bookkeeping for one sampler, indexed like `MOVE_MIX`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MoveStats {
    pub proposed: [u64; 4],
    pub accepted: [u64; 4],
}

/// Per-node (row count, sum of centered residuals).
type LeafStats = Vec<(usize, f64)>;

/// MCMC state of one sum-of-trees model bound to a design.
///
/// Every row of the design is routed through every tree so that `fit` covers
/// all rows, but only rows flagged active contribute to the likelihood.
#[derive(Debug, Clone)]
pub struct BartSampler {
    forest: Forest,
    space: FeatureSpace,
    alpha: f64,
    beta: f64,
    eta0: f64,
    s0_sq: f64,
    min_leaf: usize,
    link: Link,
    /// Node index reached by each row, per tree.
    leaf_of: Vec<Vec<u32>>,
    fit: Vec<f64>,
    active: Vec<bool>,
    moved_rows: Vec<u32>,
    moved_leaf: Vec<u32>,
    pub stats: MoveStats,
}

struct TreeInfo {
    regions: Vec<Region>,
    growable: Vec<usize>,
    nogs: Vec<usize>,
    internal: Vec<usize>,
    swaps: Vec<(usize, usize)>,
}

impl TreeInfo {
    fn new(tree: &Tree, space: &FeatureSpace) -> Self {
        let regions = node_regions(tree, space);
        let mut info = TreeInfo {
            regions,
            growable: Vec::new(),
            nogs: Vec::new(),
            internal: Vec::new(),
            swaps: Vec::new(),
        };
        for (i, node) in tree.nodes.iter().enumerate() {
            if node.is_leaf() {
                if info.regions[i].n_available() > 0 {
                    info.growable.push(i);
                }
            } else {
                info.internal.push(i);
                let (l, r) = (node.left as usize, node.right as usize);
                let (ll, rl) = (tree.nodes[l].is_leaf(), tree.nodes[r].is_leaf());
                if ll && rl {
                    info.nogs.push(i);
                }
                if !ll {
                    info.swaps.push((i, l));
                }
                if !rl {
                    info.swaps.push((i, r));
                }
            }
        }
        info
    }

    fn move_probs(&self) -> [f64; 4] {
        let avail = [
            !self.growable.is_empty(),
            !self.nogs.is_empty(),
            !self.internal.is_empty(),
            !self.swaps.is_empty(),
        ];
        let total: f64 = (0..4).filter(|&m| avail[m]).map(|m| MOVE_MIX[m]).sum();
        let mut p = [0.0; 4];
        for m in 0..4 {
            if avail[m] {
                p[m] = MOVE_MIX[m] / total;
            }
        }
        p
    }

    /// Log prior of tree structure and split rules under the branching process.
    fn log_prior(&self, tree: &Tree, alpha: f64, beta: f64) -> f64 {
        let mut lp = 0.0;
        for (i, node) in tree.nodes.iter().enumerate() {
            let p = alpha * (1.0 + node.depth as f64).powf(-beta);
            let region = &self.regions[i];
            match &node.rule {
                None => {
                    if region.n_available() > 0 {
                        lp += (-p).ln_1p();
                    }
                }
                Some(rule) => {
                    if !region.admits(rule) {
                        return f64::NEG_INFINITY;
                    }
                    lp += p.ln() + log_rule_prob(region, rule.var);
                }
            }
        }
        lp
    }

    fn all_admissible(&self, tree: &Tree) -> bool {
        tree.nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.rule.as_ref().is_none_or(|r| self.regions[i].admits(r)))
    }
}

fn log_rule_prob(region: &Region, var: usize) -> f64 {
    -(region.n_available() as f64).ln() - region.log_choices(var).unwrap()
}

/// Draw a split rule uniformly: variable uniform over admissible ones, then cut
/// uniform over the remaining grid (or a uniform nonempty proper level subset).
fn draw_rule<R: Rng + ?Sized>(region: &Region, space: &FeatureSpace, rng: &mut R) -> SplitRule {
    let vars: Vec<usize> = region.available_vars().collect();
    let var = vars[rng.gen_range(0..vars.len())];
    let test = match (&region.bounds[var], space.kind(var)) {
        (VarRange::Cuts { lo, hi }, FeatureKind::Numeric { cuts }) => {
            let index = rng.gen_range(*lo..*hi);
            SplitTest::Cut { index, value: cuts[index as usize] }
        }
        (VarRange::Levels(mask), FeatureKind::Categorical { .. }) => {
            let mask = *mask;
            loop {
                let s = rng.gen::<u64>() & mask;
                if s != 0 && s != mask {
                    break SplitTest::Subset(s);
                }
            }
        }
        _ => unreachable!("feature kind and region disagree"),
    };
    SplitRule { var, test }
}

/// Per-leaf log marginal likelihood with the leaf mean integrated out, dropping
/// terms that are identical for every partition of the same rows.
#[inline]
fn leaf_log_ml(stat: (usize, f64), sigma2: f64, sigma_mu2: f64) -> f64 {
    let (n, s) = stat;
    let denom = sigma2 + n as f64 * sigma_mu2;
    0.5 * (sigma2 / denom).ln() + sigma_mu2 * s * s / (2.0 * sigma2 * denom)
}

/// Nodes of the subtree rooted at `root`.
fn subtree_mask(tree: &Tree, root: usize) -> Vec<bool> {
    let mut mask = vec![false; tree.nodes.len()];
    let mut stack = vec![root];
    while let Some(i) = stack.pop() {
        mask[i] = true;
        let node = &tree.nodes[i];
        if !node.is_leaf() {
            stack.push(node.left as usize);
            stack.push(node.right as usize);
        }
    }
    mask
}

struct Proposal {
    tree: Tree,
    /// Statistics of the proposed tree, indexed like the current arena (pre-compaction).
    stats: LeafStats,
    /// Log marginal likelihood difference, proposed minus current.
    delta_ll: f64,
    log_q_fwd: f64,
    log_q_rev: f64,
    /// Old-to-new index map after a prune.
    remap: Option<Vec<u32>>,
}

/// Scalars shared by every tree update in a sweep.
#[derive(Clone, Copy)]
struct SweepScale {
    sigma2: f64,
    sigma_mu2: f64,
    center: f64,
}

impl BartSampler {
    /// Bind `forest` to the design `x`. Rows may be zero for prior-only runs.
    pub fn new(
        forest: Forest,
        space: FeatureSpace,
        x: &Design,
        hyper: &BartHyperparams,
        link: Link,
        s0_sq: f64,
    ) -> Result<Self> {
        hyper.validate()?;
        if x.n_cols() != space.len() || forest.n_features != space.len() {
            return Err(Error::Shape { expected: space.len(), got: x.n_cols() });
        }
        if link == Link::Gaussian && !(s0_sq > 0.0) {
            return param("s0_sq must be positive for the Gaussian layer");
        }
        let mut s = BartSampler {
            leaf_of: vec![vec![0; x.n_rows()]; forest.n_trees()],
            fit: vec![0.0; x.n_rows()],
            active: vec![true; x.n_rows()],
            moved_rows: Vec::new(),
            moved_leaf: Vec::new(),
            forest,
            space,
            alpha: hyper.alpha,
            beta: hyper.beta,
            eta0: hyper.eta0,
            s0_sq,
            min_leaf: hyper.min_leaf_size,
            link,
            stats: MoveStats::default(),
        };
        s.reassign_all(x);
        Ok(s)
    }

    /// Restrict the likelihood to rows where `mask` is true. Inactive rows keep
    /// being routed so their predictions stay available through `fit`.
    pub fn set_active(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.fit.len() {
            return Err(Error::Shape { expected: self.fit.len(), got: mask.len() });
        }
        self.active = mask;
        Ok(())
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    /// Current forest fit per row.
    pub fn fit(&self) -> &[f64] {
        &self.fit
    }

    pub fn sigma(&self) -> f64 {
        self.forest.sigma
    }

    pub fn n_rows(&self) -> usize {
        self.fit.len()
    }

    fn reassign_all(&mut self, x: &Design) {
        for (k, tree) in self.forest.trees.iter().enumerate() {
            let lo = &mut self.leaf_of[k];
            for (i, slot) in lo.iter_mut().enumerate() {
                *slot = tree.leaf_index(|v| x.get(i, v)) as u32;
            }
        }
        self.recompute_fit();
    }

    fn recompute_fit(&mut self) {
        self.fit.iter_mut().for_each(|f| *f = 0.0);
        for (k, tree) in self.forest.trees.iter().enumerate() {
            for (f, &leaf) in self.fit.iter_mut().zip(&self.leaf_of[k]) {
                *f += tree.nodes[leaf as usize].mu;
            }
        }
    }

    /// Which trees split on any of `vars`.
    pub fn trees_using(&self, vars: &[usize]) -> Vec<bool> {
        self.forest.trees.iter().map(|t| vars.iter().any(|&v| t.uses_var(v))).collect()
    }

    /// Forest prediction at row `row` with some predictors replaced.
    /// `mask` comes from `trees_using` over the overridden variables; the other
    /// trees reuse their cached leaf for the row.
    pub fn predict_override(&self, x: &Design, row: usize, overrides: &[(usize, f64)], mask: &[bool]) -> f64 {
        let get = |v: usize| overrides.iter().find(|(var, _)| *var == v).map_or_else(|| x.get(row, v), |o| o.1);
        let mut total = 0.0;
        for (k, tree) in self.forest.trees.iter().enumerate() {
            total += if mask[k] { tree.predict_with(get) } else { tree.nodes[self.leaf_of[k][row] as usize].mu };
        }
        total
    }

    /// Sum of the cached leaf values of trees *not* flagged in `mask` at `row`.
    pub fn partial_fit(&self, row: usize, mask: &[bool]) -> f64 {
        self.forest
            .trees
            .iter()
            .enumerate()
            .filter(|(k, _)| !mask[*k])
            .map(|(k, t)| t.nodes[self.leaf_of[k][row] as usize].mu)
            .sum()
    }

    /// Re-route `row` after its predictors changed in `x`; only trees flagged in
    /// `mask` are re-traversed.
    pub fn refresh_row(&mut self, x: &Design, row: usize, mask: &[bool]) {
        let mut total = 0.0;
        for (k, tree) in self.forest.trees.iter().enumerate() {
            if mask[k] {
                self.leaf_of[k][row] = tree.leaf_index(|v| x.get(row, v)) as u32;
            }
            total += tree.nodes[self.leaf_of[k][row] as usize].mu;
        }
        self.fit[row] = total;
    }

    /// One Gibbs sweep over all trees against `response` (entries of inactive
    /// rows are ignored), followed by the residual-scale draw for the Gaussian layer.
    pub fn sweep<R: Rng + ?Sized>(&mut self, x: &Design, response: &[f64], rng: &mut R) -> Result<()> {
        if response.len() != x.n_rows() || x.n_rows() != self.fit.len() {
            return Err(Error::Shape { expected: self.fit.len(), got: response.len() });
        }
        self.recompute_fit();
        let mut resid: Vec<f64> = response.iter().zip(&self.fit).map(|(y, f)| y - f).collect();
        let sigma_mu = self.forest.leaf_prior.sigma_mu;
        let scale = SweepScale {
            sigma2: self.forest.sigma * self.forest.sigma,
            sigma_mu2: sigma_mu * sigma_mu,
            center: self.forest.leaf_prior.mu0 / self.forest.n_trees() as f64,
        };
        for k in 0..self.forest.n_trees() {
            {
                let tree = &self.forest.trees[k];
                for (r, &leaf) in resid.iter_mut().zip(&self.leaf_of[k]) {
                    *r += tree.nodes[leaf as usize].mu;
                }
            }
            let stats = self.update_structure(k, x, &resid, scale, rng);
            self.draw_leaves(k, &stats, scale, rng);
            let tree = &self.forest.trees[k];
            for (r, &leaf) in resid.iter_mut().zip(&self.leaf_of[k]) {
                *r -= tree.nodes[leaf as usize].mu;
            }
        }
        if self.link == Link::Gaussian {
            let active: Vec<f64> = resid.iter().zip(&self.active).filter(|(_, &a)| a).map(|(r, _)| *r).collect();
            self.forest.sigma = if active.is_empty() {
                sample_sigma_prior(self.eta0, self.s0_sq, rng)
            } else {
                sample_sigma(&active, self.eta0, self.s0_sq, rng)?
            };
        }
        self.recompute_fit();
        Ok(())
    }

    fn current_stats(&self, k: usize, resid: &[f64], center: f64) -> LeafStats {
        let mut stats = vec![(0usize, 0.0f64); self.forest.trees[k].nodes.len()];
        for ((&leaf, r), &a) in self.leaf_of[k].iter().zip(resid).zip(&self.active) {
            if a {
                let s = &mut stats[leaf as usize];
                s.0 += 1;
                s.1 += r - center;
            }
        }
        stats
    }

    /// Collect rows whose current leaf is flagged in `from` and record the leaf
    /// each reaches under `route`.
    fn collect_moved(&mut self, k: usize, from: &[bool], route: impl Fn(usize) -> u32) {
        self.moved_rows.clear();
        self.moved_leaf.clear();
        for (i, &leaf) in self.leaf_of[k].iter().enumerate() {
            if from[leaf as usize] {
                self.moved_rows.push(i as u32);
                self.moved_leaf.push(route(i));
            }
        }
    }

    fn accumulate_moved(&self, stats: &mut LeafStats, resid: &[f64], center: f64) {
        for (&i, &leaf) in self.moved_rows.iter().zip(&self.moved_leaf) {
            let i = i as usize;
            if self.active[i] {
                let s = &mut stats[leaf as usize];
                s.0 += 1;
                s.1 += resid[i] - center;
            }
        }
    }

    /// Propose and accept or reject one structural move for tree `k`; returns
    /// the leaf statistics of the tree that is kept.
    fn update_structure<R: Rng + ?Sized>(
        &mut self,
        k: usize,
        x: &Design,
        resid: &[f64],
        scale: SweepScale,
        rng: &mut R,
    ) -> LeafStats {
        let old_stats = self.current_stats(k, resid, scale.center);
        let info = TreeInfo::new(&self.forest.trees[k], &self.space);
        let probs = info.move_probs();
        if probs.iter().all(|&p| p == 0.0) {
            return old_stats;
        }
        let u: f64 = rng.gen();
        let mv = if u < probs[0] {
            Move::Grow
        } else if u < probs[0] + probs[1] {
            Move::Prune
        } else if u < probs[0] + probs[1] + probs[2] {
            Move::Change
        } else {
            Move::Swap
        };
        self.stats.proposed[mv as usize] += 1;
        let proposal = match mv {
            Move::Grow => self.propose_grow(k, x, resid, scale, &info, &probs, &old_stats, rng),
            Move::Prune => self.propose_prune(k, resid, scale, &info, &probs, &old_stats, rng),
            Move::Change | Move::Swap => {
                self.propose_rewire(k, mv, x, resid, scale, &info, &probs, &old_stats, rng)
            }
        };
        let Some(p) = proposal else {
            return old_stats;
        };
        let pinfo = TreeInfo::new(&p.tree, &self.space);
        if !pinfo.all_admissible(&p.tree) {
            // A rule left with nothing to split inside its region has zero prior mass.
            return old_stats;
        }
        let log_q_rev = p.log_q_rev + self.reverse_log_q(mv, &pinfo);
        let log_ratio = p.delta_ll + pinfo.log_prior(&p.tree, self.alpha, self.beta)
            - info.log_prior(&self.forest.trees[k], self.alpha, self.beta)
            + log_q_rev
            - p.log_q_fwd;
        if log_ratio.is_nan() || !(log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio) {
            return old_stats;
        }
        self.stats.accepted[mv as usize] += 1;
        let leaf_of = &mut self.leaf_of[k];
        let stats = match &p.remap {
            None => {
                for (&i, &leaf) in self.moved_rows.iter().zip(&self.moved_leaf) {
                    leaf_of[i as usize] = leaf;
                }
                p.stats
            }
            Some(map) => {
                for slot in leaf_of.iter_mut() {
                    *slot = map[*slot as usize];
                }
                for (&i, &leaf) in self.moved_rows.iter().zip(&self.moved_leaf) {
                    leaf_of[i as usize] = map[leaf as usize];
                }
                let mut out = vec![(0usize, 0.0f64); p.tree.nodes.len()];
                for (old, &new) in map.iter().enumerate() {
                    if new != NO_NODE {
                        out[new as usize] = p.stats[old];
                    }
                }
                out
            }
        };
        self.forest.trees[k] = p.tree;
        stats
    }

    /// Part of the reverse-move probability that depends on the proposed tree.
    fn reverse_log_q(&self, mv: Move, pinfo: &TreeInfo) -> f64 {
        let p = pinfo.move_probs();
        match mv {
            Move::Grow => p[1].ln() - (pinfo.nogs.len() as f64).ln(),
            Move::Prune => p[0].ln() - (pinfo.growable.len() as f64).ln(),
            Move::Change => p[2].ln() - (pinfo.internal.len() as f64).ln(),
            Move::Swap => p[3].ln() - (pinfo.swaps.len() as f64).ln(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn propose_grow<R: Rng + ?Sized>(
        &mut self,
        k: usize,
        x: &Design,
        resid: &[f64],
        scale: SweepScale,
        info: &TreeInfo,
        probs: &[f64; 4],
        old: &LeafStats,
        rng: &mut R,
    ) -> Option<Proposal> {
        let leaf = info.growable[rng.gen_range(0..info.growable.len())];
        let region = &info.regions[leaf];
        let rule = draw_rule(region, &self.space, rng);
        let mut tree = self.forest.trees[k].clone();
        let (l, r) = (tree.nodes.len() as u32, tree.nodes.len() as u32 + 1);
        tree.grow(leaf, rule, tree.nodes[leaf].mu);
        let mut from = vec![false; old.len()];
        from[leaf] = true;
        self.collect_moved(k, &from, |i| if rule.goes_left(x.get(i, rule.var)) { l } else { r });
        let mut stats = old.clone();
        stats[leaf] = (0, 0.0);
        stats.extend([(0, 0.0), (0, 0.0)]);
        self.accumulate_moved(&mut stats, resid, scale.center);
        let (sl, sr) = (stats[l as usize], stats[r as usize]);
        if sl.0 < self.min_leaf || sr.0 < self.min_leaf {
            return None;
        }
        let ml = |s| leaf_log_ml(s, scale.sigma2, scale.sigma_mu2);
        Some(Proposal {
            delta_ll: ml(sl) + ml(sr) - ml(old[leaf]),
            log_q_fwd: probs[0].ln() - (info.growable.len() as f64).ln() + log_rule_prob(region, rule.var),
            log_q_rev: 0.0,
            tree,
            stats,
            remap: None,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn propose_prune<R: Rng + ?Sized>(
        &mut self,
        k: usize,
        resid: &[f64],
        scale: SweepScale,
        info: &TreeInfo,
        probs: &[f64; 4],
        old: &LeafStats,
        rng: &mut R,
    ) -> Option<Proposal> {
        let node = info.nogs[rng.gen_range(0..info.nogs.len())];
        let current = &self.forest.trees[k];
        let (l, r) = (current.nodes[node].left as usize, current.nodes[node].right as usize);
        let var = current.nodes[node].rule.unwrap().var;
        let mut tree = current.clone();
        let remap = tree.prune(node, current.nodes[l].mu);
        let mut from = vec![false; old.len()];
        from[l] = true;
        from[r] = true;
        self.collect_moved(k, &from, |_| node as u32);
        let mut stats = old.clone();
        stats[l] = (0, 0.0);
        stats[r] = (0, 0.0);
        stats[node] = (0, 0.0);
        self.accumulate_moved(&mut stats, resid, scale.center);
        let ml = |s| leaf_log_ml(s, scale.sigma2, scale.sigma_mu2);
        Some(Proposal {
            delta_ll: ml(stats[node]) - ml(old[l]) - ml(old[r]),
            log_q_fwd: probs[1].ln() - (info.nogs.len() as f64).ln(),
            // The reverse grow re-creates this rule at the same region.
            log_q_rev: log_rule_prob(&info.regions[node], var),
            tree,
            stats,
            remap: Some(remap),
        })
    }

    /// Change (new rule at an internal node) or swap (exchange parent and child rules).
    #[allow(clippy::too_many_arguments)]
    fn propose_rewire<R: Rng + ?Sized>(
        &mut self,
        k: usize,
        mv: Move,
        x: &Design,
        resid: &[f64],
        scale: SweepScale,
        info: &TreeInfo,
        probs: &[f64; 4],
        old: &LeafStats,
        rng: &mut R,
    ) -> Option<Proposal> {
        let current = &self.forest.trees[k];
        let mut tree = current.clone();
        let (root, log_q_fwd, log_q_rev) = if mv == Move::Change {
            let node = info.internal[rng.gen_range(0..info.internal.len())];
            let region = &info.regions[node];
            let old_rule = current.nodes[node].rule.unwrap();
            let rule = draw_rule(region, &self.space, rng);
            tree.nodes[node].rule = Some(rule);
            let fwd = probs[2].ln() - (info.internal.len() as f64).ln() + log_rule_prob(region, rule.var);
            (node, fwd, log_rule_prob(region, old_rule.var))
        } else {
            let (parent, child) = info.swaps[rng.gen_range(0..info.swaps.len())];
            tree.nodes[parent].rule = current.nodes[child].rule;
            tree.nodes[child].rule = current.nodes[parent].rule;
            (parent, probs[3].ln() - (info.swaps.len() as f64).ln(), 0.0)
        };
        let sub = subtree_mask(current, root);
        {
            let t = &tree;
            self.collect_moved(k, &sub, |i| t.leaf_index_from(root, |v| x.get(i, v)) as u32);
        }
        let mut stats = old.clone();
        for (s, &m) in stats.iter_mut().zip(&sub) {
            if m {
                *s = (0, 0.0);
            }
        }
        self.accumulate_moved(&mut stats, resid, scale.center);
        let mut delta_ll = 0.0;
        for (i, node) in tree.nodes.iter().enumerate() {
            if sub[i] && node.is_leaf() {
                if stats[i].0 < self.min_leaf {
                    return None;
                }
                delta_ll += leaf_log_ml(stats[i], scale.sigma2, scale.sigma_mu2)
                    - leaf_log_ml(old[i], scale.sigma2, scale.sigma_mu2);
            }
        }
        Some(Proposal { tree, stats, delta_ll, log_q_fwd, log_q_rev, remap: None })
    }

    fn draw_leaves<R: Rng + ?Sized>(&mut self, k: usize, stats: &LeafStats, scale: SweepScale, rng: &mut R) {
        let prior_prec = 1.0 / scale.sigma_mu2;
        let tree = &mut self.forest.trees[k];
        for (node, &(n, centered)) in tree.nodes.iter_mut().zip(stats) {
            if node.is_leaf() {
                let sum = centered + n as f64 * scale.center;
                let prec = prior_prec + n as f64 / scale.sigma2;
                let mean = (scale.center * prior_prec + sum / scale.sigma2) / prec;
                let z: f64 = StandardNormal.sample(rng);
                node.mu = mean + z / prec.sqrt();
            }
        }
    }
}

/// Draw sigma from its scaled inverse-chi-square conditional:
/// sigma^2 = (eta0 s0^2 + SSE) / chi2(eta0 + n).
pub fn sample_sigma<R: Rng + ?Sized>(residuals: &[f64], eta0: f64, s0_sq: f64, rng: &mut R) -> Result<f64> {
    if residuals.is_empty() {
        return param("sample_sigma needs at least one residual");
    }
    if !(eta0 > 0.0 && s0_sq > 0.0) {
        return param("eta0 and s0_sq must be positive");
    }
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let df = eta0 + residuals.len() as f64;
    let chi = ChiSquared::new(df).map_err(|e| Error::Parameter(e.to_string()))?;
    let x: f64 = chi.sample(rng).max(f64::MIN_POSITIVE);
    Ok(((eta0 * s0_sq + sse) / x).sqrt())
}

/// Prior-only draw of sigma (no residuals).
pub fn sample_sigma_prior<R: Rng + ?Sized>(eta0: f64, s0_sq: f64, rng: &mut R) -> f64 {
    let chi = ChiSquared::new(eta0).expect("eta0 validated positive");
    let x: f64 = chi.sample(rng).max(f64::MIN_POSITIVE);
    (eta0 * s0_sq / x).sqrt()
}

/// Latent probit utilities: y* ~ N(f, 1) truncated to [0, inf) when y = 1 and
/// to (-inf, 0) when y = 0.
pub fn probit_latent_update<R: Rng + ?Sized>(y: &[u8], f: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if y.len() != f.len() {
        return Err(Error::Shape { expected: y.len(), got: f.len() });
    }
    Ok(y.iter().zip(f).map(|(&yi, &fi)| probit_latent_one(yi, fi, rng)).collect())
}

#[inline]
pub(crate) fn probit_latent_one<R: Rng + ?Sized>(y: u8, f: f64, rng: &mut R) -> f64 {
    if y == 1 {
        let (z, _) = sample_truncated_std(-f, f64::INFINITY, rng);
        (z + f).max(0.0)
    } else {
        let (z, _) = sample_truncated_std(f64::NEG_INFINITY, -f, rng);
        let v = z + f;
        if v < 0.0 {
            v
        } else {
            -f64::MIN_POSITIVE
        }
    }
}
