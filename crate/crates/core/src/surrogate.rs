//! Shallow regression tree fitted to posterior-mean effects, used to name
//! subgroups.

use crate::error::{param, Result};
use crate::strata::CovariateKind;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

pub const MAX_DEPTH: usize = 3;
/// Smallest affected mass a leaf may carry.
pub const MIN_LEAF_MASS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Condition {
    Less { var: usize, name: String, cut: f64 },
    AtLeast { var: usize, name: String, cut: f64 },
    Equal { var: usize, name: String, level: u32, label: String },
    NotEqual { var: usize, name: String, level: u32, label: String },
}

impl Condition {
    pub fn holds(&self, x: &[f64]) -> bool {
        match self {
            Condition::Less { var, cut, .. } => x[*var] < *cut,
            Condition::AtLeast { var, cut, .. } => x[*var] >= *cut,
            Condition::Equal { var, level, .. } => x[*var] == *level as f64,
            Condition::NotEqual { var, level, .. } => x[*var] != *level as f64,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Less { name, cut, .. } => write!(f, "{name} < {cut}"),
            Condition::AtLeast { name, cut, .. } => write!(f, "{name} >= {cut}"),
            Condition::Equal { name, label, .. } => write!(f, "{name} = {label}"),
            Condition::NotEqual { name, label, .. } => write!(f, "{name} != {label}"),
        }
    }
}

/// Conjunction of conditions along a root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubgroupDef {
    pub conditions: Vec<Condition>,
}

impl SubgroupDef {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.conditions.iter().all(|c| c.holds(x))
    }

    pub fn members(&self, x: &[Vec<f64>]) -> Vec<bool> {
        x.iter().map(|r| self.contains(r)).collect()
    }

    pub fn label(&self) -> String {
        if self.conditions.is_empty() {
            return "all".into();
        }
        self.conditions.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" & ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub subgroup: SubgroupDef,
    pub mean: f64,
    pub mass: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum SurrogateNode {
    Leaf(Leaf),
    Split { left_if: Condition, left: Box<SurrogateNode>, right: Box<SurrogateNode> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowTree {
    pub root: SurrogateNode,
    /// Total affected mass was below the leaf minimum, so no split was tried.
    pub low_mass: bool,
}

impl ShallowTree {
    pub fn depth(&self) -> usize {
        fn go(n: &SurrogateNode) -> usize {
            match n {
                SurrogateNode::Leaf(_) => 0,
                SurrogateNode::Split { left, right, .. } => 1 + go(left).max(go(right)),
            }
        }
        go(&self.root)
    }

    pub fn leaves(&self) -> Vec<&Leaf> {
        fn go<'a>(n: &'a SurrogateNode, out: &mut Vec<&'a Leaf>) {
            match n {
                SurrogateNode::Leaf(l) => out.push(l),
                SurrogateNode::Split { left, right, .. } => {
                    go(left, out);
                    go(right, out);
                }
            }
        }
        let mut out = Vec::new();
        go(&self.root, &mut out);
        out
    }

    /// The root split, if any.
    pub fn first_split(&self) -> Option<&Condition> {
        match &self.root {
            SurrogateNode::Split { left_if, .. } => Some(left_if),
            SurrogateNode::Leaf(_) => None,
        }
    }

    /// Indented text rendering.
    pub fn describe(&self) -> String {
        fn go(n: &SurrogateNode, depth: usize, out: &mut String) {
            let pad = "  ".repeat(depth);
            match n {
                SurrogateNode::Leaf(l) => {
                    out.push_str(&format!("{pad}leaf: mean {:.4}, affected mass {:.1}, rows {}\n", l.mean, l.mass, l.rows))
                }
                SurrogateNode::Split { left_if, left, right } => {
                    out.push_str(&format!("{pad}if {left_if}\n"));
                    go(left, depth + 1, out);
                    out.push_str(&format!("{pad}else\n"));
                    go(right, depth + 1, out);
                }
            }
        }
        let mut s = String::new();
        go(&self.root, 0, &mut s);
        s
    }
}

/// Names, kinds and level labels of the covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateColumns {
    pub names: Vec<String>,
    pub kinds: Vec<CovariateKind>,
    pub labels: Vec<Vec<String>>,
}

#[derive(Clone, Copy)]
enum Rule {
    Cut(f64),
    Level(u32),
}

struct Candidate {
    var: usize,
    rule: Rule,
    gain: f64,
}

struct Fitter<'a> {
    x: &'a [Vec<f64>],
    target: &'a [f64],
    mass: &'a [f64],
    cols: &'a SurrogateColumns,
}

fn stats(rows: &[usize], t: &[f64], m: &[f64]) -> (f64, f64, f64) {
    rows.iter().fold((0.0, 0.0, 0.0), |(w, s, q), &i| (w + m[i], s + m[i] * t[i], q + m[i] * t[i] * t[i]))
}

/// Weighted sum of squared deviations from the weighted mean.
fn sse(w: f64, s: f64, q: f64) -> f64 {
    if w > 0.0 {
        (q - s * s / w).max(0.0)
    } else {
        0.0
    }
}

impl Fitter<'_> {
    fn leaf(&self, rows: &[usize], path: &[Condition]) -> SurrogateNode {
        let (w, s, _) = stats(rows, self.target, self.mass);
        let mean = if w > 0.0 {
            s / w
        } else {
            rows.iter().map(|&i| self.target[i]).sum::<f64>() / rows.len().max(1) as f64
        };
        SurrogateNode::Leaf(Leaf { subgroup: SubgroupDef { conditions: path.to_vec() }, mean, mass: w, rows: rows.len() })
    }

    fn best_split(&self, rows: &[usize]) -> Option<Candidate> {
        let (t, m) = (self.target, self.mass);
        let (w, s, q) = stats(rows, t, m);
        let parent = sse(w, s, q);
        // Gains within this tolerance count as ties.
        let tol = 1e-12 * parent.max(f64::MIN_POSITIVE);
        let mut best: Option<Candidate> = None;
        let mut consider = |c: Candidate| {
            if c.gain <= tol {
                return;
            }
            match &best {
                Some(b) if c.gain <= b.gain + tol => {}
                _ => best = Some(c),
            }
        };
        for (v, kind) in self.cols.kinds.iter().enumerate() {
            match kind {
                CovariateKind::Numeric => {
                    let mut sorted = rows.to_vec();
                    sorted.sort_by(|&a, &b| self.x[a][v].total_cmp(&self.x[b][v]));
                    let (mut lw, mut ls, mut lq) = (0.0, 0.0, 0.0);
                    for k in 0..sorted.len() - 1 {
                        let i = sorted[k];
                        lw += m[i];
                        ls += m[i] * t[i];
                        lq += m[i] * t[i] * t[i];
                        let (a, b) = (self.x[i][v], self.x[sorted[k + 1]][v]);
                        if a == b || lw < MIN_LEAF_MASS || w - lw < MIN_LEAF_MASS {
                            continue;
                        }
                        let gain = parent - sse(lw, ls, lq) - sse(w - lw, s - ls, q - lq);
                        consider(Candidate { var: v, rule: Rule::Cut(0.5 * (a + b)), gain });
                    }
                }
                CovariateKind::Categorical { levels } => {
                    for level in 0..*levels {
                        let left: Vec<usize> = rows.iter().copied().filter(|&i| self.x[i][v] == level as f64).collect();
                        if left.is_empty() || left.len() == rows.len() {
                            continue;
                        }
                        let (lw, ls, lq) = stats(&left, t, m);
                        if lw < MIN_LEAF_MASS || w - lw < MIN_LEAF_MASS {
                            continue;
                        }
                        let gain = parent - sse(lw, ls, lq) - sse(w - lw, s - ls, q - lq);
                        consider(Candidate { var: v, rule: Rule::Level(level), gain });
                    }
                }
            }
        }
        best
    }

    fn grow(&self, rows: Vec<usize>, depth: usize, path: &mut Vec<Condition>) -> SurrogateNode {
        if depth == MAX_DEPTH || rows.len() < 2 {
            return self.leaf(&rows, path);
        }
        let Some(c) = self.best_split(&rows) else {
            return self.leaf(&rows, path);
        };
        let name = self.cols.names[c.var].clone();
        let (yes, no) = match c.rule {
            Rule::Cut(cut) => (
                Condition::Less { var: c.var, name: name.clone(), cut },
                Condition::AtLeast { var: c.var, name, cut },
            ),
            Rule::Level(level) => {
                let label = self.cols.labels[c.var].get(level as usize).cloned().unwrap_or_else(|| level.to_string());
                (
                    Condition::Equal { var: c.var, name: name.clone(), level, label: label.clone() },
                    Condition::NotEqual { var: c.var, name, level, label },
                )
            }
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| yes.holds(&self.x[i]));
        path.push(yes.clone());
        let left = self.grow(l, depth + 1, path);
        path.pop();
        path.push(no);
        let right = self.grow(r, depth + 1, path);
        path.pop();
        SurrogateNode::Split { left_if: yes, left: Box::new(left), right: Box::new(right) }
    }
}

/// Greedy affected-mass-weighted CART of depth at most 3. Splits that would
/// leave a child with affected mass below 100 are never proposed.
pub fn fit_surrogate(x: &[Vec<f64>], cols: &SurrogateColumns, target: &[f64], affected_mass: &[f64]) -> Result<ShallowTree> {
    let n = x.len();
    if n == 0 {
        return param("surrogate tree needs at least one row");
    }
    if target.len() != n || affected_mass.len() != n {
        return param("target and mass must have one entry per row");
    }
    let p = cols.kinds.len();
    if cols.names.len() != p || x.iter().any(|r| r.len() != p) {
        return param("covariate columns do not match the matrix");
    }
    if affected_mass.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) || target.iter().any(|t| !t.is_finite()) {
        return param("mass must be finite and nonnegative and target finite");
    }
    // Canonical row order makes every sum independent of the input order.
    let mut rows: Vec<usize> = (0..n).collect();
    rows.sort_by(|&a, &b| {
        x[a].iter()
            .zip(&x[b])
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(target[a].total_cmp(&target[b]))
            .then(affected_mass[a].total_cmp(&affected_mass[b]))
    });
    let fitter = Fitter { x, target, mass: affected_mass, cols };
    let total: f64 = rows.iter().map(|&i| affected_mass[i]).sum();
    if total < MIN_LEAF_MASS {
        return Ok(ShallowTree { root: fitter.leaf(&rows, &[]), low_mass: true });
    }
    Ok(ShallowTree { root: fitter.grow(rows, 0, &mut Vec::new()), low_mass: false })
}

/// One subgroup per leaf, left to right.
pub fn extract_subgroups(tree: &ShallowTree) -> Vec<SubgroupDef> {
    tree.leaves().into_iter().map(|l| l.subgroup.clone()).collect()
}
