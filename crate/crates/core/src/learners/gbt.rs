//! Histogram gradient-boosted regression trees.

use serde::{Deserialize, Serialize};

use super::{clip_probability, expit, logit, Design, LearnerError, Loss, RegressionTask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub rounds: usize,
    pub depth: usize,
    pub learning_rate: f64,
    /// Maximum number of histogram bins per feature, at most 256.
    pub bins: usize,
    /// Minimum number of training rows in a leaf.
    pub min_leaf: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            rounds: 100,
            depth: 3,
            learning_rate: 0.1,
            bins: 64,
            min_leaf: 20,
            lambda: 1.0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::InvalidParameter(m.to_string()));
        if !(2..=256).contains(&self.bins) {
            return bad("bins must lie in [2, 256]");
        }
        if self.depth == 0 {
            return bad("depth must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be at least 1");
        }
        Ok(())
    }

    /// Parameters ignoring the number of rounds, for sharing boosted prefixes.
    pub(super) fn same_except_rounds(&self, other: &GbtParams) -> bool {
        GbtParams {
            rounds: other.rounds,
            ..self.clone()
        } == *other
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn evaluate(&self, x: &Design, row: usize) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x.get(row, feature) <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    base: f64,
    trees: Vec<Tree>,
    loss: Loss,
}

impl GbtModel {
    pub fn rounds(&self) -> usize {
        self.trees.len()
    }

    /// Model made of the first `rounds` trees.
    pub fn truncated(&self, rounds: usize) -> GbtModel {
        GbtModel {
            base: self.base,
            trees: self.trees[..rounds.min(self.trees.len())].to_vec(),
            loss: self.loss,
        }
    }

    pub fn predict_rows(&self, x: &Design, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .map(|&r| {
                let raw = self.base + self.trees.iter().map(|t| t.evaluate(x, r)).sum::<f64>();
                match self.loss {
                    Loss::Squared => raw,
                    Loss::Log => clip_probability(expit(raw)),
                }
            })
            .collect()
    }
}

/// Upper bin edges: a value `v` falls in the first bin whose edge is `>= v`.
fn bin_edges(mut values: Vec<f64>, max_bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut unique = values.clone();
    unique.dedup();
    if unique.len() <= max_bins {
        return unique;
    }
    let n = values.len();
    let mut edges: Vec<f64> = (1..=max_bins).map(|k| values[k * n / max_bins - 1]).collect();
    edges.dedup();
    edges
}

fn bin_of(edges: &[f64], v: f64) -> usize {
    edges.partition_point(|&e| e < v).min(edges.len() - 1)
}

struct Binned {
    /// Original design column of each usable feature.
    features: Vec<usize>,
    edges: Vec<Vec<f64>>,
    codes: Vec<Vec<u8>>,
    offsets: Vec<usize>,
    total_bins: usize,
}

fn bin_design(task: &RegressionTask, max_bins: usize) -> Binned {
    let mut features = Vec::new();
    let mut edges = Vec::new();
    let mut codes = Vec::new();
    let mut offsets = Vec::new();
    let mut total_bins = 0;
    for j in 0..task.x.ncols() {
        let col = task.x.column(j);
        let values: Vec<f64> = task.rows.iter().map(|&r| col[r]).collect();
        let e = bin_edges(values, max_bins);
        if e.len() < 2 {
            continue;
        }
        let c: Vec<u8> = task.rows.iter().map(|&r| bin_of(&e, col[r]) as u8).collect();
        features.push(j);
        offsets.push(total_bins);
        total_bins += e.len();
        edges.push(e);
        codes.push(c);
    }
    Binned {
        features,
        edges,
        codes,
        offsets,
        total_bins,
    }
}

#[derive(Clone)]
struct Histogram {
    g: Vec<f64>,
    h: Vec<f64>,
    n: Vec<u32>,
}

impl Histogram {
    fn build(b: &Binned, grad: &[f64], hess: &[f64], rows: &[u32]) -> Self {
        let mut hist = Histogram {
            g: vec![0.0; b.total_bins],
            h: vec![0.0; b.total_bins],
            n: vec![0; b.total_bins],
        };
        for (f, codes) in b.codes.iter().enumerate() {
            let off = b.offsets[f];
            let g = &mut hist.g[off..off + b.edges[f].len()];
            let h = &mut hist.h[off..off + b.edges[f].len()];
            let n = &mut hist.n[off..off + b.edges[f].len()];
            for &r in rows {
                let r = r as usize;
                let k = codes[r] as usize;
                g[k] += grad[r];
                h[k] += hess[r];
                n[k] += 1;
            }
        }
        hist
    }

    fn subtract(&self, other: &Histogram) -> Histogram {
        Histogram {
            g: self.g.iter().zip(&other.g).map(|(a, b)| a - b).collect(),
            h: self.h.iter().zip(&other.h).map(|(a, b)| a - b).collect(),
            n: self.n.iter().zip(&other.n).map(|(a, b)| a - b).collect(),
        }
    }
}

struct Split {
    feature: usize,
    bin: usize,
}

fn best_split(
    b: &Binned,
    hist: &Histogram,
    totals: (f64, f64, u32),
    params: &GbtParams,
) -> Option<Split> {
    let (g, h, n) = totals;
    let lambda = params.lambda;
    let min_leaf = params.min_leaf as u32;
    let parent = g * g / (h + lambda);
    let mut best: Option<(f64, Split)> = None;
    for f in 0..b.features.len() {
        let off = b.offsets[f];
        let nb = b.edges[f].len();
        let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0u32);
        for k in 0..nb - 1 {
            gl += hist.g[off + k];
            hl += hist.h[off + k];
            nl += hist.n[off + k];
            if nl < min_leaf {
                continue;
            }
            let nr = n - nl;
            if nr < min_leaf {
                break;
            }
            let gr = g - gl;
            let hr = h - hl;
            if hl <= 1e-12 || hr <= 1e-12 {
                continue;
            }
            let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
            if gain > 1e-12 && best.as_ref().is_none_or(|(bg, _)| gain > *bg) {
                best = Some((gain, Split { feature: f, bin: k }));
            }
        }
    }
    best.map(|(_, s)| s)
}

struct Pending {
    node: usize,
    rows: Vec<u32>,
    hist: Histogram,
    depth: usize,
}

/// Grows one tree on the current gradients and adds its leaf values to `fitted`.
fn grow(b: &Binned, grad: &[f64], hess: &[f64], params: &GbtParams, fitted: &mut [f64]) -> Tree {
    let m = grad.len();
    let rows: Vec<u32> = (0..m as u32).collect();
    let hist = Histogram::build(b, grad, hess, &rows);
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut queue = vec![Pending {
        node: 0,
        rows,
        hist,
        depth: 0,
    }];
    while let Some(p) = queue.pop() {
        let g: f64 = p.rows.iter().map(|&r| grad[r as usize]).sum();
        let h: f64 = p.rows.iter().map(|&r| hess[r as usize]).sum();
        let n = p.rows.len() as u32;
        let split = if p.depth < params.depth && n >= 2 * params.min_leaf as u32 {
            best_split(b, &p.hist, (g, h, n), params)
        } else {
            None
        };
        match split {
            Some(s) => {
                let codes = &b.codes[s.feature];
                let (left, right): (Vec<u32>, Vec<u32>) = p
                    .rows
                    .iter()
                    .partition(|&&r| (codes[r as usize] as usize) <= s.bin);
                let (small, large_is_left) = if left.len() <= right.len() {
                    (&left, false)
                } else {
                    (&right, true)
                };
                let small_hist = Histogram::build(b, grad, hess, small);
                let large_hist = p.hist.subtract(&small_hist);
                let (left_hist, right_hist) = if large_is_left {
                    (large_hist, small_hist)
                } else {
                    (small_hist, large_hist)
                };
                let li = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                nodes[p.node] = Node::Split {
                    feature: b.features[s.feature],
                    threshold: b.edges[s.feature][s.bin],
                    left: li,
                    right: li + 1,
                };
                queue.push(Pending {
                    node: li,
                    rows: left,
                    hist: left_hist,
                    depth: p.depth + 1,
                });
                queue.push(Pending {
                    node: li + 1,
                    rows: right,
                    hist: right_hist,
                    depth: p.depth + 1,
                });
            }
            None => {
                let value = -g / (h + params.lambda) * params.learning_rate;
                for &r in &p.rows {
                    fitted[r as usize] += value;
                }
                nodes[p.node] = Node::Leaf(value);
            }
        }
    }
    Tree { nodes }
}

pub(super) fn fit(task: &RegressionTask, params: &GbtParams) -> Result<GbtModel, LearnerError> {
    params.validate()?;
    let y: Vec<f64> = task.rows.iter().map(|&r| task.y[r]).collect();
    let m = y.len();
    let mean = y.iter().sum::<f64>() / m as f64;
    let base = match task.loss {
        Loss::Squared => mean,
        Loss::Log => logit(clip_probability(mean)),
    };
    let binned = bin_design(task, params.bins);
    let mut fitted = vec![base; m];
    let mut grad = vec![0.0; m];
    let mut hess = vec![1.0; m];
    let mut trees = Vec::with_capacity(params.rounds);
    for _ in 0..params.rounds {
        match task.loss {
            Loss::Squared => {
                for i in 0..m {
                    grad[i] = fitted[i] - y[i];
                }
            }
            Loss::Log => {
                for i in 0..m {
                    let p = expit(fitted[i]);
                    grad[i] = p - y[i];
                    hess[i] = (p * (1.0 - p)).max(1e-16);
                }
            }
        }
        trees.push(grow(&binned, &grad, &hess, params, &mut fitted));
    }
    Ok(GbtModel {
        base,
        trees,
        loss: task.loss,
    })
}
