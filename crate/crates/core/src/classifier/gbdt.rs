//! Gradient-boosted regression trees on the binary logistic loss.
//!
//! Each tree is fit to first and second derivatives of the loss (Newton
//! boosting): a leaf holding rows `I` gets value `-G_I / (H_I + lambda)` and a
//! split is scored by
//!
//! ```text
//! gain = 1/2 [ G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda) ] - gamma
//! ```
//!
//! Splits are found by exact greedy search over every distinct value of every
//! column. Thresholds are actual training values (`x <= t` goes left), so a
//! strictly increasing transform of a column applied at training and
//! inference leaves all predictions unchanged. Ties in gain keep the earliest
//! candidate (lowest column, then lowest threshold).

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{logistic_loss, sigmoid, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub max_depth: usize,
    pub num_trees: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub subsample: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            max_depth: 3,
            num_trees: 100,
            learning_rate: 0.3,
            min_child_weight: 1.0,
            subsample: 1.0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.min_child_weight >= 0.0
            && self.subsample > 0.0
            && self.subsample <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid GBDT parameters {self:?}")))
        }
    }
}

/// Settings that are not searched over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub reg_lambda: f64,
    pub gamma: f64,
    pub positive_weight: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            reg_lambda: 1.0,
            gamma: 0.0,
            positive_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    /// Initial margin: log-odds of the (weighted) training base rate.
    pub base_score: f64,
    pub params: GbdtParams,
    pub config: GbdtConfig,
    pub num_features: usize,
}

impl GbdtModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        let mut m = self.base_score;
        for t in &self.trees {
            m += self.learning_rate * t.predict(x);
        }
        m
    }

    pub fn check(&self) -> Result<()> {
        for (ti, t) in self.trees.iter().enumerate() {
            for n in &t.nodes {
                match *n {
                    Node::Split {
                        feature,
                        left,
                        right,
                        threshold,
                    } => {
                        if feature >= self.num_features
                            || left >= t.nodes.len()
                            || right >= t.nodes.len()
                            || threshold.is_nan()
                        {
                            return Err(Error::Format(format!("tree {ti} has an invalid split")));
                        }
                    }
                    Node::Leaf { value } if !value.is_finite() => {
                        return Err(Error::Format(format!("tree {ti} has a non-finite leaf")));
                    }
                    Node::Leaf { .. } => {}
                }
            }
        }
        if !self.base_score.is_finite() {
            return Err(Error::Format("non-finite base score".into()));
        }
        Ok(())
    }
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Per-node accumulator used while scanning one column.
#[derive(Clone, Copy)]
struct Scan {
    g: f64,
    h: f64,
    last: f64,
    seen: bool,
}

/// Trains one booster. Returns the model and the weighted mean training loss
/// after the base score (index 0) and after each added tree.
pub fn fit_gbdt(
    data: &Dataset,
    params: &GbdtParams,
    config: &GbdtConfig,
    seed: u64,
) -> Result<(GbdtModel, Vec<f64>)> {
    params.validate()?;
    // written so NaN fails too
    let valid = config.reg_lambda >= 0.0 && config.positive_weight > 0.0 && config.gamma >= 0.0;
    if !valid {
        return Err(Error::Config(format!("invalid GBDT configuration {config:?}")));
    }
    data.require_both_classes(1)?;
    let n = data.len();
    let d = data.num_features;

    let weights: Vec<f64> = data
        .labels
        .iter()
        .map(|&y| if y { config.positive_weight } else { 1.0 })
        .collect();
    let total_w: f64 = weights.iter().sum();
    let pos_w: f64 = weights.iter().zip(&data.labels).filter(|(_, &y)| y).map(|(w, _)| w).sum();
    let rate = pos_w / total_w;
    let base_score = (rate / (1.0 - rate)).ln();

    // Column-major copy and per-column ascending order (ties by row index).
    let columns: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..n).map(|i| data.values[i * d + j]).collect())
        .collect();
    let sorted: Vec<Vec<u32>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mean_loss = |margins: &[f64]| {
        margins
            .iter()
            .zip(&data.labels)
            .zip(&weights)
            .map(|((&m, &y), &w)| w * logistic_loss(m, y))
            .sum::<f64>()
            / total_w
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margins = vec![base_score; n];
    let mut history = vec![mean_loss(&margins)];
    let mut trees = Vec::with_capacity(params.num_trees);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let sample_size = ((params.subsample * n as f64).round() as usize).clamp(1, n);

    for _ in 0..params.num_trees {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            let y = if data.labels[i] { 1.0 } else { 0.0 };
            grad[i] = weights[i] * (p - y);
            hess[i] = weights[i] * p * (1.0 - p);
        }
        let in_sample = if sample_size < n {
            let mut mask = vec![false; n];
            for i in index::sample(&mut rng, n, sample_size) {
                mask[i] = true;
            }
            mask
        } else {
            vec![true; n]
        };
        let tree = grow_tree(&columns, &sorted, &grad, &hess, &in_sample, params, config);
        for (m, row) in margins.iter_mut().zip(data.values.chunks_exact(d)) {
            *m += params.learning_rate * tree.predict(row);
        }
        history.push(mean_loss(&margins));
        trees.push(tree);
    }

    Ok((
        GbdtModel {
            trees,
            learning_rate: params.learning_rate,
            base_score,
            params: *params,
            config: *config,
            num_features: d,
        },
        history,
    ))
}

fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    let v = -g / (h + lambda);
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let den = h + lambda;
    if den > 0.0 {
        g * g / den
    } else {
        0.0
    }
}

/// Grows one tree level by level. `node_of[i]` is the node a sampled row
/// currently sits in; rows outside the sample never contribute.
fn grow_tree(
    columns: &[Vec<f64>],
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    params: &GbdtParams,
    config: &GbdtConfig,
) -> Tree {
    const NONE: u32 = u32::MAX;
    let n = grad.len();
    let lambda = config.reg_lambda;

    let mut node_of: Vec<u32> = in_sample.iter().map(|&s| if s { 0 } else { NONE }).collect();
    let (mut g0, mut h0) = (0.0, 0.0);
    for i in 0..n {
        if in_sample[i] {
            g0 += grad[i];
            h0 += hess[i];
        }
    }
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    // (node index, G, H) of the nodes still open at this depth
    let mut frontier: Vec<(usize, f64, f64)> = vec![(0, g0, h0)];
    // node index -> position in frontier
    let mut slot_of: Vec<u32> = vec![0];

    for _depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut best: Vec<Option<Candidate>> = frontier.iter().map(|_| None).collect();
        let mut scan = vec![
            Scan {
                g: 0.0,
                h: 0.0,
                last: 0.0,
                seen: false
            };
            frontier.len()
        ];
        for (f, order) in sorted.iter().enumerate() {
            let col = &columns[f];
            for s in scan.iter_mut() {
                *s = Scan {
                    g: 0.0,
                    h: 0.0,
                    last: 0.0,
                    seen: false,
                };
            }
            for &row in order {
                let row = row as usize;
                let node = node_of[row];
                if node == NONE {
                    continue;
                }
                let slot = slot_of[node as usize];
                if slot == NONE {
                    continue;
                }
                let slot = slot as usize;
                let v = col[row];
                let acc = scan[slot];
                if acc.seen && v > acc.last {
                    let (_, gt, ht) = frontier[slot];
                    let (gl, hl) = (acc.g, acc.h);
                    let (gr, hr) = (gt - gl, ht - hl);
                    if hl >= params.min_child_weight && hr >= params.min_child_weight {
                        let gain = 0.5
                            * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(gt, ht, lambda))
                            - config.gamma;
                        let better = match &best[slot] {
                            Some(b) => gain > b.gain,
                            None => gain > 0.0,
                        };
                        if better {
                            best[slot] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold: acc.last,
                            });
                        }
                    }
                }
                let acc = &mut scan[slot];
                acc.g += grad[row];
                acc.h += hess[row];
                acc.last = v;
                acc.seen = true;
            }
        }

        // Materialize splits; children form the next frontier.
        let mut next = Vec::new();
        for (slot, cand) in best.iter().enumerate() {
            let (node_idx, _, _) = frontier[slot];
            if let Some(c) = cand {
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[node_idx] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right: left + 1,
                };
                next.push((left, 0.0, 0.0));
                next.push((left + 1, 0.0, 0.0));
            }
        }
        slot_of.resize(nodes.len(), NONE);
        slot_of.iter_mut().for_each(|s| *s = NONE);
        for (k, &(idx, _, _)) in next.iter().enumerate() {
            slot_of[idx] = k as u32;
        }
        for i in 0..n {
            let node = node_of[i];
            if node == NONE {
                continue;
            }
            if let Node::Split {
                feature,
                threshold,
                left,
                right,
            } = nodes[node as usize]
            {
                let child = if columns[feature][i] <= threshold { left } else { right };
                node_of[i] = child as u32;
                let k = slot_of[child] as usize;
                next[k].1 += grad[i];
                next[k].2 += hess[i];
            }
        }
        // Unsplit frontier nodes become leaves now.
        for (slot, cand) in best.iter().enumerate() {
            if cand.is_none() {
                let (idx, g, h) = frontier[slot];
                nodes[idx] = Node::Leaf {
                    value: leaf_value(g, h, lambda),
                };
            }
        }
        frontier = next;
    }
    for &(idx, g, h) in &frontier {
        nodes[idx] = Node::Leaf {
            value: leaf_value(g, h, lambda),
        };
    }
    Tree { nodes }
}
