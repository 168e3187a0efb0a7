//! Single CART tree grown on a bootstrap sample, Gini impurity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Columns, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Weighted class counts `[goodware, malware]`.
    Leaf { counts: [u32; 2] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Fraction of malware in the leaf reached by a sparse row.
    pub fn leaf_score(&self, indices: &[u32], values: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { counts } => {
                    let total = counts[0] + counts[1];
                    return if total == 0 { 0.0 } else { counts[1] as f64 / total as f64 };
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let x = indices.binary_search(feature).map_or(0.0, |p| values[p]);
                    at = if x <= *threshold { *left } else { *right } as usize;
                }
            }
        }
    }
}

fn gini(c: [f64; 2]) -> f64 {
    let n = c[0] + c[1];
    if n <= 0.0 {
        return 0.0;
    }
    let (p0, p1) = (c[0] / n, c[1] / n);
    1.0 - p0 * p0 - p1 * p1
}

struct Best {
    feature: u32,
    threshold: f64,
    gain: f64,
}

const GAIN_EPS: f64 = 1e-12;

pub(crate) struct Grower<'a> {
    pub cols: &'a Columns,
    pub labels: &'a [u8],
    pub cfg: &'a TrainConfig,
    pub max_features: usize,
    pub rng: ChaCha8Rng,
    /// Scratch: value of the current feature per row.
    dense: Vec<f64>,
    pub nodes: Vec<Node>,
    pub importances: Vec<f64>,
    total_weight: f64,
}

impl<'a> Grower<'a> {
    pub fn new(cols: &'a Columns, labels: &'a [u8], cfg: &'a TrainConfig, max_features: usize, rng: ChaCha8Rng) -> Self {
        Self {
            cols,
            labels,
            cfg,
            max_features,
            rng,
            dense: vec![0.0; labels.len()],
            nodes: Vec::new(),
            importances: vec![0.0; cols.width()],
            total_weight: 0.0,
        }
    }

    /// `samples`: distinct rows with their bootstrap weight.
    pub fn grow(mut self, samples: Vec<(u32, u32)>) -> (Tree, Vec<f64>) {
        self.total_weight = samples.iter().map(|s| s.1 as f64).sum();
        self.build(samples, 0);
        (Tree { nodes: self.nodes }, self.importances)
    }

    fn counts(&self, samples: &[(u32, u32)]) -> [f64; 2] {
        let mut c = [0.0; 2];
        for &(r, w) in samples {
            c[self.labels[r as usize] as usize] += w as f64;
        }
        c
    }

    fn build(&mut self, samples: Vec<(u32, u32)>, depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let counts = self.counts(&samples);
        self.nodes.push(Node::Leaf {
            counts: [counts[0] as u32, counts[1] as u32],
        });
        let pure = counts[0] == 0.0 || counts[1] == 0.0;
        let depth_ok = self.cfg.max_depth.map_or(true, |d| depth < d);
        if pure || !depth_ok || samples.len() < self.cfg.min_samples_split.max(2) {
            return id;
        }
        let Some(best) = self.best_split(&samples, counts) else {
            return id;
        };
        let weight = counts[0] + counts[1];
        self.importances[best.feature as usize] += weight / self.total_weight * best.gain;

        self.load_feature(best.feature);
        let (left, right): (Vec<_>, Vec<_>) = samples
            .iter()
            .partition(|&&(r, _)| self.dense[r as usize] <= best.threshold);
        self.unload_feature(best.feature);
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id as usize] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn load_feature(&mut self, f: u32) {
        for &(r, v) in self.cols.column(f) {
            self.dense[r as usize] = v;
        }
    }

    fn unload_feature(&mut self, f: u32) {
        for &(r, _) in self.cols.column(f) {
            self.dense[r as usize] = 0.0;
        }
    }

    /// Features with at least one nonzero value among the node's rows.
    fn active_features(&mut self, samples: &[(u32, u32)]) -> Vec<bool> {
        let mut active = vec![false; self.cols.width()];
        for &(r, _) in samples {
            for &f in self.cols.row_features(r) {
                active[f as usize] = true;
            }
        }
        active
    }

    fn best_split(&mut self, samples: &[(u32, u32)], counts: [f64; 2]) -> Option<Best> {
        let width = self.cols.width();
        let parent = gini(counts);
        let total = counts[0] + counts[1];
        let active = self.active_features(samples);

        // Draw features without replacement until `max_features` of them
        // vary within the node; constant ones do not count.
        let mut order: Vec<u32> = (0..width as u32).collect();
        let mut evaluated = 0usize;
        let mut best: Option<Best> = None;
        let mut scratch: Vec<(f64, u32, u8)> = Vec::with_capacity(samples.len());
        for drawn in 0..width {
            if evaluated >= self.max_features {
                break;
            }
            let pick = self.rng.gen_range(drawn..width);
            order.swap(drawn, pick);
            let f = order[drawn];
            if !active[f as usize] {
                continue;
            }
            self.load_feature(f);
            scratch.clear();
            scratch.extend(
                samples
                    .iter()
                    .map(|&(r, w)| (self.dense[r as usize], w, self.labels[r as usize])),
            );
            self.unload_feature(f);
            scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            if scratch.first().map(|s| s.0) == scratch.last().map(|s| s.0) {
                continue;
            }
            evaluated += 1;

            let mut left = [0.0f64; 2];
            for i in 0..scratch.len() - 1 {
                let (x, w, y) = scratch[i];
                left[y as usize] += w as f64;
                let next = scratch[i + 1].0;
                if next <= x {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let wl = left[0] + left[1];
                let wr = right[0] + right[1];
                let gain = parent - (wl / total) * gini(left) - (wr / total) * gini(right);
                if gain <= GAIN_EPS {
                    continue;
                }
                let threshold = x + (next - x) / 2.0;
                let better = match &best {
                    None => true,
                    Some(b) => {
                        gain > b.gain + GAIN_EPS
                            || ((gain - b.gain).abs() <= GAIN_EPS
                                && (f, threshold.to_bits()) < (b.feature, b.threshold.to_bits()))
                    }
                };
                if better {
                    best = Some(Best {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}
