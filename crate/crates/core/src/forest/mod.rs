//! Random forest classifier with impurity-based feature importances.

mod io;
mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;
use crate::vocab::FeatureMatrix;
use crate::Label;

pub use io::ModelFormatError;
pub use tree::{Node, Tree};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForestError {
    #[error("training labels contain a single class")]
    SingleClassTraining,
    #[error("training matrix has no rows or no columns")]
    EmptyMatrix,
    #[error("training matrix carries no labels")]
    MissingLabels,
    #[error("{0} labels for {1} rows")]
    LabelCount(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    Log2,
    All,
    Fixed(u32),
}

impl MaxFeatures {
    pub fn resolve(self, width: usize) -> usize {
        let n = match self {
            MaxFeatures::Sqrt => (width as f64).sqrt().floor() as usize,
            MaxFeatures::Log2 => (width as f64).log2().floor() as usize,
            MaxFeatures::All => width,
            MaxFeatures::Fixed(k) => k as usize,
        };
        n.clamp(1, width.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_trees: u32,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub config: TrainConfig,
    pub width: u32,
    pub vocab_fingerprint: [u8; 32],
    pub importances: Vec<f64>,
    pub trees: Vec<Tree>,
}

/// Column-major copy of a matrix plus each row's active columns.
pub(crate) struct Columns {
    width: usize,
    col_ptr: Vec<usize>,
    col_entries: Vec<(u32, f64)>,
    row_ptr: Vec<usize>,
    row_cols: Vec<u32>,
}

impl Columns {
    fn from_matrix(x: &FeatureMatrix) -> Self {
        let width = x.width as usize;
        let mut counts = vec![0usize; width + 1];
        for (&c, &v) in x.indices.iter().zip(&x.values) {
            if v != 0.0 {
                counts[c as usize + 1] += 1;
            }
        }
        for i in 0..width {
            counts[i + 1] += counts[i];
        }
        let col_ptr = counts.clone();
        let mut fill = counts;
        let mut col_entries = vec![(0u32, 0.0f64); col_ptr[width]];
        let mut row_ptr = vec![0usize];
        let mut row_cols = Vec::with_capacity(col_entries.len());
        for r in 0..x.n_rows() {
            let (idx, vals) = x.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                if v != 0.0 {
                    col_entries[fill[c as usize]] = (r as u32, v);
                    fill[c as usize] += 1;
                    row_cols.push(c);
                }
            }
            row_ptr.push(row_cols.len());
        }
        Self {
            width,
            col_ptr,
            col_entries,
            row_ptr,
            row_cols,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn column(&self, f: u32) -> &[(u32, f64)] {
        &self.col_entries[self.col_ptr[f as usize]..self.col_ptr[f as usize + 1]]
    }

    pub fn row_features(&self, r: u32) -> &[u32] {
        &self.row_cols[self.row_ptr[r as usize]..self.row_ptr[r as usize + 1]]
    }
}

/// Random stream for one tree, independent of how trees are scheduled.
fn tree_rng(seed: u64, tree: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

pub fn train_forest(x: &FeatureMatrix, cfg: &TrainConfig, fingerprint: [u8; 32]) -> Result<ForestModel, ForestError> {
    train_forest_with(x, cfg, fingerprint, Execution::default())
}

pub fn train_forest_with(
    x: &FeatureMatrix,
    cfg: &TrainConfig,
    fingerprint: [u8; 32],
    exec: Execution,
) -> Result<ForestModel, ForestError> {
    let labels = x.labels.as_ref().ok_or(ForestError::MissingLabels)?;
    if labels.len() != x.n_rows() {
        return Err(ForestError::LabelCount(labels.len(), x.n_rows()));
    }
    if x.n_rows() == 0 || x.width == 0 {
        return Err(ForestError::EmptyMatrix);
    }
    let y: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    if y.iter().all(|&v| v == y[0]) {
        return Err(ForestError::SingleClassTraining);
    }
    let cols = Columns::from_matrix(x);
    let n = x.n_rows();
    let max_features = cfg.max_features.resolve(x.width as usize);
    let n_trees = cfg.n_trees.max(1);

    let grown = exec.map_range(n_trees as usize, |t| {
        let mut rng = tree_rng(cfg.seed, t as u32);
        let mut weights = vec![0u32; n];
        if cfg.bootstrap {
            for _ in 0..n {
                weights[rng.gen_range(0..n)] += 1;
            }
        } else {
            weights.fill(1);
        }
        let samples: Vec<(u32, u32)> = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0)
            .map(|(r, &w)| (r as u32, w))
            .collect();
        tree::Grower::new(&cols, &y, cfg, max_features, rng).grow(samples)
    });

    let width = x.width as usize;
    let mut importances = vec![0.0; width];
    let mut trees = Vec::with_capacity(grown.len());
    for (t, imp) in grown {
        let s: f64 = imp.iter().sum();
        if s > 0.0 {
            for (acc, v) in importances.iter_mut().zip(&imp) {
                *acc += v / s;
            }
        }
        trees.push(t);
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        for v in &mut importances {
            *v /= total;
        }
    }
    Ok(ForestModel {
        config: cfg.clone(),
        width: x.width,
        vocab_fingerprint: fingerprint,
        importances,
        trees,
    })
}

impl ForestModel {
    /// Mean leaf malware fraction; label is malware when the score is at
    /// least one half. Columns at or beyond the trained width are ignored.
    pub fn predict(&self, indices: &[u32], values: &[f64]) -> (Label, f64) {
        let cut = indices.partition_point(|&i| i < self.width);
        let (indices, values) = (&indices[..cut], &values[..cut]);
        let score = if self.trees.is_empty() {
            0.0
        } else {
            self.trees.iter().map(|t| t.leaf_score(indices, values)).sum::<f64>() / self.trees.len() as f64
        };
        let label = if score >= 0.5 { Label::Malware } else { Label::Goodware };
        (label, score)
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix, exec: Execution) -> Vec<(Label, f64)> {
        exec.map_range(x.n_rows(), |r| {
            let (i, v) = x.row(r);
            self.predict(i, v)
        })
    }

    /// Column indices by importance, highest first; ties by index.
    pub fn rank_features(&self) -> Vec<u32> {
        let mut idx: Vec<u32> = (0..self.width).collect();
        idx.sort_by(|&a, &b| {
            self.importances[b as usize]
                .total_cmp(&self.importances[a as usize])
                .then(a.cmp(&b))
        });
        idx
    }

    pub fn n_splits(&self) -> usize {
        self.trees
            .iter()
            .flat_map(|t| &t.nodes)
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Family;
    use crate::vocab::Block;

    pub(crate) fn dense_matrix(rows: &[Vec<f64>], labels: &[Label]) -> FeatureMatrix {
        let width = rows.first().map_or(0, Vec::len) as u32;
        let mut indptr = vec![0u64];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for r in rows {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    indices.push(j as u32);
                    values.push(v);
                }
            }
            indptr.push(indices.len() as u64);
        }
        FeatureMatrix {
            row_ids: (0..rows.len()).map(|i| i.to_string()).collect(),
            blocks: vec![Block {
                family: Family::Opcodes,
                offset: 0,
                columns: (0..width).collect(),
            }],
            width,
            indptr,
            indices,
            values,
            labels: Some(labels.to_vec()),
        }
    }

    #[test]
    fn separable_one_feature() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 2) as f64]).collect();
        let y: Vec<Label> = (0..20).map(|i| if i % 2 == 1 { Label::Malware } else { Label::Goodware }).collect();
        let m = train_forest(&dense_matrix(&rows, &y), &TrainConfig::default(), [0; 32]).unwrap();
        for (r, &l) in rows.iter().zip(&y) {
            let (idx, vals): (Vec<u32>, Vec<f64>) = r.iter().enumerate().filter(|p| *p.1 != 0.0).map(|(i, &v)| (i as u32, v)).unzip();
            assert_eq!(m.predict(&idx, &vals).0, l);
        }
        assert!((m.importances.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_class_is_rejected() {
        let rows = vec![vec![1.0], vec![0.0]];
        let y = vec![Label::Malware; 2];
        assert_eq!(
            train_forest(&dense_matrix(&rows, &y), &TrainConfig::default(), [0; 32]),
            Err(ForestError::SingleClassTraining)
        );
    }

    #[test]
    fn signal_feature_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let label = i % 2;
            rows.push(vec![label as f64 * 2.0 + rng.gen_range(0.0..0.5), rng.gen_range(0.0..3.0)]);
            y.push(if label == 1 { Label::Malware } else { Label::Goodware });
        }
        let m = train_forest(&dense_matrix(&rows, &y), &TrainConfig { n_trees: 20, ..Default::default() }, [0; 32]).unwrap();
        assert!(m.importances[1] < m.importances[0]);
        assert_eq!(m.rank_features(), [0, 1]);
    }

    #[test]
    fn single_leaf_forest_scores_zero() {
        let m = ForestModel {
            config: TrainConfig::default(),
            width: 3,
            vocab_fingerprint: [0; 32],
            importances: vec![0.0; 3],
            trees: vec![Tree { nodes: vec![Node::Leaf { counts: [5, 0] }] }; 4],
        };
        assert_eq!(m.predict(&[0, 7], &[1.0, 2.0]), (Label::Goodware, 0.0));
        assert_eq!(m.rank_features(), [0, 1, 2]);
    }
}
