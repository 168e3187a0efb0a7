//! Family selection by dual thresholds and the robust detector pipeline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Family;
use crate::forest::{train_forest_with, ForestError, ForestModel, TrainConfig};
use crate::metrics::{eval_metrics, insensitivity, EvalMetrics, MetricsError, PairedCorpus};
use crate::par::Execution;
use crate::vocab::{assemble_matrix, FeatureMatrix, VectorStore, VocabError, Vocabulary};
use crate::Label;

pub const CANONICAL_THRESHOLDS: [f64; 3] = [0.8, 0.85, 0.9];
pub const DEFAULT_CAP: usize = 2000;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no metric for family {0}")]
    MissingFamilyMetric(Family),
    #[error("threshold eliminated every family")]
    NoFamilySelected,
    #[error("threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("app {0} has no label")]
    MissingLabel(String),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Families whose A_mean and insensitivity both reach their thresholds.
pub fn select_families_with(
    ameans: &BTreeMap<Family, f64>,
    insens: &BTreeMap<Family, f64>,
    amean_threshold: f64,
    insens_threshold: f64,
) -> Result<BTreeSet<Family>, SelectionError> {
    let mut out = BTreeSet::new();
    for &f in ameans.keys().chain(insens.keys()) {
        let a = *ameans.get(&f).ok_or(SelectionError::MissingFamilyMetric(f))?;
        let i = *insens.get(&f).ok_or(SelectionError::MissingFamilyMetric(f))?;
        if a >= amean_threshold && i >= insens_threshold {
            out.insert(f);
        }
    }
    Ok(out)
}

pub fn select_families(
    ameans: &BTreeMap<Family, f64>,
    insens: &BTreeMap<Family, f64>,
    threshold: f64,
) -> Result<BTreeSet<Family>, SelectionError> {
    select_families_with(ameans, insens, threshold, threshold)
}

/// Leading `min(cap, len)` entries of a ranking.
pub fn truncate_family(ranking: &[u32], cap: usize) -> Vec<u32> {
    ranking[..ranking.len().min(cap)].to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub threshold: f64,
    /// Overrides `threshold` for the insensitivity side when set.
    pub insensitivity_threshold: Option<f64>,
    pub per_family_cap: usize,
    pub train: TrainConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.85,
            insensitivity_threshold: None,
            per_family_cap: DEFAULT_CAP,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobustFeatureSet {
    pub families: BTreeSet<Family>,
    /// Vocabulary indices kept per chosen family, best first.
    pub kept: BTreeMap<Family, Vec<u32>>,
    pub width: usize,
}

impl RobustFeatureSet {
    pub fn family_order(&self) -> Vec<Family> {
        self.families.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySelection {
    pub family: Family,
    pub a_mean: f64,
    pub insensitivity: f64,
    pub selected: bool,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub dataset: String,
    #[serde(flatten)]
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub threshold: f64,
    pub families: Vec<FamilySelection>,
    pub final_width: usize,
    pub eval: Vec<EvalRow>,
}

impl SelectionReport {
    pub fn eval_of(&self, dataset: &str) -> Option<&EvalMetrics> {
        self.eval.iter().find(|r| r.dataset == dataset).map(|r| &r.metrics)
    }

    pub fn eval_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dataset", "tpr", "fpr", "a_mean"]).unwrap();
        for r in &self.eval {
            w.write_record([
                r.dataset.as_str(),
                &format!("{:.6}", r.metrics.tpr),
                &format!("{:.6}", r.metrics.fpr),
                &format!("{:.6}", r.metrics.a_mean),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Everything the detector pipeline reads.
pub struct DetectorInputs<'a> {
    pub store: &'a VectorStore,
    pub vocab: &'a Vocabulary,
    pub labels: &'a BTreeMap<String, Label>,
    pub train: &'a [String],
    pub clean_eval: &'a [String],
    /// Named obfuscated evaluation sets, reported in this order.
    pub obf_eval: &'a [(String, Vec<String>)],
    /// Clean/obfuscated pairs used for insensitivity.
    pub paired: &'a PairedCorpus,
}

#[derive(Debug, Clone)]
pub struct PerFamilyModel {
    pub family: Family,
    pub model: Option<ForestModel>,
    pub eval: Option<EvalMetrics>,
    /// Agreement per `(tool, technique)` cell.
    pub insensitivity: BTreeMap<(String, String), f64>,
    pub alt_insensitivity: BTreeMap<(String, String), f64>,
}

impl PerFamilyModel {
    /// Equal-weight mean over cells; 0 when there are none.
    pub fn mean_insensitivity(&self) -> f64 {
        if self.insensitivity.is_empty() {
            0.0
        } else {
            self.insensitivity.values().sum::<f64>() / self.insensitivity.len() as f64
        }
    }
}

fn labels_for(ids: &[String], labels: &BTreeMap<String, Label>) -> Result<Vec<Label>, SelectionError> {
    ids.iter()
        .map(|id| labels.get(id).copied().ok_or_else(|| SelectionError::MissingLabel(id.clone())))
        .collect()
}

fn matrix(
    inp: &DetectorInputs<'_>,
    ids: &[String],
    families: &[Family],
    filters: &BTreeMap<Family, Vec<u32>>,
    with_labels: bool,
) -> Result<FeatureMatrix, SelectionError> {
    let rows: Vec<&str> = ids.iter().map(String::as_str).collect();
    let labels = if with_labels { Some(labels_for(ids, inp.labels)?) } else { None };
    Ok(assemble_matrix(&rows, inp.store, inp.vocab, families, filters, labels)?)
}

fn predict_ids(
    model: &ForestModel,
    inp: &DetectorInputs<'_>,
    ids: &[String],
    families: &[Family],
    filters: &BTreeMap<Family, Vec<u32>>,
    exec: Execution,
) -> Result<Vec<Label>, SelectionError> {
    let x = matrix(inp, ids, families, filters, false)?;
    Ok(model.predict_matrix(&x, exec).into_iter().map(|p| p.0).collect())
}

/// Train on clean data with one family, evaluate on the clean eval set and
/// measure prediction agreement on every pair cell.
pub fn per_family_model(
    inp: &DetectorInputs<'_>,
    family: Family,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<PerFamilyModel, SelectionError> {
    let none = BTreeMap::new();
    let mut out = PerFamilyModel {
        family,
        model: None,
        eval: None,
        insensitivity: BTreeMap::new(),
        alt_insensitivity: BTreeMap::new(),
    };
    if inp.vocab.family(family).is_empty() {
        return Ok(out);
    }
    let x = matrix(inp, inp.train, &[family], &none, true)?;
    let model = train_forest_with(&x, cfg, inp.vocab.fingerprint(), exec)?;
    let truth = labels_for(inp.clean_eval, inp.labels)?;
    let preds = predict_ids(&model, inp, inp.clean_eval, &[family], &none, exec)?;
    out.eval = Some(eval_metrics(&preds, &truth)?);

    let mut cells: BTreeMap<(String, String), (Vec<String>, Vec<String>)> = BTreeMap::new();
    for p in inp.paired.resolvable(inp.store) {
        let c = cells.entry((p.tool.clone(), p.technique.clone())).or_default();
        c.0.push(p.clean.clone());
        c.1.push(p.obf.clone());
    }
    for (cell, (clean, obf)) in cells {
        let pc = predict_ids(&model, inp, &clean, &[family], &none, exec)?;
        let po = predict_ids(&model, inp, &obf, &[family], &none, exec)?;
        let ins = insensitivity(&pc, &po)?;
        out.insensitivity.insert(cell.clone(), ins.agreement);
        out.alt_insensitivity.insert(cell, ins.alt_jaccard);
    }
    out.model = Some(model);
    Ok(out)
}

pub struct Detector {
    pub model: ForestModel,
    pub features: RobustFeatureSet,
    pub report: SelectionReport,
    pub per_family: Vec<PerFamilyModel>,
}

pub fn build_detector(inp: &DetectorInputs<'_>, cfg: &SelectionConfig, exec: Execution) -> Result<Detector, SelectionError> {
    let insens_threshold = cfg.insensitivity_threshold.unwrap_or(cfg.threshold);
    for t in [cfg.threshold, insens_threshold] {
        if !(t > 0.0 && t <= 1.0) {
            if t > 1.0 {
                return Err(SelectionError::NoFamilySelected);
            }
            return Err(SelectionError::BadThreshold(t));
        }
    }
    let per_family = Family::ALL
        .iter()
        .map(|&f| per_family_model(inp, f, &cfg.train, exec))
        .collect::<Result<Vec<_>, _>>()?;
    let ameans: BTreeMap<Family, f64> = per_family
        .iter()
        .map(|p| (p.family, p.eval.map_or(0.0, |e| e.a_mean)))
        .collect();
    let insens: BTreeMap<Family, f64> = per_family.iter().map(|p| (p.family, p.mean_insensitivity())).collect();
    let chosen = select_families_with(&ameans, &insens, cfg.threshold, insens_threshold)?;
    if chosen.is_empty() {
        return Err(SelectionError::NoFamilySelected);
    }
    let mut kept = BTreeMap::new();
    for p in per_family.iter().filter(|p| chosen.contains(&p.family)) {
        let ranking = p.model.as_ref().map(ForestModel::rank_features).unwrap_or_default();
        kept.insert(p.family, truncate_family(&ranking, cfg.per_family_cap));
    }
    let width = kept.values().map(Vec::len).sum();
    let features = RobustFeatureSet {
        families: chosen.clone(),
        kept,
        width,
    };
    let order = features.family_order();
    let x = matrix(inp, inp.train, &order, &features.kept, true)?;
    let model = train_forest_with(&x, &cfg.train, inp.vocab.fingerprint(), exec)?;

    let mut eval = Vec::new();
    let mut eval_set = |name: &str, ids: &[String]| -> Result<(), SelectionError> {
        let truth = labels_for(ids, inp.labels)?;
        let preds = predict_ids(&model, inp, ids, &order, &features.kept, exec)?;
        eval.push(EvalRow {
            dataset: name.to_owned(),
            metrics: eval_metrics(&preds, &truth)?,
        });
        Ok(())
    };
    eval_set("clean", inp.clean_eval)?;
    for (name, ids) in inp.obf_eval {
        eval_set(name, ids)?;
    }

    let report = SelectionReport {
        threshold: cfg.threshold,
        families: per_family
            .iter()
            .map(|p| FamilySelection {
                family: p.family,
                a_mean: ameans[&p.family],
                insensitivity: insens[&p.family],
                selected: chosen.contains(&p.family),
                kept: features.kept.get(&p.family).map_or(0, Vec::len),
            })
            .collect(),
        final_width: width,
        eval,
    };
    Ok(Detector {
        model,
        features,
        report,
        per_family,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_are_monotone() {
        let a: BTreeMap<_, _> = [(Family::Permissions, 0.9), (Family::Strings, 0.8)].into();
        let i: BTreeMap<_, _> = [(Family::Permissions, 0.95), (Family::Strings, 0.99)].into();
        assert_eq!(select_families(&a, &i, 0.8).unwrap().len(), 2);
        assert_eq!(select_families(&a, &i, 0.85).unwrap().len(), 1);
        assert!(select_families(&a, &i, 0.95).unwrap().is_empty());
        let missing: BTreeMap<_, _> = [(Family::Permissions, 0.9)].into();
        assert!(matches!(
            select_families(&a, &missing, 0.8),
            Err(SelectionError::MissingFamilyMetric(Family::Strings))
        ));
    }

    #[test]
    fn truncation() {
        let r: Vec<u32> = (0..5000).rev().collect();
        assert_eq!(truncate_family(&r, 2000).len(), 2000);
        assert_eq!(truncate_family(&r, 2000)[0], 4999);
        assert_eq!(truncate_family(&(0..683).collect::<Vec<_>>(), 2000).len(), 683);
        assert!(truncate_family(&[], 2000).is_empty());
    }
}
