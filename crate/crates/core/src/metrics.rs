//! Robustness and classification metrics over clean/obfuscated pairs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Family;
use crate::vocab::{FeatureVector, VectorStore, Vocabulary};
use crate::Label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("vectors belong to different families")]
    FamilyMismatch,
    #[error("labels contain a single class")]
    SingleClassLabels,
    #[error("prediction lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no pairs to compare")]
    Empty,
}

/// Exact-match ratio over the union of active positions of two sorted
/// sparse vectors; 1 when neither has an active position.
pub fn persistence_entries(a: &[(u32, u64)], b: &[(u32, u64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut union, mut matches) = (0usize, 0usize);
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x.0 == y.0 => {
                union += 1;
                if x.1 == y.1 {
                    matches += 1;
                }
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x.0 < y.0 => {
                union += 1;
                i += 1;
            }
            (Some(_), None) => {
                union += 1;
                i += 1;
            }
            _ => {
                union += 1;
                j += 1;
            }
        }
    }
    if union == 0 {
        1.0
    } else {
        matches as f64 / union as f64
    }
}

pub fn persistence(clean: &FeatureVector, obf: &FeatureVector) -> Result<f64, MetricsError> {
    if clean.family != obf.family || clean.kind != obf.kind {
        return Err(MetricsError::FamilyMismatch);
    }
    Ok(persistence_entries(&clean.entries, &obf.entries))
}

/// Same ratio as persistence, between two obfuscated versions of one app.
pub fn tool_overlap(a: &FeatureVector, b: &FeatureVector) -> Result<f64, MetricsError> {
    persistence(a, b)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub clean: String,
    pub obf: String,
    pub tool: String,
    pub technique: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedCorpus {
    pub pairs: Vec<Pair>,
}

impl PairedCorpus {
    pub fn tools(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|p| p.tool.as_str()).collect()
    }

    pub fn techniques(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|p| p.technique.as_str()).collect()
    }

    /// Pairs whose both sides have vectors in `store`.
    pub fn resolvable<'a>(&'a self, store: &'a VectorStore) -> impl Iterator<Item = &'a Pair> + 'a {
        self.pairs
            .iter()
            .filter(move |p| store.contains(&p.clean) && store.contains(&p.obf))
    }
}

pub type Cell = (String, String);

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean persistence per `(tool, technique)`; cells without pairs are absent.
pub fn family_persistence(paired: &PairedCorpus, store: &VectorStore, family: Family) -> BTreeMap<Cell, f64> {
    let mut acc: BTreeMap<Cell, Vec<f64>> = BTreeMap::new();
    for p in paired.resolvable(store) {
        let (Some(c), Some(o)) = (store.get(&p.clean, family), store.get(&p.obf, family)) else {
            continue;
        };
        acc.entry((p.tool.clone(), p.technique.clone()))
            .or_default()
            .push(persistence_entries(&c.entries, &o.entries));
    }
    acc.into_iter().map(|(k, v)| (k, mean(&v))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub feature: String,
    pub score: f64,
}

/// Per technique, the `k` frequency features with the largest mean absolute
/// change, averaged over tools with equal weight.
pub fn discrepancy_topk(
    paired: &PairedCorpus,
    store: &VectorStore,
    vocab: &Vocabulary,
    families: &[Family],
    k: usize,
) -> BTreeMap<String, Vec<Discrepancy>> {
    // technique -> tool -> (pair count, feature -> summed |delta|)
    type ToolAcc = (usize, BTreeMap<(Family, u32), f64>);
    let mut acc: BTreeMap<&str, BTreeMap<&str, ToolAcc>> = BTreeMap::new();
    for p in paired.resolvable(store) {
        let slot = acc
            .entry(p.technique.as_str())
            .or_default()
            .entry(p.tool.as_str())
            .or_insert_with(|| (0, BTreeMap::new()));
        slot.0 += 1;
        for &family in families {
            let (Some(c), Some(o)) = (store.get(&p.clean, family), store.get(&p.obf, family)) else {
                continue;
            };
            let idx: BTreeSet<u32> = c.entries.iter().chain(&o.entries).map(|e| e.0).collect();
            for i in idx {
                let d = c.get(i).abs_diff(o.get(i)) as f64;
                *slot.1.entry((family, i)).or_insert(0.0) += d;
            }
        }
    }
    let mut out = BTreeMap::new();
    for (technique, tools) in acc {
        let n_tools = tools.len() as f64;
        let mut scores: BTreeMap<(Family, u32), f64> = BTreeMap::new();
        for (n_pairs, sums) in tools.values() {
            for (&key, &s) in sums {
                *scores.entry(key).or_insert(0.0) += s / *n_pairs as f64 / n_tools;
            }
        }
        let mut ranked: Vec<Discrepancy> = scores
            .into_iter()
            .map(|((f, i), score)| Discrepancy {
                feature: vocab.family(f).name(i).unwrap_or("?").to_owned(),
                score,
            })
            .collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.feature.cmp(&b.feature)));
        ranked.truncate(k);
        out.insert(technique.to_owned(), ranked);
    }
    out
}

/// `(technique, tool_a, tool_b)` with `tool_a < tool_b`.
pub type OverlapCell = (String, String, String);

/// Mean overlap for every pair of tools that obfuscated the same clean app
/// with the same technique.
pub fn aggregate_tool_overlap(
    paired: &PairedCorpus,
    store: &VectorStore,
    family: Family,
) -> BTreeMap<OverlapCell, f64> {
    let mut by_origin: BTreeMap<(&str, &str), Vec<&Pair>> = BTreeMap::new();
    for p in paired.resolvable(store) {
        by_origin.entry((p.clean.as_str(), p.technique.as_str())).or_default().push(p);
    }
    let mut acc: BTreeMap<OverlapCell, Vec<f64>> = BTreeMap::new();
    for ((_, technique), group) in by_origin {
        for (x, a) in group.iter().enumerate() {
            for b in &group[x + 1..] {
                if a.tool == b.tool {
                    continue;
                }
                let (a, b) = if a.tool < b.tool { (a, b) } else { (b, a) };
                let (Some(va), Some(vb)) = (store.get(&a.obf, family), store.get(&b.obf, family)) else {
                    continue;
                };
                acc.entry((technique.to_owned(), a.tool.clone(), b.tool.clone()))
                    .or_default()
                    .push(persistence_entries(&va.entries, &vb.entries));
            }
        }
    }
    acc.into_iter().map(|(k, v)| (k, mean(&v))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub tpr: f64,
    pub fpr: f64,
    pub a_mean: f64,
}

impl EvalMetrics {
    pub fn from_rates(tpr: f64, fpr: f64) -> Self {
        Self {
            tpr,
            fpr,
            a_mean: (tpr + (1.0 - fpr)) / 2.0,
        }
    }
}

pub fn eval_metrics(predictions: &[Label], truth: &[Label]) -> Result<EvalMetrics, MetricsError> {
    if predictions.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), truth.len()));
    }
    let (mut tp, mut fn_, mut fp, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(truth) {
        match (t, p) {
            (Label::Malware, Label::Malware) => tp += 1,
            (Label::Malware, Label::Goodware) => fn_ += 1,
            (Label::Goodware, Label::Malware) => fp += 1,
            (Label::Goodware, Label::Goodware) => tn += 1,
        }
    }
    if tp + fn_ == 0 || fp + tn == 0 {
        return Err(MetricsError::SingleClassLabels);
    }
    Ok(EvalMetrics::from_rates(
        tp as f64 / (tp + fn_) as f64,
        fp as f64 / (fp + tn) as f64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Insensitivity {
    /// Fraction of pairs whose two predictions agree.
    pub agreement: f64,
    /// Jaccard index of the malware-predicted pair sets (reported as "alt").
    pub alt_jaccard: f64,
}

pub fn insensitivity(preds_clean: &[Label], preds_obf: &[Label]) -> Result<Insensitivity, MetricsError> {
    if preds_clean.len() != preds_obf.len() {
        return Err(MetricsError::LengthMismatch(preds_clean.len(), preds_obf.len()));
    }
    if preds_clean.is_empty() {
        return Err(MetricsError::Empty);
    }
    let agree = preds_clean.iter().zip(preds_obf).filter(|(a, b)| a == b).count();
    let both = preds_clean
        .iter()
        .zip(preds_obf)
        .filter(|&(&a, &b)| a == Label::Malware && b == Label::Malware)
        .count();
    let either = preds_clean
        .iter()
        .zip(preds_obf)
        .filter(|&(&a, &b)| a == Label::Malware || b == Label::Malware)
        .count();
    Ok(Insensitivity {
        agreement: agree as f64 / preds_clean.len() as f64,
        alt_jaccard: if either == 0 { 1.0 } else { both as f64 / either as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellValue {
    pub family: Family,
    pub tool: String,
    pub technique: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapValue {
    pub family: Family,
    pub technique: String,
    pub tool_a: String,
    pub tool_b: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsensitivityValue {
    pub family: Family,
    pub tool: String,
    pub technique: String,
    pub agreement: f64,
    pub alt_jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyEval {
    pub family: Family,
    #[serde(flatten)]
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub persistence: Vec<CellValue>,
    pub discrepancy_topk: BTreeMap<String, Vec<Discrepancy>>,
    pub tool_overlap: Vec<OverlapValue>,
    pub insensitivity: Vec<InsensitivityValue>,
    pub eval: Vec<FamilyEval>,
}

/// Frequency-valued families, the ones discrepancy ranking applies to.
pub const FREQUENCY_FAMILIES: [Family; 4] = [Family::Components, Family::Opcodes, Family::FileRelated, Family::AdHoc];

impl RobustnessReport {
    /// Persistence, discrepancy and overlap for every family.
    pub fn from_pairs(paired: &PairedCorpus, store: &VectorStore, vocab: &Vocabulary, k: usize) -> Self {
        let mut r = RobustnessReport::default();
        for family in Family::ALL {
            for ((tool, technique), value) in family_persistence(paired, store, family) {
                r.persistence.push(CellValue {
                    family,
                    tool,
                    technique,
                    value,
                });
            }
            for ((technique, tool_a, tool_b), value) in aggregate_tool_overlap(paired, store, family) {
                r.tool_overlap.push(OverlapValue {
                    family,
                    technique,
                    tool_a,
                    tool_b,
                    value,
                });
            }
        }
        r.discrepancy_topk = discrepancy_topk(paired, store, vocab, &FREQUENCY_FAMILIES, k);
        r
    }

    pub fn persistence_of(&self, family: Family, tool: &str, technique: &str) -> Option<f64> {
        self.persistence
            .iter()
            .find(|c| c.family == family && c.tool == tool && c.technique == technique)
            .map(|c| c.value)
    }

    pub fn persistence_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["family", "tool", "technique", "persistence"]).unwrap();
        for c in &self.persistence {
            w.write_record([c.family.as_str(), &c.tool, &c.technique, &format!("{:.6}", c.value)])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn overlap_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["family", "technique", "tool_a", "tool_b", "overlap"]).unwrap();
        for c in &self.tool_overlap {
            w.write_record([
                c.family.as_str(),
                &c.technique,
                &c.tool_a,
                &c.tool_b,
                &format!("{:.6}", c.value),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn discrepancy_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["technique", "rank", "feature", "score"]).unwrap();
        for (technique, list) in &self.discrepancy_topk {
            for (rank, d) in list.iter().enumerate() {
                w.write_record([technique, &(rank + 1).to_string(), &d.feature, &format!("{:.6}", d.score)])
                    .unwrap();
            }
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn insensitivity_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["family", "tool", "technique", "agreement", "alt_jaccard"]).unwrap();
        for c in &self.insensitivity {
            w.write_record([
                c.family.as_str(),
                &c.tool,
                &c.technique,
                &format!("{:.6}", c.agreement),
                &format!("{:.6}", c.alt_jaccard),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn eval_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["family", "tpr", "fpr", "a_mean"]).unwrap();
        for e in &self.eval {
            w.write_record([
                e.family.as_str(),
                &format!("{:.6}", e.metrics.tpr),
                &format!("{:.6}", e.metrics.fpr),
                &format!("{:.6}", e.metrics.a_mean),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Persistence/insensitivity points for one family, one per cell present in
/// both tables.
pub fn persistence_insensitivity_points(report: &RobustnessReport, family: Family) -> Vec<(f64, f64)> {
    report
        .insensitivity
        .iter()
        .filter(|i| i.family == family)
        .filter_map(|i| {
            report
                .persistence_of(family, &i.tool, &i.technique)
                .map(|p| (p.clamp(0.0, 1.0), i.agreement.clamp(0.0, 1.0)))
        })
        .collect()
}
