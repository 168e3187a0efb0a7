//! Dataset manifests, the VTD labeling rule and split derivation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Pair, PairedCorpus};
use crate::Label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("record {0} has no vtd value")]
    MissingVtd(String),
    #[error("obfuscated record {app_id} refers to unknown clean app {clean_ref}")]
    DanglingCleanRef { app_id: String, clean_ref: String },
    #[error("obfuscated record {0} lacks tool, technique or clean_ref")]
    MissingObfuscationTags(String),
    #[error("duplicate app id {0}")]
    DuplicateAppId(String),
    #[error("record {0}: label disagrees with its vtd")]
    LabelMismatch(String),
    #[error("label rule needs malware_min_vtd > goodware_vtd")]
    BadRule,
    #[error("manifest: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelRule {
    pub malware_min_vtd: u32,
    pub goodware_vtd: u32,
}

impl Default for LabelRule {
    fn default() -> Self {
        Self {
            malware_min_vtd: 7,
            goodware_vtd: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordLabel {
    Goodware,
    Malware,
    Unlabeled,
}

impl From<Option<Label>> for RecordLabel {
    fn from(l: Option<Label>) -> Self {
        match l {
            Some(Label::Goodware) => RecordLabel::Goodware,
            Some(Label::Malware) => RecordLabel::Malware,
            None => RecordLabel::Unlabeled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Clean,
    Obfuscated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub app_id: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vtd: Option<u32>,
    pub label: RecordLabel,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub technique: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_ref: Option<String>,
}

impl CorpusRecord {
    pub fn clean(app_id: &str, path: &str, vtd: Option<u32>, label: RecordLabel) -> Self {
        Self {
            app_id: app_id.to_owned(),
            path: path.to_owned(),
            vtd,
            label,
            origin: Origin::Clean,
            tool: None,
            technique: None,
            clean_ref: None,
        }
    }
}

/// `vtd >= malware_min_vtd` is malware, `vtd == goodware_vtd` goodware,
/// anything between is excluded (`Ok(None)`).
pub fn label(record: &CorpusRecord, rule: &LabelRule) -> Result<Option<Label>, CorpusError> {
    if rule.malware_min_vtd <= rule.goodware_vtd {
        return Err(CorpusError::BadRule);
    }
    let vtd = record.vtd.ok_or_else(|| CorpusError::MissingVtd(record.app_id.clone()))?;
    Ok(label_vtd(vtd, rule))
}

pub fn label_vtd(vtd: u32, rule: &LabelRule) -> Option<Label> {
    if vtd >= rule.malware_min_vtd {
        Some(Label::Malware)
    } else if vtd == rule.goodware_vtd {
        Some(Label::Goodware)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub dataset: String,
    pub records: Vec<CorpusRecord>,
}

impl CorpusManifest {
    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let m: Self = serde_json::from_str(text).map_err(|e| CorpusError::Format(e.to_string()))?;
        m.validate(&LabelRule::default())?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Unique ids, complete obfuscation tags, resolvable clean refs and
    /// labels consistent with vtd values.
    pub fn validate(&self, rule: &LabelRule) -> Result<(), CorpusError> {
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if !ids.insert(r.app_id.as_str()) {
                return Err(CorpusError::DuplicateAppId(r.app_id.clone()));
            }
        }
        let clean: BTreeSet<&str> = self
            .records
            .iter()
            .filter(|r| r.origin == Origin::Clean)
            .map(|r| r.app_id.as_str())
            .collect();
        for r in &self.records {
            if r.origin == Origin::Obfuscated {
                let (Some(_), Some(_), Some(c)) = (&r.tool, &r.technique, &r.clean_ref) else {
                    return Err(CorpusError::MissingObfuscationTags(r.app_id.clone()));
                };
                if !clean.contains(c.as_str()) {
                    return Err(CorpusError::DanglingCleanRef {
                        app_id: r.app_id.clone(),
                        clean_ref: c.clone(),
                    });
                }
            }
            if let Some(v) = r.vtd {
                if RecordLabel::from(label_vtd(v, rule)) != r.label {
                    return Err(CorpusError::LabelMismatch(r.app_id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, app_id: &str) -> Option<&CorpusRecord> {
        self.records.iter().find(|r| r.app_id == app_id)
    }

    /// Labels of every labeled record; obfuscated records inherit the label of
    /// their clean counterpart.
    pub fn labels(&self) -> BTreeMap<String, Label> {
        let own = |r: &CorpusRecord| match r.label {
            RecordLabel::Goodware => Some(Label::Goodware),
            RecordLabel::Malware => Some(Label::Malware),
            RecordLabel::Unlabeled => None,
        };
        let mut out: BTreeMap<String, Label> = self
            .records
            .iter()
            .filter(|r| r.origin == Origin::Clean)
            .filter_map(|r| Some((r.app_id.clone(), own(r)?)))
            .collect();
        for r in self.records.iter().filter(|r| r.origin == Origin::Obfuscated) {
            let l = own(r).or_else(|| r.clean_ref.as_ref().and_then(|c| out.get(c).copied()));
            if let Some(l) = l {
                out.insert(r.app_id.clone(), l);
            }
        }
        out
    }

    pub fn clean_ids(&self) -> Vec<String> {
        self.records
            .iter()
            .filter(|r| r.origin == Origin::Clean)
            .map(|r| r.app_id.clone())
            .collect()
    }

    pub fn paired(&self) -> PairedCorpus {
        PairedCorpus {
            pairs: self
                .records
                .iter()
                .filter(|r| r.origin == Origin::Obfuscated)
                .filter_map(|r| {
                    Some(Pair {
                        clean: r.clean_ref.clone()?,
                        obf: r.app_id.clone(),
                        tool: r.tool.clone()?,
                        technique: r.technique.clone()?,
                    })
                })
                .collect(),
        }
    }

    /// Obfuscated app ids grouped by technique tag.
    pub fn by_technique(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.origin == Origin::Obfuscated) {
            if let Some(t) = &r.technique {
                out.entry(t.clone()).or_default().push(r.app_id.clone());
            }
        }
        out
    }
}

/// Whether obfuscating one app with one tool and technique succeeded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessFlag {
    pub app_id: String,
    pub tool: String,
    pub technique: String,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DerivedSplits {
    /// Clean apps that are not in `clean_succ_obf`.
    pub non_obf: Vec<String>,
    /// Clean apps for which every tool succeeded on at least one technique.
    pub clean_succ_obf: Vec<String>,
}

/// Split clean apps by per-(app, tool, technique) success flags. `tools` is
/// the full tool set; an app with no flags for some tool is not successful
/// for it.
pub fn derive_splits(clean: &[String], flags: &[SuccessFlag], tools: &BTreeSet<String>) -> DerivedSplits {
    let mut ok: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for f in flags.iter().filter(|f| f.success) {
        ok.entry(f.app_id.as_str()).or_default().insert(f.tool.as_str());
    }
    let mut out = DerivedSplits::default();
    for id in clean {
        let all = !tools.is_empty() && ok.get(id.as_str()).is_some_and(|t| tools.iter().all(|x| t.contains(x.as_str())));
        if all {
            out.clean_succ_obf.push(id.clone());
        } else {
            out.non_obf.push(id.clone());
        }
    }
    out
}

/// Seeded stratified split of labeled ids into `(train, eval)`. Each class
/// sends `round(len * eval_fraction)` of its ids to eval; both halves keep
/// input order.
pub fn holdout_split(ids: &[(String, Label)], eval_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut to_eval = BTreeSet::new();
    for class in [Label::Goodware, Label::Malware] {
        let mut members: Vec<usize> = (0..ids.len()).filter(|&i| ids[i].1 == class).collect();
        members.shuffle(&mut rng);
        let k = (members.len() as f64 * eval_fraction.clamp(0.0, 1.0)).round() as usize;
        to_eval.extend(members.into_iter().take(k));
    }
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (i, (id, _)) in ids.iter().enumerate() {
        if to_eval.contains(&i) {
            eval.push(id.clone());
        } else {
            train.push(id.clone());
        }
    }
    (train, eval)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, vtd: Option<u32>) -> CorpusRecord {
        CorpusRecord::clean(id, &format!("{id}.apk"), vtd, RecordLabel::from(vtd.and_then(|v| label_vtd(v, &LabelRule::default()))))
    }

    #[test]
    fn vtd_rule() {
        let r = LabelRule::default();
        assert_eq!(label(&rec("a", Some(7)), &r), Ok(Some(Label::Malware)));
        assert_eq!(label(&rec("a", Some(0)), &r), Ok(Some(Label::Goodware)));
        assert_eq!(label(&rec("a", Some(3)), &r), Ok(None));
        assert_eq!(label(&rec("a", None), &r), Err(CorpusError::MissingVtd("a".into())));
        let bad = LabelRule { malware_min_vtd: 0, goodware_vtd: 0 };
        assert_eq!(label(&rec("a", Some(1)), &bad), Err(CorpusError::BadRule));
    }

    #[test]
    fn dangling_clean_ref_is_rejected() {
        let mut m = CorpusManifest {
            dataset: "t".into(),
            records: vec![rec("a", Some(0))],
        };
        m.records.push(CorpusRecord {
            app_id: "a.obf".into(),
            path: "a.obf.apk".into(),
            vtd: None,
            label: RecordLabel::Unlabeled,
            origin: Origin::Obfuscated,
            tool: Some("tool-a".into()),
            technique: Some("renaming".into()),
            clean_ref: Some("zzz".into()),
        });
        assert!(matches!(CorpusManifest::from_json(&m.to_json()), Err(CorpusError::DanglingCleanRef { .. })));
        m.records[1].clean_ref = Some("a".into());
        let back = CorpusManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back.labels().get("a.obf"), Some(&Label::Goodware));
        assert_eq!(back.paired().pairs.len(), 1);
    }

    #[test]
    fn splits_need_every_tool() {
        let clean: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let tools: BTreeSet<String> = ["t1", "t2"].map(String::from).into();
        let f = |a: &str, t: &str, tech: &str, s| SuccessFlag {
            app_id: a.into(),
            tool: t.into(),
            technique: tech.into(),
            success: s,
        };
        let flags = vec![
            f("a", "t1", "x", true),
            f("a", "t2", "y", true),
            f("b", "t1", "x", true),
            f("b", "t2", "x", false),
        ];
        let s = derive_splits(&clean, &flags, &tools);
        assert_eq!(s.clean_succ_obf, ["a"]);
        assert_eq!(s.non_obf, ["b", "c"]);
    }

    #[test]
    fn holdout_is_stratified_and_seeded() {
        let ids: Vec<(String, Label)> = (0..20)
            .map(|i| (format!("a{i}"), if i % 4 == 0 { Label::Malware } else { Label::Goodware }))
            .collect();
        let (train, eval) = holdout_split(&ids, 0.4, 9);
        assert_eq!((train.len(), eval.len()), (12, 8));
        let malware_in_eval = eval.iter().filter(|e| ids.iter().any(|(i, l)| i == *e && *l == Label::Malware)).count();
        assert_eq!(malware_in_eval, 2);
        assert_eq!(holdout_split(&ids, 0.4, 9), (train.clone(), eval.clone()));
        assert_ne!(holdout_split(&ids, 0.4, 10).1, eval);
    }
}
