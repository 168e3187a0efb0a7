//! Reading and writing the on-disk artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use droidlens::corpus::{holdout_split, CorpusManifest, LabelRule, Origin};
use droidlens::features::{RawFeatureSet, RawRecord};
use droidlens::forest::ForestModel;
use droidlens::metrics::PairedCorpus;
use droidlens::selection::RobustFeatureSet;
use droidlens::vocab::{FeatureVector, VectorStore, Vocabulary};
use droidlens::Label;

use crate::CliError;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|_| CliError::MissingInput(path.to_owned()))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|_| CliError::MissingInput(path.to_owned()))
}

pub fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_owned(), e))?;
    }
    fs::write(path, data).map_err(|e| CliError::Io(path.to_owned(), e))
}

pub fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| CliError::Format(format!("{}:{}: {e}", path.display(), n + 1))))
        .collect()
}

pub fn load_manifest(path: &Path, rule: &LabelRule) -> Result<CorpusManifest, CliError> {
    let m = CorpusManifest::from_json(&read_text(path)?).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    m.validate(rule).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    Ok(m)
}

/// Directory that relative record paths resolve against.
pub fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_owned).unwrap_or_default()
}

/// Raw feature sets grouped per app, in first-seen order.
pub fn load_features(path: &Path) -> Result<Vec<(String, Vec<RawFeatureSet>)>, CliError> {
    let mut out: Vec<(String, Vec<RawFeatureSet>)> = Vec::new();
    for r in parse_jsonl::<RawRecord>(path)? {
        match out.last_mut() {
            Some((id, sets)) if *id == r.app_id => sets.push(r.set),
            _ => out.push((r.app_id, vec![r.set])),
        }
    }
    Ok(out)
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Vocabulary::from_json(&read_text(path)?).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

pub fn load_vectors(path: &Path) -> Result<VectorStore, CliError> {
    let mut store = VectorStore::new();
    store.insert(parse_jsonl::<FeatureVector>(path)?);
    Ok(store)
}

pub fn load_model(path: &Path) -> Result<ForestModel, CliError> {
    let bytes = read_bytes(path)?;
    ForestModel::read_from(&mut bytes.as_slice()).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// Sidecar describing which columns a saved model was trained on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub vocab_fingerprint: String,
    pub features: RobustFeatureSet,
    pub n_train: usize,
}

pub fn load_meta(path: &Path) -> Result<ModelMeta, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

pub fn meta_path(model: &Path) -> PathBuf {
    model.with_extension("json")
}

/// Labels, splits and evaluation sets shared by the model commands.
pub struct Experiment {
    pub labels: BTreeMap<String, Label>,
    pub train: Vec<String>,
    pub clean_eval: Vec<String>,
    /// "obfuscated" first, then one set per technique.
    pub obf_eval: Vec<(String, Vec<String>)>,
    /// Pairs whose clean side is in the eval split.
    pub paired: PairedCorpus,
}

impl Experiment {
    pub fn new(manifest: &CorpusManifest, store: &VectorStore, eval_fraction: f64, seed: u64) -> Self {
        let labels = manifest.labels();
        let clean: Vec<(String, Label)> = manifest
            .records
            .iter()
            .filter(|r| r.origin == Origin::Clean && store.contains(&r.app_id))
            .filter_map(|r| Some((r.app_id.clone(), *labels.get(&r.app_id)?)))
            .collect();
        let (train, clean_eval) = holdout_split(&clean, eval_fraction, seed);
        let in_eval: std::collections::BTreeSet<&str> = clean_eval.iter().map(String::as_str).collect();
        let mut paired = manifest.paired();
        paired
            .pairs
            .retain(|p| in_eval.contains(p.clean.as_str()) && store.contains(&p.obf) && labels.contains_key(&p.obf));
        let mut by_technique: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in &paired.pairs {
            by_technique.entry(p.technique.clone()).or_default().push(p.obf.clone());
        }
        let mut obf_eval = Vec::new();
        if !paired.pairs.is_empty() {
            obf_eval.push(("obfuscated".to_owned(), paired.pairs.iter().map(|p| p.obf.clone()).collect()));
        }
        obf_eval.extend(by_technique);
        Self {
            labels,
            train,
            clean_eval,
            obf_eval,
            paired,
        }
    }
}
