//! Corpus-level glue shared by the command line and the experiment tests:
//! bulk extraction, obfuscated variant generation and vectorization.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::apk::{open_apk, ApkError};
use crate::features::{extract_all, ExtractionContext, RawFeatureSet};
use crate::fixture::AppModel;
use crate::obfuscation::{apply, Intensity, ObfError, ObfSpec, Technique, ToolProfile, TransformLog};
use crate::par::Execution;
use crate::vocab::{vectorize, VectorStore, Vocabulary};

pub fn extract_bytes(bytes: &[u8], ctx: &ExtractionContext) -> Result<Vec<RawFeatureSet>, ApkError> {
    Ok(extract_all(&open_apk(bytes)?, ctx))
}

/// Extract every package; the first failure (in input order) wins.
pub fn extract_many(
    items: &[(String, Vec<u8>)],
    ctx: &ExtractionContext,
    exec: Execution,
) -> Result<Vec<(String, Vec<RawFeatureSet>)>, (String, ApkError)> {
    exec.map(items, |(id, bytes)| extract_bytes(bytes, ctx).map(|r| (id.clone(), r)).map_err(|e| (id.clone(), e)))
        .into_iter()
        .collect()
}

pub fn vectorize_all<'a>(raws: impl IntoIterator<Item = &'a (String, Vec<RawFeatureSet>)>, vocab: &Vocabulary) -> VectorStore {
    let mut store = VectorStore::new();
    for (id, raw) in raws {
        store.insert(vectorize(id, raw, vocab));
    }
    store
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObfuscationPlan {
    pub techniques: Vec<Technique>,
    pub profiles: Vec<ToolProfile>,
    pub seed: u64,
    pub intensity: Intensity,
}

impl ObfuscationPlan {
    /// Every technique with every built-in tool profile.
    pub fn full(seed: u64) -> Self {
        Self {
            techniques: Technique::ALL.to_vec(),
            profiles: ToolProfile::builtin_names()
                .iter()
                .map(|n| ToolProfile::builtin(n).expect("builtin"))
                .collect(),
            seed,
            intensity: Intensity::default(),
        }
    }

    /// Seed of one (app, tool, technique) run, independent of scheduling.
    pub fn variant_seed(&self, app_index: usize, tool: usize, technique: Technique) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((app_index as u64) << 16) | ((tool as u64) << 8) | technique as u64);
        rng.next_u64()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    pub app_id: String,
    pub clean_ref: String,
    pub tool: String,
    pub technique: Technique,
    pub model: AppModel,
    pub log: TransformLog,
}

pub fn variant_id(clean: &str, tool: &str, technique: Technique) -> String {
    format!("{clean}.{tool}.{}", technique.as_str())
}

/// All planned variants of each app, ordered by app, then tool, then
/// technique.
pub fn obfuscate_all(apps: &[(String, AppModel)], plan: &ObfuscationPlan, exec: Execution) -> Result<Vec<Variant>, ObfError> {
    plan.intensity.validate()?;
    let jobs: Vec<(usize, usize, Technique)> = (0..apps.len())
        .flat_map(|a| (0..plan.profiles.len()).flat_map(move |t| plan.techniques.iter().map(move |&k| (a, t, k))))
        .collect();
    exec.map(&jobs, |&(a, t, k)| {
        let (id, model) = &apps[a];
        let profile = &plan.profiles[t];
        let spec = ObfSpec {
            technique: k,
            profile: profile.clone(),
            seed: plan.variant_seed(a, t, k),
            intensity: plan.intensity,
        };
        let (out, mut log) = apply(model, &spec)?;
        log.app_id = variant_id(id, &profile.name, k);
        Ok(Variant {
            app_id: log.app_id.clone(),
            clean_ref: id.clone(),
            tool: profile.name.clone(),
            technique: k,
            model: out,
            log,
        })
    })
    .into_iter()
    .collect()
}
