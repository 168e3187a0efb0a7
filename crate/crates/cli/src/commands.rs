use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use droidlens::corpus::{derive_splits, CorpusManifest, CorpusRecord, Origin, RecordLabel, SuccessFlag};
use droidlens::features::{Family, RawRecord};
use droidlens::fixture::AppModel;
use droidlens::forest::train_forest_with;
use droidlens::metrics::{EvalMetrics, FamilyEval, InsensitivityValue, RobustnessReport};
use droidlens::obfuscation::Technique;
use droidlens::par::Execution;
use droidlens::pipeline::{extract_many, obfuscate_all, vectorize_all, ObfuscationPlan};
use droidlens::selection::{build_detector, per_family_model, DetectorInputs, RobustFeatureSet};
use droidlens::synth::{generate_corpus, Recipe};
use droidlens::vocab::{assemble_matrix, build_vocabulary, VectorStore, Vocabulary};
use droidlens::Label;

use crate::config::Config;
use crate::data::{self, Experiment, ModelMeta};
use crate::CliError;

/// Settings every command sees.
pub struct Run {
    pub cfg: Config,
    pub seed: u64,
    pub out: PathBuf,
    pub exec: Execution,
}

impl Run {
    fn out(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// An explicit input path, or the conventional file inside `--out`.
    fn input(&self, given: &Option<PathBuf>, name: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out(name))
    }
}

pub fn gen(run: &Run, n_apps: Option<usize>, recipe: Option<&str>) -> Result<(), CliError> {
    let n = n_apps.unwrap_or(run.cfg.gen.n_apps);
    if n < 2 {
        return Err(CliError::Config("a corpus needs at least 2 apps".into()));
    }
    let recipe: Recipe = recipe
        .unwrap_or(&run.cfg.gen.recipe)
        .parse()
        .map_err(|e| CliError::Config(format!("recipe: {e}")))?;
    info!("generating {n} apps (seed {})", run.seed);
    let corpus = generate_corpus(n, &recipe, run.seed, run.exec);
    let bytes = run.exec.map(&corpus.apps, |a| a.model.to_apk());
    for (app, b) in corpus.apps.iter().zip(bytes) {
        let b = b.map_err(|e| CliError::Analysis(format!("{}: {e}", app.app_id)))?;
        data::write(&run.out(&format!("apks/{}.apk", app.app_id)), b)?;
    }
    let manifest = corpus.manifest(&run.cfg.gen.dataset, "apks");
    data::write(&run.out("manifest.json"), manifest.to_json() + "\n")?;
    info!("wrote {} packages and manifest.json", n);
    Ok(())
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

pub fn obfuscate(
    run: &Run,
    manifest: &Option<PathBuf>,
    techniques: &Option<Vec<String>>,
    tools: &Option<Vec<String>>,
    failure_rate: Option<f64>,
) -> Result<(), CliError> {
    let manifest_path = run.input(manifest, "manifest.json");
    let m = data::load_manifest(&manifest_path, &run.cfg.labels)?;
    let base = data::base_dir(&manifest_path);
    let techniques: Vec<Technique> = techniques
        .clone()
        .or_else(|| run.cfg.obfuscate.techniques.clone())
        .map(|v| v.iter().map(|t| t.parse().map_err(|e| CliError::Config(format!("{e}")))).collect())
        .transpose()?
        .unwrap_or_else(|| Technique::ALL.to_vec());
    let tool_names: Vec<String> = tools
        .clone()
        .or_else(|| run.cfg.obfuscate.tools.clone())
        .unwrap_or_else(|| ["tool-a", "tool-b", "tool-c"].map(String::from).to_vec());
    let profiles = tool_names
        .iter()
        .map(|n| run.cfg.profile(n).ok_or_else(|| CliError::Config(format!("unknown tool profile `{n}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let failure_rate = failure_rate.unwrap_or(run.cfg.obfuscate.failure_rate);
    if !(0.0..=1.0).contains(&failure_rate) {
        return Err(CliError::Config(format!("failure rate {failure_rate} outside [0, 1]")));
    }

    let clean: Vec<&CorpusRecord> = m.records.iter().filter(|r| r.origin == Origin::Clean).collect();
    let dropped = m.records.len() - clean.len();
    if dropped > 0 {
        warn!("ignoring {dropped} obfuscated records of the input manifest");
    }
    let paths: Vec<PathBuf> = clean.iter().map(|r| base.join(&r.path)).collect();
    if let Some(p) = paths.iter().find(|p| !p.is_file()) {
        return Err(CliError::MissingInput(p.clone()));
    }
    let loaded = run.exec.map(&paths, |p| {
        let bytes = data::read_bytes(p)?;
        let model = AppModel::from_apk(&bytes).map_err(|e| CliError::Package(p.display().to_string(), e.to_string()))?;
        Ok::<_, CliError>((bytes, model))
    });
    let mut apps = Vec::with_capacity(clean.len());
    let mut clean_bytes = Vec::with_capacity(clean.len());
    for (r, l) in clean.iter().zip(loaded) {
        let (b, model) = l?;
        apps.push((r.app_id.clone(), model));
        clean_bytes.push(b);
    }

    let plan = ObfuscationPlan {
        techniques,
        profiles,
        seed: run.seed,
        intensity: run.cfg.obfuscate.intensity,
    };
    info!(
        "obfuscating {} apps with {} tools x {} techniques",
        apps.len(),
        plan.profiles.len(),
        plan.techniques.len()
    );
    let variants = obfuscate_all(&apps, &plan, run.exec).map_err(|e| CliError::Obfuscation(e.to_string()))?;

    let in_place = same_dir(&base, &run.out) || (base.as_os_str().is_empty() && same_dir(Path::new("."), &run.out));
    let mut out = CorpusManifest {
        dataset: m.dataset.clone(),
        records: Vec::new(),
    };
    for (r, b) in clean.iter().zip(&clean_bytes) {
        let mut rec = (*r).clone();
        if !in_place {
            rec.path = format!("apks/{}.apk", r.app_id);
            data::write(&run.out(&rec.path), b)?;
        }
        out.records.push(rec);
    }
    let labels: BTreeMap<&str, RecordLabel> = clean.iter().map(|r| (r.app_id.as_str(), r.label)).collect();
    let mut flags = Vec::with_capacity(variants.len());
    let mut logs = Vec::new();
    let serialized = run.exec.map(&variants, |v| v.model.to_apk());
    for (v, bytes) in variants.iter().zip(serialized) {
        // simulated tool failure, seeded per variant
        let mut rng = ChaCha8Rng::seed_from_u64(v.log.seed);
        rng.set_stream(u64::MAX);
        let failed = failure_rate > 0.0 && rng.gen_bool(failure_rate);
        flags.push(SuccessFlag {
            app_id: v.clean_ref.clone(),
            tool: v.tool.clone(),
            technique: v.technique.as_str().to_owned(),
            success: !failed,
        });
        if failed {
            continue;
        }
        let bytes = bytes.map_err(|e| CliError::Obfuscation(format!("{}: {e}", v.app_id)))?;
        let path = format!("apks/{}.apk", v.app_id);
        data::write(&run.out(&path), bytes)?;
        out.records.push(CorpusRecord {
            app_id: v.app_id.clone(),
            path,
            vtd: None,
            label: labels[v.clean_ref.as_str()],
            origin: Origin::Obfuscated,
            tool: Some(v.tool.clone()),
            technique: Some(v.technique.as_str().to_owned()),
            clean_ref: Some(v.clean_ref.clone()),
        });
        logs.push(&v.log);
    }
    data::write(&run.out("transform_log.jsonl"), data::jsonl(logs))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for f in &flags {
        w.serialize(f).expect("in-memory csv");
    }
    data::write(&run.out("flags.csv"), w.into_inner().expect("in-memory csv"))?;
    data::write(&run.out("manifest.json"), out.to_json() + "\n")?;
    let ok = flags.iter().filter(|f| f.success).count();
    info!("{ok} of {} variants written", flags.len());
    Ok(())
}

pub fn split(run: &Run, manifest: &Option<PathBuf>, flags: &Option<PathBuf>) -> Result<(), CliError> {
    let manifest_path = run.input(manifest, "manifest.json");
    let flags_path = run.input(flags, "flags.csv");
    let m = data::load_manifest(&manifest_path, &run.cfg.labels)?;
    let text = data::read_text(&flags_path)?;
    let flags: Vec<SuccessFlag> = csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Format(format!("{}: {e}", flags_path.display())))?;
    let tools: BTreeSet<String> = flags.iter().map(|f| f.tool.clone()).collect();
    let splits = derive_splits(&m.clean_ids(), &flags, &tools);
    info!(
        "{} apps obfuscated by every tool, {} not",
        splits.clean_succ_obf.len(),
        splits.non_obf.len()
    );
    data::write(&run.out("splits.json"), data::json(&splits))
}

pub fn extract(run: &Run, manifest: &Option<PathBuf>) -> Result<(), CliError> {
    let manifest_path = run.input(manifest, "manifest.json");
    let m = data::load_manifest(&manifest_path, &run.cfg.labels)?;
    let base = data::base_dir(&manifest_path);
    let ctx = run.cfg.extraction_context()?;
    // every input must exist before any work starts
    let paths: Vec<PathBuf> = m.records.iter().map(|r| base.join(&r.path)).collect();
    if let Some(p) = paths.iter().find(|p| !p.is_file()) {
        return Err(CliError::MissingInput(p.clone()));
    }
    let items: Vec<(String, Vec<u8>)> = m
        .records
        .iter()
        .zip(&paths)
        .map(|(r, p)| Ok((r.app_id.clone(), data::read_bytes(p)?)))
        .collect::<Result<_, CliError>>()?;
    info!("extracting {} packages", items.len());
    let raws = extract_many(&items, &ctx, run.exec).map_err(|(id, e)| CliError::Package(id, e.to_string()))?;
    let records = raws.into_iter().flat_map(|(id, sets)| {
        sets.into_iter().map(move |set| RawRecord {
            app_id: id.clone(),
            set,
        })
    });
    data::write(&run.out("features.jsonl"), data::jsonl(records))
}

pub fn vocab(run: &Run, features: &Option<PathBuf>, manifest: &Option<PathBuf>) -> Result<(), CliError> {
    let m = data::load_manifest(&run.input(manifest, "manifest.json"), &run.cfg.labels)?;
    let raws = data::load_features(&run.input(features, "features.jsonl"))?;
    let clean: BTreeSet<String> = m.clean_ids().into_iter().collect();
    let corpus = raws.iter().filter(|(id, _)| clean.contains(id)).map(|(_, s)| s.as_slice());
    let v = build_vocabulary(corpus, &m.dataset, run.cfg.vocab.min_string_prevalence)
        .map_err(|e| CliError::Analysis(e.to_string()))?;
    info!("vocabulary over {} clean apps, {} names", v.n_apps, v.families.iter().map(|f| f.len()).sum::<usize>());
    data::write(&run.out("vocab.json"), v.to_json() + "\n")
}

fn row_labels(ids: &[&str], labels: &BTreeMap<String, Label>) -> Option<Vec<Label>> {
    ids.iter().map(|id| labels.get(*id).copied()).collect()
}

pub fn vectorize(run: &Run, features: &Option<PathBuf>, vocab: &Option<PathBuf>, manifest: &Option<PathBuf>) -> Result<(), CliError> {
    let v = data::load_vocab(&run.input(vocab, "vocab.json"))?;
    let m = data::load_manifest(&run.input(manifest, "manifest.json"), &run.cfg.labels)?;
    let raws = data::load_features(&run.input(features, "features.jsonl"))?;
    let store = vectorize_all(&raws, &v);
    let ids: Vec<&str> = raws.iter().map(|r| r.0.as_str()).collect();
    let vectors = ids.iter().flat_map(|id| Family::ALL.iter().filter_map(|&f| store.get(id, f)));
    data::write(&run.out("vectors.jsonl"), data::jsonl(vectors))?;
    let x = assemble_matrix(&ids, &store, &v, &Family::ALL, &BTreeMap::new(), row_labels(&ids, &m.labels()))
        .map_err(|e| CliError::Analysis(e.to_string()))?;
    info!("matrix {} x {} with {} entries", x.n_rows(), x.width, x.nnz());
    data::write(&run.out("matrix.dlm1"), x.to_bytes())
}

struct Loaded {
    manifest: CorpusManifest,
    store: VectorStore,
    vocab: Vocabulary,
}

fn load(run: &Run, inputs: &DataInputs) -> Result<Loaded, CliError> {
    Ok(Loaded {
        manifest: data::load_manifest(&run.input(&inputs.manifest, "manifest.json"), &run.cfg.labels)?,
        store: data::load_vectors(&run.input(&inputs.vectors, "vectors.jsonl"))?,
        vocab: data::load_vocab(&run.input(&inputs.vocab, "vocab.json"))?,
    })
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct DataInputs {
    /// Corpus manifest [default: <out>/manifest.json]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Feature vectors [default: <out>/vectors.jsonl]
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Vocabulary [default: <out>/vocab.json]
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

pub fn metrics(run: &Run, inputs: &DataInputs, top_k: Option<usize>) -> Result<(), CliError> {
    let l = load(run, inputs)?;
    let paired = l.manifest.paired();
    let k = top_k.unwrap_or(run.cfg.metrics.top_k);
    let report = RobustnessReport::from_pairs(&paired, &l.store, &l.vocab, k);
    info!("{} pairs, {} persistence cells", paired.pairs.len(), report.persistence.len());
    data::write(&run.out("persistence.csv"), report.persistence_csv())?;
    data::write(&run.out("overlap.csv"), report.overlap_csv())?;
    data::write(&run.out("discrepancy.csv"), report.discrepancy_csv())?;
    data::write(&run.out("robustness.json"), data::json(&report))
}

fn experiment(run: &Run, l: &Loaded) -> Result<Experiment, CliError> {
    let e = Experiment::new(&l.manifest, &l.store, run.cfg.split.eval_fraction, run.seed);
    if e.train.is_empty() || e.clean_eval.is_empty() {
        return Err(CliError::Analysis("train or eval split is empty".into()));
    }
    info!(
        "{} training apps, {} clean eval apps, {} obfuscated eval apps",
        e.train.len(),
        e.clean_eval.len(),
        e.paired.pairs.len()
    );
    Ok(e)
}

fn inputs<'a>(l: &'a Loaded, e: &'a Experiment) -> DetectorInputs<'a> {
    DetectorInputs {
        store: &l.store,
        vocab: &l.vocab,
        labels: &e.labels,
        train: &e.train,
        clean_eval: &e.clean_eval,
        obf_eval: &e.obf_eval,
        paired: &e.paired,
    }
}

fn save_model(run: &Run, name: &str, model: &droidlens::forest::ForestModel, features: RobustFeatureSet, n_train: usize) -> Result<(), CliError> {
    let path = run.out(name);
    data::write(&path, model.to_bytes())?;
    let meta = ModelMeta {
        vocab_fingerprint: hex::encode(model.vocab_fingerprint),
        features,
        n_train,
    };
    data::write(&data::meta_path(&path), data::json(&meta))
}

pub fn train(run: &Run, inputs_: &DataInputs, families: &Option<Vec<Family>>) -> Result<(), CliError> {
    let l = load(run, inputs_)?;
    let e = experiment(run, &l)?;
    let families: BTreeSet<Family> = families.clone().unwrap_or_else(|| Family::ALL.to_vec()).into_iter().collect();
    let order: Vec<Family> = families.iter().copied().collect();
    let rows: Vec<&str> = e.train.iter().map(String::as_str).collect();
    let x = assemble_matrix(&rows, &l.store, &l.vocab, &order, &BTreeMap::new(), row_labels(&rows, &e.labels))
        .map_err(|e| CliError::Analysis(e.to_string()))?;
    let cfg = droidlens::forest::TrainConfig {
        seed: run.seed,
        ..run.cfg.train.clone()
    };
    let model = train_forest_with(&x, &cfg, l.vocab.fingerprint(), run.exec).map_err(|e| CliError::Analysis(e.to_string()))?;
    info!("trained {} trees over {} columns", model.trees.len(), model.width);
    let features = RobustFeatureSet {
        families,
        kept: BTreeMap::new(),
        width: x.width as usize,
    };
    save_model(run, "model.dlf1", &model, features, rows.len())
}

fn eval_rows_csv(rows: &[(String, EvalMetrics)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "tpr", "fpr", "a_mean"]).expect("in-memory csv");
    for (name, m) in rows {
        w.write_record([
            name.as_str(),
            &format!("{:.6}", m.tpr),
            &format!("{:.6}", m.fpr),
            &format!("{:.6}", m.a_mean),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

pub fn eval(run: &Run, inputs_: &DataInputs, model: &Option<PathBuf>) -> Result<(), CliError> {
    let l = load(run, inputs_)?;
    let e = experiment(run, &l)?;
    let Some(model_path) = model else {
        // one model per family, clean train and clean eval
        let inp = inputs(&l, &e);
        let cfg = droidlens::forest::TrainConfig {
            seed: run.seed,
            ..run.cfg.train.clone()
        };
        let mut report = RobustnessReport::default();
        for f in Family::ALL {
            let p = per_family_model(&inp, f, &cfg, run.exec).map_err(|e| CliError::Analysis(e.to_string()))?;
            match p.eval {
                Some(metrics) => report.eval.push(FamilyEval { family: f, metrics }),
                None => warn!("family {f} has an empty vocabulary"),
            }
        }
        return data::write(&run.out("eval.csv"), report.eval_csv());
    };
    let m = data::load_model(model_path)?;
    let meta = data::load_meta(&data::meta_path(model_path))?;
    if meta.vocab_fingerprint != hex::encode(l.vocab.fingerprint()) {
        return Err(CliError::Analysis("model was trained with a different vocabulary".into()));
    }
    let order = meta.features.family_order();
    let mut rows = Vec::new();
    let mut sets = vec![("clean".to_owned(), e.clean_eval.clone())];
    sets.extend(e.obf_eval.iter().cloned());
    for (name, ids) in sets {
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let truth = row_labels(&refs, &e.labels).ok_or_else(|| CliError::Analysis(format!("unlabeled app in {name}")))?;
        let x = assemble_matrix(&refs, &l.store, &l.vocab, &order, &meta.features.kept, None)
            .map_err(|e| CliError::Analysis(e.to_string()))?;
        let preds: Vec<Label> = m.predict_matrix(&x, run.exec).into_iter().map(|p| p.0).collect();
        match droidlens::metrics::eval_metrics(&preds, &truth) {
            Ok(metrics) => rows.push((name, metrics)),
            Err(err) => warn!("skipping {name}: {err}"),
        }
    }
    data::write(&run.out("model_eval.csv"), eval_rows_csv(&rows))
}

pub fn insens(run: &Run, inputs_: &DataInputs) -> Result<(), CliError> {
    let l = load(run, inputs_)?;
    let e = experiment(run, &l)?;
    let inp = inputs(&l, &e);
    let cfg = droidlens::forest::TrainConfig {
        seed: run.seed,
        ..run.cfg.train.clone()
    };
    let mut report = RobustnessReport::default();
    let mut mean = csv::Writer::from_writer(Vec::new());
    mean.write_record(["family", "mean_agreement"]).expect("in-memory csv");
    for f in Family::ALL {
        let p = per_family_model(&inp, f, &cfg, run.exec).map_err(|e| CliError::Analysis(e.to_string()))?;
        for ((tool, technique), &agreement) in &p.insensitivity {
            report.insensitivity.push(InsensitivityValue {
                family: f,
                tool: tool.clone(),
                technique: technique.clone(),
                agreement,
                alt_jaccard: p.alt_insensitivity[&(tool.clone(), technique.clone())],
            });
        }
        mean.write_record([f.as_str(), &format!("{:.6}", p.mean_insensitivity())])
            .expect("in-memory csv");
    }
    data::write(&run.out("insensitivity.csv"), report.insensitivity_csv())?;
    data::write(&run.out("insensitivity_mean.csv"), mean.into_inner().expect("in-memory csv"))
}

pub fn select(run: &Run, inputs_: &DataInputs, threshold: Option<f64>) -> Result<(), CliError> {
    let l = load(run, inputs_)?;
    let e = experiment(run, &l)?;
    let cfg = run.cfg.selection(threshold, run.seed);
    let det = build_detector(&inputs(&l, &e), &cfg, run.exec).map_err(|e| CliError::Analysis(e.to_string()))?;
    info!(
        "selected {:?}, width {}",
        det.features.families.iter().map(|f| f.as_str()).collect::<Vec<_>>(),
        det.features.width
    );
    data::write(&run.out("selection.json"), data::json(&det.report))?;
    data::write(&run.out("selection.csv"), det.report.eval_csv())?;
    save_model(run, "detector.dlf1", &det.model, det.features, e.train.len())
}
