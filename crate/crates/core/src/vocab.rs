//! Corpus vocabulary, sparse feature vectors and the column-block matrix.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{Family, FeatureKind, RawFeatureSet};
use crate::Label;

pub const VOCAB_VERSION: u32 = 1;
pub const DEFAULT_MIN_STRING_PREVALENCE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("app {0} has no {1} vector")]
    MissingFamily(String, Family),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyVocab {
    pub family: Family,
    /// `(name, prevalence)` in index order.
    pub features: Vec<(String, f64)>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl FamilyVocab {
    fn new(family: Family, features: Vec<(String, f64)>) -> Self {
        let mut v = Self {
            family,
            features,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self
            .features
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: u32) -> Option<&str> {
        self.features.get(idx as usize).map(|(n, _)| n.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub version: u32,
    pub built_from: String,
    pub n_apps: usize,
    pub min_string_prevalence: f64,
    pub strings_pruned: bool,
    /// One entry per family, in `Family::ALL` order.
    pub families: Vec<FamilyVocab>,
}

impl Vocabulary {
    pub fn family(&self, f: Family) -> &FamilyVocab {
        &self.families[f.index()]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let mut v: Vocabulary = serde_json::from_str(text).map_err(|e| VocabError::Format(e.to_string()))?;
        if v.version != VOCAB_VERSION {
            return Err(VocabError::Format(format!("unsupported vocabulary version {}", v.version)));
        }
        if v.families.len() != Family::ALL.len()
            || v.families.iter().zip(Family::ALL).any(|(fv, f)| fv.family != f)
        {
            return Err(VocabError::Format("family table out of order".into()));
        }
        for f in &mut v.families {
            f.reindex();
        }
        Ok(v)
    }

    /// SHA-256 over the serialized form; stored with trained models.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_json().as_bytes()).into()
    }
}

/// Build the vocabulary from per-app raw sets (each app: one set per
/// family, any order). Strings seen in a fraction of apps below
/// `min_string_prevalence` are dropped; other families keep every name.
pub fn build_vocabulary<'a, I>(corpus: I, built_from: &str, min_string_prevalence: f64) -> Result<Vocabulary, VocabError>
where
    I: IntoIterator<Item = &'a [RawFeatureSet]>,
{
    let mut counts: Vec<BTreeMap<&'a str, usize>> = vec![BTreeMap::new(); Family::ALL.len()];
    let mut n_apps = 0usize;
    for app in corpus {
        n_apps += 1;
        for set in app {
            let c = &mut counts[set.family.index()];
            for name in set.observations.keys() {
                *c.entry(name.as_str()).or_insert(0) += 1;
            }
        }
    }
    if n_apps == 0 {
        return Err(VocabError::EmptyCorpus);
    }
    let n = n_apps as f64;
    let families = Family::ALL
        .iter()
        .zip(counts)
        .map(|(&family, c)| {
            let mut feats: Vec<(String, f64, usize)> = c
                .into_iter()
                .filter(|&(_, k)| family != Family::Strings || k as f64 / n >= min_string_prevalence)
                .map(|(name, k)| (name.to_owned(), k as f64 / n, k))
                .collect();
            feats.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
            FamilyVocab::new(family, feats.into_iter().map(|(n, p, _)| (n, p)).collect())
        })
        .collect();
    Ok(Vocabulary {
        version: VOCAB_VERSION,
        built_from: built_from.to_owned(),
        n_apps,
        min_string_prevalence,
        strings_pruned: true,
        families,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub app_id: String,
    pub family: Family,
    pub kind: FeatureKind,
    /// `(index, value)` with strictly increasing indices and nonzero values.
    pub entries: Vec<(u32, u64)>,
}

impl FeatureVector {
    pub fn get(&self, idx: u32) -> u64 {
        self.entries
            .binary_search_by_key(&idx, |&(i, _)| i)
            .map_or(0, |p| self.entries[p].1)
    }
}

pub fn vectorize(app_id: &str, raw: &[RawFeatureSet], vocab: &Vocabulary) -> Vec<FeatureVector> {
    Family::ALL
        .iter()
        .map(|&family| {
            let fv = vocab.family(family);
            let mut entries: Vec<(u32, u64)> = raw
                .iter()
                .filter(|s| s.family == family)
                .flat_map(|s| s.observations.iter())
                .filter(|&(_, &v)| v > 0)
                .filter_map(|(name, &v)| fv.index_of(name).map(|i| (i, v)))
                .collect();
            entries.sort_unstable();
            entries.dedup_by_key(|e| e.0);
            FeatureVector {
                app_id: app_id.to_owned(),
                family,
                kind: family.kind(),
                entries,
            }
        })
        .collect()
}

/// Vectors of every app, keyed by app id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VectorStore {
    apps: BTreeMap<String, Vec<FeatureVector>>,
}

impl VectorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, vectors: Vec<FeatureVector>) {
        for v in vectors {
            let slot = self.apps.entry(v.app_id.clone()).or_default();
            match slot.iter_mut().find(|x| x.family == v.family) {
                Some(x) => *x = v,
                None => slot.push(v),
            }
        }
    }

    pub fn get(&self, app_id: &str, family: Family) -> Option<&FeatureVector> {
        self.apps.get(app_id)?.iter().find(|v| v.family == family)
    }

    pub fn contains(&self, app_id: &str) -> bool {
        self.apps.contains_key(app_id)
    }

    pub fn app_ids(&self) -> impl Iterator<Item = &str> {
        self.apps.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.apps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureVector> {
        self.apps.values().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub family: Family,
    pub offset: u32,
    /// Vocabulary index of each column in this block.
    pub columns: Vec<u32>,
}

impl Block {
    pub fn width(&self) -> u32 {
        self.columns.len() as u32
    }
}

/// Row-compressed sparse matrix with one column block per family.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub row_ids: Vec<String>,
    pub blocks: Vec<Block>,
    pub width: u32,
    pub indptr: Vec<u64>,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub labels: Option<Vec<Label>>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i] as usize, self.indptr[i + 1] as usize);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// Stack family blocks for `rows`. With a column filter for a family, only
/// the listed vocabulary indices appear, in the listed order.
pub fn assemble_matrix(
    rows: &[&str],
    store: &VectorStore,
    vocab: &Vocabulary,
    families: &[Family],
    filters: &BTreeMap<Family, Vec<u32>>,
    labels: Option<Vec<Label>>,
) -> Result<FeatureMatrix, VocabError> {
    let mut blocks = Vec::with_capacity(families.len());
    let mut offset = 0u32;
    for &family in families {
        let columns: Vec<u32> = match filters.get(&family) {
            Some(cols) => cols.clone(),
            None => (0..vocab.family(family).len() as u32).collect(),
        };
        let width = columns.len() as u32;
        blocks.push(Block { family, offset, columns });
        offset += width;
    }
    let remap: Vec<HashMap<u32, u32>> = blocks
        .iter()
        .map(|b| b.columns.iter().enumerate().map(|(j, &c)| (c, b.offset + j as u32)).collect())
        .collect();

    let mut indptr = vec![0u64];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for &id in rows {
        let mut row: Vec<(u32, f64)> = Vec::new();
        for (b, block) in blocks.iter().enumerate() {
            let v = store
                .get(id, block.family)
                .ok_or_else(|| VocabError::MissingFamily(id.to_owned(), block.family))?;
            row.extend(
                v.entries
                    .iter()
                    .filter_map(|&(i, val)| remap[b].get(&i).map(|&c| (c, val as f64))),
            );
        }
        row.sort_by_key(|e| e.0);
        for (c, v) in row {
            indices.push(c);
            values.push(v);
        }
        indptr.push(indices.len() as u64);
    }
    if let Some(l) = &labels {
        if l.len() != rows.len() {
            return Err(VocabError::Format(format!("{} labels for {} rows", l.len(), rows.len())));
        }
    }
    Ok(FeatureMatrix {
        row_ids: rows.iter().map(|s| s.to_string()).collect(),
        blocks,
        width: offset,
        indptr,
        indices,
        values,
        labels,
    })
}

const MATRIX_MAGIC: &[u8; 4] = b"DLM1";
const MATRIX_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn get_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String, VocabError> {
    let n = get_u32(r)? as usize;
    let mut b = Vec::new();
    r.take(n as u64).read_to_end(&mut b)?;
    if b.len() != n {
        return Err(VocabError::Format("truncated string".into()));
    }
    String::from_utf8(b).map_err(|e| VocabError::Format(e.to_string()))
}

impl FeatureMatrix {
    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MATRIX_MAGIC)?;
        put_u32(w, MATRIX_VERSION)?;
        put_u32(w, self.row_ids.len() as u32)?;
        put_u32(w, self.width)?;
        w.write_all(&(self.nnz() as u64).to_le_bytes())?;
        put_u32(w, self.blocks.len() as u32)?;
        for b in &self.blocks {
            w.write_all(&[b.family.index() as u8])?;
            put_u32(w, b.offset)?;
            put_u32(w, b.width())?;
            for &c in &b.columns {
                put_u32(w, c)?;
            }
        }
        for id in &self.row_ids {
            put_str(w, id)?;
        }
        match &self.labels {
            None => w.write_all(&[0])?,
            Some(l) => {
                w.write_all(&[1])?;
                w.write_all(&l.iter().map(|&x| x as u8).collect::<Vec<_>>())?;
            }
        }
        for &p in &self.indptr {
            w.write_all(&p.to_le_bytes())?;
        }
        for &i in &self.indices {
            put_u32(w, i)?;
        }
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("in-memory write");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, VocabError> {
        let bad = |m: &str| VocabError::Format(m.to_owned());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MATRIX_MAGIC {
            return Err(bad("not a DLM1 matrix"));
        }
        if get_u32(r)? != MATRIX_VERSION {
            return Err(bad("unsupported matrix version"));
        }
        let n_rows = get_u32(r)? as usize;
        let width = get_u32(r)?;
        let nnz = get_u64(r)? as usize;
        let n_blocks = get_u32(r)? as usize;
        if n_blocks > Family::ALL.len() {
            return Err(bad("too many blocks"));
        }
        let mut blocks = Vec::with_capacity(n_blocks);
        let mut expect_offset = 0u32;
        for _ in 0..n_blocks {
            let mut fb = [0u8; 1];
            r.read_exact(&mut fb)?;
            let family = *Family::ALL.get(fb[0] as usize).ok_or_else(|| bad("bad family tag"))?;
            let offset = get_u32(r)?;
            let bw = get_u32(r)?;
            if offset != expect_offset {
                return Err(bad("block offsets do not partition the columns"));
            }
            let mut columns = Vec::new();
            for _ in 0..bw {
                columns.push(get_u32(r)?);
            }
            expect_offset += bw;
            blocks.push(Block { family, offset, columns });
        }
        if expect_offset != width {
            return Err(bad("block widths do not sum to matrix width"));
        }
        let mut row_ids = Vec::new();
        for _ in 0..n_rows {
            row_ids.push(get_str(r)?);
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let labels = match flag[0] {
            0 => None,
            1 => {
                let mut l = vec![0u8; n_rows];
                r.read_exact(&mut l)?;
                Some(
                    l.into_iter()
                        .map(|b| match b {
                            0 => Ok(Label::Goodware),
                            1 => Ok(Label::Malware),
                            _ => Err(bad("bad label byte")),
                        })
                        .collect::<Result<_, _>>()?,
                )
            }
            _ => return Err(bad("bad label flag")),
        };
        let mut indptr = Vec::new();
        for _ in 0..=n_rows {
            indptr.push(get_u64(r)?);
        }
        if indptr[0] != 0 || indptr.windows(2).any(|w| w[0] > w[1]) || indptr[n_rows] as usize != nnz {
            return Err(bad("bad row pointers"));
        }
        let mut indices = Vec::new();
        for _ in 0..nnz {
            let c = get_u32(r)?;
            if c >= width {
                return Err(bad("column index out of range"));
            }
            indices.push(c);
        }
        let mut values = Vec::new();
        for _ in 0..nnz {
            values.push(f64::from_bits(get_u64(r)?));
        }
        Ok(Self {
            row_ids,
            blocks,
            width,
            indptr,
            indices,
            values,
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings_app(names: &[&str]) -> Vec<RawFeatureSet> {
        let mut s = RawFeatureSet::new(Family::Strings);
        for n in names {
            s.observations.insert(format!("str::{n}"), 1);
        }
        vec![s]
    }

    #[test]
    fn pruning_boundary() {
        let mut corpus: Vec<Vec<RawFeatureSet>> = (0..200).map(|_| strings_app(&[])).collect();
        corpus[0] = strings_app(&["s1", "s2", "edge"]);
        corpus[1] = strings_app(&["s2", "edge"]);
        for app in corpus.iter_mut().skip(2).take(148) {
            *app = strings_app(&["s2"]);
        }
        let v = build_vocabulary(corpus.iter().map(Vec::as_slice), "t", DEFAULT_MIN_STRING_PREVALENCE).unwrap();
        let names: Vec<_> = v.family(Family::Strings).features.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["str::s2", "str::edge"]);
    }

    #[test]
    fn empty_corpus() {
        let none: Vec<Vec<RawFeatureSet>> = Vec::new();
        assert!(matches!(
            build_vocabulary(none.iter().map(Vec::as_slice), "t", 0.01),
            Err(VocabError::EmptyCorpus)
        ));
    }

    #[test]
    fn vectorize_drops_unknown_names() {
        let corpus = [strings_app(&["a", "b"])];
        let v = build_vocabulary(corpus.iter().map(Vec::as_slice), "t", 0.01).unwrap();
        let vecs = vectorize("x", &strings_app(&["zzz"]), &v);
        assert_eq!(vecs.len(), 7);
        assert!(vecs[Family::Strings.index()].entries.is_empty());
        let vecs = vectorize("x", &corpus[0], &v);
        assert_eq!(vecs[Family::Strings.index()].entries, [(0, 1), (1, 1)]);
    }

    #[test]
    fn json_round_trip_restores_index() {
        let corpus = [strings_app(&["a", "b"])];
        let v = build_vocabulary(corpus.iter().map(Vec::as_slice), "t", 0.01).unwrap();
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back.family(Family::Strings).index_of("str::b"), Some(1));
        assert_eq!(back.to_json(), v.to_json());
    }
}
