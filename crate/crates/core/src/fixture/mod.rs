//! Editable app models and the minimal APK serializer used for fixtures and
//! synthetic corpora.

pub mod axml_encode;
pub mod cert;
pub mod dex_encode;
pub mod xml;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apk::zip::{self, Method, ZipWriter};
use crate::apk::{self, dex_ordinal, ApkError, DexModel, ManifestModel, MANIFEST_PATH};

pub const CERT_PATH: &str = "META-INF/CERT.RSA";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixtureError {
    #[error("app model has no dex files")]
    EmptyModel,
    #[error("model does not fit the minimal dex layout")]
    ModelTooLarge,
    #[error("model references {0} which is not in its tables")]
    Unresolved(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestEncoding {
    #[default]
    Plain,
    Binary,
}

/// An app in editable form: what the obfuscation transforms rewrite.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AppModel {
    pub manifest: ManifestModel,
    pub dexes: Vec<DexModel>,
    /// Non-code entries, written in order after the dex files.
    pub extras: Vec<(String, Vec<u8>)>,
    pub cert: Option<Vec<u8>>,
}

impl AppModel {
    pub fn to_apk(&self) -> Result<Vec<u8>, FixtureError> {
        self.to_apk_with(ManifestEncoding::Plain)
    }

    pub fn to_apk_with(&self, encoding: ManifestEncoding) -> Result<Vec<u8>, FixtureError> {
        let mut extras = self.extras.clone();
        if let Some(c) = &self.cert {
            extras.push((CERT_PATH.to_owned(), c.clone()));
        }
        serialize_apk(&self.manifest, &self.dexes, &extras, encoding)
    }

    /// Rebuild the editable model from package bytes.
    pub fn from_apk(bytes: &[u8]) -> Result<Self, ApkError> {
        let parsed = apk::open_apk(bytes)?;
        let members = zip::read_archive(bytes).map_err(|_| ApkError::NotAZip)?;
        let mut extras = Vec::new();
        let mut cert = None;
        let mut seen = std::collections::BTreeSet::new();
        for m in members {
            if !seen.insert(m.name.clone()) || m.name == MANIFEST_PATH || dex_ordinal(&m.name).is_some() {
                continue;
            }
            if m.name == CERT_PATH && cert.is_none() {
                cert = Some(m.data);
            } else {
                extras.push((m.name, m.data));
            }
        }
        Ok(Self {
            manifest: parsed.manifest,
            dexes: parsed.dex_models,
            extras,
            cert,
        })
    }

    pub fn canonicalize(&mut self) {
        for d in &mut self.dexes {
            d.canonicalize();
        }
    }
}

fn dex_entry_name(i: usize) -> String {
    if i == 0 {
        "classes.dex".to_owned()
    } else {
        format!("classes{}.dex", i + 1)
    }
}

pub fn manifest_bytes(manifest: &ManifestModel, encoding: ManifestEncoding) -> Vec<u8> {
    let tree = xml::manifest_tree(manifest);
    match encoding {
        ManifestEncoding::Plain => xml::render_xml(&tree).into_bytes(),
        ManifestEncoding::Binary => axml_encode::encode_axml(&tree),
    }
}

/// Minimal package: manifest, `classes*.dex` in order, then `extras`.
pub fn serialize_min_apk(
    manifest: &ManifestModel,
    dexes: &[DexModel],
    extras: &[(String, Vec<u8>)],
) -> Result<Vec<u8>, FixtureError> {
    serialize_apk(manifest, dexes, extras, ManifestEncoding::Plain)
}

pub fn serialize_apk(
    manifest: &ManifestModel,
    dexes: &[DexModel],
    extras: &[(String, Vec<u8>)],
    encoding: ManifestEncoding,
) -> Result<Vec<u8>, FixtureError> {
    if dexes.is_empty() {
        return Err(FixtureError::EmptyModel);
    }
    let mut w = ZipWriter::new();
    w.add(MANIFEST_PATH, &manifest_bytes(manifest, encoding), Method::Deflated);
    for (i, d) in dexes.iter().enumerate() {
        w.add(&dex_entry_name(i), &dex_encode::encode_dex(d)?, Method::Deflated);
    }
    for (name, data) in extras {
        w.add(name, data, Method::Deflated);
    }
    Ok(w.finish())
}
