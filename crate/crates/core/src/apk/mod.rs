//! APK container decoding.

pub mod axml;
pub mod cert;
pub mod dex;
pub mod magic;
pub mod manifest;
pub mod opcodes;
pub mod zip;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cert::CertSummary;
pub use dex::{DexError, DexModel};
pub use manifest::{ManifestError, ManifestModel};

pub const MANIFEST_PATH: &str = "AndroidManifest.xml";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApkError {
    #[error("not a ZIP archive")]
    NotAZip,
    #[error("empty input")]
    EmptyInput,
    #[error("AndroidManifest.xml missing")]
    MissingManifest,
    #[error("no classes*.dex entry")]
    MissingDex,
    #[error("failed to decompress entry {0}")]
    EntryDecompressionFailure(String),
    #[error("manifest: {0}")]
    Manifest(#[from] ManifestError),
    #[error("{path}: {source}")]
    Dex { path: String, source: DexError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApkEntry {
    pub path: String,
    pub uncompressed_size: u64,
    pub extension: String,
    pub magic_type: String,
    #[serde(with = "hex::serde")]
    pub content_hash: [u8; 32],
}

/// Lowercased suffix after the last dot of the base name, or the base name
/// itself when it has no usable suffix.
pub fn entry_extension(path: &str) -> String {
    let base = path.rsplit('/').next().unwrap_or(path);
    match base.rsplit_once('.') {
        Some((_, ext)) if !ext.is_empty() => ext.to_ascii_lowercase(),
        _ if base.is_empty() => path.to_owned(),
        _ => base.to_owned(),
    }
}

/// Numeric position of a `classes*.dex` entry: `classes.dex` is 1,
/// `classesN.dex` is N. Other paths are not dex code entries.
pub fn dex_ordinal(path: &str) -> Option<u32> {
    let mid = path.strip_prefix("classes")?.strip_suffix(".dex")?;
    if mid.is_empty() {
        Some(1)
    } else if mid.bytes().all(|b| b.is_ascii_digit()) && !mid.starts_with('0') {
        mid.parse().ok().filter(|&n| n >= 2)
    } else {
        None
    }
}

fn is_signature_block(path: &str) -> bool {
    let Some(name) = path.strip_prefix("META-INF/") else {
        return false;
    };
    !name.contains('/')
        && [".RSA", ".DSA", ".EC"].iter().any(|ext| name.to_ascii_uppercase().ends_with(ext))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApkModel {
    pub entries: Vec<ApkEntry>,
    pub manifest: ManifestModel,
    pub dex_models: Vec<DexModel>,
    pub cert: Option<CertSummary>,
    pub apk_size: u64,
    /// Raw bytes of text-typed entries under `res/` and `assets/`.
    pub text_resources: Vec<(String, Vec<u8>)>,
}

impl ApkModel {
    pub fn defined_classes(&self) -> BTreeSet<&str> {
        self.dex_models.iter().flat_map(|d| d.defined_class_names()).collect()
    }
}

pub fn open_apk(bytes: &[u8]) -> Result<ApkModel, ApkError> {
    if bytes.is_empty() {
        return Err(ApkError::EmptyInput);
    }
    let members = zip::read_archive(bytes).map_err(|e| match e {
        zip::ZipError::NotAZip => ApkError::NotAZip,
        zip::ZipError::Decompression(path) => ApkError::EntryDecompressionFailure(path),
    })?;

    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(members.len());
    let mut manifest_bytes = None;
    let mut dex_blobs: Vec<(u32, &zip::ZipMember)> = Vec::new();
    let mut cert = None;
    let mut text_resources = Vec::new();
    for member in &members {
        // later duplicates of a path are ignored, as the platform installer does
        if !seen.insert(member.name.as_str()) {
            continue;
        }
        let head = &member.data[..member.data.len().min(magic::SNIFF_LEN)];
        let magic_type = magic::sniff_magic(head);
        entries.push(ApkEntry {
            path: member.name.clone(),
            uncompressed_size: member.data.len() as u64,
            extension: entry_extension(&member.name),
            magic_type: magic_type.to_owned(),
            content_hash: Sha256::digest(&member.data).into(),
        });
        if member.name == MANIFEST_PATH {
            manifest_bytes = Some(&member.data);
        } else if let Some(n) = dex_ordinal(&member.name) {
            dex_blobs.push((n, member));
        } else if cert.is_none() && is_signature_block(&member.name) {
            cert = cert::parse_cert_summary(&member.data);
        }
        if (member.name.starts_with("res/") || member.name.starts_with("assets/"))
            && magic::is_text_type(magic_type)
        {
            text_resources.push((member.name.clone(), member.data.clone()));
        }
    }

    let manifest = manifest::parse_manifest(manifest_bytes.ok_or(ApkError::MissingManifest)?)?;
    if dex_blobs.is_empty() {
        return Err(ApkError::MissingDex);
    }
    dex_blobs.sort_by_key(|(n, _)| *n);
    let dex_models = dex_blobs
        .into_iter()
        .map(|(_, m)| {
            dex::parse_dex(&m.data).map_err(|source| ApkError::Dex {
                path: m.name.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ApkModel {
        entries,
        manifest,
        dex_models,
        cert,
        apk_size: bytes.len() as u64,
        text_resources,
    })
}
