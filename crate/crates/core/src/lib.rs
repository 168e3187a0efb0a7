//! Static feature extraction, obfuscation-robustness metrics and random-forest
//! detection for Android packages.

pub mod apk;
pub mod corpus;
pub mod features;
pub mod fixture;
pub mod forest;
pub mod metrics;
pub mod obfuscation;
pub mod par;
pub mod pipeline;
pub mod selection;
pub mod synth;
pub mod vocab;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Label {
    Goodware = 0,
    Malware = 1,
}
