//! AndroidManifest model, decoded from binary AXML or plain XML text.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::axml::{decode_axml, AXML_MAGIC};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("malformed binary XML: {0}")]
    MalformedAxml(&'static str),
    #[error("malformed XML: {0}")]
    MalformedXml(String),
}

/// Namespace-stripped element tree shared by both manifest encodings.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct XmlElement {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<XmlElement>,
}

impl XmlElement {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            ..Self::default()
        }
    }

    pub fn with_attr(mut self, key: &str, value: &str) -> Self {
        self.attrs.push((key.to_owned(), value.to_owned()));
        self
    }

    pub fn with_child(mut self, child: XmlElement) -> Self {
        self.children.push(child);
        self
    }

    /// Attribute by local name; a prefix such as `android:` is ignored.
    pub fn attr(&self, local: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k.rsplit(':').next() == Some(local))
            .map(|(_, v)| v.as_str())
    }

    fn local_name(&self) -> &str {
        self.name.rsplit(':').next().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Activity,
    Service,
    Receiver,
    Provider,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 4] = [
        ComponentKind::Activity,
        ComponentKind::Service,
        ComponentKind::Receiver,
        ComponentKind::Provider,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::Activity => "activity",
            ComponentKind::Service => "service",
            ComponentKind::Receiver => "receiver",
            ComponentKind::Provider => "provider",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "activity" | "activity-alias" => Some(ComponentKind::Activity),
            "service" => Some(ComponentKind::Service),
            "receiver" => Some(ComponentKind::Receiver),
            "provider" => Some(ComponentKind::Provider),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub kind: ComponentKind,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentFilter {
    pub owner: String,
    pub actions: BTreeSet<String>,
    pub categories: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UsesFeature {
    pub name: String,
    pub hardware: bool,
}

impl UsesFeature {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            hardware: name.starts_with("android.hardware."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ManifestModel {
    pub package_name: String,
    pub used_permissions: BTreeSet<String>,
    pub declared_permissions: BTreeSet<String>,
    pub components: Vec<Component>,
    pub intent_filters: Vec<IntentFilter>,
    pub uses_features: BTreeSet<UsesFeature>,
}

impl ManifestModel {
    pub fn count(&self, kind: ComponentKind) -> usize {
        self.components.iter().filter(|c| c.kind == kind).count()
    }
}

/// Expand `.Foo` and bare `Foo` against the package, as the platform does.
fn resolve_component_name(package: &str, name: &str) -> String {
    if let Some(rest) = name.strip_prefix('.') {
        format!("{package}.{rest}")
    } else if !name.contains('.') && !package.is_empty() {
        format!("{package}.{name}")
    } else {
        name.to_owned()
    }
}

fn collect(root: &XmlElement) -> ManifestModel {
    let mut m = ManifestModel {
        package_name: root.attr("package").unwrap_or_default().to_owned(),
        ..ManifestModel::default()
    };
    let visit_component = |m: &mut ManifestModel, el: &XmlElement, kind: ComponentKind| {
        let Some(raw) = el.attr("name").filter(|n| !n.is_empty()) else {
            return;
        };
        let name = resolve_component_name(&m.package_name, raw);
        for filter in el.children.iter().filter(|c| c.local_name() == "intent-filter") {
            let pick = |tag: &str| -> BTreeSet<String> {
                filter
                    .children
                    .iter()
                    .filter(|c| c.local_name() == tag)
                    .filter_map(|c| c.attr("name"))
                    .filter(|n| !n.is_empty())
                    .map(str::to_owned)
                    .collect()
            };
            m.intent_filters.push(IntentFilter {
                owner: name.clone(),
                actions: pick("action"),
                categories: pick("category"),
            });
        }
        m.components.push(Component { kind, name });
    };

    for child in &root.children {
        match child.local_name() {
            "uses-permission" | "uses-permission-sdk-23" | "uses-permission-sdk-m" => {
                if let Some(n) = child.attr("name").filter(|n| !n.is_empty()) {
                    m.used_permissions.insert(n.to_owned());
                }
            }
            "permission" => {
                if let Some(n) = child.attr("name").filter(|n| !n.is_empty()) {
                    m.declared_permissions.insert(n.to_owned());
                }
            }
            "uses-feature" => {
                if let Some(n) = child.attr("name").filter(|n| !n.is_empty()) {
                    m.uses_features.insert(UsesFeature::new(n));
                }
            }
            "application" => {
                for el in &child.children {
                    if let Some(kind) = ComponentKind::from_tag(el.local_name()) {
                        visit_component(&mut m, el, kind);
                    }
                }
            }
            _ => {}
        }
    }
    m
}

fn from_roxml(node: roxmltree::Node<'_, '_>) -> XmlElement {
    XmlElement {
        name: node.tag_name().name().to_owned(),
        attrs: node
            .attributes()
            .map(|a| (a.name().to_owned(), a.value().to_owned()))
            .collect(),
        children: node.children().filter(|c| c.is_element()).map(from_roxml).collect(),
    }
}

/// Decode a manifest tree from either encoding without interpreting it.
pub fn parse_manifest_tree(bytes: &[u8]) -> Result<XmlElement, ManifestError> {
    if bytes.len() >= 4 && u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) == AXML_MAGIC {
        return decode_axml(bytes);
    }
    let text = std::str::from_utf8(bytes).map_err(|e| ManifestError::MalformedXml(e.to_string()))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| ManifestError::MalformedXml(e.to_string()))?;
    Ok(from_roxml(doc.root_element()))
}

pub fn parse_manifest(bytes: &[u8]) -> Result<ManifestModel, ManifestError> {
    let root = parse_manifest_tree(bytes)?;
    if root.local_name() != "manifest" {
        return Err(ManifestError::MalformedXml(format!("root element is <{}>", root.name)));
    }
    Ok(collect(&root))
}
