//! Manifest model to element tree and plain XML text.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::apk::manifest::{ManifestModel, XmlElement};

pub const ANDROID_NS: &str = "http://schemas.android.com/apk/res/android";

fn named(tag: &str, name: &str) -> XmlElement {
    XmlElement::new(tag).with_attr("android:name", name)
}

pub fn manifest_tree(m: &ManifestModel) -> XmlElement {
    let mut root = XmlElement::new("manifest")
        .with_attr("xmlns:android", ANDROID_NS)
        .with_attr("package", &m.package_name);
    for p in &m.used_permissions {
        root.children.push(named("uses-permission", p));
    }
    for p in &m.declared_permissions {
        root.children.push(named("permission", p));
    }
    for f in &m.uses_features {
        root.children.push(named("uses-feature", &f.name));
    }
    let mut app = XmlElement::new("application");
    let mut filters_done: BTreeSet<&str> = BTreeSet::new();
    for c in &m.components {
        let mut el = named(c.kind.as_str(), &c.name);
        if filters_done.insert(c.name.as_str()) {
            for f in m.intent_filters.iter().filter(|f| f.owner == c.name) {
                let mut fe = XmlElement::new("intent-filter");
                for a in &f.actions {
                    fe.children.push(named("action", a));
                }
                for cat in &f.categories {
                    fe.children.push(named("category", cat));
                }
                el.children.push(fe);
            }
        }
        app.children.push(el);
    }
    root.children.push(app);
    root
}

fn escape(s: &str, out: &mut String) {
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => {
                let _ = write!(out, "&#{};", c as u32);
            }
            c => out.push(c),
        }
    }
}

fn render(el: &XmlElement, depth: usize, out: &mut String) {
    out.extend(std::iter::repeat("  ").take(depth));
    out.push('<');
    out.push_str(&el.name);
    for (k, v) in &el.attrs {
        out.push(' ');
        out.push_str(k);
        out.push_str("=\"");
        escape(v, out);
        out.push('"');
    }
    if el.children.is_empty() {
        out.push_str("/>\n");
        return;
    }
    out.push_str(">\n");
    for c in &el.children {
        render(c, depth + 1, out);
    }
    out.extend(std::iter::repeat("  ").take(depth));
    let _ = writeln!(out, "</{}>", el.name);
}

pub fn render_xml(root: &XmlElement) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n");
    render(root, 0, &mut out);
    out
}
