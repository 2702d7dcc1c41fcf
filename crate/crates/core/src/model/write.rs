//! Deterministic writer for the multi-file XML layout.
//!
//! Attributes are emitted in a fixed order, indentation is two spaces, lines
//! end in LF, and the encoding is UTF-8. Writing the same model twice yields
//! identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use super::parse::{FileMap, SID_FILE};
use super::{BehaviorGraph, BoField, Label, ProcessModel};

pub fn behavior_file_name(subject: &str) -> String {
    format!("{subject}.sbd.xml")
}

pub fn serialize_model(m: &ProcessModel) -> FileMap {
    let mut files = FileMap::new();
    files.insert(SID_FILE.to_string(), write_sid(m).into_bytes());
    for (subject, graph) in &m.behaviors {
        files.insert(behavior_file_name(subject), write_behavior(graph).into_bytes());
    }
    files
}

/// Writes the serialized model into `dir`, creating it if needed.
pub fn write_model_dir(m: &ProcessModel, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in serialize_model(m) {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

const HEADER: &str = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";

fn write_sid(m: &ProcessModel) -> String {
    let mut out = String::from(HEADER);
    open(&mut out, 0, "process", &[("id", m.id.as_str()), ("name", &m.name), ("version", &m.version)], false);
    for s in &m.subjects {
        let pool = s.pool_capacity.to_string();
        let attrs = [
            ("id", s.id.as_str()),
            ("name", s.name.as_str()),
            ("role", s.role.as_str()),
            ("external", if s.external { "true" } else { "false" }),
            ("pool", pool.as_str()),
        ];
        open(&mut out, 1, "subject", &attrs, true);
    }
    for msg in &m.messages {
        let mut attrs = vec![
            ("id", msg.id.as_str()),
            ("name", msg.name.as_str()),
            ("from", msg.from.as_str()),
            ("to", msg.to.as_str()),
        ];
        if let Some(bo) = &msg.bo {
            attrs.push(("bo", bo.as_str()));
        }
        open(&mut out, 1, "message", &attrs, true);
    }
    for bo in &m.bo_schemas {
        open(&mut out, 1, "businessObject", &[("id", bo.id.as_str())], bo.fields.is_empty());
        if !bo.fields.is_empty() {
            write_fields(&mut out, 2, &bo.fields);
            close(&mut out, 1, "businessObject");
        }
    }
    close(&mut out, 0, "process");
    out
}

fn write_fields(out: &mut String, depth: usize, fields: &[BoField]) {
    for f in fields {
        let attrs = [
            ("name", f.name.as_str()),
            ("type", f.ty.as_str()),
            ("required", if f.required { "true" } else { "false" }),
        ];
        open(out, depth, "field", &attrs, f.children.is_empty());
        if !f.children.is_empty() {
            write_fields(out, depth + 1, &f.children);
            close(out, depth, "field");
        }
    }
}

fn write_behavior(g: &BehaviorGraph) -> String {
    let mut out = String::from(HEADER);
    open(&mut out, 0, "behavior", &[("subject", g.subject.as_str())], false);
    for s in &g.states {
        let timeout = s.timeout_ms.map(|t| t.to_string());
        let mut attrs = vec![("id", s.id.as_str()), ("name", s.name.as_str()), ("kind", s.kind.as_str())];
        if s.start {
            attrs.push(("start", "true"));
        }
        if s.end {
            attrs.push(("end", "true"));
        }
        if let Some(r) = &s.refinement {
            attrs.push(("refinement", r));
        }
        if let Some(e) = &s.on_error {
            attrs.push(("on-error", e));
        }
        if let Some(t) = &timeout {
            attrs.push(("timeout", t));
        }
        open(&mut out, 1, "state", &attrs, true);
    }
    for t in &g.transitions {
        let mut attrs = vec![("from", t.from.as_str()), ("to", t.to.as_str())];
        match &t.label {
            Label::Outcome { name } => attrs.push(("outcome", name)),
            Label::Send { message, to } => {
                attrs.push(("message", message));
                attrs.push(("to-subject", to));
            }
            Label::Receive { message, from } => {
                attrs.push(("message", message));
                attrs.push(("from-subject", from));
            }
            Label::Timeout => attrs.push(("timeout", "true")),
        }
        open(&mut out, 1, "transition", &attrs, true);
    }
    close(&mut out, 0, "behavior");
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn open(out: &mut String, depth: usize, tag: &str, attrs: &[(&str, &str)], empty: bool) {
    indent(out, depth);
    out.push('<');
    out.push_str(tag);
    for (k, v) in attrs {
        let _ = write!(out, " {k}=\"{}\"", escape(v));
    }
    out.push_str(if empty { "/>\n" } else { ">\n" });
}

fn close(out: &mut String, depth: usize, tag: &str) {
    indent(out, depth);
    let _ = writeln!(out, "</{tag}>");
}

/// Attribute-value escaping. Whitespace control characters become character
/// references so that attribute normalization does not alter them on read.
fn escape(v: &str) -> String {
    let mut s = String::with_capacity(v.len());
    for c in v.chars() {
        match c {
            '&' => s.push_str("&amp;"),
            '<' => s.push_str("&lt;"),
            '>' => s.push_str("&gt;"),
            '"' => s.push_str("&quot;"),
            '\n' => s.push_str("&#10;"),
            '\r' => s.push_str("&#13;"),
            '\t' => s.push_str("&#9;"),
            c => s.push(c),
        }
    }
    s
}
