//! Reader for the multi-file model layout: one `sid.xml` plus one
//! `<subject-id>.sbd.xml` per internal subject.
//!
//! Referential and per-kind attribute rules are enforced here. Semantic rules
//! that deserve a diagnostic rather than a hard failure (reachability,
//! duplicate outcomes, message direction) are left to [`crate::validate`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use roxmltree::{Document, Node};
use thiserror::Error;

use super::{
    BehaviorGraph, BoField, BoSchema, FieldType, Label, MessageDecl, ProcessModel, State,
    StateKind, SubjectDecl, Transition, DEFAULT_POOL_CAPACITY,
};
use crate::Ident;

pub const SID_FILE: &str = "sid.xml";
const SBD_SUFFIX: &str = ".sbd.xml";

/// File name → raw bytes.
pub type FileMap = BTreeMap<String, Vec<u8>>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("{file}:{line}:{column}: malformed XML: {message}")]
    MalformedXml {
        file: String,
        line: u32,
        column: u32,
        message: String,
    },
    #[error("{file}:{line}:{column}: <{element}>{}: {message}", attribute.as_ref().map(|a| format!(" @{a}")).unwrap_or_default())]
    SchemaViolation {
        file: String,
        line: u32,
        column: u32,
        element: String,
        attribute: Option<String>,
        message: String,
    },
    #[error("{file}:{line}:{column}: dangling reference `{id}`: {message}")]
    DanglingReference {
        file: String,
        line: u32,
        column: u32,
        id: String,
        message: String,
    },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

impl ParseError {
    /// Short stable name of the error variant.
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::MissingFile(_) => "MissingFile",
            ParseError::MalformedXml { .. } => "MalformedXml",
            ParseError::SchemaViolation { .. } => "SchemaViolation",
            ParseError::DanglingReference { .. } => "DanglingReference",
            ParseError::Io { .. } => "Io",
        }
    }
}

/// Reads `sid.xml` and every `*.sbd.xml` from `dir` and parses them.
pub fn parse_model_dir(dir: &Path) -> Result<ProcessModel, ParseError> {
    let io = |e: std::io::Error| ParseError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    let mut files = FileMap::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == SID_FILE || name.ends_with(SBD_SUFFIX) {
            let bytes = std::fs::read(entry.path()).map_err(io)?;
            files.insert(name, bytes);
        }
    }
    parse_model(&files)
}

/// Parses a model from an in-memory file map.
pub fn parse_model(files: &FileMap) -> Result<ProcessModel, ParseError> {
    let sid_bytes = files
        .get(SID_FILE)
        .ok_or_else(|| ParseError::MissingFile(SID_FILE.to_string()))?;
    let sid_text = decode(SID_FILE, sid_bytes)?;
    let sid_doc = open(SID_FILE, sid_text)?;
    let mut model = parse_sid(&Ctx::new(SID_FILE, &sid_doc))?;

    let mut behaviors = BTreeMap::new();
    for subject in model.subjects.iter().filter(|s| !s.external) {
        let file = format!("{}{SBD_SUFFIX}", subject.id);
        let bytes = files
            .get(&file)
            .ok_or_else(|| ParseError::MissingFile(file.clone()))?;
        let text = decode(&file, bytes)?;
        let doc = open(&file, text)?;
        let graph = parse_behavior(&Ctx::new(&file, &doc), &model, &subject.id)?;
        behaviors.insert(subject.id.clone(), graph);
    }

    for file in files.keys() {
        let Some(stem) = file.strip_suffix(SBD_SUFFIX) else {
            continue;
        };
        if behaviors.contains_key(stem) {
            continue;
        }
        return Err(match model.subject(stem) {
            Some(s) if s.external => ParseError::SchemaViolation {
                file: file.clone(),
                line: 1,
                column: 1,
                element: "behavior".into(),
                attribute: None,
                message: format!("subject `{}` is external and cannot have a behavior", s.id),
            },
            _ => ParseError::DanglingReference {
                file: file.clone(),
                line: 1,
                column: 1,
                id: stem.to_string(),
                message: "behavior file for an undeclared subject".into(),
            },
        });
    }

    model.behaviors = behaviors;
    Ok(model)
}

fn decode<'a>(file: &str, bytes: &'a [u8]) -> Result<&'a str, ParseError> {
    std::str::from_utf8(bytes).map_err(|e| {
        let valid = &bytes[..e.valid_up_to()];
        let line = valid.iter().filter(|b| **b == b'\n').count() as u32 + 1;
        let line_start = valid
            .iter()
            .rposition(|b| *b == b'\n')
            .map(|p| p + 1)
            .unwrap_or(0);
        // Column in characters; the valid prefix is UTF-8 by construction.
        let column = String::from_utf8_lossy(&valid[line_start..]).chars().count() as u32 + 1;
        ParseError::MalformedXml {
            file: file.to_string(),
            line,
            column,
            message: "invalid UTF-8".into(),
        }
    })
}

fn open<'a>(file: &str, text: &'a str) -> Result<Document<'a>, ParseError> {
    Document::parse(text).map_err(|e| {
        let pos = e.pos();
        ParseError::MalformedXml {
            file: file.to_string(),
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })
}

struct Ctx<'d, 'i> {
    file: &'d str,
    doc: &'d Document<'i>,
}

impl<'d, 'i> Ctx<'d, 'i> {
    fn new(file: &'d str, doc: &'d Document<'i>) -> Self {
        Ctx { file, doc }
    }

    fn pos(&self, node: Node) -> (u32, u32) {
        let p = self.doc.text_pos_at(node.range().start);
        (p.row, p.col)
    }

    fn violation(&self, node: Node, attribute: Option<&str>, message: impl Into<String>) -> ParseError {
        let (line, column) = self.pos(node);
        ParseError::SchemaViolation {
            file: self.file.to_string(),
            line,
            column,
            element: node.tag_name().name().to_string(),
            attribute: attribute.map(str::to_string),
            message: message.into(),
        }
    }

    fn dangling(&self, node: Node, id: &str, message: impl Into<String>) -> ParseError {
        let (line, column) = self.pos(node);
        ParseError::DanglingReference {
            file: self.file.to_string(),
            line,
            column,
            id: id.to_string(),
            message: message.into(),
        }
    }

    fn check_attrs(&self, node: Node, allowed: &[&str]) -> Result<(), ParseError> {
        for attr in node.attributes() {
            if attr.namespace().is_some() || !allowed.contains(&attr.name()) {
                return Err(self.violation(node, Some(attr.name()), "unknown attribute"));
            }
        }
        Ok(())
    }

    fn required<'n>(&self, node: Node<'n, 'i>, name: &str) -> Result<&'n str, ParseError> {
        node.attribute(name)
            .ok_or_else(|| self.violation(node, Some(name), "required attribute missing"))
    }

    fn ident(&self, node: Node, name: &str) -> Result<Ident, ParseError> {
        let raw = self.required(node, name)?;
        Ident::new(raw).map_err(|e| self.violation(node, Some(name), e.to_string()))
    }

    fn opt_ident(&self, node: Node, name: &str) -> Result<Option<Ident>, ParseError> {
        match node.attribute(name) {
            None => Ok(None),
            Some(_) => self.ident(node, name).map(Some),
        }
    }

    fn boolean(&self, node: Node, name: &str) -> Result<bool, ParseError> {
        match node.attribute(name) {
            None | Some("false") => Ok(false),
            Some("true") => Ok(true),
            Some(_) => Err(self.violation(node, Some(name), "expected `true` or `false`")),
        }
    }

    /// Child elements. Non-whitespace text is rejected; comments are skipped.
    fn elements<'n>(&self, node: Node<'n, 'i>) -> Result<Vec<Node<'n, 'i>>, ParseError> {
        let mut out = Vec::new();
        for child in node.children() {
            if child.is_element() {
                if child.tag_name().namespace().is_some() {
                    return Err(self.violation(child, None, "namespaced elements are not allowed"));
                }
                out.push(child);
            } else if child.is_text() && !child.text().unwrap_or("").trim().is_empty() {
                return Err(self.violation(node, None, "unexpected text content"));
            }
        }
        Ok(out)
    }

    fn expect_root(&self, name: &str) -> Result<Node<'d, 'i>, ParseError> {
        let root = self.doc.root_element();
        if root.tag_name().name() != name || root.tag_name().namespace().is_some() {
            return Err(self.violation(root, None, format!("expected root element <{name}>")));
        }
        Ok(root)
    }
}

fn parse_sid(cx: &Ctx) -> Result<ProcessModel, ParseError> {
    let root = cx.expect_root("process")?;
    cx.check_attrs(root, &["id", "name", "version"])?;
    let id = cx.ident(root, "id")?;
    let name = cx.required(root, "name")?.to_string();
    let version = cx.required(root, "version")?.to_string();

    let children = cx.elements(root)?;
    for child in &children {
        match child.tag_name().name() {
            "subject" | "message" | "businessObject" => {}
            other => return Err(cx.violation(*child, None, format!("unexpected element <{other}>"))),
        }
    }
    let of = |tag: &'static str| children.iter().copied().filter(move |n| n.tag_name().name() == tag);

    let mut subjects: Vec<SubjectDecl> = Vec::new();
    for node in of("subject") {
        cx.check_attrs(node, &["id", "name", "role", "external", "pool"])?;
        let id = cx.ident(node, "id")?;
        if subjects.iter().any(|s| s.id == id) {
            return Err(cx.violation(node, Some("id"), format!("duplicate subject id `{id}`")));
        }
        let pool_capacity = match node.attribute("pool") {
            None => DEFAULT_POOL_CAPACITY,
            Some(raw) => match raw.parse::<u32>() {
                Ok(n) if n >= 1 => n,
                _ => return Err(cx.violation(node, Some("pool"), "expected a positive integer")),
            },
        };
        subjects.push(SubjectDecl {
            name: node.attribute("name").unwrap_or(&id).to_string(),
            role: cx.required(node, "role")?.to_string(),
            external: cx.boolean(node, "external")?,
            pool_capacity,
            id,
        });
    }

    let mut bo_schemas: Vec<BoSchema> = Vec::new();
    for node in of("businessObject") {
        cx.check_attrs(node, &["id"])?;
        let id = cx.ident(node, "id")?;
        if bo_schemas.iter().any(|b| b.id == id) {
            return Err(cx.violation(node, Some("id"), format!("duplicate business object `{id}`")));
        }
        let fields = parse_fields(cx, node)?;
        bo_schemas.push(BoSchema { id, fields });
    }

    let mut messages: Vec<MessageDecl> = Vec::new();
    for node in of("message") {
        cx.check_attrs(node, &["id", "name", "from", "to", "bo"])?;
        let id = cx.ident(node, "id")?;
        if messages.iter().any(|m| m.id == id) {
            return Err(cx.violation(node, Some("id"), format!("duplicate message id `{id}`")));
        }
        let from = cx.ident(node, "from")?;
        let to = cx.ident(node, "to")?;
        for s in [&from, &to] {
            if !subjects.iter().any(|d| &d.id == s) {
                return Err(cx.dangling(node, s, "message endpoint is not a declared subject"));
            }
        }
        if from == to {
            return Err(cx.violation(node, Some("to"), "a message cannot be addressed to its sender"));
        }
        let bo = cx.opt_ident(node, "bo")?;
        if let Some(bo) = &bo {
            if !bo_schemas.iter().any(|b| &b.id == bo) {
                return Err(cx.dangling(node, bo, "undeclared business object"));
            }
        }
        messages.push(MessageDecl {
            name: node.attribute("name").unwrap_or(&id).to_string(),
            id,
            from,
            to,
            bo,
        });
    }

    Ok(ProcessModel {
        id,
        name,
        version,
        subjects,
        messages,
        bo_schemas,
        behaviors: BTreeMap::new(),
    })
}

fn parse_fields(cx: &Ctx, parent: Node) -> Result<Vec<BoField>, ParseError> {
    let mut fields: Vec<BoField> = Vec::new();
    for node in cx.elements(parent)? {
        if node.tag_name().name() != "field" {
            return Err(cx.violation(node, None, "expected <field>"));
        }
        cx.check_attrs(node, &["name", "type", "required"])?;
        let name = cx.required(node, "name")?;
        if name.is_empty() {
            return Err(cx.violation(node, Some("name"), "field name must not be empty"));
        }
        if fields.iter().any(|f| f.name == name) {
            return Err(cx.violation(node, Some("name"), format!("duplicate field `{name}`")));
        }
        let ty = FieldType::parse(cx.required(node, "type")?)
            .ok_or_else(|| cx.violation(node, Some("type"), "expected string, number, boolean, record or list"))?;
        let children = parse_fields(cx, node)?;
        if ty.is_composite() && children.is_empty() {
            return Err(cx.violation(node, None, format!("{} field needs at least one child", ty.as_str())));
        }
        if !ty.is_composite() && !children.is_empty() {
            return Err(cx.violation(node, None, "scalar field cannot have children"));
        }
        fields.push(BoField {
            name: name.to_string(),
            ty,
            required: cx.boolean(node, "required")?,
            children,
        });
    }
    Ok(fields)
}

fn parse_behavior(cx: &Ctx, model: &ProcessModel, subject: &Ident) -> Result<BehaviorGraph, ParseError> {
    let root = cx.expect_root("behavior")?;
    cx.check_attrs(root, &["subject"])?;
    let declared = cx.ident(root, "subject")?;
    if &declared != subject {
        return Err(cx.violation(
            root,
            Some("subject"),
            format!("file belongs to subject `{subject}` but declares `{declared}`"),
        ));
    }

    let children = cx.elements(root)?;
    let mut states: Vec<State> = Vec::new();
    let mut state_nodes: Vec<Node> = Vec::new();
    for node in children.iter().copied() {
        match node.tag_name().name() {
            "state" => {}
            "transition" => continue,
            other => return Err(cx.violation(node, None, format!("unexpected element <{other}>"))),
        }
        cx.check_attrs(node, &["id", "name", "kind", "start", "end", "refinement", "on-error", "timeout"])?;
        let id = cx.ident(node, "id")?;
        if states.iter().any(|s| s.id == id) {
            return Err(cx.violation(node, Some("id"), format!("duplicate state id `{id}`")));
        }
        let kind = StateKind::parse(cx.required(node, "kind")?)
            .ok_or_else(|| cx.violation(node, Some("kind"), "expected function, send or receive"))?;
        let start = cx.boolean(node, "start")?;
        let end = cx.boolean(node, "end")?;
        if start && states.iter().any(|s| s.start) {
            return Err(cx.violation(node, Some("start"), "second start state"));
        }
        if end && kind != StateKind::Function {
            return Err(cx.violation(node, Some("end"), "end states must be function states"));
        }
        for attr in ["refinement", "on-error"] {
            if node.attribute(attr).is_some() && kind != StateKind::Function {
                return Err(cx.violation(node, Some(attr), "only function states take this attribute"));
            }
        }
        let timeout_ms = match node.attribute("timeout") {
            None => None,
            Some(_) if kind != StateKind::Receive => {
                return Err(cx.violation(node, Some("timeout"), "only receive states take a timeout"))
            }
            Some(raw) => match raw.parse::<u64>() {
                Ok(0) => None,
                Ok(ms) => Some(ms),
                Err(_) => return Err(cx.violation(node, Some("timeout"), "expected a non-negative integer")),
            },
        };
        let nonempty = |attr: &str| -> Result<Option<String>, ParseError> {
            match node.attribute(attr) {
                Some("") => Err(cx.violation(node, Some(attr), "must not be empty")),
                other => Ok(other.map(str::to_string)),
            }
        };
        states.push(State {
            name: node.attribute("name").unwrap_or(&id).to_string(),
            refinement: nonempty("refinement")?,
            on_error: nonempty("on-error")?,
            id,
            kind,
            start,
            end,
            timeout_ms,
        });
        state_nodes.push(node);
    }
    if !states.iter().any(|s| s.start) {
        return Err(cx.violation(root, None, "no start state"));
    }
    if !states.iter().any(|s| s.end) {
        return Err(cx.violation(root, None, "no end state"));
    }

    let mut transitions: Vec<Transition> = Vec::new();
    let mut timeout_arms: BTreeSet<Ident> = BTreeSet::new();
    for node in children.iter().copied().filter(|n| n.tag_name().name() == "transition") {
        cx.check_attrs(node, &["from", "to", "outcome", "message", "to-subject", "from-subject", "timeout"])?;
        let from = cx.ident(node, "from")?;
        let to = cx.ident(node, "to")?;
        let source = states
            .iter()
            .find(|s| s.id == from)
            .ok_or_else(|| cx.dangling(node, &from, "undeclared source state"))?;
        if !states.iter().any(|s| s.id == to) {
            return Err(cx.dangling(node, &to, "undeclared target state"));
        }
        let present: Vec<&str> = ["outcome", "message", "to-subject", "from-subject", "timeout"]
            .into_iter()
            .filter(|a| node.attribute(*a).is_some())
            .collect();
        let only = |expected: &[&str]| -> Result<(), ParseError> {
            let mut want = expected.to_vec();
            want.sort_unstable();
            let mut got = present.clone();
            got.sort_unstable();
            if want == got {
                Ok(())
            } else {
                Err(cx.violation(
                    node,
                    None,
                    format!(
                        "a transition leaving a {} state takes exactly the attributes {}",
                        source.kind,
                        expected.join(", ")
                    ),
                ))
            }
        };
        let message_ref = |attr: &str| -> Result<Ident, ParseError> {
            let id = cx.ident(node, attr)?;
            if model.message(&id).is_none() {
                return Err(cx.dangling(node, &id, "undeclared message"));
            }
            Ok(id)
        };
        let subject_ref = |attr: &str| -> Result<Ident, ParseError> {
            let id = cx.ident(node, attr)?;
            if model.subject(&id).is_none() {
                return Err(cx.dangling(node, &id, "undeclared subject"));
            }
            Ok(id)
        };
        let label = match source.kind {
            StateKind::Function => {
                only(&["outcome"])?;
                let name = cx.required(node, "outcome")?;
                if name.is_empty() {
                    return Err(cx.violation(node, Some("outcome"), "must not be empty"));
                }
                Label::Outcome { name: name.to_string() }
            }
            StateKind::Send => {
                only(&["message", "to-subject"])?;
                Label::Send {
                    message: message_ref("message")?,
                    to: subject_ref("to-subject")?,
                }
            }
            StateKind::Receive if node.attribute("timeout").is_some() => {
                only(&["timeout"])?;
                if node.attribute("timeout") != Some("true") {
                    return Err(cx.violation(node, Some("timeout"), "expected `true`"));
                }
                if !timeout_arms.insert(from.clone()) {
                    return Err(cx.violation(node, Some("timeout"), "second timeout transition"));
                }
                Label::Timeout
            }
            StateKind::Receive => {
                only(&["message", "from-subject"])?;
                Label::Receive {
                    message: message_ref("message")?,
                    from: subject_ref("from-subject")?,
                }
            }
        };
        transitions.push(Transition { from, to, label });
    }

    let mut outgoing: HashMap<&str, Vec<&Transition>> = HashMap::new();
    for t in &transitions {
        outgoing.entry(t.from.as_str()).or_default().push(t);
    }
    for (state, node) in states.iter().zip(&state_nodes) {
        let arms = outgoing.get(state.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        if !state.end && arms.is_empty() {
            return Err(cx.violation(*node, None, format!("state `{}` has no outgoing transition", state.id)));
        }
        if state.kind == StateKind::Receive {
            let has_timeout_arm = arms.iter().any(|t| t.label == Label::Timeout);
            if arms.iter().all(|t| t.label == Label::Timeout) {
                return Err(cx.violation(*node, None, "receive state needs at least one message transition"));
            }
            if has_timeout_arm && state.timeout_ms.is_none() {
                return Err(cx.violation(*node, Some("timeout"), "timeout transition without a timeout value"));
            }
            if !has_timeout_arm && state.timeout_ms.is_some() {
                return Err(cx.violation(*node, Some("timeout"), "timeout value without a timeout transition"));
            }
        }
        if let Some(on_error) = &state.on_error {
            let declared = arms
                .iter()
                .any(|t| matches!(&t.label, Label::Outcome { name } if name == on_error));
            if !declared {
                return Err(cx.dangling(*node, on_error, "on-error names an undeclared outcome"));
            }
        }
    }

    Ok(BehaviorGraph {
        subject: subject.clone(),
        states,
        transitions,
    })
}
