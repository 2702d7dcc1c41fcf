use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ir::{compile_subject, Selector, SubjectProgram};
use super::CompileError;
use crate::model::{BoSchema, MessageDecl, ProcessModel, StateKind, SubjectDecl};
use crate::{canonical, Ident};

/// File header: 8-byte magic followed by a big-endian u16 format version.
pub const BUNDLE_MAGIC: &[u8; 8] = b"SBPMBNDL";
pub const BUNDLE_VERSION: u16 = 0x0001;
pub const BUNDLE_EXTENSION: &str = "sbpmb";
const HEADER_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BundleError {
    #[error("corrupt bundle: content hash {recorded} does not match payload hash {computed}")]
    CorruptBundle { recorded: String, computed: String },
    #[error("malformed bundle: {0}")]
    MalformedBundle(String),
    #[error("cannot access bundle {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub process_id: Ident,
    pub name: String,
    pub version: String,
    /// Seconds since the Unix epoch; 0 unless the build was stamped.
    pub created_at: u64,
    /// SHA-256 (hex) of the canonical payload with this field blanked.
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum RestartPolicy {
    Never,
    Replay { max_restarts: u32, window_s: u64 },
}

/// What a sender does when the target pool is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SendMode {
    /// Block until the pool drains, then retry.
    #[default]
    Blocking,
    /// Fail the instance.
    DropError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    InstanceDuration,
    PerSubjectWaitTime,
}

/// Where messages for an external subject go. Hints have the form
/// `node-id/instance-id/subject-id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalRoute {
    pub subject: Ident,
    pub route: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisorConfig {
    pub restart_policy: RestartPolicy,
    #[serde(default)]
    pub send_mode: SendMode,
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub external_routes: Vec<ExternalRoute>,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        SupervisorConfig {
            restart_policy: RestartPolicy::Replay {
                max_restarts: 3,
                window_s: 60,
            },
            send_mode: SendMode::Blocking,
            metrics: vec![Metric::InstanceDuration, Metric::PerSubjectWaitTime],
            external_routes: Vec::new(),
        }
    }
}

impl SupervisorConfig {
    pub fn route_for(&self, subject: &str) -> Option<&str> {
        self.external_routes
            .iter()
            .find(|r| r.subject == subject)
            .and_then(|r| r.route.as_deref())
    }
}

/// The deployable artifact for one process model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    pub manifest: Manifest,
    /// All subjects, sorted by id.
    pub subjects: Vec<SubjectDecl>,
    /// One program per internal subject, sorted by subject id.
    pub programs: Vec<SubjectProgram>,
    pub messages: Vec<MessageDecl>,
    pub bo_schemas: Vec<BoSchema>,
    pub supervisor: SupervisorConfig,
}

pub(super) fn link(m: &ProcessModel, template: &SupervisorConfig) -> Result<Bundle, CompileError> {
    let mut subjects = m.subjects.clone();
    subjects.sort_by(|a, b| a.id.cmp(&b.id));

    let mut programs = Vec::new();
    for s in subjects.iter().filter(|s| !s.external) {
        programs.push(compile_subject(m, &s.id)?);
    }

    for r in &template.external_routes {
        if !subjects.iter().any(|s| s.external && s.id == r.subject) {
            return Err(CompileError::UnknownRouteSubject(r.subject.to_string()));
        }
    }
    let external_routes = subjects
        .iter()
        .filter(|s| s.external)
        .map(|s| ExternalRoute {
            subject: s.id.clone(),
            route: template.route_for(&s.id).map(str::to_string),
        })
        .collect();

    let mut bundle = Bundle {
        manifest: Manifest {
            process_id: m.id.clone(),
            name: m.name.clone(),
            version: m.version.clone(),
            created_at: 0,
            content_hash: String::new(),
        },
        subjects,
        programs,
        messages: m.messages.clone(),
        bo_schemas: m.bo_schemas.clone(),
        supervisor: SupervisorConfig {
            external_routes,
            ..template.clone()
        },
    };
    bundle.seal();
    Ok(bundle)
}

impl Bundle {
    pub fn hash(&self) -> &str {
        &self.manifest.content_hash
    }

    /// Sets `created_at` and recomputes the content hash.
    pub fn stamped(mut self, created_at: u64) -> Self {
        self.manifest.created_at = created_at;
        self.seal();
        self
    }

    fn seal(&mut self) {
        self.manifest.content_hash = self.compute_hash();
    }

    pub fn compute_hash(&self) -> String {
        let mut blank = self.clone();
        blank.manifest.content_hash.clear();
        let payload = canonical::to_vec(&blank).expect("bundle serializes");
        hex::encode(Sha256::digest(&payload))
    }

    pub fn verify(&self) -> Result<(), BundleError> {
        let computed = self.compute_hash();
        if computed != self.manifest.content_hash {
            return Err(BundleError::CorruptBundle {
                recorded: self.manifest.content_hash.clone(),
                computed,
            });
        }
        Ok(())
    }

    pub fn program(&self, subject: &str) -> Option<&SubjectProgram> {
        self.programs.iter().find(|p| p.subject == subject)
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectDecl> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn message(&self, id: &str) -> Option<&MessageDecl> {
        self.messages.iter().find(|m| m.id == id)
    }

    pub fn bo_schema(&self, id: &str) -> Option<&BoSchema> {
        self.bo_schemas.iter().find(|b| b.id == id)
    }

    /// Distinct roles of internal subjects, sorted.
    pub fn roles(&self) -> Vec<&str> {
        let mut roles: Vec<&str> = self
            .subjects
            .iter()
            .filter(|s| !s.external)
            .map(|s| s.role.as_str())
            .collect();
        roles.sort_unstable();
        roles.dedup();
        roles
    }

    /// Checks a payload against the business object of `message`.
    pub fn validate_payload(&self, message: &str, payload: &serde_json::Value) -> Result<(), String> {
        let decl = self.message(message).ok_or_else(|| format!("unknown message `{message}`"))?;
        let result = match &decl.bo {
            Some(bo) => match self.bo_schema(bo) {
                Some(schema) => schema.validate(payload),
                None => return Err(format!("unknown business object `{bo}`")),
            },
            None => crate::model::validate_empty(payload),
        };
        result.map_err(|e| e.to_string())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4096);
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_be_bytes());
        out.extend_from_slice(&canonical::to_vec(self).expect("bundle serializes"));
        out
    }

    /// Decodes and verifies a bundle file image.
    pub fn from_bytes(bytes: &[u8]) -> Result<Bundle, BundleError> {
        if bytes.len() < HEADER_LEN {
            return Err(BundleError::MalformedBundle(format!("file is {} bytes, shorter than the header", bytes.len())));
        }
        if &bytes[..8] != BUNDLE_MAGIC {
            return Err(BundleError::MalformedBundle("bad magic".into()));
        }
        let version = u16::from_be_bytes([bytes[8], bytes[9]]);
        if version != BUNDLE_VERSION {
            return Err(BundleError::MalformedBundle(format!("unsupported format version {version}")));
        }
        let bundle: Bundle = serde_json::from_slice(&bytes[HEADER_LEN..])
            .map_err(|e| BundleError::MalformedBundle(e.to_string()))?;
        bundle.verify()?;
        bundle.check_shape()?;
        Ok(bundle)
    }

    /// Structural invariants that the hash alone cannot guarantee.
    fn check_shape(&self) -> Result<(), BundleError> {
        let bad = |m: String| Err(BundleError::MalformedBundle(m));
        if self.programs.is_empty() {
            return bad("bundle has no programs".into());
        }
        for s in self.subjects.iter().filter(|s| !s.external) {
            if self.program(&s.id).is_none() {
                return bad(format!("no program for subject `{}`", s.id));
            }
        }
        for p in &self.programs {
            let n = p.states.len();
            match self.subject(&p.subject) {
                Some(s) if !s.external => {}
                _ => return bad(format!("program for unknown subject `{}`", p.subject)),
            }
            if p.start_index >= n || p.end_indices.iter().any(|&i| i >= n) {
                return bad(format!("state index out of range in `{}`", p.subject));
            }
            for st in &p.states {
                for arm in &st.arms {
                    if arm.target >= n {
                        return bad(format!("arm target out of range in `{}`", p.subject));
                    }
                    let consistent = match (&arm.selector, st.kind) {
                        (Selector::Outcome { .. }, StateKind::Function) => true,
                        (Selector::Emit { message, .. }, StateKind::Send)
                        | (Selector::Match { message, .. }, StateKind::Receive) => self.message(message).is_some(),
                        (Selector::Timeout, StateKind::Receive) => true,
                        _ => false,
                    };
                    if !consistent {
                        return bad(format!("inconsistent arm in `{}` state `{}`", p.subject, st.id));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reads and verifies a bundle file.
pub fn load_bundle(path: &Path) -> Result<Bundle, BundleError> {
    let bytes = std::fs::read(path).map_err(|e| BundleError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Bundle::from_bytes(&bytes)
}

/// Writes a bundle atomically (temporary file, then rename).
pub fn store_bundle(b: &Bundle, path: &Path) -> Result<(), BundleError> {
    let io = |e: std::io::Error| BundleError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let tmp = path.with_extension(format!("{BUNDLE_EXTENSION}.tmp"));
    std::fs::write(&tmp, b.to_bytes()).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}
