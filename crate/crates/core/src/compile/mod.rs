//! Compilation of validated models into per-subject FSM programs and the
//! linked, content-addressed [`Bundle`].

mod bundle;
mod disasm;
mod ir;

use thiserror::Error;

pub use bundle::{
    load_bundle, store_bundle, Bundle, BundleError, ExternalRoute, Manifest, Metric, RestartPolicy, SendMode,
    SupervisorConfig, BUNDLE_EXTENSION, BUNDLE_MAGIC, BUNDLE_VERSION,
};
pub use disasm::disassemble;
pub use ir::{compile_subject, IrArm, IrState, Selector, SubjectProgram};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("subject `{0}` is external and has no behavior")]
    ExternalSubjectHasNoBehavior(String),
    #[error("route configured for `{0}`, which is not an external subject")]
    UnknownRouteSubject(String),
}

/// Compiles every internal subject and links them with `template` into a
/// bundle whose manifest is stamped with the fixed epoch.
pub fn link_bundle(m: &crate::model::ProcessModel, template: &SupervisorConfig) -> Result<Bundle, CompileError> {
    bundle::link(m, template)
}
