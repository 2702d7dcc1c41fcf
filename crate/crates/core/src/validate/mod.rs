//! Static semantic checks and bounded interaction-soundness exploration.
//!
//! Diagnostic codes are a stable contract; see [`codes`]. Errors block
//! compilation, warnings and infos do not.

mod interfaces;
mod soundness;
mod structure;

use serde::{Deserialize, Serialize};

use crate::model::ProcessModel;

pub use interfaces::check_interfaces;
pub use soundness::{check_soundness, GlobalStep, PoolEntry, ProductState, SoundnessReport, Verdict};
pub use structure::check_structure;

pub mod codes {
    /// State unreachable from the start state.
    pub const STRUCT_UNREACHABLE: &str = "V-STRUCT-01";
    /// No end state reachable from a state.
    pub const STRUCT_NO_END: &str = "V-STRUCT-02";
    /// Function state declares the same outcome twice.
    pub const STRUCT_DUP_OUTCOME: &str = "V-STRUCT-03";
    /// End state with an outgoing transition.
    pub const STRUCT_END_OUTGOING: &str = "V-STRUCT-04";
    /// Send transition disagrees with the message's declared direction.
    pub const IFACE_SEND_DIRECTION: &str = "V-IFACE-01";
    /// Receive transition disagrees with the message's declared direction.
    pub const IFACE_RECEIVE_DIRECTION: &str = "V-IFACE-02";
    /// Declared message never sent.
    pub const IFACE_NEVER_SENT: &str = "V-IFACE-03";
    /// Message sent but never received.
    pub const IFACE_NEVER_RECEIVED: &str = "V-IFACE-04";
    /// Subject reaches an end state with messages left in its pool.
    pub const SOUND_UNCONSUMED: &str = "V-SOUND-02";
    /// Soundness not decided because the model has external subjects.
    pub const SOUND_EXTERNAL: &str = "V-SOUND-03";
    /// Soundness check skipped because of static errors.
    pub const SKIP_SOUNDNESS: &str = "V-SKIP-01";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Location {
    pub file: String,
    pub element: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub location: Location,
    pub message: String,
}

impl Diagnostic {
    pub fn new(
        severity: Severity,
        code: &str,
        file: impl Into<String>,
        element: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Diagnostic {
            severity,
            code: code.to_string(),
            location: Location {
                file: file.into(),
                element: element.into(),
            },
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
            Severity::Info => "info",
        };
        write!(
            f,
            "{sev}[{}] {}#{}: {}",
            self.code, self.location.file, self.location.element, self.message
        )
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(Diagnostic::is_error)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidateOptions {
    pub pool_bound: u32,
    pub state_cap: usize,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            pool_bound: 1,
            state_cap: 1_000_000,
        }
    }
}

/// Combined result, serialized as `{diagnostics, soundness}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
    pub soundness: SoundnessReport,
}

impl ValidationReport {
    pub fn has_errors(&self) -> bool {
        has_errors(&self.diagnostics)
    }
}

/// Runs structure, interface and soundness checks. Soundness is skipped when
/// the static checks report errors.
pub fn validate(m: &ProcessModel, opts: ValidateOptions) -> ValidationReport {
    let mut diagnostics = check_structure(m);
    diagnostics.extend(check_interfaces(m));
    let soundness = if has_errors(&diagnostics) {
        diagnostics.push(Diagnostic::new(
            Severity::Info,
            codes::SKIP_SOUNDNESS,
            crate::model::SID_FILE,
            m.id.as_str(),
            "soundness check skipped because of static errors",
        ));
        SoundnessReport::skipped(opts.pool_bound)
    } else {
        check_soundness(m, opts.pool_bound, opts.state_cap)
    };
    diagnostics.extend(soundness.warnings.iter().cloned());
    ValidationReport { diagnostics, soundness }
}
