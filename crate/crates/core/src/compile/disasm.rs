use std::fmt::Write as _;

use super::bundle::{Bundle, BundleError, RestartPolicy};
use super::ir::Selector;

/// Renders a bundle as a listing: one block per subject, one line per arm.
///
/// ```text
/// subject B
///   s1 send: pong to A -> s2
/// ```
pub fn disassemble(b: &Bundle) -> Result<String, BundleError> {
    b.verify()?;
    let m = &b.manifest;
    let mut out = String::new();
    let _ = writeln!(out, "; process {} \"{}\" version {}", m.process_id, m.name, m.version);
    let _ = writeln!(out, "; hash {}", m.content_hash);
    match &b.supervisor.restart_policy {
        RestartPolicy::Never => {
            let _ = writeln!(out, "; restart never");
        }
        RestartPolicy::Replay { max_restarts, window_s } => {
            let _ = writeln!(out, "; restart replay max {max_restarts} within {window_s}s");
        }
    }
    for r in &b.supervisor.external_routes {
        let _ = writeln!(out, "; external {} route {}", r.subject, r.route.as_deref().unwrap_or("-"));
    }

    for p in &b.programs {
        out.push('\n');
        let _ = writeln!(out, "subject {}", p.subject);
        for (i, st) in p.states.iter().enumerate() {
            let mut tags = Vec::new();
            if i == p.start_index {
                tags.push("start".to_string());
            }
            if p.is_end(i) {
                tags.push("end".to_string());
            }
            if let Some(r) = &st.refinement {
                tags.push(format!("refinement={r}"));
            }
            if let Some(e) = &st.on_error {
                tags.push(format!("on-error={e}"));
            }
            let _ = write!(out, "  ; {} \"{}\"", st.id, st.name);
            if !tags.is_empty() {
                let _ = write!(out, " [{}]", tags.join(" "));
            }
            out.push('\n');

            let kind = st.kind.as_str();
            for arm in &st.arms {
                let target = &p.state(arm.target).id;
                let body = match &arm.selector {
                    Selector::Outcome { name } => name.clone(),
                    Selector::Emit { message, to, bo } => match bo {
                        Some(bo) => format!("{message} to {to} with {bo}"),
                        None => format!("{message} to {to}"),
                    },
                    Selector::Match { message, from } => format!("{message} from {from}"),
                    Selector::Timeout => format!("TIMEOUT after {}ms", st.timeout_ms.unwrap_or(0)),
                };
                let _ = writeln!(out, "  {} {kind}: {body} -> {target}", st.id);
            }
        }
    }
    Ok(out)
}
