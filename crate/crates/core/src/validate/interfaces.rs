use super::{codes, Diagnostic, Severity};
use crate::model::{behavior_file_name, Label, ProcessModel, SID_FILE};

/// Consistency between the interaction diagram and the behaviors.
pub fn check_interfaces(m: &ProcessModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    for (subject, graph) in &m.behaviors {
        let file = behavior_file_name(subject);
        for t in &graph.transitions {
            match &t.label {
                Label::Send { message, to } => {
                    let decl = m.message(message).expect("parser resolves message references");
                    if decl.from != *subject || decl.to != *to {
                        out.push(Diagnostic::new(
                            Severity::Error,
                            codes::IFACE_SEND_DIRECTION,
                            &file,
                            t.from.as_str(),
                            format!(
                                "`{subject}` sends `{message}` to `{to}` but it is declared {} -> {}",
                                decl.from, decl.to
                            ),
                        ));
                    }
                }
                Label::Receive { message, from } => {
                    let decl = m.message(message).expect("parser resolves message references");
                    if decl.to != *subject || decl.from != *from {
                        out.push(Diagnostic::new(
                            Severity::Error,
                            codes::IFACE_RECEIVE_DIRECTION,
                            &file,
                            t.from.as_str(),
                            format!(
                                "`{subject}` receives `{message}` from `{from}` but it is declared {} -> {}",
                                decl.from, decl.to
                            ),
                        ));
                    }
                }
                Label::Outcome { .. } | Label::Timeout => {}
            }
        }
    }

    let labels = || m.behaviors.values().flat_map(|g| g.transitions.iter().map(|t| &t.label));
    for decl in &m.messages {
        let sender_internal = m.subject(&decl.from).is_some_and(|s| !s.external);
        let receiver_internal = m.subject(&decl.to).is_some_and(|s| !s.external);
        let sent = labels().any(|l| matches!(l, Label::Send { message, .. } if *message == decl.id));
        if sender_internal && !sent {
            out.push(Diagnostic::new(
                Severity::Warning,
                codes::IFACE_NEVER_SENT,
                SID_FILE,
                decl.id.as_str(),
                format!("message `{}` is declared but never sent", decl.id),
            ));
        }
        let received = labels().any(|l| {
            matches!(l, Label::Receive { message, from } if *message == decl.id && *from == decl.from)
        });
        if sent && receiver_internal && !received {
            out.push(Diagnostic::new(
                Severity::Warning,
                codes::IFACE_NEVER_RECEIVED,
                SID_FILE,
                decl.id.as_str(),
                format!("message `{}` is sent but no receive transition accepts it", decl.id),
            ));
        }
    }
    out
}
