use std::collections::VecDeque;

use super::{codes, Diagnostic, Severity};
use crate::model::{behavior_file_name, BehaviorGraph, Label, ProcessModel};

/// Reachability, end-state and outcome-label rules for every behavior.
pub fn check_structure(m: &ProcessModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for (subject, graph) in &m.behaviors {
        check_graph(&behavior_file_name(subject), graph, &mut out);
    }
    out
}

fn check_graph(file: &str, g: &BehaviorGraph, out: &mut Vec<Diagnostic>) {
    let n = g.states.len();
    let index = |id: &str| g.state_index(id).expect("parser resolves transition endpoints");
    let mut succ = vec![Vec::new(); n];
    let mut pred = vec![Vec::new(); n];
    for t in &g.transitions {
        let (a, b) = (index(&t.from), index(&t.to));
        succ[a].push(b);
        pred[b].push(a);
    }

    let start: Vec<usize> = (0..n).filter(|&i| g.states[i].start).collect();
    let ends: Vec<usize> = (0..n).filter(|&i| g.states[i].end).collect();
    let reachable = flood(&start, &succ, n);
    let reaches_end = flood(&ends, &pred, n);

    for (i, s) in g.states.iter().enumerate() {
        if !reachable[i] {
            out.push(Diagnostic::new(
                Severity::Error,
                codes::STRUCT_UNREACHABLE,
                file,
                s.id.as_str(),
                format!("state `{}` is unreachable from the start state", s.id),
            ));
        }
        if !reaches_end[i] {
            out.push(Diagnostic::new(
                Severity::Warning,
                codes::STRUCT_NO_END,
                file,
                s.id.as_str(),
                format!("no end state is reachable from state `{}`", s.id),
            ));
        }
        let mut seen: Vec<&str> = Vec::new();
        let mut reported: Vec<&str> = Vec::new();
        for t in g.outgoing(&s.id) {
            if let Label::Outcome { name } = &t.label {
                if seen.contains(&name.as_str()) && !reported.contains(&name.as_str()) {
                    reported.push(name);
                    out.push(Diagnostic::new(
                        Severity::Error,
                        codes::STRUCT_DUP_OUTCOME,
                        file,
                        s.id.as_str(),
                        format!("outcome `{name}` is declared more than once on state `{}`", s.id),
                    ));
                }
                seen.push(name);
            }
        }
        if s.end && g.outgoing(&s.id).next().is_some() {
            out.push(Diagnostic::new(
                Severity::Error,
                codes::STRUCT_END_OUTGOING,
                file,
                s.id.as_str(),
                format!("end state `{}` has outgoing transitions", s.id),
            ));
        }
    }
}

fn flood(seeds: &[usize], edges: &[Vec<usize>], n: usize) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = seeds.iter().copied().collect();
    for &s in seeds {
        seen[s] = true;
    }
    while let Some(v) = queue.pop_front() {
        for &w in &edges[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen
}
