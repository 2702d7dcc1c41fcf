use sbpm_core::model::{parse_model, ProcessModel, State, StateKind};
use sbpm_core::validate::{
    check_interfaces, check_soundness, check_structure, codes, validate, GlobalStep, Severity, ValidateOptions, Verdict,
};
use sbpm_testkit::{edit, fixture, fixture_files, oracle};

fn codes_of(diags: &[sbpm_core::validate::Diagnostic]) -> Vec<&str> {
    diags.iter().map(|d| d.code.as_str()).collect()
}

fn orphan(m: &mut ProcessModel, subject: &str, id: &str) {
    m.behaviors.get_mut(subject).unwrap().states.push(State {
        id: id.parse().unwrap(),
        name: "orphan".into(),
        kind: StateKind::Function,
        start: false,
        end: true,
        refinement: None,
        on_error: None,
        timeout_ms: None,
    });
}

#[test]
fn ping_pong_is_clean() {
    let m = fixture("ping-pong");
    assert!(check_structure(&m).is_empty());
    assert!(check_interfaces(&m).is_empty());
}

#[test]
fn orphan_state_is_unreachable() {
    let mut m = fixture("ping-pong");
    orphan(&mut m, "A", "s9");
    let diags = check_structure(&m);
    assert_eq!(codes_of(&diags), [codes::STRUCT_UNREACHABLE]);
    assert_eq!(diags[0].location.element, "s9");
    assert_eq!(diags[0].location.file, "A.sbd.xml");
    assert_eq!(diags[0].severity, Severity::Error);
}

#[test]
fn duplicate_outcome() {
    let mut files = fixture_files("ping-pong");
    edit(
        &mut files,
        "A.sbd.xml",
        r#"<transition from="s0" to="s1" outcome="ok"/>"#,
        "<transition from=\"s0\" to=\"s1\" outcome=\"ok\"/>\n  <transition from=\"s0\" to=\"s3\" outcome=\"ok\"/>",
    );
    let m = parse_model(&files).unwrap();
    assert_eq!(codes_of(&check_structure(&m)), [codes::STRUCT_DUP_OUTCOME]);
}

#[test]
fn no_end_reachable_is_a_warning() {
    let mut files = fixture_files("ping-pong");
    // B loops between s0 and s1 forever.
    edit(&mut files, "B.sbd.xml", r#"from="s1" to="s2""#, r#"from="s1" to="s0""#);
    let m = parse_model(&files).unwrap();
    let diags = check_structure(&m);
    assert!(diags
        .iter()
        .any(|d| d.code == codes::STRUCT_NO_END && d.severity == Severity::Warning));
    assert!(diags.iter().any(|d| d.code == codes::STRUCT_UNREACHABLE && d.location.element == "s2"));
}

#[test]
fn end_state_with_outgoing_transition() {
    let mut m = fixture("ping-pong");
    let g = m.behaviors.get_mut("A").unwrap();
    let mut t = g.transitions[0].clone();
    t.from = "s3".parse().unwrap();
    g.transitions.push(t);
    assert!(codes_of(&check_structure(&m)).contains(&codes::STRUCT_END_OUTGOING));
}

#[test]
fn direction_flip() {
    let m = fixture("direction-flip");
    let diags = check_interfaces(&m);
    assert!(codes_of(&diags).contains(&codes::IFACE_SEND_DIRECTION));
    let report = validate(&m, ValidateOptions::default());
    assert!(report.has_errors());
    assert_eq!(report.soundness.verdict, Verdict::Inconclusive);
    assert!(codes_of(&report.diagnostics).contains(&codes::SKIP_SOUNDNESS));
}

#[test]
fn receive_direction_mismatch() {
    let mut m = fixture("ping-pong");
    let g = m.behaviors.get_mut("B").unwrap();
    g.transitions[0].label = sbpm_core::model::Label::Receive {
        message: "pong".parse().unwrap(),
        from: "A".parse().unwrap(),
    };
    assert!(codes_of(&check_interfaces(&m)).contains(&codes::IFACE_RECEIVE_DIRECTION));
}

#[test]
fn unused_message_warning() {
    let mut files = fixture_files("ping-pong");
    edit(
        &mut files,
        "sid.xml",
        "</process>",
        "  <message id=\"cancel\" name=\"Cancel\" from=\"A\" to=\"B\"/>\n</process>",
    );
    let m = parse_model(&files).unwrap();
    let diags = check_interfaces(&m);
    assert_eq!(codes_of(&diags), [codes::IFACE_NEVER_SENT]);
    assert_eq!(diags[0].severity, Severity::Warning);
    assert_eq!(diags[0].location.element, "cancel");
}

#[test]
fn sent_but_never_received_warning() {
    let mut files = fixture_files("ping-pong");
    edit(
        &mut files,
        "sid.xml",
        "</process>",
        "  <message id=\"extra\" name=\"Extra\" from=\"A\" to=\"B\"/>\n</process>",
    );
    edit(
        &mut files,
        "A.sbd.xml",
        r#"<transition from="s1" to="s2" message="ping" to-subject="B"/>"#,
        "<transition from=\"s1\" to=\"s2\" message=\"ping\" to-subject=\"B\"/>\n  <transition from=\"s1\" to=\"s2\" message=\"extra\" to-subject=\"B\"/>",
    );
    let m = parse_model(&files).unwrap();
    assert_eq!(codes_of(&check_interfaces(&m)), [codes::IFACE_NEVER_RECEIVED]);
}

#[test]
fn ping_pong_is_sound_and_matches_oracle() {
    let m = fixture("ping-pong");
    let r = check_soundness(&m, 1, 1_000_000);
    assert_eq!(r.verdict, Verdict::Sound);
    assert!(r.explored <= 32, "explored {}", r.explored);
    assert!(!r.cap_hit);
    let o = oracle::explore(&m, 1);
    assert!(o.sound());
    assert_eq!(r.explored, o.reachable);
}

#[test]
fn mutual_wait_deadlocks_immediately() {
    let m = fixture("mutual-wait");
    let r = check_soundness(&m, 1, 1_000_000);
    assert_eq!(r.verdict, Verdict::Unsound);
    assert_eq!(r.counterexample, Some(vec![]));
    assert_eq!(r.explored, 1);
    let report = validate(&m, ValidateOptions::default());
    assert!(!report.has_errors());
    assert_eq!(report.soundness.verdict, Verdict::Unsound);
}

#[test]
fn state_cap_makes_result_inconclusive() {
    let m = fixture("order");
    let r = check_soundness(&m, 2, 10);
    assert_eq!(r.verdict, Verdict::Inconclusive);
    assert!(r.cap_hit);
    assert_eq!(r.explored, 10);
}

#[test]
fn order_process_is_sound() {
    let m = fixture("order");
    for bound in [1, 2] {
        let r = check_soundness(&m, bound, 1_000_000);
        assert_eq!(r.verdict, Verdict::Sound, "bound {bound}: {:?}", r.counterexample);
        assert_eq!(r.explored, oracle::explore(&m, bound).reachable);
    }
}

#[test]
fn unconsumed_message_warning_keeps_verdict() {
    // After a timeout OrderHandling can close while a cancellation is still
    // queued; that is a warning, not unsoundness.
    let m = fixture("order");
    let report = validate(&m, ValidateOptions::default());
    assert_eq!(report.soundness.verdict, Verdict::Sound);
    let w: Vec<_> = report
        .diagnostics
        .iter()
        .filter(|d| d.code == codes::SOUND_UNCONSUMED)
        .collect();
    assert!(!w.is_empty());
    assert!(w.iter().all(|d| d.severity == Severity::Warning));
}

#[test]
fn external_subjects_are_inconclusive() {
    let mut files = fixture_files("ping-pong");
    edit(&mut files, "sid.xml", r#"role="system" external="false""#, r#"role="system" external="true""#);
    files.remove("B.sbd.xml");
    let m = parse_model(&files).unwrap();
    let report = validate(&m, ValidateOptions::default());
    assert_eq!(report.soundness.verdict, Verdict::Inconclusive);
    assert!(!report.soundness.cap_hit);
    assert!(codes_of(&report.diagnostics).contains(&codes::SOUND_EXTERNAL));
}

#[test]
fn blocked_senders_deadlock() {
    // Both subjects send first with pools of one and never receive before
    // sending twice.
    let sid = r#"<process id="jam" name="Jam" version="1">
  <subject id="A" name="A" role="r" external="false" pool="1"/>
  <subject id="B" name="B" role="r" external="false" pool="1"/>
  <message id="x" name="x" from="A" to="B"/>
  <message id="y" name="y" from="B" to="A"/>
</process>"#;
    let beh = |me: &str, other: &str, out: &str, inn: &str| {
        format!(
            r#"<behavior subject="{me}">
  <state id="a" name="a" kind="send" start="true"/>
  <state id="b" name="b" kind="send"/>
  <state id="c" name="c" kind="receive"/>
  <state id="d" name="d" kind="receive"/>
  <state id="e" name="e" kind="function" end="true"/>
  <transition from="a" to="b" message="{out}" to-subject="{other}"/>
  <transition from="b" to="c" message="{out}" to-subject="{other}"/>
  <transition from="c" to="d" message="{inn}" from-subject="{other}"/>
  <transition from="d" to="e" message="{inn}" from-subject="{other}"/>
</behavior>"#
        )
    };
    let mut files = sbpm_core::model::FileMap::new();
    files.insert("sid.xml".into(), sid.as_bytes().to_vec());
    files.insert("A.sbd.xml".into(), beh("A", "B", "x", "y").into_bytes());
    files.insert("B.sbd.xml".into(), beh("B", "A", "y", "x").into_bytes());
    let m = parse_model(&files).unwrap();
    let r = check_soundness(&m, 1, 1_000_000);
    assert_eq!(r.verdict, Verdict::Unsound);
    let ce = r.counterexample.clone().unwrap();
    assert_eq!(ce.len(), 2);
    assert!(ce.iter().all(|s| matches!(s, GlobalStep::Send { .. })));
    // A larger bound lets both sends through.
    assert_eq!(check_soundness(&m, 2, 1_000_000).verdict, Verdict::Unsound, "pool capacity caps the bound");
}

#[test]
fn monotone_under_added_unreachable_state() {
    for name in ["ping-pong", "order", "direction-flip", "mutual-wait"] {
        let mut m = fixture(name);
        let before = validate(&m, ValidateOptions::default()).diagnostics;
        let subject = m.behaviors.keys().next().unwrap().clone();
        orphan(&mut m, &subject, "zz");
        let after = validate(&m, ValidateOptions::default()).diagnostics;
        for d in before.iter().filter(|d| d.code != codes::SKIP_SOUNDNESS && d.severity != Severity::Info) {
            if d.code == codes::SOUND_UNCONSUMED {
                // Soundness is skipped once an error exists.
                continue;
            }
            assert!(after.contains(d), "{name}: lost {d}");
        }
    }
}

#[test]
fn deterministic_reports() {
    for name in sbpm_testkit::FIXTURES {
        let m = fixture(name);
        let a = validate(&m, ValidateOptions::default());
        let b = validate(&m, ValidateOptions::default());
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn report_json_field_names() {
    let report = validate(&fixture("mutual-wait"), ValidateOptions::default());
    let v = serde_json::to_value(&report).unwrap();
    assert!(v["diagnostics"].is_array());
    for key in ["verdict", "explored", "cap_hit", "counterexample"] {
        assert!(v["soundness"].get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["soundness"]["verdict"], "unsound");
}
