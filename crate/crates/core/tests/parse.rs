use proptest::prelude::*;
use sbpm_core::model::{parse_model, serialize_model, FieldType, Label, ParseError, StateKind};
use sbpm_testkit::{edit, fixture, fixture_files, generate::random_model, FIXTURES};

#[test]
fn all_fixtures_parse() {
    for name in FIXTURES {
        fixture(name);
    }
}

#[test]
fn ping_pong_fields() {
    let m = fixture("ping-pong");
    assert_eq!(m.id, "pingpong");
    assert_eq!(m.subjects.len(), 2);
    assert_eq!(m.behaviors.len(), 2);
    assert_eq!(m.messages.len(), 2);

    let ping = m.message("ping").unwrap();
    assert_eq!((ping.from.as_str(), ping.to.as_str()), ("A", "B"));
    let pong = m.message("pong").unwrap();
    assert_eq!((pong.from.as_str(), pong.to.as_str()), ("B", "A"));

    let a = m.subject("A").unwrap();
    assert_eq!(a.role, "clerk");
    assert!(!a.external);
    assert_eq!(a.pool_capacity, 16);

    let ga = m.behavior("A").unwrap();
    let ids: Vec<&str> = ga.states.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["s0", "s1", "s2", "s3"]);
    let kinds: Vec<StateKind> = ga.states.iter().map(|s| s.kind).collect();
    assert_eq!(kinds, [StateKind::Function, StateKind::Send, StateKind::Receive, StateKind::Function]);
    assert!(ga.states[0].start && !ga.states[0].end);
    assert!(ga.states[3].end);
    // timeout="0" means no timer
    assert_eq!(ga.states[2].timeout_ms, None);
    assert_eq!(ga.transitions[0].label, Label::Outcome { name: "ok".into() });
    assert_eq!(
        ga.transitions[1].label,
        Label::Send {
            message: "ping".parse().unwrap(),
            to: "B".parse().unwrap()
        }
    );
    assert_eq!(
        ga.transitions[2].label,
        Label::Receive {
            message: "pong".parse().unwrap(),
            from: "B".parse().unwrap()
        }
    );
}

#[test]
fn missing_behavior_file() {
    let mut files = fixture_files("ping-pong");
    files.remove("B.sbd.xml");
    assert_eq!(parse_model(&files), Err(ParseError::MissingFile("B.sbd.xml".into())));
}

#[test]
fn missing_sid() {
    let mut files = fixture_files("ping-pong");
    files.remove("sid.xml");
    assert_eq!(parse_model(&files), Err(ParseError::MissingFile("sid.xml".into())));
}

#[test]
fn second_start_state_is_a_schema_violation() {
    let mut files = fixture_files("ping-pong");
    edit(&mut files, "A.sbd.xml", r#"kind="send"/>"#, r#"kind="send" start="true"/>"#);
    match parse_model(&files) {
        Err(ParseError::SchemaViolation { file, line, element, attribute, .. }) => {
            assert_eq!(file, "A.sbd.xml");
            assert_eq!(line, 3, "reported at the second start state");
            assert_eq!(element, "state");
            assert_eq!(attribute.as_deref(), Some("start"));
        }
        other => panic!("expected SchemaViolation, got {other:?}"),
    }
}

#[test]
fn malformed_xml_has_location() {
    let mut files = fixture_files("ping-pong");
    edit(&mut files, "B.sbd.xml", r#"<state id="s1""#, r#"<state id="s1"<"#);
    match parse_model(&files) {
        Err(ParseError::MalformedXml { file, line, column, .. }) => {
            assert_eq!(file, "B.sbd.xml");
            assert_eq!(line, 3);
            assert!(column > 1);
        }
        other => panic!("expected MalformedXml, got {other:?}"),
    }
}

#[test]
fn dangling_message_reference() {
    let mut files = fixture_files("ping-pong");
    edit(&mut files, "A.sbd.xml", r#"message="ping""#, r#"message="pling""#);
    match parse_model(&files) {
        Err(ParseError::DanglingReference { file, id, .. }) => {
            assert_eq!(file, "A.sbd.xml");
            assert_eq!(id, "pling");
        }
        other => panic!("expected DanglingReference, got {other:?}"),
    }
}

#[test]
fn dangling_transition_target() {
    let mut files = fixture_files("ping-pong");
    edit(&mut files, "B.sbd.xml", r#"to="s2""#, r#"to="s7""#);
    assert_eq!(parse_model(&files).unwrap_err().code(), "DanglingReference");
}

#[test]
fn end_state_must_be_function() {
    let mut files = fixture_files("ping-pong");
    edit(&mut files, "A.sbd.xml", r#"kind="send"/>"#, r#"kind="send" end="true"/>"#);
    assert_eq!(parse_model(&files).unwrap_err().code(), "SchemaViolation");
}

#[test]
fn refinement_only_on_function_states() {
    let mut files = fixture_files("ping-pong");
    edit(&mut files, "A.sbd.xml", r#"kind="send"/>"#, r#"kind="send" refinement="svc"/>"#);
    assert_eq!(parse_model(&files).unwrap_err().code(), "SchemaViolation");
}

#[test]
fn timeout_only_on_receive_states() {
    let mut files = fixture_files("ping-pong");
    edit(&mut files, "A.sbd.xml", r#"kind="send"/>"#, r#"kind="send" timeout="10"/>"#);
    assert_eq!(parse_model(&files).unwrap_err().code(), "SchemaViolation");
}

#[test]
fn second_timeout_transition_rejected() {
    let mut files = fixture_files("order");
    edit(
        &mut files,
        "OrderHandling.sbd.xml",
        r#"<transition from="o3" to="o4" timeout="true"/>"#,
        "<transition from=\"o3\" to=\"o4\" timeout=\"true\"/>\n  <transition from=\"o3\" to=\"o7\" timeout=\"true\"/>",
    );
    assert_eq!(parse_model(&files).unwrap_err().code(), "SchemaViolation");
}

#[test]
fn unknown_attribute_rejected() {
    let mut files = fixture_files("ping-pong");
    edit(&mut files, "sid.xml", r#"role="clerk""#, r#"role="clerk" colour="red""#);
    match parse_model(&files) {
        Err(ParseError::SchemaViolation { attribute, .. }) => assert_eq!(attribute.as_deref(), Some("colour")),
        other => panic!("expected SchemaViolation, got {other:?}"),
    }
}

#[test]
fn invalid_identifier_rejected() {
    let mut files = fixture_files("ping-pong");
    edit(&mut files, "sid.xml", r#"id="ping" name"#, r#"id="9ping" name"#);
    assert!(parse_model(&files).is_err());
}

#[test]
fn document_order_preserved() {
    let m = fixture("order");
    let g = m.behavior("Customer").unwrap();
    let froms: Vec<&str> = g.transitions.iter().map(|t| t.from.as_str()).collect();
    assert_eq!(froms, ["c0", "c1", "c2", "c2", "c3", "c3", "c4", "c7"]);
}

#[test]
fn round_trip_fixtures() {
    for name in FIXTURES {
        let m = fixture(name);
        let files = serialize_model(&m);
        assert_eq!(parse_model(&files).unwrap(), m, "{name}");
        assert_eq!(serialize_model(&m), files, "{name}: serialization is deterministic");
    }
}

#[test]
fn serialized_bytes_are_plain_lf_utf8() {
    let files = serialize_model(&fixture("order"));
    for (name, bytes) in &files {
        let text = std::str::from_utf8(bytes).unwrap();
        assert!(!text.contains('\r'), "{name}");
        assert!(text.starts_with("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"));
    }
}

#[test]
fn nested_record_depth_survives_round_trip() {
    let m = fixture("order");
    let bo = m.bo_schema("orderBO").unwrap();
    assert_eq!(bo.depth(), 3);
    let item = bo.fields.iter().find(|f| f.name == "item").unwrap();
    assert_eq!(item.ty, FieldType::Record);
    let back = parse_model(&serialize_model(&m)).unwrap();
    assert_eq!(back.bo_schema("orderBO").unwrap().depth(), 3);
    assert_eq!(back.bo_schema("orderBO"), m.bo_schema("orderBO"));
}

#[test]
fn awkward_text_round_trips() {
    let mut m = fixture("ping-pong");
    m.name = "a & b <c> \"d\"\n\ttab".into();
    m.behaviors.get_mut("A").unwrap().states[0].name = "  spaced  ".into();
    assert_eq!(parse_model(&serialize_model(&m)).unwrap(), m);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generated_models_round_trip(seed in any::<u64>()) {
        let m = random_model(seed);
        let files = serialize_model(&m);
        prop_assert_eq!(parse_model(&files).unwrap(), m);
    }

    #[test]
    fn parser_never_panics_on_corrupted_input(
        file_idx in 0usize..3,
        pos in any::<prop::sample::Index>(),
        junk in prop::collection::vec(any::<u8>(), 0..8),
        cut in any::<bool>(),
    ) {
        let mut files = fixture_files("ping-pong");
        let name = files.keys().nth(file_idx).unwrap().clone();
        let bytes = files.get_mut(&name).unwrap();
        let at = pos.index(bytes.len());
        if cut {
            bytes.truncate(at);
        }
        bytes.splice(at.min(bytes.len())..at.min(bytes.len()), junk);
        if let Err(e) = parse_model(&files) {
            let located = matches!(
                e,
                ParseError::MissingFile(_)
                    | ParseError::MalformedXml { line: 1.., .. }
                    | ParseError::SchemaViolation { line: 1.., .. }
                    | ParseError::DanglingReference { line: 1.., .. }
            );
            prop_assert!(located, "unlocated error: {e:?}");
        }
    }

    #[test]
    fn parser_never_panics_on_arbitrary_bytes(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let mut files = fixture_files("ping-pong");
        files.insert("sid.xml".into(), bytes);
        let _ = parse_model(&files);
    }
}
