mod common;

use common::{bundle_bytes, create, engine, wait_until};
use sbpm_engine::{CreateInstance, EngineError};
use sbpm_runtime::{Event, InstanceStatus, TaskKind, TaskOption};
use serde_json::Value;

#[tokio::test(flavor = "multi_thread")]
async fn deploy_is_idempotent_and_listed_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let h = e.deploy(&bundle_bytes("ping-pong")).unwrap();
    assert_eq!(h.len(), 64);
    assert_eq!(e.deploy(&bundle_bytes("ping-pong")).unwrap(), h);
    assert_eq!(e.bundles().len(), 1);
    let bytes = bundle_bytes("order");
    assert!(matches!(e.deploy(&bytes[..bytes.len() - 3]), Err(EngineError::CorruptBundle(_))));
    assert_eq!(e.bundles().len(), 1);
    e.deploy(&bytes).unwrap();
    let names: Vec<String> = e.bundles().into_iter().map(|b| b.name).collect();
    assert_eq!(names, ["Order Process", "Ping Pong"]);
    let files = std::fs::read_dir(dir.path().join("bundles")).unwrap().count();
    assert_eq!(files, 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn create_checks_bundle_roles_and_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let h = e.deploy(&bundle_bytes("ping-pong")).unwrap();
    assert!(matches!(
        e.create_instance(CreateInstance {
            hash: "0".repeat(64),
            ..CreateInstance::default()
        }),
        Err(EngineError::UnknownBundle(_))
    ));
    assert_eq!(
        e.create_instance(CreateInstance {
            hash: h.clone(),
            bindings: common::agents(&[("system", "bot")]),
            ..CreateInstance::default()
        }),
        Err(EngineError::UnboundRole("clerk".into()))
    );
    let mut req = CreateInstance {
        hash: h,
        bindings: common::agents(&[("clerk", "alice"), ("system", "bot")]),
        ..CreateInstance::default()
    };
    req.placement.insert("B".parse().unwrap(), "nodeX".into());
    assert_eq!(e.create_instance(req), Err(EngineError::UnknownNode("nodeX".into())));
}

#[tokio::test(flavor = "multi_thread")]
async fn worklist_and_completion() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let h = e.deploy(&bundle_bytes("ping-pong")).unwrap();
    let id = create(&e, &h, &[("clerk", "alice"), ("system", "bot")]);
    let tasks = e.tasks_for("alice");
    assert_eq!(tasks.len(), 1);
    let t = &tasks[0];
    assert_eq!(t.task.subject.as_str(), "A");
    assert_eq!(t.task.kind, TaskKind::ChooseOutcome);
    assert_eq!(t.task.options, [TaskOption::Outcome("ok".into())]);
    assert_eq!(t.assigned_role, "clerk");
    assert!(e.tasks_for("bot").is_empty());

    let tid = t.task.task_id;
    assert!(matches!(
        e.complete_task(tid, "nope", Value::Null, None),
        Err(EngineError::NoSuchOutcome(_))
    ));
    assert!(matches!(
        e.complete_task(tid, "ok", Value::Null, Some("mallory")),
        Err(EngineError::NotYourTask { .. })
    ));
    e.complete_task(tid, "ok", Value::Null, Some("alice")).unwrap();
    assert_eq!(e.complete_task(tid, "ok", Value::Null, None), Err(EngineError::TaskGone(tid.to_string())));
    assert!(matches!(
        e.complete_task(uuid::Uuid::nil(), "ok", Value::Null, None),
        Err(EngineError::UnknownTask(_))
    ));
    assert!(e.tasks_for("alice").is_empty());

    let r = e.report(id).unwrap();
    assert_eq!(r.status, InstanceStatus::Completed);
    let trace = e.trace(id).unwrap();
    let first = trace.iter().find(|r| r.event.kind() == "STATE_ENTERED").unwrap().ts;
    let last = trace.last().unwrap();
    assert_eq!(last.event.kind(), "INSTANCE_COMPLETED");
    assert_eq!(r.metrics.duration_ms, Some(last.ts - first));
    let choice = trace.iter().find(|r| r.event.kind() == "CHOICE_MADE").unwrap();
    assert!(matches!(&choice.event, Event::ChoiceMade { agent: Some(a), .. } if a == "alice"));
}

#[tokio::test(flavor = "multi_thread")]
async fn running_report_and_unknown_instance() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let h = e.deploy(&bundle_bytes("ping-pong")).unwrap();
    let id = create(&e, &h, &[("clerk", "alice"), ("system", "bot")]);
    let r = e.report(id).unwrap();
    assert_eq!(r.status, InstanceStatus::Running);
    assert_eq!(r.subjects["A"].state_name, "prepare");
    assert_eq!(r.subjects["B"].state_name, "await ping");
    assert_eq!(r.metrics.duration_ms, None);
    assert_eq!(
        e.report(uuid::Uuid::nil()).unwrap_err(),
        EngineError::UnknownInstance(uuid::Uuid::nil().to_string())
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn instances_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let h = e.deploy(&bundle_bytes("ping-pong")).unwrap();
    let a = create(&e, &h, &[("clerk", "alice"), ("system", "bot")]);
    let b = create(&e, &h, &[("clerk", "alice"), ("system", "bot")]);
    assert_ne!(a, b);
    let tasks = e.tasks_for("alice");
    assert_eq!(tasks.len(), 2);
    let ta = tasks.iter().find(|t| t.task.instance_id == a).unwrap().task.task_id;
    e.complete_task(ta, "ok", Value::Null, None).unwrap();
    assert_eq!(e.report(a).unwrap().status, InstanceStatus::Completed);
    assert_eq!(e.report(b).unwrap().status, InstanceStatus::Running);
    for (id, other) in [(a, b), (b, a)] {
        for r in e.trace(id).unwrap() {
            let line = serde_json::to_string(&r).unwrap();
            assert!(!line.contains(&other.to_string()), "{line}");
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn metrics_from_copied_log_match_live_report() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let h = e.deploy(&bundle_bytes("ping-pong")).unwrap();
    let id = create(&e, &h, &[("clerk", "alice"), ("system", "bot")]);
    tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    let t = e.tasks_for("alice")[0].task.task_id;
    e.complete_task(t, "ok", Value::Null, None).unwrap();
    let live = e.report(id).unwrap();
    assert!(live.metrics.wait_ms["A"] >= 20, "{:?}", live.metrics);

    let copy = dir.path().join("copy.jsonl");
    std::fs::copy(dir.path().join("instances").join(id.to_string()).join("events.jsonl"), &copy).unwrap();
    let log = sbpm_runtime::log::read(&copy).unwrap();
    let bundle = e.bundle(&h).unwrap();
    let meta: sbpm_engine::InstanceRecord = serde_json::from_slice(
        &std::fs::read(dir.path().join("instances").join(id.to_string()).join("meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sbpm_engine::metrics::compute(&log, &bundle, &meta.meta), live.metrics);
    assert_eq!(log, e.trace(id).unwrap());
}

#[tokio::test(flavor = "multi_thread")]
async fn instances_resume_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (h, id) = {
        let e = engine(dir.path());
        let h = e.deploy(&bundle_bytes("ping-pong")).unwrap();
        (h.clone(), create(&e, &h, &[("clerk", "alice"), ("system", "bot")]))
    };
    let e = engine(dir.path());
    assert_eq!(e.bundles()[0].hash, h);
    assert_eq!(e.report(id).unwrap().status, InstanceStatus::Running);
    let t = e.tasks_for("alice")[0].task.task_id;
    e.complete_task(t, "ok", Value::Null, None).unwrap();
    wait_until("completion", || e.report(id).unwrap().status == InstanceStatus::Completed).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn receive_timeout_fires_through_engine_timer() {
    let dir = tempfile::tempdir().unwrap();
    let e = engine(dir.path());
    let h = e.deploy(&bundle_bytes("order")).unwrap();
    let id = create(&e, &h, &[("customer", "carol"), ("clerk", "clerk"), ("warehouse", "wh")]);
    let payload = serde_json::json!({"customer": "c", "item": {"sku": "x", "qty": 1}});
    let step = |agent: &str, outcome: &str, payload: Value| {
        let t = e.tasks_for(agent).into_iter().next().unwrap_or_else(|| panic!("no task for {agent}"));
        e.complete_task(t.task.task_id, outcome, payload, None).unwrap();
    };
    step("carol", "ok", Value::Null);
    step("carol", "order", payload);
    step("clerk", "accept", Value::Null);
    step("carol", "keep", Value::Null);
    wait_until("timeout and shipping", || !e.tasks_for("wh").is_empty()).await;
    assert!(e.trace(id).unwrap().iter().any(|r| r.event.kind() == "TIMEOUT_FIRED"));
    step("wh", "ok", Value::Null);
    wait_until("completion", || e.report(id).unwrap().status == InstanceStatus::Completed).await;
}
