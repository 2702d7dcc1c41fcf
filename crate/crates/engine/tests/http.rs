mod common;

use std::time::Duration;

use common::{bundle_bytes, wait_until};
use sbpm_engine::{start_server, EngineConfig, Server};
use serde_json::{json, Value};

async fn server(dir: &std::path::Path, node: &str) -> Server {
    start_server(EngineConfig::new(dir, node), "127.0.0.1:0", "127.0.0.1:0").await.unwrap()
}

fn client() -> reqwest::Client {
    reqwest::Client::builder().timeout(Duration::from_secs(10)).build().unwrap()
}

async fn get(c: &reqwest::Client, url: String) -> (u16, Value) {
    let r = c.get(url).send().await.unwrap();
    (r.status().as_u16(), r.json().await.unwrap())
}

async fn post(c: &reqwest::Client, url: String, body: Value) -> (u16, Value) {
    let r = c.post(url).json(&body).send().await.unwrap();
    (r.status().as_u16(), r.json().await.unwrap())
}

#[tokio::test(flavor = "multi_thread")]
async fn rest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = server(dir.path(), "n1").await;
    let base = format!("http://{}", s.http_addr);
    let c = client();

    let r = c.post(format!("{base}/bundles")).body(bundle_bytes("ping-pong")).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 200);
    let hash = r.json::<Value>().await.unwrap()["hash"].as_str().unwrap().to_string();
    let r = c.post(format!("{base}/bundles")).body(b"junk".to_vec()).send().await.unwrap();
    assert_eq!(r.status().as_u16(), 400);
    assert_eq!(r.json::<Value>().await.unwrap()["code"], "CorruptBundle");
    let (_, list) = get(&c, format!("{base}/bundles")).await;
    assert_eq!(list[0]["hash"], hash.as_str());

    let (st, body) = post(&c, format!("{base}/instances"), json!({"hash": "ab", "bindings": {}})).await;
    assert_eq!((st, body["code"].as_str()), (404, Some("UnknownBundle")));
    let (st, body) = post(
        &c,
        format!("{base}/instances"),
        json!({"hash": hash, "bindings": {"clerk": "alice", "system": "bot"}}),
    )
    .await;
    assert_eq!(st, 200, "{body}");
    let id = body["instance_id"].as_str().unwrap().to_string();

    let (_, tasks) = get(&c, format!("{base}/agents/alice/tasks")).await;
    assert_eq!(tasks.as_array().unwrap().len(), 1);
    assert_eq!(tasks[0]["kind"], "choose_outcome");
    assert_eq!(tasks[0]["options"], json!(["ok"]));
    let task = tasks[0]["task_id"].as_str().unwrap().to_string();
    let (st, body) = post(&c, format!("{base}/tasks/{task}/complete"), json!({"outcome": "nah"})).await;
    assert_eq!((st, body["code"].as_str()), (422, Some("NoSuchOutcome")));
    let (st, _) = post(&c, format!("{base}/tasks/{task}/complete"), json!({"outcome": "ok", "payload": null})).await;
    assert_eq!(st, 200);
    let (st, body) = post(&c, format!("{base}/tasks/{task}/complete"), json!({"outcome": "ok"})).await;
    assert_eq!((st, body["code"].as_str()), (410, Some("TaskGone")));

    let (_, report) = get(&c, format!("{base}/instances/{id}")).await;
    assert_eq!(report["status"], "completed");
    let (_, trace) = get(&c, format!("{base}/instances/{id}/trace")).await;
    let last = trace.as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["kind"], "INSTANCE_COMPLETED");
    assert_eq!(last["subject"], "SUPERVISOR");
    let (st, body) = get(&c, format!("{base}/instances/not-an-id")).await;
    assert_eq!((st, body["code"].as_str()), (404, Some("UnknownInstance")));

    let (_, nodes) = get(&c, format!("{base}/nodes")).await;
    assert_eq!(nodes[0]["node_id"], "n1");
}

#[tokio::test(flavor = "multi_thread")]
async fn two_nodes_run_one_instance() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let n1 = server(d1.path(), "n1").await;
    let n2 = server(d2.path(), "n2").await;
    let peer = n2.engine.join(&format!("http://{}", n1.http_addr)).await.unwrap();
    assert_eq!(peer.node_id, "n1");
    let ids: Vec<String> = n1.engine.nodes().into_iter().map(|n| n.node_id).collect();
    assert_eq!(ids, ["n1", "n2"]);

    let hash = n1.engine.deploy(&bundle_bytes("order")).unwrap();
    let run = |placement: Value| {
        let e = n1.engine.clone();
        let hash = hash.clone();
        async move {
            let req = serde_json::from_value(json!({
                "hash": hash,
                "bindings": {"customer": "carol", "clerk": "clerk", "warehouse": "wh"},
                "placement": placement,
            }))
            .unwrap();
            let id = e.create_instance(req).unwrap();
            let plan: &[(&str, &str, Value)] = &[
                ("carol", "ok", Value::Null),
                ("carol", "order", json!({"customer": "c", "item": {"sku": "x", "qty": 1}})),
                ("clerk", "accept", Value::Null),
                ("carol", "keep", Value::Null),
                ("wh", "ok", Value::Null),
            ];
            for (agent, outcome, payload) in plan {
                wait_until(&format!("task for {agent}"), || !e.tasks_for(agent).is_empty()).await;
                let t = e.tasks_for(agent)[0].task.task_id;
                e.complete_task(t, outcome, payload.clone(), None).unwrap();
            }
            wait_until("completion", || {
                e.report(id).unwrap().status != sbpm_runtime::InstanceStatus::Running
            })
            .await;
            assert_eq!(e.report(id).unwrap().status, sbpm_runtime::InstanceStatus::Completed);
            let mut per: std::collections::BTreeMap<String, Vec<String>> = Default::default();
            for r in e.trace(id).unwrap() {
                if let sbpm_runtime::Event::StateEntered { state, .. } = &r.event {
                    per.entry(r.subject.clone()).or_default().push(state.to_string());
                }
            }
            (id, per)
        }
    };
    let (_, local) = run(json!({})).await;
    let (id, split) = run(json!({"OrderHandling": "n2", "Shipment": "n2"})).await;
    assert_eq!(local, split);
    assert_eq!(local["Customer"], ["c0", "c1", "c2", "c3", "c4", "c5"]);
    // The replica on n2 is dropped once the instance completes.
    wait_until("replica stop", || n2.engine.instance(id).is_none()).await;
}
