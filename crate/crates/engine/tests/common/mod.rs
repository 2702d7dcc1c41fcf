#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use sbpm_core::compile::{link_bundle, SupervisorConfig};
use sbpm_engine::{Binding, CreateInstance, Engine, EngineConfig};
use sbpm_testkit::fixture;

pub fn bundle_bytes(name: &str) -> Vec<u8> {
    link_bundle(&fixture(name), &SupervisorConfig::default()).unwrap().to_bytes()
}

pub fn engine(dir: &std::path::Path) -> Arc<Engine> {
    Engine::open(EngineConfig::new(dir, "n1")).unwrap()
}

pub fn agents(pairs: &[(&str, &str)]) -> BTreeMap<String, Binding> {
    pairs.iter().map(|(r, a)| (r.to_string(), Binding::Agent(a.to_string()))).collect()
}

pub fn create(e: &Engine, hash: &str, pairs: &[(&str, &str)]) -> uuid::Uuid {
    e.create_instance(CreateInstance {
        hash: hash.into(),
        bindings: agents(pairs),
        ..CreateInstance::default()
    })
    .unwrap()
}

pub async fn wait_until(what: &str, mut cond: impl FnMut() -> bool) {
    let start = Instant::now();
    while !cond() {
        assert!(start.elapsed() < Duration::from_secs(20), "timed out waiting for {what}");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}
