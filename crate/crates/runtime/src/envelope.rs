use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

use sbpm_core::Ident;

/// Namespace for the name-based ids derived inside an instance.
const ID_NAMESPACE: Uuid = Uuid::from_u128(0x6d1f_4a7e_93c2_4b8e_a0f5_2c7b_9e1d_3a64);

/// A message in transit between two subjects of one instance (or across an
/// instance boundary for external subjects).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub instance_id: Uuid,
    pub from_subject: Ident,
    pub to_subject: Ident,
    pub message_id: Ident,
    pub correlation_id: Uuid,
    /// Per-sender sequence number, starting at 0.
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

/// Deterministic correlation id of the `seq`-th envelope sent by `subject`.
pub fn correlation_id(instance: Uuid, subject: &str, seq: u64) -> Uuid {
    Uuid::new_v5(&ID_NAMESPACE, format!("msg/{instance}/{subject}/{seq}").as_bytes())
}

/// Deterministic id of the task opened when `subject` entered a state for
/// the `entry`-th time.
pub fn task_id(instance: Uuid, subject: &str, entry: u64) -> Uuid {
    Uuid::new_v5(&ID_NAMESPACE, format!("task/{instance}/{subject}/{entry}").as_bytes())
}
