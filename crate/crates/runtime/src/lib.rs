//! Runtime for compiled bundles: the per-actor step function, the event
//! log and its replay, the supervisor/dispatcher host and wire framing.

pub mod actor;
pub mod envelope;
pub mod event;
pub mod host;
pub mod instance;
pub mod log;
pub mod wire;

pub use actor::{actor_step, ActorState, ActorStatus, Cx, Effect, Input, StepError};
pub use envelope::{correlation_id, task_id, Envelope};
pub use event::{Event, EventRecord, SUPERVISOR};
pub use host::{Hooks, Instance, NoHooks, OpenTask, TaskKind, TaskOption};
pub use instance::{checkpoint_replay, InstanceMeta, InstanceState, InstanceStatus, ReplayError};
pub use wire::{Frame, FrameKind};
