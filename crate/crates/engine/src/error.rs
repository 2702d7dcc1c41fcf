use thiserror::Error;

/// Errors of engine operations. `code` is the name clients see.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
    #[error("unknown bundle {0}")]
    UnknownBundle(String),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("no agent bound for role `{0}`")]
    UnboundRole(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {0} is already closed")]
    TaskGone(String),
    #[error("task {task} is assigned to {owner}, not {agent}")]
    NotYourTask { task: String, owner: String, agent: String },
    #[error("{0}")]
    NoSuchOutcome(String),
    #[error("{0}")]
    PayloadInvalid(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::CorruptBundle(_) => "CorruptBundle",
            EngineError::UnknownBundle(_) => "UnknownBundle",
            EngineError::UnknownInstance(_) => "UnknownInstance",
            EngineError::UnboundRole(_) => "UnboundRole",
            EngineError::UnknownNode(_) => "UnknownNode",
            EngineError::UnknownTask(_) => "UnknownTask",
            EngineError::TaskGone(_) => "TaskGone",
            EngineError::NotYourTask { .. } => "NotYourTask",
            EngineError::NoSuchOutcome(_) => "NoSuchOutcome",
            EngineError::PayloadInvalid(_) => "PayloadInvalid",
            EngineError::BadRequest(_) => "BadRequest",
            EngineError::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for EngineError {
    fn from(e: std::io::Error) -> Self {
        EngineError::Io(e.to_string())
    }
}
