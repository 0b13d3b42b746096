//! Supervisor agent, its message protocol with the specialists, and the
//! chat backends that drive every language-model decision.
//!
//! An episode runs plan, dispatch, accumulate, and then either finalize or
//! replan. It is bounded by a step cap that counts plan events and
//! specialist dispatches.

pub mod backend;
pub mod oracle;
pub mod prompts;
pub mod protocol;
pub mod supervisor;

pub use backend::{
    call_backend, BackendError, CallRecord, ChatBackend, ChatMessage, ChatRequest, ErrorBackend, HttpBackend,
    ScriptedBackend, Stage, StageContext,
};
pub use oracle::{AdversarialBackend, FaultyBackend, OracleBackend};
pub use protocol::{AgentResult, AgentStatus, AgentTask, Directive, Evidence, Exchange};
pub use supervisor::{
    DispatchRecord, EpisodeConfig, EpisodeTranscript, FailureKind, Injection, PlanEvent, Supervisor,
    SufficiencyMode, DEFAULT_STEP_CAP,
};
