//! Frame-incremental conversational decision engine.
//!
//! The engine consumes a time-stamped stream of dialogue events (voice
//! activity edges, recognized words, prosody frames, listener behaviors) and
//! produces listener behavior: frame-wise backchannels, turn-taking actions
//! driven by a finite-state turn-taking machine, attentive-listening
//! responses, interview questions, and a rolling engagement estimate.
//!
//! Every decision is recorded in a canonical [`harness::DecisionLog`] so a
//! corpus replay and a live session that saw the same events produce
//! byte-identical logs.

pub mod backchannel;
pub mod config;
pub mod corpus;
pub mod engagement;
pub mod engine;
pub mod features;
pub mod harness;
pub mod interview;
pub mod listener;
pub mod par;
pub mod prosody;
pub mod statmodel;
pub mod timeline;
pub mod turntaking;

pub use config::{EngineAssets, SessionConfig, Task};
pub use engine::Session;
pub use timeline::{DialogueEvent, Payload, SessionTimeline};
