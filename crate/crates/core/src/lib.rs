//! Web-agent environment engine: episode control, action parsing, DOM
//! observation, browser backends, tasks, evaluation and rewards.

pub mod action;
pub mod api;
pub mod backend;
pub mod config;
pub mod dom;
pub mod episode;
pub mod error;
pub mod eval;
pub mod orchestrator;
pub mod policy;
pub mod prompt;
pub mod reward;
pub mod synthetic;
pub mod task;
pub mod trajectory;
pub mod wire;
