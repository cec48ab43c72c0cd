//! Core of the agentkernel platform.

pub mod agent;
pub mod agents;
pub mod browse;
pub mod config;
pub mod controller;
pub mod eval;
pub mod event;
pub mod llm;
pub mod runtime;
pub mod skills;
