//! A stack bytecode VM whose loader rewrites every static invocation into a
//! dynamically linked call site. Call-site targets are function-handle
//! trees that a management agent can swap or wrap with before/after advice
//! while programs run.

pub mod agent;
pub mod bench;
pub mod builtins;
pub mod bytecode;
pub mod callsite;
pub mod corpus;
pub mod handles;
pub mod transformer;
pub mod value;
pub mod vm;
