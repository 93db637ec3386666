//! Prompt-template sensitivity analysis.
//!
//! Templates are modelled as syntax trees and mutated one atomic operation at
//! a time; each mutation is validated before it joins the pool. The resulting
//! templates are evaluated against code-intelligence tasks and the spread of
//! scores is summarized with per-model and cross-model statistics.

pub mod eval;
pub mod http;
pub mod mutator;
pub mod ops;
pub mod stats;
pub mod store;
pub mod template;
pub mod util;
pub mod validation;

pub use ops::{apply_operation, detect_inconsistencies, parse_op_call, OpCall};
pub use template::{instantiate_prompt, MetaTemplate, TaskInstance, TemplateError};
