//! Atomic operations over syntax trees.
//!
//! Every operation rewrites the content of exactly one existing node (the
//! shared format counts as one node); nodes are never inserted or removed.

mod apply;
mod call;
mod case;
mod consistency;

pub use apply::{apply_operation, ApplyError};
pub use call::{parse_op_call, Literal, OpCall, Origin, ParseError};
pub use case::CaseStyle;
pub use consistency::{detect_inconsistencies, stale_mentions, Inconsistency, StaleLiteral};

pub(crate) use apply::value_literal;
