use thiserror::Error;

use super::call::{Literal, OpCall};
use super::case::CaseStyle;
use crate::template::{MetaTemplate, OpKind, OpSpec, SharedFormat, TemplateError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("unknown operation `{0}`")]
    UnknownOperation(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("bad arguments for `{name}`: {message}")]
    BadArguments { name: String, message: String },
    #[error("operation leaves the rendered template unchanged")]
    NoOp,
    #[error(transparent)]
    Invariant(#[from] TemplateError),
}

/// The literal carrying the new value of `call` under `spec`.
pub(crate) fn value_literal<'a>(spec: &OpSpec, call: &'a OpCall) -> Result<&'a Literal, ApplyError> {
    let bad = |message: String| ApplyError::BadArguments {
        name: call.name.clone(),
        message,
    };
    let idx = spec
        .value_arg()
        .ok_or_else(|| bad("operation declares no value argument".into()))?;
    if call.args.len() != spec.args.len() {
        return Err(bad(format!(
            "expected {} arguments, got {}",
            spec.args.len(),
            call.args.len()
        )));
    }
    Ok(&call.args[idx])
}

/// Applies one atomic operation, returning a new meta-template whose lineage
/// is extended by `call`. Only the targeted node changes.
pub fn apply_operation(mt: &MetaTemplate, call: &OpCall) -> Result<MetaTemplate, ApplyError> {
    let spec = mt
        .op(&call.name)
        .ok_or_else(|| ApplyError::UnknownOperation(call.name.clone()))?;
    let value = value_literal(spec, call)?;
    let bad = |message: &str| ApplyError::BadArguments {
        name: call.name.clone(),
        message: message.to_string(),
    };
    let text = value.as_text().ok_or_else(|| bad("value argument must be a string"))?;

    let mut out = mt.clone();
    let tree = &mut out.tree;
    match spec.kind {
        OpKind::ChangeFormat => {
            let format = SharedFormat::from_notation(text, tree.has_footer())
                .ok_or_else(|| bad("format must be written as `header...footer`"))?;
            tree.set_format(format);
        }
        OpKind::ChangeTagCase => {
            let style: CaseStyle = text.parse().map_err(|e: String| bad(&e))?;
            let node = tree
                .node_mut(&spec.target)
                .ok_or_else(|| ApplyError::UnknownNode(spec.target.clone()))?;
            node.content = style.apply(&node.content);
        }
        OpKind::ParaphraseTag | OpKind::ChangeDelimiter => {
            let node = tree
                .node_mut(&spec.target)
                .ok_or_else(|| ApplyError::UnknownNode(spec.target.clone()))?;
            node.content = text.to_string();
        }
        OpKind::ParaphraseText => {
            let mut mentions = tree
                .node(&spec.target)
                .ok_or_else(|| ApplyError::UnknownNode(spec.target.clone()))?
                .mentions
                .clone();
            // A mention follows the paraphrase when the new text quotes the
            // referenced node's current rendering; otherwise it keeps its
            // old literal, which must still be present.
            for m in &mut mentions {
                match tree.mention_form(&m.node, m.form) {
                    Some(current) if text.contains(&current) => m.literal = current,
                    _ if text.contains(&m.literal) => {}
                    _ => {
                        return Err(TemplateError::invariant(
                            &spec.target,
                            format!("paraphrase drops the reference {:?}", m.literal),
                        )
                        .into())
                    }
                }
            }
            let node = tree.node_mut(&spec.target).expect("checked above");
            node.content = text.to_string();
            node.mentions = mentions;
        }
    }
    tree.validate()?;
    if tree.render() == mt.tree.render() {
        return Err(ApplyError::NoOp);
    }
    out.lineage.push(call.clone());
    Ok(out)
}
