use crate::ops::Inconsistency;
use crate::template::{MetaTemplate, OpSpec};

/// Prompt asking the mutator for one atomic operation on the whole template.
pub fn build_mutation_prompt(mt: &MetaTemplate, spec: &OpSpec) -> String {
    format!(
        "Below, you are provided with a prompt template.\n\
         {template}\n\
         Your task is to slightly modify the template to create a new one. The operation you are required to apply is:\n\
         {op}({args}): {description}\n\
         Please apply this operation only once. Make sure the operation changes the template.\n\
         Answer with a valid Python function call, using exactly the operation name. Do not include any extra information or comments.",
        template = mt.render(),
        op = spec.name,
        args = spec.signature_args(),
        description = spec.description,
    )
}

/// Prompt asking the mutator to repair one inconsistent component.
///
/// `component` names the kind of the dependent node (e.g. `text`).
pub fn build_refinement_prompt(inc: &Inconsistency, spec: &OpSpec, component: &str, component_content: &str) -> String {
    assert!(!inc.reason.is_empty(), "refinement needs a reason");
    format!(
        "Below, you are provided with the {component} of a prompt.\n\
         {component_content}\n\
         There are inconsistencies in the {component} because {reason}. Your task is to fix the {component} for consistency. The operation you are required to apply is:\n\
         {op}({args}): {description}\n\
         Do not include any extra information or comments. Answer with a valid Python function call, using exactly the operation name.",
        reason = inc.reason,
        op = spec.name,
        args = spec.signature_args(),
        description = spec.description,
    )
}
