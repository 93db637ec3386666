use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::call::OpCall;
use crate::template::{ConsistencyRule, MentionForm, MetaTemplate, FORMAT_NODE_ID};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaleLiteral {
    /// The node whose rendering the literal quotes.
    pub node: String,
    pub old: String,
    pub new: String,
}

/// A dependent text node that quotes out-of-date renderings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inconsistency {
    pub rule: ConsistencyRule,
    pub stale_literals: Vec<StaleLiteral>,
    pub reason: String,
}

/// Ids (including `GLOBAL`) whose content differs between the two trees.
fn changed_nodes(before: &MetaTemplate, after: &MetaTemplate) -> BTreeSet<String> {
    let mut changed: BTreeSet<String> = after
        .tree
        .nodes()
        .filter(|n| before.tree.node(&n.id).map(|b| b.content != n.content).unwrap_or(true))
        .map(|n| n.id.clone())
        .collect();
    if before.tree.format() != after.tree.format() {
        changed.insert(FORMAT_NODE_ID.to_string());
    }
    changed
}

/// Inconsistencies introduced by `call`: only rules watching a node the call
/// touched are checked.
pub fn detect_inconsistencies(before: &MetaTemplate, after: &MetaTemplate, call: &OpCall) -> Vec<Inconsistency> {
    let mut touched = changed_nodes(before, after);
    if let Some(spec) = after.op(&call.name) {
        touched.insert(spec.target.clone());
    }
    after
        .consistency_rules
        .iter()
        .filter(|r| r.watched_nodes.iter().any(|w| touched.contains(w)))
        .filter_map(|r| check_rule(after, r))
        .collect()
}

/// Every stale mention under every rule, regardless of history.
pub fn stale_mentions(mt: &MetaTemplate) -> Vec<Inconsistency> {
    mt.consistency_rules.iter().filter_map(|r| check_rule(mt, r)).collect()
}

fn check_rule(mt: &MetaTemplate, rule: &ConsistencyRule) -> Option<Inconsistency> {
    let dependent = mt.tree.node(&rule.dependent_node)?;
    let watches_format = rule.watched_nodes.iter().any(|w| w == FORMAT_NODE_ID);
    let stale: Vec<StaleLiteral> = dependent
        .mentions
        .iter()
        .filter(|m| rule.watched_nodes.contains(&m.node) || (watches_format && m.form != MentionForm::Bare))
        .filter_map(|m| {
            let current = mt.tree.mention_form(&m.node, m.form)?;
            (current != m.literal).then(|| StaleLiteral {
                node: m.node.clone(),
                old: m.literal.clone(),
                new: current,
            })
        })
        .collect();
    if stale.is_empty() {
        return None;
    }
    let old = stale.iter().map(|s| s.old.as_str()).collect::<Vec<_>>().join(", ");
    let new = stale.iter().map(|s| s.new.as_str()).collect::<Vec<_>>().join(", ");
    let reason = rule.reason_template.replace("{old}", &old).replace("{new}", &new);
    Some(Inconsistency {
        rule: rule.clone(),
        stale_literals: stale,
        reason,
    })
}
