use std::collections::{BTreeMap, BTreeSet};

use super::StatsError;
use crate::template::{MetaTemplate, OpKind};

/// Number of distinct operation kinds in a template's lineage.
pub fn distinct_op_kinds(mt: &MetaTemplate) -> usize {
    mt.lineage
        .iter()
        .filter_map(|call| mt.op(&call.name).map(|spec| spec.kind))
        .collect::<BTreeSet<OpKind>>()
        .len()
}

/// Per-template percentage change against template 0, averaged over models:
/// `mean_m (x[m][t] - x[m][0]) / x[m][0] * 100`.
pub fn percentage_deltas(table: &[Vec<f64>]) -> Result<Vec<f64>, StatsError> {
    let templates = table.first().map(Vec::len).unwrap_or(0);
    if table.is_empty() || templates == 0 {
        return Err(StatsError::TooShort { needed: 1, got: 0 });
    }
    if table.iter().any(|row| row.len() != templates) {
        return Err(StatsError::NotRectangular);
    }
    if table.iter().any(|row| row[0] == 0.0) {
        return Err(StatsError::ZeroBaseline);
    }
    let models = table.len() as f64;
    Ok((0..templates)
        .map(|t| table.iter().map(|row| (row[t] - row[0]) / row[0] * 100.0).sum::<f64>() / models)
        .collect())
}

/// Picks `count` templates: the original, then the largest-|delta| member of
/// every distinct-op-kind group, then the largest |delta| overall.
/// `deltas[t]` is the percentage delta of template `t` (index 0 is the
/// original). Returns sorted indices.
pub fn select_diverse_subset(pool: &[MetaTemplate], deltas: &[f64], count: usize) -> Result<Vec<usize>, StatsError> {
    let kinds: Vec<usize> = pool.iter().map(distinct_op_kinds).collect();
    select_by_groups(&kinds, deltas, count)
}

/// [`select_diverse_subset`] over precomputed group keys (`groups[t]` for
/// each template; the key of template 0 is ignored).
pub fn select_by_groups(groups: &[usize], deltas: &[f64], count: usize) -> Result<Vec<usize>, StatsError> {
    let size = groups.len();
    if deltas.len() != size {
        return Err(StatsError::LengthMismatch(size, deltas.len()));
    }
    if size == 0 {
        return Err(StatsError::TooShort { needed: 1, got: 0 });
    }
    if count > size {
        return Err(StatsError::CountTooLarge { count, size });
    }
    let by_delta = |a: &usize, b: &usize| deltas[*b].abs().total_cmp(&deltas[*a].abs()).then(a.cmp(b));
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (t, &g) in groups.iter().enumerate().skip(1) {
        members.entry(g).or_default().push(t);
    }
    if count < members.len() + 1 {
        return Err(StatsError::CountTooSmall {
            count,
            groups: members.len(),
        });
    }

    let mut chosen = BTreeSet::from([0usize]);
    for list in members.values_mut() {
        list.sort_by(by_delta);
        chosen.insert(list[0]);
    }
    let mut rest: Vec<usize> = (1..size).filter(|t| !chosen.contains(t)).collect();
    rest.sort_by(by_delta);
    chosen.extend(rest.into_iter().take(count - chosen.len()));
    Ok(chosen.into_iter().collect())
}
