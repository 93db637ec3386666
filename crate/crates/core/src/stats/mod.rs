//! Sensitivity and agreement statistics over template-metric tables.
//!
//! A metric table holds `values[model][template]`, template 0 being the
//! original prompt template.

mod anova;
mod special;
mod subset;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use anova::{two_way_anova, AnovaResult};
pub use special::{f_survival, ln_gamma, regularized_incomplete_beta};
pub use subset::{distinct_op_kinds, percentage_deltas, select_by_groups, select_diverse_subset};

/// |Z| above this marks a substantial deviation of the original template.
pub const Z_ANNOTATION: f64 = 1.0;
/// MPI above this marks a substantial achievable improvement.
pub const MPI_ANNOTATION: f64 = 0.10;
/// Kendall's W at or above this is labelled strong agreement.
pub const STRONG_AGREEMENT: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("original template scores zero; relative improvement is undefined")]
    ZeroBaseline,
    #[error("input is constant")]
    ConstantInput,
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("table is not rectangular")]
    NotRectangular,
    #[error("k = {k} is outside 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("error mean square is zero")]
    DegenerateError,
    #[error("unbalanced design: {0}")]
    UnbalancedDesign(String),
    #[error("count {count} is below the {groups} lineage groups plus the original")]
    CountTooSmall { count: usize, groups: usize },
    #[error("count {count} exceeds the pool size {size}")]
    CountTooLarge { count: usize, size: usize },
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `(x0 - mean) / sigma` with the population standard deviation.
pub fn z_score(series: &[f64]) -> Result<f64, StatsError> {
    if series.len() < 2 {
        return Err(StatsError::TooShort {
            needed: 2,
            got: series.len(),
        });
    }
    let m = mean(series);
    let var = series.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / series.len() as f64;
    let sigma = var.sqrt();
    if sigma == 0.0 || sigma <= 1e-15 * m.abs() {
        return Err(StatsError::DegenerateSeries);
    }
    Ok((series[0] - m) / sigma)
}

/// Maximum relative improvement `max_i (x_i - x0) / x0` over all templates,
/// the original included, so never negative.
pub fn mpi(series: &[f64]) -> Result<f64, StatsError> {
    let Some(&x0) = series.first() else {
        return Err(StatsError::TooShort { needed: 1, got: 0 });
    };
    if x0 == 0.0 {
        return Err(StatsError::ZeroBaseline);
    }
    Ok(series.iter().map(|x| (x - x0) / x0).fold(0.0, f64::max))
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn check_table(table: &[Vec<f64>]) -> Result<usize, StatsError> {
    let templates = table.first().map(Vec::len).unwrap_or(0);
    if table.iter().any(|row| row.len() != templates) {
        return Err(StatsError::NotRectangular);
    }
    Ok(templates)
}

/// `ranks[model][template]`, 1 = best, midranks on ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMatrix {
    pub ranks: Vec<Vec<f64>>,
}

impl RankMatrix {
    pub fn models(&self) -> usize {
        self.ranks.len()
    }

    pub fn templates(&self) -> usize {
        self.ranks.first().map(Vec::len).unwrap_or(0)
    }
}

/// Ranks the models under each template, best metric first.
pub fn rank_models(table: &[Vec<f64>]) -> Result<RankMatrix, StatsError> {
    let templates = check_table(table)?;
    let n = table.len();
    if n < 2 {
        return Err(StatsError::TooShort { needed: 2, got: n });
    }
    let mut ranks = vec![vec![0.0; templates]; n];
    for j in 0..templates {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| table[b][j].total_cmp(&table[a][j]));
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && table[order[end]][j] == table[order[start]][j] {
                end += 1;
            }
            // positions start..end hold ranks start+1..=end
            let midrank = (start + 1 + end) as f64 / 2.0;
            for &i in &order[start..end] {
                ranks[i][j] = midrank;
            }
            start = end;
        }
    }
    Ok(RankMatrix { ranks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgreementLabel {
    Strong,
    WeakToModerate,
}

impl AgreementLabel {
    pub fn for_w(w: f64) -> Self {
        if w >= STRONG_AGREEMENT {
            AgreementLabel::Strong
        } else {
            AgreementLabel::WeakToModerate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub w: f64,
    pub label: AgreementLabel,
}

/// Kendall's W with templates as judges and models as objects:
/// `W = 12 S / (m^2 (n^3 - n))`. With `tie_correction` the denominator
/// subtracts `m * sum_j sum_groups (t^3 - t)`.
pub fn kendalls_w(ranks: &RankMatrix, tie_correction: bool) -> Result<Agreement, StatsError> {
    let n = ranks.models();
    let m = ranks.templates();
    if n < 2 || m < 2 {
        return Err(StatsError::TooShort {
            needed: 2,
            got: n.min(m),
        });
    }
    let totals: Vec<f64> = ranks.ranks.iter().map(|row| row.iter().sum()).collect();
    let r_bar = mean(&totals);
    let s: f64 = totals.iter().map(|r| (r - r_bar) * (r - r_bar)).sum();
    let (mf, nf) = (m as f64, n as f64);
    let mut denom = mf * mf * (nf * nf * nf - nf);
    if tie_correction {
        let mut ties = 0.0;
        for j in 0..m {
            let mut column: Vec<f64> = ranks.ranks.iter().map(|row| row[j]).collect();
            column.sort_by(f64::total_cmp);
            let mut start = 0;
            while start < n {
                let mut end = start + 1;
                while end < n && column[end] == column[start] {
                    end += 1;
                }
                let t = (end - start) as f64;
                ties += t * t * t - t;
                start = end;
            }
        }
        denom -= mf * ties;
    }
    let w = if denom > 0.0 {
        (12.0 * s / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(Agreement {
        w,
        label: AgreementLabel::for_w(w),
    })
}

/// Indices of the `k` best templates; ties broken by lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouResult {
    pub k: usize,
    /// Symmetric model-by-model matrix with a unit diagonal.
    pub matrix: Vec<Vec<f64>>,
    /// Mean over unordered pairs of distinct models.
    pub mean: f64,
}

pub fn top_k_iou(table: &[Vec<f64>], k: usize) -> Result<IouResult, StatsError> {
    let templates = check_table(table)?;
    if k < 1 || k > templates {
        return Err(StatsError::InvalidK { k, n: templates });
    }
    let n = table.len();
    if n < 2 {
        return Err(StatsError::TooShort { needed: 2, got: n });
    }
    let sets: Vec<Vec<usize>> = table.iter().map(|row| top_k(row, k)).collect();
    let mut matrix = vec![vec![1.0; n]; n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let inter = sets[i].iter().filter(|t| sets[j].binary_search(t).is_ok()).count();
            let iou = inter as f64 / (2 * k - inter) as f64;
            matrix[i][j] = iou;
            matrix[j][i] = iou;
            sum += iou;
        }
    }
    Ok(IouResult {
        k,
        matrix,
        mean: sum / (n * (n - 1) / 2) as f64,
    })
}

#[cfg(test)]
mod tests;
