use serde::{Deserialize, Serialize};

use super::special::f_survival;
use super::StatsError;

/// Two-way ANOVA with interaction over a balanced design; factor A is the
/// prompt template, factor B the sampling temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f_template: f64,
    pub f_temperature: f64,
    pub f_interaction: f64,
    pub p_template: f64,
    pub p_temperature: f64,
    pub p_interaction: f64,
    pub df_template: usize,
    pub df_temperature: usize,
    pub df_interaction: usize,
    pub df_error: usize,
    pub ss_template: f64,
    pub ss_temperature: f64,
    pub ss_interaction: f64,
    pub ss_error: f64,
}

/// `obs[template][temperature][replicate]`.
pub fn two_way_anova(obs: &[Vec<Vec<f64>>]) -> Result<AnovaResult, StatsError> {
    let a = obs.len();
    if a < 2 {
        return Err(StatsError::UnbalancedDesign(format!(
            "{a} template level(s); need at least 2"
        )));
    }
    let b = obs[0].len();
    if b < 2 {
        return Err(StatsError::UnbalancedDesign(format!(
            "{b} temperature level(s); need at least 2"
        )));
    }
    let r = obs[0][0].len();
    if r < 2 {
        return Err(StatsError::UnbalancedDesign(format!(
            "{r} replicate(s) per cell; need at least 2"
        )));
    }
    for (i, row) in obs.iter().enumerate() {
        if row.len() != b {
            return Err(StatsError::UnbalancedDesign(format!(
                "template {i} has {} temperature levels, expected {b}",
                row.len()
            )));
        }
        for (j, cell) in row.iter().enumerate() {
            if cell.len() != r {
                return Err(StatsError::UnbalancedDesign(format!(
                    "cell ({i}, {j}) has {} replicates, expected {r}",
                    cell.len()
                )));
            }
        }
    }

    let n = (a * b * r) as f64;
    let grand = obs.iter().flatten().flatten().sum::<f64>() / n;
    // centring keeps the totals formulas well conditioned
    let mut cell = vec![vec![0.0; b]; a];
    let mut row_tot = vec![0.0; a];
    let mut col_tot = vec![0.0; b];
    let mut ss_total = 0.0;
    for i in 0..a {
        for j in 0..b {
            for &x in &obs[i][j] {
                let d = x - grand;
                cell[i][j] += d;
                ss_total += d * d;
            }
            row_tot[i] += cell[i][j];
            col_tot[j] += cell[i][j];
        }
    }
    let (af, bf, rf) = (a as f64, b as f64, r as f64);
    let correction = row_tot.iter().sum::<f64>().powi(2) / n;
    let ss_a = row_tot.iter().map(|t| t * t).sum::<f64>() / (bf * rf) - correction;
    let ss_b = col_tot.iter().map(|t| t * t).sum::<f64>() / (af * rf) - correction;
    let ss_cells = cell.iter().flatten().map(|t| t * t).sum::<f64>() / rf - correction;
    let ss_ab = (ss_cells - ss_a - ss_b).max(0.0);
    let ss_e = (ss_total - correction - ss_cells).max(0.0);

    let scale = obs
        .iter()
        .flatten()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    if ss_e <= 1e-12 * scale {
        return Err(StatsError::DegenerateError);
    }

    let (df_a, df_b) = (a - 1, b - 1);
    let df_ab = df_a * df_b;
    let df_e = a * b * (r - 1);
    let ms_e = ss_e / df_e as f64;
    let f = |ss: f64, df: usize| (ss / df as f64 / ms_e).max(0.0);
    let (f_a, f_b, f_ab) = (f(ss_a, df_a), f(ss_b, df_b), f(ss_ab, df_ab));
    let p = |fv: f64, df: usize| f_survival(fv, df as f64, df_e as f64);
    Ok(AnovaResult {
        f_template: f_a,
        f_temperature: f_b,
        f_interaction: f_ab,
        p_template: p(f_a, df_a),
        p_temperature: p(f_b, df_b),
        p_interaction: p(f_ab, df_ab),
        df_template: df_a,
        df_temperature: df_b,
        df_interaction: df_ab,
        df_error: df_e,
        ss_template: ss_a.max(0.0),
        ss_temperature: ss_b.max(0.0),
        ss_interaction: ss_ab,
        ss_error: ss_e,
    })
}
