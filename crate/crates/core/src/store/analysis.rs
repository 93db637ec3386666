use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SCHEMA_VERSION;
use crate::eval::{MetricKind, MetricSeries};
use crate::stats::{
    kendalls_w, mpi, pearson_r, rank_models, top_k_iou, z_score, AgreementLabel, AnovaResult, IouResult,
    MPI_ANNOTATION, Z_ANNOTATION,
};

/// The k values reported for top-k overlap.
pub const IOU_KS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSensitivity {
    pub model_id: String,
    pub mean: f64,
    pub original: f64,
    pub z: Option<f64>,
    pub mpi: Option<f64>,
    /// Why `z` or `mpi` is undefined.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
    /// |Z| exceeds the annotation threshold.
    pub substantial_z: bool,
    /// MPI exceeds the annotation threshold.
    pub substantial_mpi: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyAgreement {
    pub family: String,
    pub models: Vec<String>,
    pub w: f64,
    pub label: AgreementLabel,
    pub w_tie_corrected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub schema_version: u32,
    pub task_id: String,
    pub metric: MetricKind,
    pub templates: usize,
    pub models: Vec<ModelSensitivity>,
    /// Family `"all"` covers every model.
    pub agreement: Vec<FamilyAgreement>,
    pub iou: Vec<IouResult>,
    /// k values skipped because the pool is smaller.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iou_skipped: Vec<usize>,
    /// Correlation across models between Z-score and mean metric value.
    pub pearson_z_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anova: Option<AnovaResult>,
    pub notes: BTreeMap<String, String>,
}

/// Template subset chosen for small-scale experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection {
    pub schema_version: u32,
    pub count: usize,
    pub selected: Vec<usize>,
    /// Percentage delta against the original, averaged over models.
    pub deltas: Vec<f64>,
    /// Distinct operation kinds per template.
    pub groups: Vec<usize>,
    pub notes: BTreeMap<String, String>,
}

fn notes() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("sigma".into(), "population standard deviation".into()),
        (
            "ranking_ties".into(),
            "midranks; w is uncorrected, w_tie_corrected subtracts the tie term".into(),
        ),
        (
            "iou_ties".into(),
            "top-k ties broken by the lower template index".into(),
        ),
        (
            "annotations".into(),
            format!("substantial when |z| > {Z_ANNOTATION} or mpi > {MPI_ANNOTATION}"),
        ),
    ])
}

/// Computes every per-task statistic from the metric series.
pub fn analyze_metrics(
    series: &[MetricSeries],
    families: &BTreeMap<String, Vec<String>>,
    anova: Option<AnovaResult>,
) -> Result<Analysis, crate::stats::StatsError> {
    let first = series
        .first()
        .ok_or(crate::stats::StatsError::TooShort { needed: 1, got: 0 })?;
    let templates = first.values.len();
    let mut models = Vec::with_capacity(series.len());
    for s in series {
        let mut undefined = Vec::new();
        let z = z_score(&s.values).map_err(|e| undefined.push(format!("z: {e}"))).ok();
        let m = mpi(&s.values).map_err(|e| undefined.push(format!("mpi: {e}"))).ok();
        models.push(ModelSensitivity {
            model_id: s.model_id.clone(),
            mean: s.values.iter().sum::<f64>() / s.values.len().max(1) as f64,
            original: s.values.first().copied().unwrap_or(f64::NAN),
            z,
            mpi: m,
            undefined,
            substantial_z: z.is_some_and(|z| z.abs() > Z_ANNOTATION),
            substantial_mpi: m.is_some_and(|m| m > MPI_ANNOTATION),
        });
    }

    let mut groups: Vec<(String, Vec<String>)> =
        vec![("all".into(), series.iter().map(|s| s.model_id.clone()).collect())];
    groups.extend(families.iter().map(|(k, v)| (k.clone(), v.clone())));
    let mut agreement = Vec::new();
    if templates >= 2 {
        for (family, members) in groups {
            let table: Vec<Vec<f64>> = members
                .iter()
                .filter_map(|m| series.iter().find(|s| &s.model_id == m))
                .map(|s| s.values.clone())
                .collect();
            if table.len() < 2 {
                continue;
            }
            let ranks = rank_models(&table)?;
            let plain = kendalls_w(&ranks, false)?;
            let corrected = kendalls_w(&ranks, true)?;
            agreement.push(FamilyAgreement {
                family,
                models: members,
                w: plain.w,
                label: plain.label,
                w_tie_corrected: corrected.w,
            });
        }
    }

    let table: Vec<Vec<f64>> = series.iter().map(|s| s.values.clone()).collect();
    let mut iou = Vec::new();
    let mut iou_skipped = Vec::new();
    for k in IOU_KS {
        if k <= templates && table.len() >= 2 {
            iou.push(top_k_iou(&table, k)?);
        } else {
            iou_skipped.push(k);
        }
    }

    let pairs: Vec<(f64, f64)> = models.iter().filter_map(|m| m.z.map(|z| (z, m.mean))).collect();
    let (zs, means): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let pearson_z_mean = pearson_r(&zs, &means).ok();

    Ok(Analysis {
        schema_version: SCHEMA_VERSION,
        task_id: first.task_id.clone(),
        metric: first.metric,
        templates,
        models,
        agreement,
        iou,
        iou_skipped,
        pearson_z_mean,
        anova,
        notes: notes(),
    })
}

pub(crate) fn subset_notes() -> BTreeMap<String, String> {
    BTreeMap::from([(
        "delta".into(),
        "groups are ordered by the absolute percentage delta against the original".into(),
    )])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapKind {
    AbsZ,
    Mpi,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// A model-by-task grid; empty cells mark undefined values.
pub fn heatmap_csv(analyses: &[Analysis], kind: HeatmapKind) -> String {
    let mut models: Vec<&str> = Vec::new();
    for a in analyses {
        for m in &a.models {
            if !models.contains(&m.model_id.as_str()) {
                models.push(&m.model_id);
            }
        }
    }
    let mut out = String::from("model");
    for a in analyses {
        let _ = write!(out, ",{}", a.task_id);
    }
    out.push('\n');
    for model in models {
        out.push_str(model);
        for a in analyses {
            let v = a.models.iter().find(|m| m.model_id == model).and_then(|m| match kind {
                HeatmapKind::AbsZ => m.z.map(f64::abs),
                HeatmapKind::Mpi => m.mpi,
            });
            let _ = write!(out, ",{}", cell(v));
        }
        out.push('\n');
    }
    out
}

/// Pairwise IoU matrix for one k.
pub fn iou_csv(analysis: &Analysis, iou: &IouResult) -> String {
    let mut out = String::from("model");
    for m in &analysis.models {
        let _ = write!(out, ",{}", m.model_id);
    }
    out.push('\n');
    for (i, m) in analysis.models.iter().enumerate() {
        out.push_str(&m.model_id);
        for v in &iou.matrix[i] {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}
