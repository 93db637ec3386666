use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::*;
use crate::ops::{Literal, OpCall};
use crate::template::MetaTemplate;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// Oracles: alternative closed forms of each statistic.

fn z_oracle(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    (x[0] - m) / (sq - m * m).sqrt()
}

fn midrank_oracle(column: &[f64], i: usize) -> f64 {
    let greater = column.iter().filter(|v| **v > column[i]).count() as f64;
    let equal = column.iter().filter(|v| **v == column[i]).count() as f64;
    1.0 + greater + (equal - 1.0) / 2.0
}

/// `W = (12 sum R_i^2 - 3 m^2 n (n+1)^2) / (m^2 (n^3 - n))`.
fn w_oracle(ranks: &[Vec<f64>]) -> f64 {
    let n = ranks.len() as f64;
    let m = ranks[0].len() as f64;
    let sum_sq: f64 = ranks.iter().map(|row| row.iter().sum::<f64>().powi(2)).sum();
    (12.0 * sum_sq - 3.0 * m * m * n * (n + 1.0).powi(2)) / (m * m * (n * n * n - n))
}

fn top_k_oracle(values: &[f64], k: usize) -> HashSet<usize> {
    (0..values.len())
        .filter(|&t| {
            let beaten_by = (0..values.len())
                .filter(|&u| values[u] > values[t] || (values[u] == values[t] && u < t))
                .count();
            beaten_by < k
        })
        .collect()
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let zs = |v: &[f64]| -> Vec<f64> {
        let m = v.iter().sum::<f64>() / n;
        let s = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt();
        v.iter().map(|a| (a - m) / s).collect()
    };
    zs(x).iter().zip(zs(y)).map(|(a, b)| a * b).sum::<f64>() / n
}

#[test]
fn z_score_anchors() {
    assert!(close(z_score(&[2.0, 1.0, 0.0]).unwrap(), 1.224_744_871_391_589, 1e-9));
    assert_eq!(z_score(&[3.0, 3.0, 3.0]), Err(StatsError::DegenerateSeries));
    assert!(close(z_score(&[1.0, 0.0, 2.0]).unwrap(), 0.0, 1e-12));
    assert!(matches!(z_score(&[1.0]), Err(StatsError::TooShort { .. })));
}

#[test]
fn mpi_anchors() {
    assert!(close(mpi(&[0.5, 0.55, 0.6]).unwrap(), 0.2, 1e-12));
    assert_eq!(mpi(&[0.4, 0.4]).unwrap(), 0.0);
    assert_eq!(mpi(&[0.5, 0.3]).unwrap(), 0.0);
    assert!(close(mpi(&[1.0, 0.946, 1.11]).unwrap(), 0.11, 1e-12));
    assert_eq!(mpi(&[0.0, 0.3]), Err(StatsError::ZeroBaseline));
}

#[test]
fn ranking_anchors() {
    let r = rank_models(&[vec![0.9, 0.5], vec![0.5, 0.5], vec![0.1, 0.5]]).unwrap();
    assert_eq!(r.ranks, vec![vec![1.0, 2.0], vec![2.0, 2.0], vec![3.0, 2.0]]);
    let r = rank_models(&[vec![0.5], vec![0.5], vec![0.1]]).unwrap();
    assert_eq!(r.ranks, vec![vec![1.5], vec![1.5], vec![3.0]]);
    assert_eq!(
        rank_models(&[vec![1.0], vec![1.0, 2.0]]),
        Err(StatsError::NotRectangular)
    );
}

fn ranks_from_judges(judges: &[[f64; 3]]) -> RankMatrix {
    RankMatrix {
        ranks: (0..3).map(|i| judges.iter().map(|j| j[i]).collect()).collect(),
    }
}

#[test]
fn kendall_anchors() {
    let same = ranks_from_judges(&[[1.0, 2.0, 3.0]; 3]);
    let a = kendalls_w(&same, false).unwrap();
    assert_eq!((a.w, a.label), (1.0, AgreementLabel::Strong));

    let cyclic = ranks_from_judges(&[[1.0, 2.0, 3.0], [2.0, 3.0, 1.0], [3.0, 1.0, 2.0]]);
    assert_eq!(kendalls_w(&cyclic, false).unwrap().w, 0.0);

    let pair = ranks_from_judges(&[[1.0, 2.0, 3.0], [1.0, 3.0, 2.0]]);
    let a = kendalls_w(&pair, false).unwrap();
    assert!(close(a.w, 0.75, 1e-12));
    assert_eq!(a.label, AgreementLabel::WeakToModerate);
    assert_eq!(AgreementLabel::for_w(0.85), AgreementLabel::Strong);
    assert_eq!(
        serde_json::to_string(&AgreementLabel::WeakToModerate).unwrap(),
        "\"weak-to-moderate\""
    );
}

#[test]
fn tie_correction_raises_w() {
    // two judges that both tie models 0 and 1
    let ranks = RankMatrix {
        ranks: vec![vec![1.5, 1.5], vec![1.5, 1.5], vec![3.0, 3.0]],
    };
    let plain = kendalls_w(&ranks, false).unwrap().w;
    let corrected = kendalls_w(&ranks, true).unwrap().w;
    assert!(close(plain, 0.75, 1e-12));
    assert!(close(corrected, 1.0, 1e-12));
}

#[test]
fn pearson_anchors() {
    let x = [1.0, 2.0, 3.0];
    assert!(close(pearson_r(&x, &[2.0, 4.0, 6.0]).unwrap(), 1.0, 1e-12));
    assert!(close(pearson_r(&x, &[-2.0, -4.0, -6.0]).unwrap(), -1.0, 1e-12));
    assert!(close(pearson_r(&x, &[1.0, 3.0, 2.0]).unwrap(), 0.5, 1e-12));
    assert_eq!(pearson_r(&x, &[1.0, 1.0, 1.0]), Err(StatsError::ConstantInput));
    assert!(matches!(pearson_r(&x, &[1.0]), Err(StatsError::LengthMismatch(3, 1))));
}

#[test]
fn iou_anchors() {
    // S1 = {0, 1}, S2 = {1, 2}
    let r = top_k_iou(&[vec![0.9, 0.8, 0.1], vec![0.1, 0.8, 0.9]], 2).unwrap();
    assert!(close(r.mean, 1.0 / 3.0, 1e-12));
    let same = top_k_iou(&[vec![0.3, 0.2, 0.1], vec![0.3, 0.2, 0.1]], 1).unwrap();
    assert_eq!(same.mean, 1.0);
    let disjoint = top_k_iou(&[vec![1.0, 0.0], vec![0.0, 1.0]], 1).unwrap();
    assert_eq!(disjoint.mean, 0.0);
    assert_eq!(top_k(&[0.5, 0.5, 0.5], 2), vec![0, 1]);
    assert!(matches!(
        top_k_iou(&[vec![1.0], vec![1.0]], 2),
        Err(StatsError::InvalidK { .. })
    ));
}

fn random_table(rng: &mut ChaCha8Rng, models: usize, templates: usize) -> Vec<Vec<f64>> {
    // coarse grid so ties occur
    (0..models)
        .map(|_| {
            (0..templates)
                .map(|_| rng.gen_range(0..8) as f64 / 8.0 + 0.05)
                .collect()
        })
        .collect()
}

#[test]
fn randomized_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let n = rng.gen_range(2..=8);
        let m = rng.gen_range(2..=12);
        let table = random_table(&mut rng, n, m);

        let ranks = rank_models(&table).unwrap();
        for j in 0..m {
            let column: Vec<f64> = table.iter().map(|row| row[j]).collect();
            let total: f64 = (0..n).map(|i| ranks.ranks[i][j]).sum();
            assert!(close(total, (n * (n + 1)) as f64 / 2.0, 1e-12));
            for i in 0..n {
                assert_eq!(ranks.ranks[i][j], midrank_oracle(&column, i));
            }
        }
        let w = kendalls_w(&ranks, false).unwrap().w;
        assert!(close(w, w_oracle(&ranks.ranks).clamp(0.0, 1.0), 1e-9));

        for row in &table {
            match z_score(row) {
                Ok(z) => assert!(close(z, z_oracle(row), 1e-9)),
                Err(StatsError::DegenerateSeries) => assert!(row.iter().all(|v| *v == row[0])),
                Err(e) => panic!("{e}"),
            }
            let best = row.iter().cloned().fold(f64::MIN, f64::max);
            assert!(close(mpi(row).unwrap(), (best - row[0]) / row[0], 1e-12));
        }

        let k = rng.gen_range(1..=m);
        let iou = top_k_iou(&table, k).unwrap();
        let sets: Vec<HashSet<usize>> = table.iter().map(|row| top_k_oracle(row, k)).collect();
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j {
                    1.0
                } else {
                    let inter = sets[i].intersection(&sets[j]).count() as f64;
                    let union = sets[i].union(&sets[j]).count() as f64;
                    inter / union
                };
                assert!(close(iou.matrix[i][j], expect, 1e-12));
                if i < j {
                    sum += expect;
                }
            }
        }
        assert!(close(iou.mean, sum / (n * (n - 1) / 2) as f64, 1e-9));

        let (x, y) = (&table[0], &table[1]);
        match pearson_r(x, y) {
            Ok(r) => assert!(close(r, pearson_oracle(x, y), 1e-9)),
            Err(StatsError::ConstantInput) => {
                assert!(x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]))
            }
            Err(e) => panic!("{e}"),
        }
    }
}

proptest! {
    #[test]
    fn z_is_affine_invariant(
        xs in prop::collection::vec(-100.0f64..100.0, 2..12),
        a in 0.01f64..50.0,
        b in -100.0f64..100.0,
    ) {
        if let Ok(z) = z_score(&xs) {
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let zy = z_score(&ys).unwrap();
            prop_assert!((z - zy).abs() < 1e-6);
        }
    }

    #[test]
    fn ranks_are_monotone_invariant(values in prop::collection::vec(prop::collection::vec(0u8..6, 3), 2..7)) {
        let table: Vec<Vec<f64>> = values.iter().map(|r| r.iter().map(|v| *v as f64).collect()).collect();
        let mapped: Vec<Vec<f64>> = table.iter().map(|r| r.iter().map(|v| (v * 0.7).exp() - 3.0).collect()).collect();
        prop_assert_eq!(rank_models(&table).unwrap(), rank_models(&mapped).unwrap());
    }

    #[test]
    fn w_is_bounded(values in prop::collection::vec(prop::collection::vec(0u8..4, 2..6), 2..7), tie in any::<bool>()) {
        let m = values[0].len();
        let table: Vec<Vec<f64>> = values.iter().map(|r| r.iter().take(m).map(|v| *v as f64).collect()).collect();
        prop_assume!(table.iter().all(|r| r.len() == m));
        let w = kendalls_w(&rank_models(&table).unwrap(), tie).unwrap().w;
        prop_assert!((0.0..=1.0).contains(&w));
    }

    #[test]
    fn iou_is_symmetric(values in prop::collection::vec(prop::collection::vec(0u8..5, 6), 2..6), k in 1usize..=6) {
        let table: Vec<Vec<f64>> = values.iter().map(|r| r.iter().map(|v| *v as f64).collect()).collect();
        let r = top_k_iou(&table, k).unwrap();
        for i in 0..table.len() {
            prop_assert_eq!(r.matrix[i][i], 1.0);
            for j in 0..table.len() {
                prop_assert_eq!(r.matrix[i][j], r.matrix[j][i]);
            }
        }
    }
}

/// F values from explicit deviations of cell and marginal means; p from statrs.
fn anova_oracle(obs: &[Vec<Vec<f64>>]) -> [(f64, f64); 3] {
    let (a, b, r) = (obs.len(), obs[0].len(), obs[0][0].len());
    let n = (a * b * r) as f64;
    let grand = obs.iter().flatten().flatten().sum::<f64>() / n;
    let cell: Vec<Vec<f64>> = obs
        .iter()
        .map(|row| row.iter().map(|c| c.iter().sum::<f64>() / r as f64).collect())
        .collect();
    let row_mean: Vec<f64> = cell.iter().map(|row| row.iter().sum::<f64>() / b as f64).collect();
    let col_mean: Vec<f64> = (0..b)
        .map(|j| cell.iter().map(|row| row[j]).sum::<f64>() / a as f64)
        .collect();
    let ss_a: f64 = row_mean.iter().map(|m| (b * r) as f64 * (m - grand).powi(2)).sum();
    let ss_b: f64 = col_mean.iter().map(|m| (a * r) as f64 * (m - grand).powi(2)).sum();
    let (mut ss_ab, mut ss_e) = (0.0, 0.0);
    for i in 0..a {
        for j in 0..b {
            ss_ab += r as f64 * (cell[i][j] - row_mean[i] - col_mean[j] + grand).powi(2);
            ss_e += obs[i][j].iter().map(|x| (x - cell[i][j]).powi(2)).sum::<f64>();
        }
    }
    let df_e = (a * b * (r - 1)) as f64;
    let ms_e = ss_e / df_e;
    let test = |ss: f64, df: f64| {
        let f = ss / df / ms_e;
        (f, FisherSnedecor::new(df, df_e).unwrap().sf(f))
    };
    [
        test(ss_a, (a - 1) as f64),
        test(ss_b, (b - 1) as f64),
        test(ss_ab, ((a - 1) * (b - 1)) as f64),
    ]
}

fn check_anova(obs: &[Vec<Vec<f64>>]) {
    let got = two_way_anova(obs).unwrap();
    let want = anova_oracle(obs);
    let pairs = [
        (got.f_template, got.p_template),
        (got.f_temperature, got.p_temperature),
        (got.f_interaction, got.p_interaction),
    ];
    for ((f, p), (wf, wp)) in pairs.iter().zip(want) {
        assert!((f - wf).abs() <= 1e-9 * wf.abs().max(1.0), "F {f} vs {wf}");
        assert!((p - wp).abs() <= 1e-6, "p {p} vs {wp}");
        assert!(*p > 0.0 && *p <= 1.0);
    }
}

#[test]
fn anova_fixed_design() {
    let obs = vec![
        vec![vec![1.0, 2.0], vec![3.0, 5.0]],
        vec![vec![2.0, 2.5], vec![6.0, 7.0]],
    ];
    check_anova(&obs);
    let res = two_way_anova(&obs).unwrap();
    assert_eq!(
        (res.df_template, res.df_temperature, res.df_interaction, res.df_error),
        (1, 1, 1, 4)
    );
}

#[test]
fn anova_temperature_shift_only() {
    let base = [0.4, 0.5, 0.45];
    let obs: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|_| {
            (0..2)
                .map(|j| base.iter().map(|x| x + j as f64 * 0.3).collect())
                .collect()
        })
        .collect();
    let res = two_way_anova(&obs).unwrap();
    assert!(res.f_template < res.f_temperature);
    assert!(close(res.f_template, 0.0, 1e-9));
    check_anova(&obs);
}

#[test]
fn anova_randomized_designs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let a = rng.gen_range(2..=10);
        let b = rng.gen_range(2..=5);
        let r = rng.gen_range(2..=5);
        let obs: Vec<Vec<Vec<f64>>> = (0..a)
            .map(|i| {
                (0..b)
                    .map(|j| {
                        (0..r)
                            .map(|_| 0.3 + 0.02 * i as f64 + 0.05 * j as f64 + rng.gen_range(-0.1..0.1))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        check_anova(&obs);
    }
}

#[test]
fn anova_errors() {
    let flat = vec![vec![vec![0.5; 3]; 2]; 2];
    assert_eq!(two_way_anova(&flat), Err(StatsError::DegenerateError));
    let ragged = vec![vec![vec![1.0, 2.0], vec![1.0]], vec![vec![1.0, 2.0], vec![3.0, 4.0]]];
    assert!(matches!(two_way_anova(&ragged), Err(StatsError::UnbalancedDesign(_))));
    let single = vec![vec![vec![1.0], vec![2.0]], vec![vec![1.0], vec![3.0]]];
    assert!(matches!(two_way_anova(&single), Err(StatsError::UnbalancedDesign(_))));
}

#[test]
fn percentage_deltas_average_models() {
    let d = percentage_deltas(&[vec![0.5, 0.55, 0.4], vec![0.2, 0.2, 0.3]]).unwrap();
    assert!(close(d[0], 0.0, 1e-12));
    assert!(close(d[1], 5.0, 1e-9));
    assert!(close(d[2], 15.0, 1e-9));
    assert_eq!(percentage_deltas(&[vec![0.0, 1.0]]), Err(StatsError::ZeroBaseline));
}

/// Best subset by enumeration: contains 0 and every group's largest-|delta|
/// member, and maximises the total |delta| of the remainder.
fn subset_oracle(groups: &[usize], deltas: &[f64], count: usize) -> Vec<usize> {
    let size = groups.len();
    let mut heads = Vec::new();
    for g in groups[1..].iter().collect::<HashSet<_>>() {
        let head = (1..size)
            .filter(|t| groups[*t] == *g)
            .max_by(|a, b| deltas[*a].abs().total_cmp(&deltas[*b].abs()))
            .unwrap();
        heads.push(head);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << (size - 1)) {
        if mask.count_ones() as usize != count - 1 {
            continue;
        }
        let set: Vec<usize> = (1..size).filter(|t| mask & (1 << (t - 1)) != 0).collect();
        if !heads.iter().all(|h| set.contains(h)) {
            continue;
        }
        let total: f64 = set.iter().map(|t| deltas[*t].abs()).sum();
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, set));
        }
    }
    let mut out = vec![0];
    out.extend(best.unwrap().1);
    out
}

#[test]
fn subset_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let size = rng.gen_range(5..=14);
        let ngroups = rng.gen_range(1..=3);
        let mut groups = vec![0];
        groups.extend((1..size).map(|_| rng.gen_range(1..=ngroups)));
        // distinct magnitudes keep the optimum unique
        let mut deltas = vec![0.0];
        deltas.extend(
            (1..size).map(|t| (t as f64 * 1.37 + rng.gen_range(0.0..1.0)) * if rng.gen() { 1.0 } else { -1.0 }),
        );
        let used = groups[1..].iter().collect::<HashSet<_>>().len();
        let count = rng.gen_range(used + 1..=size);
        assert_eq!(
            select_by_groups(&groups, &deltas, count).unwrap(),
            subset_oracle(&groups, &deltas, count)
        );
    }
}

#[test]
fn subset_rules() {
    let groups = [0, 1, 1, 2, 2];
    let deltas = [0.0, 3.0, -9.0, 1.0, 2.0];
    assert_eq!(select_by_groups(&groups, &deltas, 3).unwrap(), vec![0, 2, 4]);
    assert_eq!(select_by_groups(&groups, &deltas, 4).unwrap(), vec![0, 1, 2, 4]);
    assert_eq!(select_by_groups(&groups, &deltas, 5).unwrap(), vec![0, 1, 2, 3, 4]);
    assert_eq!(
        select_by_groups(&groups, &deltas, 2),
        Err(StatsError::CountTooSmall { count: 2, groups: 2 })
    );
    assert_eq!(
        select_by_groups(&groups, &deltas, 6),
        Err(StatsError::CountTooLarge { count: 6, size: 5 })
    );
}

#[test]
fn op_kinds_come_from_lineage() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/meta/cruxeval_input.json");
    let seed = MetaTemplate::parse(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(distinct_op_kinds(&seed), 0);
    let mut mt = seed.clone();
    let s = |v: &str| Literal::Str(v.into());
    mt.lineage.push(OpCall::new("paraphrase_code_tag", vec![s("CODE")]));
    mt.lineage.push(OpCall::new("paraphrase_answer_tag", vec![s("RESULT")]));
    assert_eq!(distinct_op_kinds(&mt), 1);
    mt.lineage
        .push(OpCall::new("change_tag_case", vec![s("RESULT"), s("lower")]));
    assert_eq!(distinct_op_kinds(&mt), 2);

    let pool = vec![seed, mt.clone(), mt];
    assert_eq!(select_diverse_subset(&pool, &[0.0, 1.0, 2.0], 2).unwrap(), vec![0, 2]);
}
