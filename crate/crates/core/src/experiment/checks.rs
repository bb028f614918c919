//! Expected outcomes of the benchmark runs, evaluated on summary rows.
//! Each check returns `None` when the rows it needs are absent.

use super::config::{lambda_method_name, LAMBDA_GRID};
use super::run::CLASSIFIER;
use crate::metrics::MetricRow;

pub const LEARNED: &str = "learned_bi_gru";
pub const LEARNED_DELETION: &str = "learned_bi_gru_deletion";
pub const LEARNED_GRU: &str = "learned_gru";
pub const LEARNED_ZEROS: &str = "learned_zeros";
pub const MASK_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn lookup<'a>(
    rows: &'a [MetricRow],
    method: &str,
    metric: &str,
    fraction: Option<f64>,
    sub: Option<&str>,
) -> Option<&'a MetricRow> {
    rows.iter().find(|r| {
        r.fold.is_none()
            && r.method == method
            && r.metric == metric
            && r.substitution.as_deref() == sub
            && match (r.fraction, fraction) {
                (Some(a), Some(b)) => (a - b).abs() < 1e-9,
                (None, None) => true,
                _ => false,
            }
    })
}

fn mean(rows: &[MetricRow], method: &str, metric: &str) -> Option<f64> {
    lookup(rows, method, metric, None, None).map(|r| r.mean)
}

pub fn all_checks(rows: &[MetricRow]) -> Vec<Check> {
    let mut out: Vec<Check> = [
        hmm_reproduction(rows),
        dynamask_ordering(rows),
        deletion_trend(rows),
        lambda_grid_trend(rows),
        masked_prediction_ordering(rows),
        generator_ordering(rows),
        late_masking(rows),
    ]
    .into_iter()
    .flatten()
    .collect();
    out.sort_by_key(|c| c.name);
    out
}

/// AUR at least 0.70 and AUP at least 0.80 for the default learned explainer.
pub fn hmm_reproduction(rows: &[MetricRow]) -> Option<Check> {
    let aup = mean(rows, LEARNED, "aup")?;
    let aur = mean(rows, LEARNED, "aur")?;
    Some(Check {
        name: "hmm_reproduction",
        passed: aup >= 0.80 && aur >= 0.70,
        detail: format!("{LEARNED}: AUP {aup:.3} (need >= 0.80), AUR {aur:.3} (need >= 0.70)"),
    })
}

/// Higher AUP and information, lower entropy, and AUR no more than 0.05
/// below DynaMask.
pub fn dynamask_ordering(rows: &[MetricRow]) -> Option<Check> {
    let get = |m: &str| -> Option<[f64; 4]> {
        Some([mean(rows, m, "aup")?, mean(rows, m, "aur")?, mean(rows, m, "information")?, mean(rows, m, "entropy")?])
    };
    let l = get(LEARNED)?;
    let d = get("dynamask")?;
    let passed = l[0] > d[0] && l[2] > d[2] && l[3] < d[3] && l[1] >= d[1] - 0.05;
    Some(Check {
        name: "dynamask_ordering",
        passed,
        detail: format!(
            "AUP {:.3} vs {:.3}, AUR {:.3} vs {:.3}, I {:.1} vs {:.1}, S {:.1} vs {:.1} (learned vs dynamask)",
            l[0], d[0], l[1], d[1], l[2], d[2], l[3], d[3]
        ),
    })
}

/// Deletion mode: higher AUR and AUP lower by at least 0.3.
pub fn deletion_trend(rows: &[MetricRow]) -> Option<Check> {
    let (pa, pr) = (mean(rows, LEARNED, "aup")?, mean(rows, LEARNED, "aur")?);
    let (da, dr) = (mean(rows, LEARNED_DELETION, "aup")?, mean(rows, LEARNED_DELETION, "aur")?);
    Some(Check {
        name: "deletion_trend",
        passed: dr > pr && da <= pa - 0.3,
        detail: format!("preservation AUP {pa:.3} AUR {pr:.3}; deletion AUP {da:.3} AUR {dr:.3}"),
    })
}

/// Best AUP x AUR at lambda1 = 1 with lambda2 >= 1, and AUR below 0.3 for
/// lambda1 of 10 and 100.
pub fn lambda_grid_trend(rows: &[MetricRow]) -> Option<Check> {
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    let mut strong_aur = f64::NEG_INFINITY;
    for &l1 in &LAMBDA_GRID {
        for &l2 in &LAMBDA_GRID {
            let name = lambda_method_name(l1, l2);
            let (aup, aur) = (mean(rows, &name, "aup")?, mean(rows, &name, "aur")?);
            if aup * aur > best.0 {
                best = (aup * aur, l1, l2);
            }
            if l1 >= 10.0 {
                strong_aur = strong_aur.max(aur);
            }
        }
    }
    Some(Check {
        name: "lambda_grid_trend",
        passed: best.1 == 1.0 && best.2 >= 1.0 && strong_aur < 0.3,
        detail: format!(
            "best AUP*AUR {:.3} at lambda1={} lambda2={}; largest AUR with lambda1 >= 10 is {strong_aur:.3}",
            best.0, best.1, best.2
        ),
    })
}

/// At 20% masking the learned explainer has higher CE and
/// comprehensiveness and lower sufficiency and accuracy than every
/// occlusion and gradient baseline, under each substitution present.
pub fn masked_prediction_ordering(rows: &[MetricRow]) -> Option<Check> {
    let baselines = ["occlusion", "augmented_occlusion", "integrated_gradients"];
    let subs: Vec<&str> = ["time_average", "zeros"]
        .into_iter()
        .filter(|s| lookup(rows, LEARNED, "cross_entropy", Some(MASK_FRACTION), Some(s)).is_some())
        .collect();
    if subs.is_empty() {
        return None;
    }
    let mut failures = Vec::new();
    let mut compared = 0;
    for sub in &subs {
        let get = |m: &str, metric: &str| lookup(rows, m, metric, Some(MASK_FRACTION), Some(sub)).map(|r| r.mean);
        for b in baselines {
            for (metric, higher) in [
                ("cross_entropy", true),
                ("comprehensiveness", true),
                ("sufficiency", false),
                ("accuracy", false),
            ] {
                let (Some(l), Some(o)) = (get(LEARNED, metric), get(b, metric)) else {
                    continue;
                };
                compared += 1;
                if (higher && l <= o) || (!higher && l >= o) {
                    failures.push(format!("{sub}/{metric}: {l:.4} vs {b} {o:.4}"));
                }
            }
        }
    }
    if compared == 0 {
        return None;
    }
    Some(Check {
        name: "masked_prediction_ordering",
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{compared} comparisons at {:.0}% masking all favour {LEARNED}", MASK_FRACTION * 100.0)
        } else {
            format!("violations: {}", failures.join("; "))
        },
    })
}

/// CE at 20% masking ordered GRU >= Bi-GRU >= Zeros, where a pair counts as
/// tied when the means differ by less than the larger fold std.
pub fn generator_ordering(rows: &[MetricRow]) -> Option<Check> {
    let mut details = Vec::new();
    let mut passed = true;
    let mut any = false;
    for sub in ["time_average", "zeros"] {
        let get = |m: &str| lookup(rows, m, "cross_entropy", Some(MASK_FRACTION), Some(sub));
        let (Some(gru), Some(bi), Some(zeros)) = (get(LEARNED_GRU), get(LEARNED), get(LEARNED_ZEROS)) else {
            continue;
        };
        any = true;
        let at_least = |a: &MetricRow, b: &MetricRow| a.mean + a.std.max(b.std) >= b.mean;
        let ok = at_least(gru, bi) && at_least(bi, zeros);
        passed &= ok;
        details.push(format!(
            "{sub}: gru {:.4} ({:.4}), bi_gru {:.4} ({:.4}), zeros {:.4} ({:.4})",
            gru.mean, gru.std, bi.mean, bi.std, zeros.mean, zeros.std
        ));
    }
    any.then(|| Check {
        name: "generator_ordering",
        passed,
        detail: details.join("; "),
    })
}

/// Masking the last quarter lowers the positive rate at least three times
/// as much as masking the first quarter.
pub fn late_masking(rows: &[MetricRow]) -> Option<Check> {
    let first = rows
        .iter()
        .find(|r| r.fold.is_none() && r.method == CLASSIFIER && r.metric == "positive_rate_mask_first")?;
    let frac = first.fraction?;
    let last = lookup(rows, CLASSIFIER, "positive_rate_mask_last", Some(frac), None)?;
    let (drop_first, drop_last) = (1.0 - first.mean, 1.0 - last.mean);
    Some(Check {
        name: "late_masking",
        passed: drop_last >= 3.0 * drop_first && drop_last > 0.0,
        detail: format!(
            "masking {:.0}% of steps: positive rate falls by {drop_last:.3} (last) vs {drop_first:.3} (first)",
            frac * 100.0
        ),
    })
}
