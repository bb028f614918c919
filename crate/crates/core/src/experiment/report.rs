use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::checks::{all_checks, Check};
use super::config::{lambda_method_name, ExperimentConfig, LAMBDA_GRID};
use super::run::{results_file, summary_file, CLASSIFIER, CONFIG_FILE};
use super::{io_err, ExperimentError};
use crate::metrics::{read_metric_rows, MetricRow};

#[derive(Debug, Clone)]
pub struct Report {
    pub text: String,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn violations(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn cell(r: Option<&MetricRow>, digits: usize) -> String {
    match r {
        Some(r) => format!("{:.*} ({:.*})", digits, r.mean, digits, r.std),
        None => "-".into(),
    }
}

fn find<'a>(rows: &'a [MetricRow], method: &str, metric: &str) -> Option<&'a MetricRow> {
    rows.iter().find(|r| r.method == method && r.metric == metric && r.fraction.is_none())
}

fn methods_with(rows: &[MetricRow], metric: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        if !out.contains(&r.method) {
            out.push(r.method.clone());
        }
    }
    out
}

/// Reads a finished run directory and renders its tables and checks.
pub fn report(dir: &Path) -> Result<Report, ExperimentError> {
    let config_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&config_path).map_err(|_| ExperimentError::MissingFiles {
        dir: dir.to_path_buf(),
        missing: vec![
            CONFIG_FILE.into(),
            "<experiment>_results.csv".into(),
            "<experiment>_summary.csv".into(),
        ],
    })?;
    let cfg = ExperimentConfig::from_toml(&text)?;
    let missing: Vec<String> = [results_file(cfg.name), summary_file(cfg.name)]
        .into_iter()
        .filter(|f| !dir.join(f).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(ExperimentError::MissingFiles {
            dir: dir.to_path_buf(),
            missing,
        });
    }
    let path = dir.join(summary_file(cfg.name));
    let rows = read_metric_rows(fs::File::open(&path).map_err(|e| io_err(&path, e))?)?;
    Ok(render(&cfg, &rows))
}

pub fn render(cfg: &ExperimentConfig, rows: &[MetricRow]) -> Report {
    let mut s = String::new();
    let _ = writeln!(s, "experiment {} over {} fold(s), mean (std)", cfg.name, cfg.run.folds);
    if let Some(r) = find(rows, CLASSIFIER, "auroc") {
        let _ = writeln!(s, "classifier test AUROC {}", cell(Some(r), 3));
    }

    let grid_names: Vec<String> = LAMBDA_GRID
        .iter()
        .flat_map(|&a| LAMBDA_GRID.iter().map(move |&b| lambda_method_name(a, b)))
        .collect();
    let gt: Vec<String> = methods_with(rows, "aup").into_iter().filter(|m| !grid_names.contains(m)).collect();
    if !gt.is_empty() {
        let _ = writeln!(s, "\n{:<28} {:>16} {:>16} {:>18} {:>16}", "method", "AUP", "AUR", "I", "S");
        for m in &gt {
            let _ = writeln!(
                s,
                "{:<28} {:>16} {:>16} {:>18} {:>16}",
                m,
                cell(find(rows, m, "aup"), 3),
                cell(find(rows, m, "aur"), 3),
                cell(find(rows, m, "information"), 1),
                cell(find(rows, m, "entropy"), 2)
            );
        }
    }
    for m in &gt {
        let deletion = format!("{m}_deletion");
        if gt.contains(&deletion) {
            let _ = writeln!(s, "\npreservation vs deletion for {m}");
            for (label, name) in [("preservation", m.as_str()), ("deletion", deletion.as_str())] {
                let _ = writeln!(
                    s,
                    "  {:<14} AUP {:>16}  AUR {:>16}",
                    label,
                    cell(find(rows, name, "aup"), 3),
                    cell(find(rows, name, "aur"), 3)
                );
            }
        }
    }

    if grid_names.iter().any(|n| find(rows, n, "aup").is_some()) {
        let _ = writeln!(s, "\nAUP - AUR by lambda1 (rows) and lambda2 (columns)");
        let _ = write!(s, "{:>8}", "");
        for l2 in LAMBDA_GRID {
            let _ = write!(s, " {:>13}", l2);
        }
        s.push('\n');
        for l1 in LAMBDA_GRID {
            let _ = write!(s, "{:>8}", l1);
            for l2 in LAMBDA_GRID {
                let name = lambda_method_name(l1, l2);
                match (find(rows, &name, "aup"), find(rows, &name, "aur")) {
                    (Some(p), Some(r)) => {
                        let _ = write!(s, " {:>13}", format!("{:.2} - {:.2}", p.mean, r.mean));
                    }
                    _ => {
                        let _ = write!(s, " {:>13}", "-");
                    }
                }
            }
            s.push('\n');
        }
    }

    let mut settings: Vec<(String, f64)> = Vec::new();
    for r in rows.iter().filter(|r| r.metric == "cross_entropy") {
        if let (Some(sub), Some(f)) = (&r.substitution, r.fraction) {
            if !settings.iter().any(|(s2, f2)| s2 == sub && *f2 == f) {
                settings.push((sub.clone(), f));
            }
        }
    }
    for (sub, fraction) in settings {
        let _ = writeln!(s, "\n{sub} substitution, {:.0}% of cells masked", fraction * 100.0);
        let _ = writeln!(s, "{:<28} {:>18} {:>18} {:>18} {:>18}", "method", "accuracy", "CE", "comp", "suff");
        for m in methods_with(rows, "cross_entropy") {
            let get = |metric: &str| {
                rows.iter().find(|r| {
                    r.method == m && r.metric == metric && r.substitution.as_deref() == Some(&sub) && r.fraction == Some(fraction)
                })
            };
            let _ = writeln!(
                s,
                "{:<28} {:>18} {:>18} {:>18} {:>18}",
                m,
                cell(get("accuracy"), 4),
                cell(get("cross_entropy"), 4),
                cell(get("comprehensiveness"), 4),
                cell(get("sufficiency"), 4)
            );
        }
    }

    for r in rows.iter().filter(|r| r.method == CLASSIFIER && r.metric == "positive_rate_mask_first") {
        let last = rows.iter().find(|o| o.metric == "positive_rate_mask_last" && o.fraction == r.fraction);
        let _ = writeln!(
            s,
            "\npositive rate among positive predictions after masking {:.0}% of steps: first {} last {}",
            r.fraction.unwrap_or(0.0) * 100.0,
            cell(Some(r), 3),
            cell(last, 3)
        );
    }

    let checks = all_checks(rows);
    if !checks.is_empty() {
        let _ = writeln!(s, "\nchecks");
        for c in &checks {
            let flag = if c.passed { "ok       " } else { "VIOLATED " };
            let _ = writeln!(s, "  {flag} {:<28} {}", c.name, c.detail);
        }
    }
    Report { text: s, checks }
}
