use std::fmt::Write;
use std::fs;
use std::path::Path;

use emvlab_train::Ablation;

use crate::experiment::{read_rows, ResultRow};
use crate::spec::Arm;
use crate::HarnessError;

fn arm_rank(name: &str) -> usize {
    Arm::parse(name)
        .map(|a| a as usize)
        .or_else(|| Ablation::parse(name).map(|a| 10 + a as usize))
        .unwrap_or(usize::MAX)
}

fn cell(v: Option<f64>, sd: Option<f64>) -> String {
    match (v, sd) {
        (Some(v), Some(sd)) => format!("{v:.2} ± {sd:.2}"),
        (Some(v), None) => format!("{v:.2}"),
        _ => "N/A".into(),
    }
}

/// Aligned mean ± σ table of the aggregate rows, in table order.
pub fn table(rows: &[ResultRow]) -> String {
    let mut agg: Vec<&ResultRow> = rows.iter().filter(|r| r.is_aggregate()).collect();
    agg.sort_by_key(|r| arm_rank(&r.arm));
    let body: Vec<[String; 4]> = agg
        .iter()
        .map(|r| {
            [
                r.arm.clone(),
                cell(r.t_emv, r.t_emv_std),
                cell(r.t_avg, r.t_avg_std),
                r.status.clone(),
            ]
        })
        .collect();
    let head = [
        "Method".to_string(),
        "T_EMV (s)".into(),
        "T_avg (s)".into(),
        "status".into(),
    ];
    let mut width = [0usize; 4];
    for r in std::iter::once(&head).chain(&body) {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    for r in std::iter::once(&head).chain(&body) {
        let line: Vec<String> = r
            .iter()
            .zip(width)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
    }
    let unfinished: Vec<String> = rows
        .iter()
        .filter(|r| !r.is_aggregate() && r.emv_finished == Some(false))
        .map(|r| format!("{} seed {}", r.arm, r.seed))
        .collect();
    if !unfinished.is_empty() {
        writeln!(out, "EMV did not arrive: {}", unfinished.join(", ")).unwrap();
    }
    out
}

/// Summarizes every results and ablation table in `dir`.
pub fn report(dir: &Path) -> Result<String, HarnessError> {
    let mut files: Vec<_> = match fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let n = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                n == "results.csv" || (n.starts_with("ablation_") && n.ends_with(".csv"))
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    if files.is_empty() {
        return Err(HarnessError::Empty(dir.display().to_string()));
    }
    files.sort();
    let mut out = String::new();
    for f in files {
        let rows = read_rows(&f)?;
        writeln!(out, "== {}", f.file_name().unwrap().to_string_lossy()).unwrap();
        out.push_str(&table(&rows));
    }
    let mut curves: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("curves") && n.ends_with(".csv"))
        .collect();
    curves.sort();
    if !curves.is_empty() {
        writeln!(out, "learning curves: {}", curves.join(", ")).unwrap();
    }
    Ok(out)
}
