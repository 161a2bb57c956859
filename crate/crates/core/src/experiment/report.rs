//! Aggregation of result rows into mean and standard error tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ResultRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub n: usize,
    pub metric: String,
    pub method: String,
    pub mean: f64,
    /// sample standard deviation over seeds divided by `sqrt(count)`; 0 for one seed
    pub se: f64,
    pub count: usize,
}

/// Groups rows by `(dataset, n, metric, method)` in sorted key order.
/// Rows sharing a seed within a group are all counted, so callers pass
/// one row per seed (the selected rows, not the grid table).
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, usize, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.dataset.clone(), r.n, r.metric.clone(), r.method.clone()))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((dataset, n, metric, method), v)| {
            let k = v.len() as f64;
            let mean = v.iter().sum::<f64>() / k;
            let se = if v.len() > 1 {
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                dataset,
                n,
                metric,
                method,
                mean,
                se,
                count: v.len(),
            }
        })
        .collect()
}

pub fn write_summary_csv(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("nothing to summarize"));
    }
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned plain-text table, one line per summary row.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let header = ["dataset", "n", "metric", "method", "mean ± se", "seeds"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.dataset.clone(),
                r.n.to_string(),
                r.metric.clone(),
                r.method.clone(),
                format!("{:.4} ± {:.4}", r.mean, r.se),
                r.count.to_string(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |items: &[String]| {
        items
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(&header.map(String::from));
    out.push('\n');
    for row in &cells {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}
