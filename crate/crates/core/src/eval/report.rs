//! Table-shaped reports: per-dataset NDCG@5 / Hit@5 rows per variant and an
//! improvement row against the best baseline.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::pipeline::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub ndcg: f64,
    pub hit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetColumn {
    pub name: String,
    pub rows: Vec<(Variant, MetricPair)>,
    /// Improvement cells reported elsewhere for this dataset, in percent,
    /// to be checked against the recomputed ones.
    pub published_improvement: Option<MetricPair>,
}

impl DatasetColumn {
    pub fn get(&self, variant: Variant) -> Option<MetricPair> {
        self.rows.iter().find(|(v, _)| *v == variant).map(|(_, m)| *m)
    }

    /// ARAG's improvement over the better of the two baselines, per metric.
    pub fn improvement(&self) -> Option<MetricPair> {
        let arag = self.get(Variant::Arag)?;
        let baselines: Vec<MetricPair> = [Variant::Recency, Variant::VanillaRag]
            .into_iter()
            .filter_map(|v| self.get(v))
            .collect();
        Some(MetricPair {
            ndcg: improvement_over_best_baseline(arag.ndcg, &baselines.iter().map(|m| m.ndcg).collect::<Vec<_>>())?,
            hit: improvement_over_best_baseline(arag.hit, &baselines.iter().map(|m| m.hit).collect::<Vec<_>>())?,
        })
    }
}

/// `100 * (value - base) / base`; `None` when `base` is not positive.
pub fn relative_improvement(value: f64, base: f64) -> Option<f64> {
    (base > 0.0).then(|| 100.0 * (value - base) / base)
}

/// Percentage gain over the strongest baseline.
pub fn improvement_over_best_baseline(value: f64, baselines: &[f64]) -> Option<f64> {
    let best = baselines.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best.is_finite() {
        relative_improvement(value, best)
    } else {
        None
    }
}

/// Two-decimal percentage, e.g. `42.12%`.
pub fn format_pct(value: f64) -> String {
    format!("{value:.2}%")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub markdown: String,
    /// Per dataset, the formatted (NDCG, Hit) improvement cells.
    pub improvement_cells: Vec<(String, Option<(String, String)>)>,
    pub warnings: Vec<String>,
}

const ROW_ORDER: [Variant; 5] = [
    Variant::Recency,
    Variant::VanillaRag,
    Variant::AragNoNliNoCsa,
    Variant::AragNoNli,
    Variant::Arag,
];

pub fn format_report(columns: &[DatasetColumn], k: usize) -> Report {
    let mut md = String::from("|");
    let mut rule = String::from("|---");
    for c in columns {
        write!(md, " | {0} NDCG@{k} | {0} Hit@{k}", c.name).unwrap();
        rule.push_str("|---:|---:");
    }
    md.push_str(" |\n");
    md.push_str(&rule);
    md.push_str("|\n");

    for variant in ROW_ORDER {
        if columns.iter().all(|c| c.get(variant).is_none()) {
            continue;
        }
        md.push_str("| ");
        md.push_str(variant.label());
        for c in columns {
            match c.get(variant) {
                Some(m) => write!(md, " | {:.5} | {:.4}", m.ndcg, m.hit).unwrap(),
                None => md.push_str(" | - | -"),
            }
        }
        md.push_str(" |\n");
    }

    let mut cells = Vec::new();
    let mut warnings = Vec::new();
    md.push_str("| % Improvement");
    for c in columns {
        let cell = c.improvement().map(|m| (format_pct(m.ndcg), format_pct(m.hit)));
        match &cell {
            Some((n, h)) => write!(md, " | {n} | {h}").unwrap(),
            None => md.push_str(" | - | -"),
        }
        if let (Some((n, h)), Some(published)) = (&cell, c.published_improvement) {
            for (metric, computed, published) in [("NDCG", n, published.ndcg), ("Hit", h, published.hit)] {
                let published = format_pct(published);
                if *computed != published {
                    warnings.push(format!(
                        "{} {metric}@{k}: improvement recomputed from the table's own rows is {computed}, \
                         but the published cell says {published}",
                        c.name
                    ));
                }
            }
        }
        cells.push((c.name.clone(), cell));
    }
    md.push_str(" |\n");
    for w in &warnings {
        writeln!(md, "\n> warning: {w}").unwrap();
    }
    Report {
        markdown: md,
        improvement_cells: cells,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_values_give_zero() {
        assert_eq!(format_pct(improvement_over_best_baseline(0.3, &[0.3, 0.1]).unwrap()), "0.00%");
    }

    #[test]
    fn no_baselines_no_improvement() {
        assert_eq!(improvement_over_best_baseline(0.3, &[]), None);
        assert_eq!(relative_improvement(0.3, 0.0), None);
    }

    #[test]
    fn uses_best_baseline() {
        let v = improvement_over_best_baseline(0.43937, &[0.30915, 0.29884]).unwrap();
        assert_eq!(format_pct(v), "42.12%");
    }

    #[test]
    fn table_has_one_row_per_present_variant() {
        let col = DatasetColumn {
            name: "Synthetic".into(),
            rows: vec![
                (Variant::Arag, MetricPair { ndcg: 0.5, hit: 0.6 }),
                (Variant::Recency, MetricPair { ndcg: 0.25, hit: 0.3 }),
            ],
            published_improvement: None,
        };
        let report = format_report(&[col], 5);
        assert_eq!(report.markdown.lines().count(), 2 + 2 + 1);
        assert!(report.markdown.contains("| % Improvement | 100.00% | 100.00% |"));
        assert!(report.warnings.is_empty());
    }
}
