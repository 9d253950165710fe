use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::Metrics;
use crate::error::{Error, Result};
use crate::identifier::Annotation;
use crate::moderator::{MitigationDelta, Strategy};

/// Share of the top-N important words that are protected attributes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessStats {
    pub protected_count: usize,
    pub top_n: usize,
    pub percent: f64,
    /// Protected words that were also protected for the original model.
    pub retained_from_original: usize,
}

impl FairnessStats {
    pub fn new(protected_count: usize, top_n: usize, retained_from_original: usize) -> Result<Self> {
        if top_n == 0 || protected_count > top_n || retained_from_original > protected_count {
            return Err(Error::Invalid(format!(
                "inconsistent fairness counts {protected_count}/{top_n} {{{retained_from_original}}}"
            )));
        }
        Ok(FairnessStats {
            protected_count,
            top_n,
            percent: 100.0 * protected_count as f64 / top_n as f64,
            retained_from_original,
        })
    }

    /// `93/400`.
    pub fn ratio(&self) -> String {
        format!("{}/{}", self.protected_count, self.top_n)
    }

    /// `37/400 {16}`.
    pub fn ratio_with_retained(&self) -> String {
        format!("{}/{} {{{}}}", self.protected_count, self.top_n, self.retained_from_original)
    }

    /// Rounded to a whole percent, halves away from zero.
    pub fn percent_label(&self) -> String {
        format!("{}%", self.percent.round() as i64)
    }
}

/// Wall-clock seconds per stage. Kept out of the report so reports are
/// reproducible byte for byte.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub train: f64,
    pub predict: f64,
    pub explain: f64,
    pub identify: f64,
    pub moderate: f64,
    pub retrain: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.train + self.predict + self.explain + self.identify + self.moderate + self.retrain
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub metrics: Option<Metrics>,
    pub fairness: FairnessStats,
    /// Documents of the unlabeled corpus predicted as the target class.
    pub explained_documents: usize,
    pub top_words: Vec<String>,
    pub protected_words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationReport {
    pub target_class: String,
    pub strategy: Strategy,
    pub rounds: usize,
    pub original: RunSummary,
    pub mitigated: RunSummary,
    pub delta: MitigationDelta,
    /// Every annotation obtained during the run, by word.
    pub annotations: Vec<Annotation>,
    pub warnings: Vec<String>,
}

fn metric_cells(m: Option<&Metrics>) -> [String; 3] {
    match m {
        None => ["-".into(), "-".into(), "-".into()],
        Some(m) => [
            format!("{:.4}", m.f1_macro),
            format!("{:.4}", m.f1_weighted),
            m.auc.map_or("-".into(), |a| format!("{a:.4}")),
        ],
    }
}

fn table(rows: &[(&str, Option<&Metrics>, String, String)]) -> String {
    let mut out = String::new();
    let header = ["model", "F1 macro", "F1 weighted", "AUC", "% PA", "Ratio PA"];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|(name, m, pct, ratio)| {
            let [a, b, c] = metric_cells(*m);
            [name.to_string(), a, b, c, pct.clone(), ratio.clone()]
        })
        .collect();
    let widths: Vec<usize> = (0..6)
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap())
        .collect();
    let line = |cells: &[&str]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };
    writeln!(out, "{}", line(&header)).unwrap();
    for r in &body {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        writeln!(out, "{}", line(&cells)).unwrap();
    }
    out
}

impl MitigationReport {
    /// Fixed-layout text rendering of the report.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "target class: {}  strategy: {}  rounds: {}  top-n: {}\n",
            self.target_class, self.strategy, self.rounds, self.original.fairness.top_n
        )
        .unwrap();
        out.push_str(&table(&[
            (
                "original",
                self.original.metrics.as_ref(),
                self.original.fairness.percent_label(),
                self.original.fairness.ratio(),
            ),
            (
                "mitigated",
                self.mitigated.metrics.as_ref(),
                self.mitigated.fairness.percent_label(),
                self.mitigated.fairness.ratio_with_retained(),
            ),
        ]));
        let d = &self.delta;
        writeln!(
            out,
            "\ntraining documents: -{} +{}  tokens removed: {}  tokens replaced: {}",
            d.documents_removed, d.documents_added, d.tokens_removed, d.tokens_replaced
        )
        .unwrap();
        writeln!(out, "protected words (original): {}", self.original.protected_words.join(", ")).unwrap();
        writeln!(out, "protected words (mitigated): {}", self.mitigated.protected_words.join(", ")).unwrap();
        for w in &self.warnings {
            writeln!(out, "warning: {w}").unwrap();
        }
        out
    }
}

/// Text rendering of a measurement-only run.
pub fn render_measurement(target_class: &str, summary: &RunSummary) -> String {
    let mut out = format!("target class: {target_class}  top-n: {}\n\n", summary.fairness.top_n);
    out.push_str(&table(&[(
        "model",
        summary.metrics.as_ref(),
        summary.fairness.percent_label(),
        summary.fairness.ratio(),
    )]));
    writeln!(out, "\nprotected words: {}", summary.protected_words.join(", ")).unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fairness_rendering() {
        let s = FairnessStats::new(93, 400, 93).unwrap();
        assert_eq!(s.percent, 23.25);
        assert_eq!(s.percent_label(), "23%");
        assert_eq!(s.ratio(), "93/400");
        let m = FairnessStats::new(37, 400, 16).unwrap();
        assert_eq!(m.ratio_with_retained(), "37/400 {16}");
        assert!(FairnessStats::new(5, 4, 0).is_err());
        assert!(FairnessStats::new(2, 4, 3).is_err());
        assert!(FairnessStats::new(0, 0, 0).is_err());
    }
}
