use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{NewsTable, ResolvedImpression};
use crate::encoders::ModelParams;
use crate::error::{Error, Result};
use crate::training::Variant;

use super::{
    encode_news_table, ranking_order, score_impression, score_impression_candidates,
    ImpressionMetrics,
};

/// Metrics of one scored impression.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpressionDetail {
    pub impression_id: String,
    pub metrics: ImpressionMetrics,
    /// Candidate news ids from highest to lowest score.
    pub ranked: Vec<String>,
}

/// Metrics averaged over every impression with both labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub variant: String,
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub n_impressions: usize,
    pub details: Vec<ImpressionDetail>,
}

pub const REPORT_HEADER: &str = "variant,auc,mrr,ndcg5,ndcg10,n_impressions";

impl MetricsReport {
    /// Averages per-impression metrics in the given order.
    pub fn from_details(
        variant: impl Into<String>,
        details: Vec<ImpressionDetail>,
    ) -> Result<Self> {
        if details.is_empty() {
            return Err(Error::contract(
                "no impression has both clicked and unclicked candidates",
            ));
        }
        let n = details.len() as f64;
        let mean = |f: fn(&ImpressionMetrics) -> f64| {
            details.iter().map(|d| f(&d.metrics)).sum::<f64>() / n
        };
        Ok(MetricsReport {
            variant: variant.into(),
            auc: mean(|m| m.auc),
            mrr: mean(|m| m.mrr),
            ndcg5: mean(|m| m.ndcg5),
            ndcg10: mean(|m| m.ndcg10),
            n_impressions: details.len(),
            details,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            self.variant, self.auc, self.mrr, self.ndcg5, self.ndcg10, self.n_impressions
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{REPORT_HEADER}\n{}\n", self.csv_row())
    }

    /// One line per impression: id, the four metrics, and the ranked ids.
    pub fn details_csv(&self) -> String {
        let mut out = String::from("impression_id,auc,mrr,ndcg5,ndcg10,ranked\n");
        for d in &self.details {
            let m = d.metrics;
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{}",
                d.impression_id,
                m.auc,
                m.mrr,
                m.ndcg5,
                m.ndcg10,
                d.ranked.join(" ")
            );
        }
        out
    }
}

/// Header plus one row per report.
pub fn reports_csv(reports: &[MetricsReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Scores every candidate under `variant` and averages the metrics.
///
/// Impressions with a single label class are skipped.
pub fn evaluate(
    params: &ModelParams,
    news: &NewsTable,
    impressions: &[ResolvedImpression],
    variant: Variant,
) -> Result<MetricsReport> {
    let arch = variant.architecture();
    let encodings = encode_news_table(params, news, arch)?;
    let details = impressions
        .par_iter()
        .filter(|imp| imp.has_both_labels())
        .map(|imp| {
            let scores = score_impression_candidates(params, &encodings, imp, arch)?;
            let labels: Vec<bool> = imp.candidates.iter().map(|c| c.1).collect();
            let metrics = score_impression(&scores, &labels).expect("both labels present");
            let ranked = ranking_order(&scores)
                .into_iter()
                .map(|i| news.get(imp.candidates[i].0).news_id.clone())
                .collect();
            Ok(ImpressionDetail {
                impression_id: imp.impression_id.clone(),
                metrics,
                ranked,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_details(variant.name(), details)
}
