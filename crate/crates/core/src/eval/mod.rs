//! Ranking metrics, whole-run evaluation, ablations, and per-impression
//! rank inspection.

mod ablation;
mod inspect;
mod metrics;
mod report;
mod score;

pub use ablation::{holdout_split, run_ablation, AblationRun};
pub use inspect::{inspect_ranking, rank_scored, Flag, RankedCandidate, Ranking};
pub use metrics::{auc, mrr, ndcg_at_k, ranking_order, score_impression, ImpressionMetrics};
pub use report::{evaluate, reports_csv, ImpressionDetail, MetricsReport, REPORT_HEADER};
pub use score::{encode_news_table, score_impression_candidates, user_vector, NewsEncodings};
