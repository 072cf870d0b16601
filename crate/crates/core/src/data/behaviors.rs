use std::io::BufRead;

use crate::error::{Error, Result};

use super::NewsTable;

/// Default cap on the number of history clicks kept per impression.
pub const DEFAULT_HISTORY_CAP: usize = 25;

/// One impression record of a behaviors table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImpressionLog {
    pub impression_id: String,
    pub user_id: String,
    pub time: String,
    /// Clicked history, oldest first, truncated to the most recent entries.
    pub history: Vec<String>,
    pub candidates: Vec<(String, bool)>,
}

impl ImpressionLog {
    pub fn positives(&self) -> usize {
        self.candidates.iter().filter(|(_, l)| *l).count()
    }
}

/// Reads a tab-separated behaviors table
/// (`impression_id, user_id, time, history, impressions`).
///
/// Histories longer than `history_cap` keep their most recent (last) entries.
pub fn parse_behaviors<R: BufRead>(reader: R, history_cap: usize) -> Result<Vec<ImpressionLog>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 5 {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected 5 tab-separated columns, found {}", cols.len()),
            });
        }
        let mut history: Vec<String> = cols[3].split_whitespace().map(str::to_string).collect();
        if history.len() > history_cap {
            history.drain(..history.len() - history_cap);
        }
        let candidates = cols[4]
            .split_whitespace()
            .map(|tok| match tok.rsplit_once('-') {
                Some((id, "1")) if !id.is_empty() => Ok((id.to_string(), true)),
                Some((id, "0")) if !id.is_empty() => Ok((id.to_string(), false)),
                _ => Err(Error::Parse {
                    line: line_no,
                    reason: format!("candidate {tok:?} lacks a -0/-1 click label"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ImpressionLog {
            impression_id: cols[0].trim().to_string(),
            user_id: cols[1].trim().to_string(),
            time: cols[2].to_string(),
            history,
            candidates,
        });
    }
    Ok(out)
}

/// Inverse of [`parse_behaviors`].
pub fn write_behaviors(logs: &[ImpressionLog]) -> String {
    let mut out = String::new();
    for log in logs {
        let cands: Vec<String> = log
            .candidates
            .iter()
            .map(|(id, l)| format!("{id}-{}", u8::from(*l)))
            .collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            log.impression_id,
            log.user_id,
            log.time,
            log.history.join(" "),
            cands.join(" ")
        ));
    }
    out
}

/// An impression whose news ids have been resolved to table positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedImpression {
    /// Position of the impression in its source list.
    pub index: usize,
    pub impression_id: String,
    pub user_id: String,
    pub history: Vec<usize>,
    pub candidates: Vec<(usize, bool)>,
}

impl ResolvedImpression {
    pub fn resolve(index: usize, log: &ImpressionLog, news: &NewsTable) -> Result<Self> {
        Ok(ResolvedImpression {
            index,
            impression_id: log.impression_id.clone(),
            user_id: log.user_id.clone(),
            history: log
                .history
                .iter()
                .map(|id| news.resolve(id))
                .collect::<Result<_>>()?,
            candidates: log
                .candidates
                .iter()
                .map(|(id, l)| Ok((news.resolve(id)?, *l)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn has_both_labels(&self) -> bool {
        self.candidates.iter().any(|c| c.1) && self.candidates.iter().any(|c| !c.1)
    }
}

/// Resolves every impression against `news`, failing on the first unknown id.
pub fn resolve_all(logs: &[ImpressionLog], news: &NewsTable) -> Result<Vec<ResolvedImpression>> {
    logs.iter()
        .enumerate()
        .map(|(i, log)| ResolvedImpression::resolve(i, log, news))
        .collect()
}
