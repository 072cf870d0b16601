use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::{NewsTable, ResolvedImpression};
use crate::encoders::ModelParams;
use crate::error::{Error, Result};
use crate::training::Architecture;

use super::{encode_news_table, score_impression_candidates};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flag {
    Clicked,
    Clickbait,
}

impl Flag {
    pub fn name(self) -> &'static str {
        match self {
            Flag::Clicked => "clicked",
            Flag::Clickbait => "clickbait",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Flag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clicked" => Ok(Flag::Clicked),
            "clickbait" => Ok(Flag::Clickbait),
            _ => Err(Error::config(format!(
                "unknown flag {s:?}; expected clicked or clickbait"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    /// 1-based position.
    pub rank: usize,
    pub news_id: String,
    pub score: f64,
    pub flag: Option<Flag>,
}

/// Candidates of one impression in score order, plus flags that matched nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub rows: Vec<RankedCandidate>,
    /// Flagged news ids that are not candidates of the impression.
    pub unknown_flags: Vec<String>,
}

impl Ranking {
    /// Mean rank of the rows carrying `flag`.
    pub fn mean_rank(&self, flag: Flag) -> Option<f64> {
        let ranks: Vec<usize> = self
            .rows
            .iter()
            .filter(|r| r.flag == Some(flag))
            .map(|r| r.rank)
            .collect();
        (!ranks.is_empty()).then(|| ranks.iter().sum::<usize>() as f64 / ranks.len() as f64)
    }

    /// `rank,news_id,score,flag` rows; unknown flags become `warning` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,news_id,score,flag\n");
        for r in &self.rows {
            let flag = r.flag.map_or("none", Flag::name);
            let _ = writeln!(out, "{},{},{:.6},{flag}", r.rank, r.news_id, r.score);
        }
        for id in &self.unknown_flags {
            let _ = writeln!(out, "warning,{id},,not-a-candidate");
        }
        out
    }
}

/// Ranks already-scored candidates; equal scores are ordered by news id.
pub fn rank_scored(ids: &[String], scores: &[f64], flags: &[(String, Flag)]) -> Ranking {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    let flag_of = |id: &str| flags.iter().rev().find(|(f, _)| f == id).map(|(_, fl)| *fl);
    let rows = order
        .iter()
        .enumerate()
        .map(|(r, &i)| RankedCandidate {
            rank: r + 1,
            news_id: ids[i].clone(),
            score: scores[i],
            flag: flag_of(&ids[i]),
        })
        .collect();
    let mut unknown_flags: Vec<String> = flags
        .iter()
        .filter(|(f, _)| !ids.contains(f))
        .map(|(f, _)| f.clone())
        .collect();
    unknown_flags.dedup();
    Ranking {
        rows,
        unknown_flags,
    }
}

/// Scores and ranks the candidates of one impression.
pub fn inspect_ranking(
    params: &ModelParams,
    news: &NewsTable,
    imp: &ResolvedImpression,
    arch: Architecture,
    flags: &[(String, Flag)],
) -> Result<Ranking> {
    let encodings = encode_news_table(params, news, arch)?;
    let scores = score_impression_candidates(params, &encodings, imp, arch)?;
    let ids: Vec<String> = imp
        .candidates
        .iter()
        .map(|&(c, _)| news.get(c).news_id.clone())
        .collect();
    Ok(rank_scored(&ids, &scores, flags))
}
