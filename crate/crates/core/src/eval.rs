//! Filtered link-prediction ranking and aggregate metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FilterIndex, RelationCategory, RelationStats, Triple, TripleStore};
use crate::model::{EmbeddingTable, ScorerKind};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("{kind} pattern takes {expected} relation(s), got {found}")]
    Arity {
        kind: crate::patterns::PatternKind,
        expected: usize,
        found: usize,
    },
    #[error("pattern residuals need paired real relation vectors (pairre), not {0}")]
    UnsupportedScorer(ScorerKind),
    #[error("relation {relation} out of range (table has {num_relations})")]
    RelationOutOfRange {
        relation: usize,
        num_relations: usize,
    },
    #[error("histogram needs at least one bin")]
    ZeroBins,
    #[error("line {line}: {message}")]
    ReportParse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// How a target that ties with other candidates is ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// `1 + better + ties / 2`
    Mean,
    /// `1 + better`
    Optimistic,
    /// `1 + better + ties`
    Pessimistic,
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiePolicy::Mean => "mean",
            TiePolicy::Optimistic => "optimistic",
            TiePolicy::Pessimistic => "pessimistic",
        })
    }
}

impl FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(TiePolicy::Mean),
            "optimistic" => Ok(TiePolicy::Optimistic),
            "pessimistic" => Ok(TiePolicy::Pessimistic),
            _ => Err(format!("unknown tie policy `{s}`")),
        }
    }
}

/// Which entity of the triple is replaced by candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

/// Rank of `scores[target]` among candidates not excluded. Higher scores
/// rank first; the target itself is never excluded.
pub fn rank_from_scores(
    scores: &[f64],
    target: usize,
    excluded: impl Fn(usize) -> bool,
    policy: TiePolicy,
) -> f64 {
    let s = scores[target];
    let mut better = 0usize;
    let mut ties = 0usize;
    for (c, &x) in scores.iter().enumerate() {
        if c == target || excluded(c) {
            continue;
        }
        if x > s {
            better += 1;
        } else if x == s {
            ties += 1;
        }
    }
    let base = 1.0 + better as f64;
    match policy {
        TiePolicy::Mean => base + ties as f64 / 2.0,
        TiePolicy::Optimistic => base,
        TiePolicy::Pessimistic => base + ties as f64,
    }
}

/// Rank of the true entity among all substitutions on `side`. With a filter,
/// candidates forming other known-true triples are removed first.
pub fn rank_triple(
    table: &EmbeddingTable,
    triple: &Triple,
    filter: Option<&FilterIndex>,
    side: Side,
    policy: TiePolicy,
) -> f64 {
    match side {
        Side::Tail => {
            let scores = table.score_all_tails(triple.head, triple.relation);
            let known = filter.and_then(|f| f.tails_of(triple.head, triple.relation));
            rank_from_scores(
                &scores,
                triple.tail,
                |c| known.is_some_and(|k| k.contains(&c)),
                policy,
            )
        }
        Side::Head => {
            let scores = table.score_all_heads(triple.tail, triple.relation);
            let known = filter.and_then(|f| f.heads_of(triple.tail, triple.relation));
            rank_from_scores(
                &scores,
                triple.head,
                |c| known.is_some_and(|k| k.contains(&c)),
                policy,
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Number of ranks aggregated.
    pub count: usize,
    pub mr: f64,
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
}

impl Metrics {
    pub fn from_ranks(ranks: &[f64]) -> Self {
        let n = ranks.len() as f64;
        let frac = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Metrics {
            count: ranks.len(),
            mr: ranks.iter().sum::<f64>() / n,
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            hits_at_1: frac(1.0),
            hits_at_3: frac(3.0),
            hits_at_10: frac(10.0),
        }
    }

    pub fn hits(&self, n: u32) -> Option<f64> {
        match n {
            1 => Some(self.hits_at_1),
            3 => Some(self.hits_at_3),
            10 => Some(self.hits_at_10),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleRanks {
    pub triple: Triple,
    pub head: f64,
    pub tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideMetrics {
    /// Test triples in this group.
    pub triples: usize,
    /// Both sides pooled, i.e. the mean of head and tail prediction.
    pub both: Metrics,
    pub head: Metrics,
    pub tail: Metrics,
}

impl SideMetrics {
    fn from_ranks(ranks: &[TripleRanks]) -> Self {
        let head: Vec<f64> = ranks.iter().map(|r| r.head).collect();
        let tail: Vec<f64> = ranks.iter().map(|r| r.tail).collect();
        let both: Vec<f64> = ranks.iter().flat_map(|r| [r.head, r.tail]).collect();
        SideMetrics {
            triples: ranks.len(),
            both: Metrics::from_ranks(&both),
            head: Metrics::from_ranks(&head),
            tail: Metrics::from_ranks(&tail),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub tie_policy: TiePolicy,
    pub filtered: bool,
    pub overall: SideMetrics,
    /// Only categories with at least one test triple appear.
    pub categories: BTreeMap<RelationCategory, SideMetrics>,
}

/// Head and tail ranks for every test triple, in store order.
pub fn rank_all(
    table: &EmbeddingTable,
    test: &TripleStore,
    filter: Option<&FilterIndex>,
    policy: TiePolicy,
) -> Vec<TripleRanks> {
    test.triples()
        .par_iter()
        .map(|t| TripleRanks {
            triple: *t,
            head: rank_triple(table, t, filter, Side::Head, policy),
            tail: rank_triple(table, t, filter, Side::Tail, policy),
        })
        .collect()
}

/// Ranks both sides of every test triple and aggregates, overall and per
/// relation category when `categories` is given.
pub fn evaluate(
    table: &EmbeddingTable,
    test: &TripleStore,
    filter: Option<&FilterIndex>,
    categories: Option<&[RelationStats]>,
    policy: TiePolicy,
) -> Result<RankingReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let ranks = rank_all(table, test, filter, policy);
    Ok(report_from_ranks(&ranks, filter.is_some(), categories, policy))
}

pub fn report_from_ranks(
    ranks: &[TripleRanks],
    filtered: bool,
    categories: Option<&[RelationStats]>,
    policy: TiePolicy,
) -> RankingReport {
    let mut by_category: BTreeMap<RelationCategory, Vec<TripleRanks>> = BTreeMap::new();
    if let Some(stats) = categories {
        for r in ranks {
            let cat = stats
                .get(r.triple.relation)
                .map_or(RelationCategory::OneToOne, |s| s.category);
            by_category.entry(cat).or_default().push(*r);
        }
    }
    RankingReport {
        tie_policy: policy,
        filtered,
        overall: SideMetrics::from_ranks(ranks),
        categories: by_category
            .into_iter()
            .map(|(c, rs)| (c, SideMetrics::from_ranks(&rs)))
            .collect(),
    }
}

/// One line of the flat report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// `all` or a category label such as `1-to-N`.
    pub scope: String,
    /// `both`, `head` or `tail`.
    pub side: String,
    pub metrics: Metrics,
}

pub const REPORT_TSV_HEADER: &str = "scope\tside\tcount\tmr\tmrr\thits@1\thits@3\thits@10";

impl RankingReport {
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = Vec::new();
        let mut push = |scope: &str, m: &SideMetrics| {
            for (side, metrics) in [("both", m.both), ("head", m.head), ("tail", m.tail)] {
                rows.push(ReportRow {
                    scope: scope.to_owned(),
                    side: side.to_owned(),
                    metrics,
                });
            }
        };
        push("all", &self.overall);
        for (cat, m) in &self.categories {
            push(cat.label(), m);
        }
        rows
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(REPORT_TSV_HEADER);
        out.push('\n');
        for r in self.rows() {
            let m = r.metrics;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.scope, r.side, m.count, m.mr, m.mrr, m.hits_at_1, m.hits_at_3, m.hits_at_10
            ));
        }
        out
    }

    /// Multi-line human-readable summary.
    pub fn summary(&self) -> String {
        let m = &self.overall.both;
        let mut s = format!(
            "{} test triples ({} ranking, {} ties)\nMR {:.3}  MRR {:.4}  Hit@1 {:.4}  Hit@3 {:.4}  Hit@10 {:.4}\n",
            self.overall.triples,
            if self.filtered { "filtered" } else { "raw" },
            self.tie_policy,
            m.mr,
            m.mrr,
            m.hits_at_1,
            m.hits_at_3,
            m.hits_at_10
        );
        for (cat, c) in &self.categories {
            s.push_str(&format!(
                "{:>7} ({:>5} triples)  Hit@10 head {:.4}  tail {:.4}  mean {:.4}\n",
                cat.label(),
                c.triples,
                c.head.hits_at_10,
                c.tail.hits_at_10,
                c.both.hits_at_10
            ));
        }
        s
    }
}

/// Parses the output of [`RankingReport::to_tsv`]; leading `#` comment
/// lines are skipped.
pub fn parse_report_tsv(text: &str) -> Result<Vec<ReportRow>, EvalError> {
    let mut lines = text
        .lines()
        .enumerate()
        .skip_while(|(_, l)| l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h == REPORT_TSV_HEADER => {}
        _ => {
            return Err(EvalError::ReportParse {
                line: 1,
                message: "missing report header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |message: String| EvalError::ReportParse {
            line: idx + 1,
            message,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
        rows.push(ReportRow {
            scope: f[0].to_owned(),
            side: f[1].to_owned(),
            metrics: Metrics {
                count: f[2].parse().map_err(|_| err(format!("bad count `{}`", f[2])))?,
                mr: num(f[3])?,
                mrr: num(f[4])?,
                hits_at_1: num(f[5])?,
                hits_at_3: num(f[6])?,
                hits_at_10: num(f[7])?,
            },
        });
    }
    Ok(rows)
}
