//! Link-prediction ranking: MR, MRR and Hits@N.
//!
//! For every evaluation triple both the head and the tail are replaced by each
//! other entity. In the filtered setting, substitutions that are known triples
//! (any split) are dropped; the evaluated triple itself is always kept. Ties
//! are pessimistic: a competitor scoring equal to the valid triple ranks ahead
//! of it, so a constant scorer gets the worst possible rank.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Side, Split, Triple};
use crate::model::Scorer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    Filtered,
    Raw,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filtered" => Ok(Setting::Filtered),
            "raw" => Ok(Setting::Raw),
            other => Err(Error::Config(format!("unknown setting {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalConfig {
    pub setting: Setting,
    /// Hits@N cutoffs, each ≥ 1.
    pub cutoffs: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            setting: Setting::Filtered,
            cutoffs: vec![1, 3, 10],
        }
    }
}

impl EvalConfig {
    pub fn with_setting(setting: Setting) -> Self {
        EvalConfig {
            setting,
            ..EvalConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripleRanks {
    pub triple: Triple,
    pub head_rank: usize,
    pub tail_rank: usize,
}

/// Per-triple ranks and the aggregates over all `2 × |split|` of them.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub ranks: Vec<TripleRanks>,
    pub mr: f64,
    pub mrr: f64,
    /// `(N, fraction of ranks ≤ N)`, in cutoff order.
    pub hits: Vec<(usize, f64)>,
}

impl RankingReport {
    /// Aggregates the given ranks. Head and tail ranks of each triple are
    /// interleaved, in triple order.
    pub fn from_ranks(ranks: Vec<TripleRanks>, cutoffs: &[usize]) -> Self {
        let flat: Vec<usize> = ranks.iter().flat_map(|r| [r.head_rank, r.tail_rank]).collect();
        let (mr, mrr, hits) = rank_metrics(&flat, cutoffs);
        RankingReport { ranks, mr, mrr, hits }
    }

    pub fn hits_at(&self, n: usize) -> Option<f64> {
        self.hits.iter().find(|(c, _)| *c == n).map(|&(_, h)| h)
    }

    /// `MR<TAB>MRR<TAB>H@1<TAB>H@3<TAB>H@10`, Hits shown in percent.
    pub fn summary_line(&self) -> String {
        let pct = |n| {
            self.hits_at(n)
                .map_or_else(|| "NA".to_owned(), |h| format!("{:.2}", 100.0 * h))
        };
        format!("{:.2}\t{:.4}\t{}\t{}\t{}", self.mr, self.mrr, pct(1), pct(3), pct(10))
    }

    /// Per-triple TSV: `head relation tail head_rank tail_rank`, with labels.
    pub fn write_ranks<W: Write>(&self, kb: &KnowledgeBase, mut out: W) -> std::io::Result<()> {
        writeln!(out, "head\trelation\ttail\thead_rank\ttail_rank")?;
        for r in &self.ranks {
            let t = r.triple;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                kb.entities.label(t.head).unwrap_or_default(),
                kb.relations.label(t.relation).unwrap_or_default(),
                kb.entities.label(t.tail).unwrap_or_default(),
                r.head_rank,
                r.tail_rank
            )?;
        }
        Ok(())
    }
}

/// MR, MRR and Hits@N over a flat rank list. Sums run in list order.
pub fn rank_metrics(ranks: &[usize], cutoffs: &[usize]) -> (f64, f64, Vec<(usize, f64)>) {
    if ranks.is_empty() {
        return (0.0, 0.0, cutoffs.iter().map(|&c| (c, 0.0)).collect());
    }
    let n = ranks.len() as f64;
    let total: u64 = ranks.iter().map(|&r| r as u64).sum();
    let mr = total as f64 / n;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let hits = cutoffs
        .iter()
        .map(|&c| (c, ranks.iter().filter(|&&r| r <= c).count() as f64 / n))
        .collect();
    (mr, mrr, hits)
}

/// Rank of `t` given precomputed scores for every entity on `side`.
pub fn rank_from_scores(scores: &[f64], t: Triple, side: Side, kb: &KnowledgeBase, setting: Setting) -> Result<usize> {
    let truth = t.entity(side);
    let target = scores[truth];
    if !target.is_finite() {
        return Err(Error::Numerical(format!("non-finite score for evaluated triple {t}")));
    }
    let mut rank = 1;
    for (e, &s) in scores.iter().enumerate() {
        if e == truth {
            continue;
        }
        let candidate = t.with_entity(side, e);
        if setting == Setting::Filtered && kb.is_known(&candidate) {
            continue;
        }
        if !s.is_finite() {
            return Err(Error::Numerical(format!("non-finite score for candidate {candidate}")));
        }
        if s <= target {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Rank of `t` among all substitutions of its `side` entity.
pub fn rank_triple<S: Scorer + ?Sized>(
    scorer: &S,
    t: Triple,
    side: Side,
    kb: &KnowledgeBase,
    cfg: &EvalConfig,
) -> Result<usize> {
    let mut scores = vec![0.0; kb.num_entities()];
    scorer.score_candidates(t, side, &mut scores);
    rank_from_scores(&scores, t, side, kb, cfg.setting)
}

/// Ranks both sides of every test triple.
pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, kb: &KnowledgeBase, cfg: &EvalConfig) -> Result<RankingReport> {
    evaluate_split(scorer, kb, Split::Test, cfg)
}

/// Ranks both sides of every triple in `split`. Triples are processed in
/// parallel; the aggregate is computed in split order.
pub fn evaluate_split<S: Scorer + ?Sized>(
    scorer: &S,
    kb: &KnowledgeBase,
    split: Split,
    cfg: &EvalConfig,
) -> Result<RankingReport> {
    let triples = kb.split(split);
    if triples.is_empty() {
        return Err(Error::Config(format!("{} split is empty", split.name())));
    }
    if let Some(&bad) = cfg.cutoffs.iter().find(|&&c| c == 0) {
        return Err(Error::Config(format!("Hits@N cutoff must be positive, got {bad}")));
    }
    let n = kb.num_entities();
    let ranks = triples
        .par_iter()
        .map_init(
            || vec![0.0; n],
            |scores, &t| -> Result<TripleRanks> {
                scorer.score_candidates(t, Side::Head, scores);
                let head_rank = rank_from_scores(scores, t, Side::Head, kb, cfg.setting)?;
                scorer.score_candidates(t, Side::Tail, scores);
                let tail_rank = rank_from_scores(scores, t, Side::Tail, kb, cfg.setting)?;
                Ok(TripleRanks {
                    triple: t,
                    head_rank,
                    tail_rank,
                })
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(RankingReport::from_ranks(ranks, &cfg.cutoffs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_metrics() {
        let (mr, mrr, hits) = rank_metrics(&[1, 2, 4], &[1, 3, 10]);
        assert!((mr - 7.0 / 3.0).abs() < 1e-12);
        assert!((mrr - 0.5833333333333334).abs() < 1e-12);
        assert_eq!(hits, vec![(1, 1.0 / 3.0), (3, 2.0 / 3.0), (10, 1.0)]);
    }

    #[test]
    fn single_entity_ranks_first() {
        let kb = KnowledgeBase::from_labeled(&[("a", "r", "a")], &[], &[("a", "s", "a")]).unwrap();
        let scorer = |_: Triple| 0.0;
        for side in [Side::Head, Side::Tail] {
            assert_eq!(
                rank_triple(&scorer, kb.test[0], side, &kb, &EvalConfig::default()).unwrap(),
                1
            );
        }
    }

    fn three_entity_kb(with_e3_known: bool) -> KnowledgeBase {
        let mut train = vec![("h", "r", "e1")];
        if with_e3_known {
            train.push(("h", "r", "e3"));
        }
        KnowledgeBase::from_labeled(&train, &[], &[("h", "r", "e1"), ("e3", "s", "e2")]).unwrap()
    }

    fn tail_scores(kb: &KnowledgeBase) -> impl Fn(Triple) -> f64 + Sync + '_ {
        move |t: Triple| match kb.entities.label(t.tail).unwrap() {
            "e1" => 0.2,
            "e2" => 0.5,
            "e3" => 0.1,
            _ => 9.0,
        }
    }

    #[test]
    fn raw_and_filtered_tail_rank() {
        let kb = three_entity_kb(false);
        let t = kb.test[0];
        let cfg = EvalConfig::with_setting(Setting::Raw);
        assert_eq!(rank_triple(&tail_scores(&kb), t, Side::Tail, &kb, &cfg).unwrap(), 2);

        let kb = three_entity_kb(true);
        let t = kb.test[0];
        let cfg = EvalConfig::with_setting(Setting::Filtered);
        assert_eq!(rank_triple(&tail_scores(&kb), t, Side::Tail, &kb, &cfg).unwrap(), 1);
    }

    #[test]
    fn constant_scorer_gets_worst_rank() {
        let kb = three_entity_kb(false);
        let report = evaluate(&|_: Triple| 1.0, &kb, &EvalConfig::with_setting(Setting::Raw)).unwrap();
        assert!(report.ranks.iter().all(|r| r.head_rank == 4 && r.tail_rank == 4));
    }

    #[test]
    fn non_finite_scores_are_reported() {
        let kb = three_entity_kb(false);
        let err = evaluate(&|_: Triple| f64::NAN, &kb, &EvalConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn empty_split_is_rejected() {
        let kb = KnowledgeBase::from_labeled(&[("a", "r", "b")], &[], &[]).unwrap();
        assert!(evaluate(&|_: Triple| 0.0, &kb, &EvalConfig::default()).is_err());
    }

    #[test]
    fn summary_line_format() {
        let ranks = vec![
            TripleRanks {
                triple: Triple::new(0, 0, 0),
                head_rank: 1,
                tail_rank: 2,
            },
            TripleRanks {
                triple: Triple::new(0, 0, 1),
                head_rank: 4,
                tail_rank: 20,
            },
        ];
        let report = RankingReport::from_ranks(ranks, &[1, 3, 10]);
        assert_eq!(report.summary_line(), "6.75\t0.4500\t25.00\t50.00\t75.00");
    }
}
