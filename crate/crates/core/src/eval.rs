//! Retrieval quality metrics over radius-bounded queries.
//!
//! Everything here scores the result lists of `CodeIndex::query_radius`
//! under one relevance notion: a database item is relevant to a query
//! when their class labels are equal. The conventions, which matter
//! enough that they are echoed into the metrics output:
//!
//! * A query that retrieves nothing scores 0 for AP and precision and
//!   still counts in the mean. Radius-bounded retrieval that comes
//!   back empty is a miss, not a no-op.
//! * Average precision divides by the number of relevant items the
//!   ball actually returned, not by the number of relevant items in
//!   the database. It measures ranking quality inside the ball;
//!   coverage is what `avg_similar_within_radius` is for.
//! * The precision-recall curve pools all queries at each rank cutoff
//!   (micro-averaging), and its recall denominator is the total number
//!   of relevant items retrieved within the ball across queries. When
//!   every query comes back empty the curve degenerates to a single
//!   (0,0) point.

use crate::codes::BinaryCode;
use crate::error::{Error, Result};
use crate::index::CodeIndex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Maps queries and database ids to class labels. Database ids must be
/// positional (0..n in database order), which is what `CodeIndex::build`
/// assigns.
#[derive(Clone, Debug)]
pub struct RelevanceJudge {
    query_labels: Vec<u32>,
    db_labels: Vec<u32>,
}

impl RelevanceJudge {
    pub fn new(query_labels: Vec<u32>, db_labels: Vec<u32>) -> Result<Self> {
        if query_labels.is_empty() || db_labels.is_empty() {
            return Err(Error::InvalidArgument(
                "judge needs nonempty query and database labels".into(),
            ));
        }
        Ok(RelevanceJudge {
            query_labels,
            db_labels,
        })
    }

    pub fn n_queries(&self) -> usize {
        self.query_labels.len()
    }

    pub fn n_database(&self) -> usize {
        self.db_labels.len()
    }

    pub fn is_relevant(&self, query: usize, db_id: u64) -> Result<bool> {
        let q = self
            .query_labels
            .get(query)
            .ok_or_else(|| Error::InvalidArgument(format!("query {query} out of range")))?;
        let d = self
            .db_labels
            .get(db_id as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("database id {db_id} out of range")))?;
        Ok(q == d)
    }
}

/// One point of the pooled precision-recall curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Rank cutoff the point was computed at; 0 only for the
    /// degenerate all-empty curve.
    pub cutoff: usize,
    pub recall: f64,
    pub precision: f64,
}

/// Conventions baked into the numbers, spelled out so a reader of the
/// metrics file does not have to reverse-engineer them.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Conventions {
    pub empty_retrieval_scores_zero: bool,
    pub ap_denominator: String,
    pub pr_recall_denominator: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            empty_retrieval_scores_zero: true,
            ap_denominator: "relevant retrieved within radius".into(),
            pr_recall_denominator: "total relevant retrieved within radius".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub bits: usize,
    pub radius: usize,
    pub n_queries: usize,
    pub n_database: usize,
    pub map: f64,
    pub precision: f64,
    pub avg_similar_within_radius: f64,
    pub pr_curve: Vec<PrPoint>,
    pub conventions: Conventions,
}

fn check_inputs(index: &CodeIndex, queries: &[BinaryCode], judge: &RelevanceJudge) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    if judge.n_queries() != queries.len() {
        return Err(Error::InvalidArgument(format!(
            "{} queries but {} query labels",
            queries.len(),
            judge.n_queries()
        )));
    }
    if judge.n_database() != index.len() {
        return Err(Error::InvalidArgument(format!(
            "index holds {} items but judge has {} database labels",
            index.len(),
            judge.n_database()
        )));
    }
    Ok(())
}

/// Result lists for every query, in query order. Queries fan out over
/// the rayon pool; collect preserves input order, so the outcome is
/// identical to a sequential loop.
fn retrieve_all(
    index: &CodeIndex,
    queries: &[BinaryCode],
    radius: usize,
) -> Result<Vec<Vec<(u64, u32)>>> {
    queries
        .par_iter()
        .map(|q| index.query_radius(q, radius))
        .collect()
}

fn ap_of(hits: &[(u64, u32)], judge: &RelevanceJudge, query: usize) -> Result<f64> {
    let mut relevant_seen = 0usize;
    let mut precision_sum = 0.0;
    for (rank, &(id, _)) in hits.iter().enumerate() {
        if judge.is_relevant(query, id)? {
            relevant_seen += 1;
            precision_sum += relevant_seen as f64 / (rank + 1) as f64;
        }
    }
    if relevant_seen == 0 {
        return Ok(0.0);
    }
    Ok(precision_sum / relevant_seen as f64)
}

/// Mean average precision at the given radius.
pub fn map_at_radius(
    index: &CodeIndex,
    queries: &[BinaryCode],
    judge: &RelevanceJudge,
    radius: usize,
) -> Result<f64> {
    check_inputs(index, queries, judge)?;
    let lists = retrieve_all(index, queries, radius)?;
    let mut total = 0.0;
    for (qi, hits) in lists.iter().enumerate() {
        total += ap_of(hits, judge, qi)?;
    }
    Ok(total / queries.len() as f64)
}

/// Mean fraction of retrieved items that are relevant.
pub fn precision_at_radius(
    index: &CodeIndex,
    queries: &[BinaryCode],
    judge: &RelevanceJudge,
    radius: usize,
) -> Result<f64> {
    check_inputs(index, queries, judge)?;
    let lists = retrieve_all(index, queries, radius)?;
    let mut total = 0.0;
    for (qi, hits) in lists.iter().enumerate() {
        if hits.is_empty() {
            continue; // scores zero, still in the denominator
        }
        let mut rel = 0usize;
        for &(id, _) in hits {
            if judge.is_relevant(qi, id)? {
                rel += 1;
            }
        }
        total += rel as f64 / hits.len() as f64;
    }
    Ok(total / queries.len() as f64)
}

/// Mean number of relevant items retrieved within the radius, the
/// coverage statistic radius-bounded retrieval lives or dies by.
pub fn avg_similar_within_radius(
    index: &CodeIndex,
    queries: &[BinaryCode],
    judge: &RelevanceJudge,
    radius: usize,
) -> Result<f64> {
    check_inputs(index, queries, judge)?;
    let lists = retrieve_all(index, queries, radius)?;
    let mut total = 0usize;
    for (qi, hits) in lists.iter().enumerate() {
        for &(id, _) in hits {
            if judge.is_relevant(qi, id)? {
                total += 1;
            }
        }
    }
    Ok(total as f64 / queries.len() as f64)
}

/// Pooled precision-recall sweep over rank cutoffs 1..=max list
/// length.
pub fn pr_curve_at_radius(
    index: &CodeIndex,
    queries: &[BinaryCode],
    judge: &RelevanceJudge,
    radius: usize,
) -> Result<Vec<PrPoint>> {
    check_inputs(index, queries, judge)?;
    let lists = retrieve_all(index, queries, radius)?;
    pr_curve_from_lists(&lists, judge)
}

fn pr_curve_from_lists(
    lists: &[Vec<(u64, u32)>],
    judge: &RelevanceJudge,
) -> Result<Vec<PrPoint>> {
    let max_len = lists.iter().map(|l| l.len()).max().unwrap_or(0);
    if max_len == 0 {
        return Ok(vec![PrPoint {
            cutoff: 0,
            recall: 0.0,
            precision: 0.0,
        }]);
    }
    // relevance flags per query, computed once
    let mut flags: Vec<Vec<bool>> = Vec::with_capacity(lists.len());
    for (qi, hits) in lists.iter().enumerate() {
        let mut f = Vec::with_capacity(hits.len());
        for &(id, _) in hits {
            f.push(judge.is_relevant(qi, id)?);
        }
        flags.push(f);
    }
    let total_relevant: usize = flags
        .iter()
        .map(|f| f.iter().filter(|&&r| r).count())
        .sum();
    let mut curve = Vec::with_capacity(max_len);
    let mut rel_at = 0usize;
    let mut ret_at = 0usize;
    for k in 1..=max_len {
        for f in &flags {
            if k <= f.len() {
                ret_at += 1;
                if f[k - 1] {
                    rel_at += 1;
                }
            }
        }
        let precision = rel_at as f64 / ret_at as f64;
        let recall = if total_relevant == 0 {
            0.0
        } else {
            rel_at as f64 / total_relevant as f64
        };
        curve.push(PrPoint {
            cutoff: k,
            recall,
            precision,
        });
    }
    Ok(curve)
}

/// One retrieval pass, all four metrics.
pub fn evaluate(
    index: &CodeIndex,
    queries: &[BinaryCode],
    judge: &RelevanceJudge,
    radius: usize,
) -> Result<MetricsSummary> {
    check_inputs(index, queries, judge)?;
    let lists = retrieve_all(index, queries, radius)?;

    let mut map_total = 0.0;
    let mut prec_total = 0.0;
    let mut similar_total = 0usize;
    for (qi, hits) in lists.iter().enumerate() {
        map_total += ap_of(hits, judge, qi)?;
        let mut rel = 0usize;
        for &(id, _) in hits {
            if judge.is_relevant(qi, id)? {
                rel += 1;
            }
        }
        similar_total += rel;
        if !hits.is_empty() {
            prec_total += rel as f64 / hits.len() as f64;
        }
    }
    let n = queries.len() as f64;
    Ok(MetricsSummary {
        bits: index.bits().unwrap_or_else(|| queries[0].len()),
        radius,
        n_queries: queries.len(),
        n_database: index.len(),
        map: map_total / n,
        precision: prec_total / n,
        avg_similar_within_radius: similar_total as f64 / n,
        pr_curve: pr_curve_from_lists(&lists, judge)?,
        conventions: Conventions::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(len: usize, value: u64) -> BinaryCode {
        BinaryCode::from_words(len, vec![value]).unwrap()
    }

    /// Query 0x00 (label 0) against items at distances 0,1,1,2,3 with
    /// labels 0,1,0,1,0. Ball radius 2 retrieves ranks: id0 d0 (rel),
    /// id1 d1, id2 d1 (rel), id3 d2. AP = (1/1 + 2/3)/2 = 5/6,
    /// precision = 1/2, similar count = 2.
    fn hand_case() -> (CodeIndex, Vec<BinaryCode>, RelevanceJudge) {
        let db = vec![
            code(8, 0b0000_0000),
            code(8, 0b0000_0001),
            code(8, 0b0000_0010),
            code(8, 0b0000_0011),
            code(8, 0b0000_0111),
        ];
        let index = CodeIndex::build(db).unwrap();
        let queries = vec![code(8, 0)];
        let judge = RelevanceJudge::new(vec![0], vec![0, 1, 0, 1, 0]).unwrap();
        (index, queries, judge)
    }

    #[test]
    fn map_matches_hand_computation() {
        let (index, queries, judge) = hand_case();
        let map = map_at_radius(&index, &queries, &judge, 2).unwrap();
        assert!((map - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn precision_and_similar_match_hand_computation() {
        let (index, queries, judge) = hand_case();
        assert_eq!(
            precision_at_radius(&index, &queries, &judge, 2).unwrap(),
            0.5
        );
        assert_eq!(
            avg_similar_within_radius(&index, &queries, &judge, 2).unwrap(),
            2.0
        );
    }

    #[test]
    fn pr_curve_matches_hand_computation() {
        let (index, queries, judge) = hand_case();
        let curve = pr_curve_at_radius(&index, &queries, &judge, 2).unwrap();
        // Ranked flags: [rel, irr, rel, irr]; total relevant = 2.
        let expected = [
            (1, 0.5, 1.0),
            (2, 0.5, 0.5),
            (3, 1.0, 2.0 / 3.0),
            (4, 1.0, 0.5),
        ];
        assert_eq!(curve.len(), expected.len());
        for (p, &(k, r, pr)) in curve.iter().zip(&expected) {
            assert_eq!(p.cutoff, k);
            assert!((p.recall - r).abs() < 1e-15);
            assert!((p.precision - pr).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_retrieval_scores_one() {
        let db = vec![code(8, 0), code(8, 1), code(8, 2)];
        let index = CodeIndex::build(db).unwrap();
        let queries = vec![code(8, 0)];
        let judge = RelevanceJudge::new(vec![5], vec![5, 5, 5]).unwrap();
        assert_eq!(map_at_radius(&index, &queries, &judge, 2).unwrap(), 1.0);
        assert_eq!(
            precision_at_radius(&index, &queries, &judge, 2).unwrap(),
            1.0
        );
    }

    #[test]
    fn empty_retrieval_scores_zero_but_counts() {
        // Two queries: one perfect, one that misses everything. Means
        // must average over both.
        let db = vec![code(8, 0)];
        let index = CodeIndex::build(db).unwrap();
        let queries = vec![code(8, 0), code(8, 0xFF)];
        let judge = RelevanceJudge::new(vec![1, 1], vec![1]).unwrap();
        assert_eq!(map_at_radius(&index, &queries, &judge, 1).unwrap(), 0.5);
        assert_eq!(
            precision_at_radius(&index, &queries, &judge, 1).unwrap(),
            0.5
        );
        assert_eq!(
            avg_similar_within_radius(&index, &queries, &judge, 1).unwrap(),
            0.5
        );
    }

    #[test]
    fn all_empty_pr_curve_is_single_origin_point() {
        let db = vec![code(8, 0)];
        let index = CodeIndex::build(db).unwrap();
        let queries = vec![code(8, 0xFF)];
        let judge = RelevanceJudge::new(vec![0], vec![0]).unwrap();
        let curve = pr_curve_at_radius(&index, &queries, &judge, 1).unwrap();
        assert_eq!(
            curve,
            vec![PrPoint {
                cutoff: 0,
                recall: 0.0,
                precision: 0.0
            }]
        );
    }

    #[test]
    fn retrieved_but_nothing_relevant_is_zero_ap_not_nan() {
        let db = vec![code(8, 0), code(8, 1)];
        let index = CodeIndex::build(db).unwrap();
        let queries = vec![code(8, 0)];
        let judge = RelevanceJudge::new(vec![9], vec![1, 2]).unwrap();
        let map = map_at_radius(&index, &queries, &judge, 2).unwrap();
        assert_eq!(map, 0.0);
        let curve = pr_curve_at_radius(&index, &queries, &judge, 2).unwrap();
        assert!(curve.iter().all(|p| p.recall == 0.0 && p.precision == 0.0));
        assert!(curve.iter().all(|p| p.cutoff > 0));
    }

    #[test]
    fn evaluate_bundles_the_same_numbers() {
        let (index, queries, judge) = hand_case();
        let m = evaluate(&index, &queries, &judge, 2).unwrap();
        assert!((m.map - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.avg_similar_within_radius, 2.0);
        assert_eq!(m.bits, 8);
        assert_eq!(m.radius, 2);
        assert_eq!(m.n_queries, 1);
        assert_eq!(m.n_database, 5);
        assert_eq!(m.pr_curve.len(), 4);
        assert!(m.conventions.empty_retrieval_scores_zero);
        // The summary is machine-readable as JSON.
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"map\""));
    }

    #[test]
    fn size_mismatches_are_rejected() {
        let (index, queries, judge) = hand_case();
        assert!(map_at_radius(&index, &[], &judge, 2).is_err());
        let short_judge = RelevanceJudge::new(vec![0], vec![0, 1]).unwrap();
        assert!(map_at_radius(&index, &queries, &short_judge, 2).is_err());
        let wrong_q = RelevanceJudge::new(vec![0, 1], vec![0, 1, 0, 1, 0]).unwrap();
        assert!(map_at_radius(&index, &queries, &wrong_q, 2).is_err());
    }

    #[test]
    fn order_independent_metrics_survive_database_permutation() {
        // Precision and similar-count do not depend on rank order, so
        // permuting the database (with labels) must not change them.
        let values: Vec<u64> = (0..40).map(|i| (i * 7) % 256).collect();
        let labels: Vec<u32> = (0..40).map(|i| (i % 4) as u32).collect();
        let queries: Vec<BinaryCode> = (0..5).map(|i| code(8, i * 50)).collect();
        let qlabels = vec![0, 1, 2, 3, 0];

        let build = |perm: &[usize]| {
            let codes: Vec<BinaryCode> = perm.iter().map(|&i| code(8, values[i])).collect();
            let dlabels: Vec<u32> = perm.iter().map(|&i| labels[i]).collect();
            let index = CodeIndex::build(codes).unwrap();
            let judge = RelevanceJudge::new(qlabels.clone(), dlabels).unwrap();
            (index, judge)
        };

        let identity: Vec<usize> = (0..40).collect();
        let mut reversed = identity.clone();
        reversed.reverse();
        let (i1, j1) = build(&identity);
        let (i2, j2) = build(&reversed);
        for r in 0..=2 {
            assert_eq!(
                precision_at_radius(&i1, &queries, &j1, r).unwrap(),
                precision_at_radius(&i2, &queries, &j2, r).unwrap()
            );
            assert_eq!(
                avg_similar_within_radius(&i1, &queries, &j1, r).unwrap(),
                avg_similar_within_radius(&i2, &queries, &j2, r).unwrap()
            );
        }
    }

    #[test]
    fn all_metrics_survive_permutation_when_ids_travel_with_items() {
        // Storing the rows in a different order while keeping each
        // item's id changes nothing: ranking is by (distance, id) and
        // relevance is judged by id, so every metric is identical.
        let values: Vec<u64> = (0..40).map(|i| (i * 7) % 256).collect();
        let labels: Vec<u32> = (0..40).map(|i| (i % 4) as u32).collect();
        let queries: Vec<BinaryCode> = (0..5).map(|i| code(8, i * 50)).collect();
        let qlabels = vec![0, 1, 2, 3, 0];
        let judge = RelevanceJudge::new(qlabels, labels).unwrap();

        let build = |perm: &[usize]| {
            let codes: Vec<BinaryCode> = perm.iter().map(|&i| code(8, values[i])).collect();
            let ids: Vec<u64> = perm.iter().map(|&i| i as u64).collect();
            CodeIndex::build_with_ids(codes, ids).unwrap()
        };
        let identity: Vec<usize> = (0..40).collect();
        let mut perm = identity.clone();
        perm.rotate_left(17);
        perm.swap(3, 31);
        let (i1, i2) = (build(&identity), build(&perm));

        let m1 = evaluate(&i1, &queries, &judge, 2).unwrap();
        let m2 = evaluate(&i2, &queries, &judge, 2).unwrap();
        assert_eq!(m1.map, m2.map);
        assert_eq!(m1.precision, m2.precision);
        assert_eq!(m1.avg_similar_within_radius, m2.avg_similar_within_radius);
        assert_eq!(m1.pr_curve, m2.pr_curve);
    }
}
