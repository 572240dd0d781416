//! Per-client classification metrics and cross-client summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{FedError, Result};
use crate::numerics::Tensor;

const ROW_SUM_TOL: f64 = 1e-6;

/// How weighted AUC treats classes absent from a client's labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucSmoothing {
    /// Absent classes get zero weight; classes with no negatives are skipped.
    None,
    /// One pseudo-sample per absent class, scored uniformly `1/C`, joins the
    /// evaluation set before per-class AUCs and support weights are taken.
    #[default]
    Laplace,
}

impl AucSmoothing {
    pub fn label(self) -> &'static str {
        match self {
            AucSmoothing::None => "none",
            AucSmoothing::Laplace => "laplace-uniform-pseudo-positive",
        }
    }
}

fn check_labels(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<()> {
    if y_true.is_empty() {
        return Err(FedError::Validation("no samples to score".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(FedError::Validation(format!(
            "{} labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&y| y >= classes) {
        return Err(FedError::Validation(format!(
            "class {bad} outside 0..{classes}"
        )));
    }
    Ok(())
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let classes = y_true.iter().chain(y_pred).max().map_or(1, |m| m + 1);
    check_labels(y_true, y_pred, classes)?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Support-weighted mean of per-class F1. A class with zero precision and
/// recall scores 0; a class with no true instances has zero weight.
pub fn weighted_f1(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<f64> {
    check_labels(y_true, y_pred, classes)?;
    let mut tp = vec![0usize; classes];
    let mut pred = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        support[t] += 1;
        pred[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let n = y_true.len() as f64;
    let mut total = 0.0;
    for c in 0..classes {
        if support[c] == 0 {
            continue;
        }
        // F1 = 2TP / (2TP + FP + FN) = 2TP / (predicted + support)
        let f1 = 2.0 * tp[c] as f64 / (pred[c] + support[c]) as f64;
        total += f1 * support[c] as f64 / n;
    }
    Ok(total)
}

/// Mann–Whitney AUC of `scores` separating `positive` rows from the rest,
/// ties counted one half. `None` when either side is empty.
fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

fn check_scores(y_true: &[usize], scores: &Tensor, classes: usize) -> Result<()> {
    if y_true.is_empty() {
        return Err(FedError::Validation("no samples to score".into()));
    }
    if scores.shape() != [y_true.len(), classes] {
        return Err(FedError::Validation(format!(
            "scores of shape {:?} for {} samples and {classes} classes",
            scores.shape(),
            y_true.len()
        )));
    }
    if !scores.is_finite() {
        return Err(FedError::Validation("non-finite score".into()));
    }
    if let Some(&bad) = y_true.iter().find(|&&y| y >= classes) {
        return Err(FedError::Validation(format!(
            "class {bad} outside 0..{classes}"
        )));
    }
    Ok(())
}

/// One-vs-rest AUC per class, weighted by class support. Score rows must
/// be probability vectors (sum to 1 within 1e-6).
pub fn weighted_auc(
    y_true: &[usize],
    scores: &Tensor,
    classes: usize,
    smoothing: AucSmoothing,
) -> Result<f64> {
    check_scores(y_true, scores, classes)?;
    for r in 0..scores.rows() {
        let sum: f64 = scores.row(r).iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || scores.row(r).iter().any(|&v| v < 0.0) {
            return Err(FedError::Validation(format!(
                "score row {r} is not a probability vector (sum {sum})"
            )));
        }
    }
    weighted_auc_raw(y_true, scores, classes, smoothing)
}

/// Same as [`weighted_auc`] but accepts arbitrary real scores; only their
/// per-column ranks matter.
pub fn weighted_auc_raw(
    y_true: &[usize],
    scores: &Tensor,
    classes: usize,
    smoothing: AucSmoothing,
) -> Result<f64> {
    check_scores(y_true, scores, classes)?;
    let mut labels = y_true.to_vec();
    let mut columns: Vec<Vec<f64>> = (0..classes).map(|c| scores.column(c)).collect();
    if smoothing == AucSmoothing::Laplace {
        let mut present = vec![false; classes];
        y_true.iter().for_each(|&y| present[y] = true);
        let uniform = 1.0 / classes as f64;
        for c in (0..classes).filter(|&c| !present[c]) {
            labels.push(c);
            columns.iter_mut().for_each(|col| col.push(uniform));
        }
    }
    let mut support = vec![0usize; classes];
    labels.iter().for_each(|&y| support[y] += 1);

    let mut weighted = 0.0;
    let mut weight = 0.0;
    for c in 0..classes {
        if support[c] == 0 {
            continue;
        }
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if let Some(auc) = binary_auc(&columns[c], &positive) {
            weighted += support[c] as f64 * auc;
            weight += support[c] as f64;
        }
    }
    if weight == 0.0 {
        return Err(FedError::Numeric(
            "AUC undefined: every sample has the same class".into(),
        ));
    }
    Ok(weighted / weight)
}

/// Row-wise argmax, ties to the lowest class index.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    (0..scores.rows())
        .map(|r| {
            let row = scores.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub client_id: usize,
    pub group_id: usize,
    pub split: Split,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub weighted_auc: f64,
    pub n: usize,
}

/// Scores one client from its class-probability matrix.
pub fn evaluate_client(
    client_id: usize,
    group_id: usize,
    split: Split,
    y_true: &[usize],
    probabilities: &Tensor,
    classes: usize,
    smoothing: AucSmoothing,
) -> Result<ClientMetrics> {
    let y_pred = argmax_rows(probabilities);
    check_labels(y_true, &y_pred, classes)?;
    Ok(ClientMetrics {
        client_id,
        group_id,
        split,
        accuracy: accuracy(y_true, &y_pred)?,
        weighted_f1: weighted_f1(y_true, &y_pred, classes)?,
        weighted_auc: weighted_auc(y_true, probabilities, classes, smoothing)?,
        n: y_true.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation (divides by the client count).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<MeanStd> {
        if values.is_empty() {
            return Err(FedError::Validation("mean of no values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(MeanStd {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub clients: usize,
    pub accuracy: MeanStd,
    pub weighted_f1: MeanStd,
    pub weighted_auc: MeanStd,
}

impl MetricSummary {
    pub fn of<'a>(clients: impl IntoIterator<Item = &'a ClientMetrics>) -> Result<MetricSummary> {
        let list: Vec<&ClientMetrics> = clients.into_iter().collect();
        let col = |f: fn(&ClientMetrics) -> f64| list.iter().map(|m| f(m)).collect::<Vec<_>>();
        Ok(MetricSummary {
            clients: list.len(),
            accuracy: MeanStd::of(&col(|m| m.accuracy))?,
            weighted_f1: MeanStd::of(&col(|m| m.weighted_f1))?,
            weighted_auc: MeanStd::of(&col(|m| m.weighted_auc))?,
        })
    }
}

/// Group-level and overall aggregates: unweighted means over clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub per_group: BTreeMap<usize, MetricSummary>,
    pub per_split: BTreeMap<String, MetricSummary>,
    pub overall: MetricSummary,
}

pub fn summarize(per_client: &[ClientMetrics]) -> Result<Summary> {
    if per_client.is_empty() {
        return Err(FedError::Validation("no clients to summarize".into()));
    }
    let mut groups: BTreeMap<usize, Vec<&ClientMetrics>> = BTreeMap::new();
    let mut splits: BTreeMap<String, Vec<&ClientMetrics>> = BTreeMap::new();
    for m in per_client {
        groups.entry(m.group_id).or_default().push(m);
        splits
            .entry(m.split.as_str().to_string())
            .or_default()
            .push(m);
    }
    Ok(Summary {
        per_group: groups
            .into_iter()
            .map(|(g, v)| Ok((g, MetricSummary::of(v)?)))
            .collect::<Result<_>>()?,
        per_split: splits
            .into_iter()
            .map(|(s, v)| Ok((s, MetricSummary::of(v)?)))
            .collect::<Result<_>>()?,
        overall: MetricSummary::of(per_client)?,
    })
}

/// Everything measured after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub strategy: String,
    pub smoothing: AucSmoothing,
    pub per_client: Vec<ClientMetrics>,
    /// Absent when no client was evaluated.
    pub summary: Option<Summary>,
}

impl RoundReport {
    pub fn new(
        round: usize,
        strategy: impl Into<String>,
        smoothing: AucSmoothing,
        per_client: Vec<ClientMetrics>,
    ) -> Result<RoundReport> {
        let summary = if per_client.is_empty() {
            None
        } else {
            Some(summarize(&per_client)?)
        };
        Ok(RoundReport {
            round,
            strategy: strategy.into(),
            smoothing,
            per_client,
            summary,
        })
    }

    /// Unweighted client means restricted to one split.
    pub fn split_summary(&self, split: Split) -> Option<&MetricSummary> {
        self.summary.as_ref()?.per_split.get(split.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    /// Confusion-matrix F1 computed independently of the fast path.
    fn f1_oracle(t: &[usize], p: &[usize], classes: usize) -> f64 {
        let mut cm = vec![vec![0usize; classes]; classes];
        for (&a, &b) in t.iter().zip(p) {
            cm[a][b] += 1;
        }
        let mut out = 0.0;
        for c in 0..classes {
            let tp = cm[c][c] as f64;
            let fn_: f64 = (0..classes)
                .filter(|&k| k != c)
                .map(|k| cm[c][k] as f64)
                .sum();
            let fp: f64 = (0..classes)
                .filter(|&k| k != c)
                .map(|k| cm[k][c] as f64)
                .sum();
            let support = tp + fn_;
            if support == 0.0 {
                continue;
            }
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = tp / support;
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            out += f1 * support / t.len() as f64;
        }
        out
    }

    /// Exhaustive pair counting over an explicitly augmented sample set.
    fn auc_oracle(t: &[usize], s: &[Vec<f64>], classes: usize, smoothing: AucSmoothing) -> f64 {
        let mut t = t.to_vec();
        let mut s = s.to_vec();
        if smoothing == AucSmoothing::Laplace {
            for c in 0..classes {
                if !t.contains(&c) {
                    t.push(c);
                    s.push(vec![1.0 / classes as f64; classes]);
                }
            }
        }
        let (mut num, mut den) = (0.0, 0.0);
        for c in 0..classes {
            let pos: Vec<usize> = (0..t.len()).filter(|&i| t[i] == c).collect();
            let neg: Vec<usize> = (0..t.len()).filter(|&i| t[i] != c).collect();
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            let mut wins = 0.0;
            for &i in &pos {
                for &j in &neg {
                    wins += match s[i][c].partial_cmp(&s[j][c]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
            num += pos.len() as f64 * wins / (pos.len() * neg.len()) as f64;
            den += pos.len() as f64;
        }
        num / den
    }

    fn probs(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn f1_hand_values() {
        assert_eq!(weighted_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), 1.0);
        assert!(close(
            weighted_f1(&[0, 0, 1], &[0, 1, 1], 2).unwrap(),
            2.0 / 3.0
        ));
        assert!(close(
            weighted_f1(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap(),
            1.0 / 3.0
        ));
        assert!(weighted_f1(&[], &[], 2).is_err());
        assert!(weighted_f1(&[0, 1], &[0], 2).is_err());
        assert!(weighted_f1(&[0, 3], &[0, 1], 2).is_err());
    }

    #[test]
    fn accuracy_values() {
        assert_eq!(accuracy(&[0, 1, 1, 2], &[0, 1, 2, 2]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn auc_separating_and_constant_scores() {
        let y = [0, 1, 2, 1];
        let sep = probs(&[
            vec![0.8, 0.1, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.1, 0.1, 0.8],
            vec![0.2, 0.7, 0.1],
        ]);
        assert_eq!(
            weighted_auc(&y, &sep, 3, AucSmoothing::Laplace).unwrap(),
            1.0
        );
        let flat = probs(&vec![vec![0.2, 0.3, 0.5]; 4]);
        assert_eq!(weighted_auc(&y, &flat, 3, AucSmoothing::None).unwrap(), 0.5);
        assert_eq!(
            weighted_auc(&y, &flat, 3, AucSmoothing::Laplace).unwrap(),
            0.5
        );
    }

    #[test]
    fn auc_three_class_six_sample_fixture() {
        let y = [0, 0, 1, 1, 2, 2];
        let s = vec![
            vec![0.6, 0.3, 0.1],
            vec![0.3, 0.3, 0.4],
            vec![0.3, 0.5, 0.2],
            vec![0.4, 0.4, 0.2],
            vec![0.2, 0.2, 0.6],
            vec![0.3, 0.4, 0.3],
        ];
        let got = weighted_auc(&y, &probs(&s), 3, AucSmoothing::Laplace).unwrap();
        // class 0: positives .6,.3 vs .3,.4,.2,.3 → wins 4 + (0.5+1+0.5) = 6 of 8
        // class 1: positives .5,.4 vs .3,.3,.2,.4 → 4 + 3.5 = 7.5 of 8
        // class 2: positives .6,.3 vs .1,.4,.2,.2 → 4 + 3 = 7 of 8
        let expected = (6.0 / 8.0 + 7.5 / 8.0 + 7.0 / 8.0) / 3.0;
        assert!(close(got, expected), "{got} vs {expected}");
        assert!(close(got, auc_oracle(&y, &s, 3, AucSmoothing::Laplace)));
    }

    #[test]
    fn laplace_smoothing_defines_single_class_clients() {
        let y = [1, 1, 1];
        let s = probs(&[
            vec![0.1, 0.7, 0.2],
            vec![0.3, 0.4, 0.3],
            vec![0.5, 0.25, 0.25],
        ]);
        assert!(matches!(
            weighted_auc(&y, &s, 3, AucSmoothing::None),
            Err(FedError::Numeric(_))
        ));
        let got = weighted_auc(&y, &s, 3, AucSmoothing::Laplace).unwrap();
        let rows: Vec<Vec<f64>> = (0..3).map(|r| s.row(r).to_vec()).collect();
        assert!(close(got, auc_oracle(&y, &rows, 3, AucSmoothing::Laplace)));
        assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn malformed_rows_rejected() {
        let y = [0, 1];
        assert!(weighted_auc(
            &y,
            &probs(&[vec![0.5, 0.6], vec![0.5, 0.5]]),
            2,
            AucSmoothing::None
        )
        .is_err());
        assert!(weighted_auc(
            &y,
            &probs(&[vec![1.2, -0.2], vec![0.5, 0.5]]),
            2,
            AucSmoothing::None
        )
        .is_err());
        assert!(weighted_auc(&y, &probs(&[vec![1.0], vec![1.0]]), 2, AucSmoothing::None).is_err());
        assert!(weighted_auc(&[], &Tensor::zeros(&[0, 2]), 2, AucSmoothing::None).is_err());
    }

    #[test]
    fn two_class_matches_mann_whitney() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(4..25);
            let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            y[0] = 0;
            y[1] = 1;
            let p1: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..8) as f64) / 8.0)
                .collect();
            let rows: Vec<Vec<f64>> = p1.iter().map(|&p| vec![1.0 - p, p]).collect();
            let got = weighted_auc(&y, &probs(&rows), 2, AucSmoothing::None).unwrap();
            let (mut u, mut pairs) = (0.0, 0.0);
            for i in (0..n).filter(|&i| y[i] == 1) {
                for j in (0..n).filter(|&j| y[j] == 0) {
                    pairs += 1.0;
                    u += if p1[i] > p1[j] {
                        1.0
                    } else if p1[i] == p1[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            assert!((got - u / pairs).abs() < 1e-12);
        }
    }

    fn metric(id: usize, group: usize, split: Split, f1: f64) -> ClientMetrics {
        ClientMetrics {
            client_id: id,
            group_id: group,
            split,
            accuracy: f1,
            weighted_f1: f1,
            weighted_auc: 0.5,
            n: 10,
        }
    }

    #[test]
    fn summary_arithmetic() {
        let one = summarize(&[metric(0, 0, Split::Train, 0.7)]).unwrap();
        assert_eq!(one.overall.weighted_f1.std, 0.0);

        let two = summarize(&[
            metric(0, 0, Split::Train, 0.4),
            metric(1, 0, Split::Train, 0.8),
        ])
        .unwrap();
        assert!(close(two.overall.weighted_f1.mean, 0.6));
        assert!(close(two.overall.weighted_f1.std, 0.2));

        let clients = vec![
            metric(0, 0, Split::Train, 0.1),
            metric(1, 1, Split::Train, 0.2),
            metric(2, 1, Split::Train, 0.4),
            metric(3, 2, Split::Test, 0.3),
            metric(4, 2, Split::Test, 0.6),
            metric(5, 2, Split::Test, 0.9),
        ];
        let s = summarize(&clients).unwrap();
        assert!(close(s.per_group[&0].weighted_f1.mean, 0.1));
        assert!(close(s.per_group[&1].weighted_f1.mean, 0.3));
        assert!(close(s.per_group[&2].weighted_f1.mean, 0.6));
        assert_eq!(s.per_group[&2].clients, 3);
        assert!(close(s.per_split["test"].weighted_f1.mean, 0.6));
        assert!(close(s.overall.weighted_f1.mean, 2.5 / 6.0));
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn empty_report_has_no_summary() {
        let r = RoundReport::new(3, "fedavg", AucSmoothing::Laplace, vec![]).unwrap();
        assert!(r.summary.is_none());
    }

    #[test]
    fn evaluate_client_uses_argmax() {
        let p = probs(&[vec![0.6, 0.4], vec![0.5, 0.5], vec![0.1, 0.9]]);
        let m =
            evaluate_client(2, 1, Split::Test, &[0, 1, 1], &p, 2, AucSmoothing::Laplace).unwrap();
        assert!(close(m.accuracy, 2.0 / 3.0));
        assert_eq!(m.n, 3);
        assert_eq!(argmax_rows(&p), vec![0, 0, 1]);
    }

    fn fixture(seed: u64) -> (Vec<usize>, Vec<usize>, Vec<Vec<f64>>, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = rng.random_range(2..=5);
        let n = rng.random_range(1..=30);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let s: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                // coarse values so ties occur
                let raw: Vec<f64> = (0..classes)
                    .map(|_| rng.random_range(1..5) as f64)
                    .collect();
                let t: f64 = raw.iter().sum();
                raw.iter().map(|v| v / t).collect()
            })
            .collect();
        (y, p, s, classes)
    }

    proptest! {
        #[test]
        fn f1_and_auc_match_oracles(seed in any::<u64>()) {
            let (y, p, s, classes) = fixture(seed);
            let f1 = weighted_f1(&y, &p, classes).unwrap();
            prop_assert!((f1 - f1_oracle(&y, &p, classes)).abs() < 1e-9);
            let auc = weighted_auc(&y, &probs(&s), classes, AucSmoothing::Laplace).unwrap();
            prop_assert!((auc - auc_oracle(&y, &s, classes, AucSmoothing::Laplace)).abs() < 1e-9);
        }

        #[test]
        fn label_permutation_invariance(seed in any::<u64>(), shift in 1usize..5) {
            let (y, p, _, classes) = fixture(seed);
            let perm = |v: &[usize]| v.iter().map(|&c| (c + shift) % classes).collect::<Vec<_>>();
            let a = weighted_f1(&y, &p, classes).unwrap();
            let b = weighted_f1(&perm(&y), &perm(&p), classes).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert_eq!(accuracy(&y, &p).unwrap(), accuracy(&perm(&y), &perm(&p)).unwrap());
        }

        #[test]
        fn auc_depends_only_on_ranks(seed in any::<u64>()) {
            let (y, _, s, classes) = fixture(seed);
            let raw = probs(&s);
            let warped = raw.map(|v| (3.0 * v).exp() - 7.0);
            let a = weighted_auc_raw(&y, &raw, classes, AucSmoothing::None);
            let b = weighted_auc_raw(&y, &warped, classes, AucSmoothing::None);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                other => return Err(TestCaseError::fail(format!("{other:?}"))),
            }
        }
    }
}
