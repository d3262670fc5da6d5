//! Confusion-matrix metrics and the Wilcoxon signed-rank test.

use crate::error::{Error, Result};
use crate::numcore::math::normal_cdf;

/// One-versus-rest rates for a single class, in percent. `None` marks a
/// metric whose denominator is empty (class absent), which is reported as
/// undefined rather than zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f_score: Option<f64>,
}

/// Evaluation summary: confusion counts (rows = true class, columns =
/// predicted class), per-class OVR metrics, and fold accuracies when the
/// report aggregates a cross-validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
    /// Percent of correctly classified trials.
    pub overall_accuracy: f64,
    /// Per-fold overall accuracies (percent); empty for a single evaluation.
    pub fold_accuracies: Vec<f64>,
}

/// Standard F1 from precision and recall given in percent.
pub fn f_score_percent(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        return 0.0;
    }
    2.0 * precision * recall / (precision + recall)
}

fn ratio_percent(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(100.0 * num as f64 / den as f64)
    }
}

/// OVR metrics of one class computed from a confusion matrix.
pub fn class_metrics(confusion: &[Vec<u64>], class: usize) -> ClassMetrics {
    let n = confusion.len();
    let total: u64 = confusion.iter().flatten().sum();
    let tp = confusion[class][class];
    let fn_: u64 = (0..n).map(|j| confusion[class][j]).sum::<u64>() - tp;
    let fp: u64 = (0..n).map(|i| confusion[i][class]).sum::<u64>() - tp;
    let tn = total - tp - fn_ - fp;

    let accuracy = ratio_percent(tp + tn, total);
    let precision = ratio_percent(tp, tp + fp);
    let recall = ratio_percent(tp, tp + fn_);
    let specificity = ratio_percent(tn, tn + fp);
    let f_score = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(f_score_percent(p, r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    ClassMetrics {
        accuracy,
        precision,
        recall,
        specificity,
        f_score,
    }
}

impl EvalReport {
    /// Derive every metric from raw confusion counts.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let n = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..n).map(|i| confusion[i][i]).sum();
        let overall_accuracy = if total == 0 {
            0.0
        } else {
            100.0 * correct as f64 / total as f64
        };
        let per_class = (0..n).map(|c| class_metrics(&confusion, c)).collect();
        EvalReport {
            confusion,
            per_class,
            overall_accuracy,
            fold_accuracies: Vec::new(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total_trials(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn mean_fold_accuracy(&self) -> Option<f64> {
        if self.fold_accuracies.is_empty() {
            return None;
        }
        Some(self.fold_accuracies.iter().sum::<f64>() / self.fold_accuracies.len() as f64)
    }

    /// Sample standard deviation over fold accuracies.
    pub fn std_fold_accuracy(&self) -> Option<f64> {
        let n = self.fold_accuracies.len();
        if n < 2 {
            return None;
        }
        let mean = self.mean_fold_accuracy()?;
        let ss: f64 = self
            .fold_accuracies
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum();
        Some((ss / (n - 1) as f64).sqrt())
    }
}

/// Wilcoxon signed-rank outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    pub p_value: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_effective: usize,
    /// All differences were zero; the test carries no information.
    pub degenerate: bool,
    /// Exact enumeration (n ≤ 20) versus normal approximation.
    pub exact: bool,
}

/// Two-sided Wilcoxon signed-rank test on paired scores.
///
/// Exact sign-pattern enumeration for up to 20 effective pairs, normal
/// approximation with tie correction and continuity correction above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "wilcoxon: paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 5 {
        return Err(Error::Data(format!(
            "wilcoxon: need at least 5 pairs, got {}",
            a.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Ok(WilcoxonResult {
            p_value: 1.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n_effective: 0,
            degenerate: true,
            exact: true,
        });
    }

    let n = diffs.len();
    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let w_total = n as f64 * (n + 1) as f64 / 2.0;
    let w_minus = w_total - w_plus;

    let p_value = if n <= 20 {
        exact_two_sided_p(&ranks, w_plus)
    } else {
        normal_two_sided_p(&ranks, w_plus)
    };
    Ok(WilcoxonResult {
        p_value,
        w_plus,
        w_minus,
        n_effective: n,
        degenerate: false,
        exact: n <= 20,
    })
}

/// Ranks of `values` (1-based), averaging over ties.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // 1-based average of positions i..=j
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p: enumerate all 2^n sign assignments over the observed
/// ranks and take 2·min(P(W⁺ ≤ w), P(W⁺ ≥ w)), capped at 1.
fn exact_two_sided_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len();
    let patterns = 1u64 << n;
    let mut le = 0u64;
    let mut ge = 0u64;
    let eps = 1e-9;
    for mask in 0..patterns {
        let mut w = 0.0;
        for (i, r) in ranks.iter().enumerate() {
            if mask & (1 << i) != 0 {
                w += r;
            }
        }
        if w <= w_plus + eps {
            le += 1;
        }
        if w >= w_plus - eps {
            ge += 1;
        }
    }
    let p_le = le as f64 / patterns as f64;
    let p_ge = ge as f64 / patterns as f64;
    (2.0 * p_le.min(p_ge)).min(1.0)
}

/// Normal approximation with tie correction and continuity correction.
fn normal_two_sided_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    // Tie correction: subtract Σ(t³ - t)/48 over tie groups.
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let delta = w_plus - mean;
    let z = (delta.abs() - 0.5).max(0.0) / var.sqrt();
    (2.0 * normal_cdf(-z)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_f_scores_reproduce() {
        // Reference precision/recall pairs must yield their F-scores
        // with the standard F1 within ±0.01.
        let rows = [
            (83.33, 75.60, 79.28),
            (81.88, 84.33, 83.09),
            (87.84, 83.87, 85.81),
            (77.40, 85.61, 81.30),
            (83.09, 85.87, 84.46),
            (85.50, 82.66, 84.06),
        ];
        for (p, r, want) in rows {
            let got = f_score_percent(p, r);
            assert!((got - want).abs() <= 0.01, "F({p}, {r}) = {got}, want {want}");
        }
    }

    #[test]
    fn perfect_predictor_metrics_are_all_100() {
        let confusion = vec![vec![10, 0, 0], vec![0, 12, 0], vec![0, 0, 8]];
        let report = EvalReport::from_confusion(confusion);
        assert_eq!(report.overall_accuracy, 100.0);
        for m in &report.per_class {
            assert_eq!(m.accuracy, Some(100.0));
            assert_eq!(m.precision, Some(100.0));
            assert_eq!(m.recall, Some(100.0));
            assert_eq!(m.specificity, Some(100.0));
            assert_eq!(m.f_score, Some(100.0));
        }
    }

    #[test]
    fn absent_class_metrics_are_undefined_not_zero() {
        // Class 2 never occurs in truth or predictions.
        let confusion = vec![vec![5, 1, 0], vec![2, 6, 0], vec![0, 0, 0]];
        let report = EvalReport::from_confusion(confusion);
        let m = &report.per_class[2];
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, None);
        assert_eq!(m.f_score, None);
        // Specificity and accuracy stay defined: negatives exist.
        assert!(m.specificity.is_some());
    }

    #[test]
    fn metrics_match_counting_oracle() {
        // Independent recount of every rate from an arbitrary confusion matrix.
        let confusion = vec![vec![7, 2, 1], vec![3, 9, 0], vec![2, 2, 6]];
        let report = EvalReport::from_confusion(confusion.clone());
        let total: u64 = 32;
        assert_eq!(report.total_trials(), total);
        for class in 0..3 {
            let tp = confusion[class][class];
            let fn_: u64 = confusion[class].iter().sum::<u64>() - tp;
            let fp: u64 = (0..3).map(|i| confusion[i][class]).sum::<u64>() - tp;
            let tn = total - tp - fn_ - fp;
            let m = &report.per_class[class];
            let close = |x: Option<f64>, want: f64| (x.unwrap() - want).abs() < 1e-12;
            assert!(close(m.accuracy, 100.0 * (tp + tn) as f64 / total as f64));
            assert!(close(m.precision, 100.0 * tp as f64 / (tp + fp) as f64));
            assert!(close(m.recall, 100.0 * tp as f64 / (tp + fn_) as f64));
            assert!(close(m.specificity, 100.0 * tn as f64 / (tn + fp) as f64));
        }
        // Row sums are the per-class true counts; trace/total is the overall.
        let trace: u64 = (0..3).map(|i| confusion[i][i]).sum();
        assert!((report.overall_accuracy - 100.0 * trace as f64 / total as f64).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_identical_samples_are_degenerate() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = wilcoxon_signed_rank(&a, &a).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn wilcoxon_constant_shift_nine_subjects() {
        // b + 10 over 9 subjects, no ties: exact two-sided p = 2/512.
        let b: Vec<f64> = (0..9).map(|i| 50.0 + i as f64).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 10.0).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(r.exact);
        assert_eq!(r.w_plus, 45.0);
        assert!((r.p_value - 2.0 / 512.0).abs() < 1e-12, "p = {}", r.p_value);
    }

    #[test]
    fn wilcoxon_is_symmetric() {
        let a = [12.0, 15.5, 9.0, 20.0, 17.0, 11.0, 13.5];
        let b = [10.0, 16.0, 12.0, 18.0, 17.5, 9.5, 13.0];
        let ab = wilcoxon_signed_rank(&a, &b).unwrap();
        let ba = wilcoxon_signed_rank(&b, &a).unwrap();
        assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        assert_eq!(ab.w_plus, ba.w_minus);
    }

    #[test]
    fn wilcoxon_rejects_short_or_ragged_input() {
        assert!(wilcoxon_signed_rank(&[1.0; 4], &[0.0; 4]).is_err());
        assert!(wilcoxon_signed_rank(&[1.0; 6], &[0.0; 5]).is_err());
    }

    #[test]
    fn average_ranks_handle_ties() {
        let ranks = average_ranks(&[3.0, 1.0, 3.0, 2.0]);
        // |values| sorted: 1(rank1), 2(rank2), 3,3(ranks 3,4 → 3.5 each)
        assert_eq!(ranks, vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn normal_approximation_tracks_the_exact_tail() {
        // 21 pairs switches to the normal path; compare against exact
        // enumeration (2^21 patterns) on the same ranks.
        let b: Vec<f64> = (0..21).map(|i| 10.0 + (i as f64) * 1.37).collect();
        let a: Vec<f64> = b
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 4 == 0 { -3.0 - i as f64 } else { 2.0 + i as f64 * 0.31 })
            .collect();
        let approx = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(!approx.exact);

        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
        let w_obs: f64 = diffs
            .iter()
            .zip(&ranks)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, r)| *r)
            .sum();
        let exact = exact_two_sided_p(&ranks, w_obs);
        assert!(
            (approx.p_value - exact).abs() < 0.02,
            "normal {} vs exact {exact}",
            approx.p_value
        );
    }
}
