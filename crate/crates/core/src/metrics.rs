//! Case-level split construction and evaluation metrics.
//!
//! Splits partition *cases*, never individual events, so prefix samples
//! derived from one case can never straddle two splits. AUC uses the
//! Mann–Whitney rank statistic with midranks for ties, computed in
//! integer arithmetic so it matches explicit positive/negative pair
//! counting exactly, not just to rounding error.

use crate::data::{Sample, Target};
use crate::head::TaskKind;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{what} must not be empty")]
    EmptyInput { what: &'static str },
    #[error("{preds} predictions vs {targets} targets")]
    LengthMismatch { preds: usize, targets: usize },
    #[error("val fraction {val} and test fraction {test} must lie in [0,1) and sum below 1")]
    BadFractions { val: f64, test: f64 },
    #[error("too few cases: the {split} split came out empty")]
    SplitEmpty { split: &'static str },
    #[error("stratified splitting requires class targets, but case `{case}` has a real-valued one")]
    StratifiedNeedsClasses { case: String },
    #[error("class {class} has {count} cases, fewer than the {needed} non-empty splits")]
    ClassTooSmall {
        class: usize,
        count: usize,
        needed: usize,
    },
    #[error("AUC is undefined when only one class is present")]
    SingleClass,
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("{metric} does not apply to a {task} task")]
    NotApplicable {
        metric: &'static str,
        task: &'static str,
    },
    #[error("target kind does not match task `{task}`")]
    TargetMismatch { task: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    Uniform,
    Stratified,
    /// Latest cases (by last event timestamp) become the test set;
    /// validation is drawn uniformly from the remainder.
    TemporalLatest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub strategy: SplitStrategy,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            strategy: SplitStrategy::Uniform,
            val_fraction: 0.2,
            test_fraction: 0.05,
            seed: 0,
        }
    }
}

/// What the splitter needs to know about a case.
#[derive(Debug, Clone)]
pub struct CaseInfo {
    pub case_id: String,
    pub class: Option<usize>,
    pub last_time: u64,
}

impl CaseInfo {
    pub fn from_sample(s: &Sample) -> CaseInfo {
        CaseInfo {
            case_id: s.case_id.clone(),
            class: s.target.class(),
            last_time: s.events.last().map_or(0, |e| e.timestamp),
        }
    }
}

fn share(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// Partitions case indices into (train, val, test). Each returned list is
/// sorted ascending, so the output is canonical regardless of shuffle
/// internals.
pub fn split(cases: &[CaseInfo], spec: &SplitSpec) -> Result<[Vec<usize>; 3], MetricsError> {
    let bad = |f: f64| !(0.0..1.0).contains(&f);
    if bad(spec.val_fraction) || bad(spec.test_fraction) || spec.val_fraction + spec.test_fraction >= 1.0 {
        return Err(MetricsError::BadFractions {
            val: spec.val_fraction,
            test: spec.test_fraction,
        });
    }
    if cases.is_empty() {
        return Err(MetricsError::EmptyInput { what: "case list" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = cases.len();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut train = Vec::new();
    match spec.strategy {
        SplitStrategy::Uniform => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let (n_test, n_val) = (share(n, spec.test_fraction), share(n, spec.val_fraction));
            test.extend(&order[..n_test]);
            val.extend(&order[n_test..n_test + n_val]);
            train.extend(&order[n_test + n_val..]);
        }
        SplitStrategy::Stratified => {
            let needed = 1
                + usize::from(spec.val_fraction > 0.0)
                + usize::from(spec.test_fraction > 0.0);
            let mut by_class: Vec<(usize, Vec<usize>)> = Vec::new();
            for (i, c) in cases.iter().enumerate() {
                let class = c.class.ok_or_else(|| MetricsError::StratifiedNeedsClasses {
                    case: c.case_id.clone(),
                })?;
                match by_class.binary_search_by_key(&class, |(k, _)| *k) {
                    Ok(pos) => by_class[pos].1.push(i),
                    Err(pos) => by_class.insert(pos, (class, vec![i])),
                }
            }
            for (class, mut members) in by_class {
                if members.len() < needed {
                    return Err(MetricsError::ClassTooSmall {
                        class,
                        count: members.len(),
                        needed,
                    });
                }
                members.shuffle(&mut rng);
                let n_c = members.len();
                let (c_test, c_val) = (share(n_c, spec.test_fraction), share(n_c, spec.val_fraction));
                test.extend(&members[..c_test]);
                val.extend(&members[c_test..c_test + c_val]);
                train.extend(&members[c_test + c_val..]);
            }
        }
        SplitStrategy::TemporalLatest => {
            let mut order: Vec<usize> = (0..n).collect();
            // Stable: ties on last_time keep input order, so the earlier-
            // listed case stays on the train side of the boundary.
            order.sort_by_key(|&i| cases[i].last_time);
            let n_test = share(n, spec.test_fraction);
            test.extend(&order[n - n_test..]);
            let mut rest: Vec<usize> = order[..n - n_test].to_vec();
            rest.shuffle(&mut rng);
            let n_val = share(n, spec.val_fraction);
            if n_val > rest.len() {
                return Err(MetricsError::SplitEmpty { split: "train" });
            }
            val.extend(&rest[..n_val]);
            train.extend(&rest[n_val..]);
        }
    }
    for (part, name) in [(&train, "train"), (&val, "val"), (&test, "test")] {
        let wanted = match name {
            "val" => spec.val_fraction > 0.0,
            "test" => spec.test_fraction > 0.0,
            _ => true,
        };
        if wanted && part.is_empty() {
            return Err(MetricsError::SplitEmpty { split: name });
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok([train, val, test])
}

/// Case-disjoint sample split; prefix expansion, when wanted, should run
/// on each returned part separately.
pub fn split_samples(
    samples: &[Sample],
    spec: &SplitSpec,
) -> Result<[Vec<Sample>; 3], MetricsError> {
    let cases: Vec<CaseInfo> = samples.iter().map(CaseInfo::from_sample).collect();
    let parts = split(&cases, spec)?;
    Ok(parts.map(|idx| idx.into_iter().map(|i| samples[i].clone()).collect()))
}

/// Hard class decision for a prediction row; `None` for regression.
pub fn predicted_class(pred: &Tensor, task: TaskKind) -> Option<usize> {
    match task {
        // Threshold rule: probability exactly 0.5 counts as positive.
        TaskKind::Binary => Some(usize::from(pred.item() >= 0.5)),
        TaskKind::Multiclass(_) => {
            let row = pred.as_slice();
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                // Strict comparison keeps the lowest index on ties.
                if v > row[best] {
                    best = j;
                }
            }
            Some(best)
        }
        TaskKind::Regression => None,
    }
}

pub fn accuracy(preds: &[Tensor], targets: &[Target], task: TaskKind) -> Result<f64, MetricsError> {
    if task == TaskKind::Regression {
        return Err(MetricsError::NotApplicable {
            metric: "accuracy",
            task: task.name(),
        });
    }
    if preds.len() != targets.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput { what: "predictions" });
    }
    let mut correct = 0usize;
    for (p, t) in preds.iter().zip(targets) {
        let truth = t.class().ok_or(MetricsError::TargetMismatch { task: task.name() })?;
        if predicted_class(p, task) == Some(truth) {
            correct += 1;
        }
    }
    Ok(correct as f64 / preds.len() as f64)
}

/// Area under the ROC curve via the Mann–Whitney statistic. Tie groups
/// contribute doubled midranks as integers, so the result is exactly the
/// pair-counting value (wins + ties/2) / (n₊·n₋).
pub fn auc(scores: &[f64], positives: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != positives.len() {
        return Err(MetricsError::LengthMismatch {
            preds: scores.len(),
            targets: positives.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput { what: "scores" });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore);
    }
    let n_pos = positives.iter().filter(|&&p| p).count() as u64;
    let n_neg = scores.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the positives' rank sum stays integral through midranks:
    // a tie group occupying ranks k+1..k+t has doubled midrank 2k+t+1.
    let mut double_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let doubled_midrank = (start + end + 1) as u64;
        let pos_here = order[start..end].iter().filter(|&&i| positives[i]).count() as u64;
        double_rank_sum += doubled_midrank * pos_here;
        start = end;
    }
    let double_u = double_rank_sum - n_pos * (n_pos + 1);
    Ok(double_u as f64 / (2 * n_pos * n_neg) as f64)
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64, MetricsError> {
    if preds.len() != targets.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput { what: "predictions" });
    }
    let mse: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64;
    Ok(mse.sqrt())
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Evaluation summary; only the metrics that apply to the task are set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    pub sample_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_counts: Option<Vec<usize>>,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn compute(
        preds: &[Tensor],
        targets: &[Target],
        task: TaskKind,
        config_hash: &str,
        checkpoint_epoch: Option<usize>,
    ) -> Result<MetricsReport, MetricsError> {
        if preds.len() != targets.len() {
            return Err(MetricsError::LengthMismatch {
                preds: preds.len(),
                targets: targets.len(),
            });
        }
        if preds.is_empty() {
            return Err(MetricsError::EmptyInput { what: "predictions" });
        }
        let mut report = MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            accuracy: None,
            auc: None,
            rmse: None,
            sample_count: preds.len(),
            class_counts: None,
            config_hash: config_hash.to_string(),
            checkpoint_epoch,
            warnings: Vec::new(),
        };
        match task {
            TaskKind::Binary => {
                report.accuracy = Some(accuracy(preds, targets, task)?);
                report.class_counts = Some(count_classes(targets, 2, task)?);
                let scores: Vec<f64> = preds.iter().map(Tensor::item).collect();
                let labels: Vec<bool> = targets.iter().map(|t| t.class() == Some(1)).collect();
                match auc(&scores, &labels) {
                    Ok(v) => report.auc = Some(v),
                    Err(MetricsError::SingleClass) => report
                        .warnings
                        .push("AUC skipped: only one class present".to_string()),
                    Err(e) => return Err(e),
                }
            }
            TaskKind::Multiclass(o) => {
                report.accuracy = Some(accuracy(preds, targets, task)?);
                report.class_counts = Some(count_classes(targets, o, task)?);
            }
            TaskKind::Regression => {
                let p: Vec<f64> = preds.iter().map(Tensor::item).collect();
                let t = targets
                    .iter()
                    .map(|t| t.real().ok_or(MetricsError::TargetMismatch { task: task.name() }))
                    .collect::<Result<Vec<f64>, _>>()?;
                report.rmse = Some(rmse(&p, &t)?);
            }
        }
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn count_classes(targets: &[Target], classes: usize, task: TaskKind) -> Result<Vec<usize>, MetricsError> {
    let mut counts = vec![0usize; classes];
    for t in targets {
        let c = t.class().ok_or(MetricsError::TargetMismatch { task: task.name() })?;
        if c < classes {
            counts[c] += 1;
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn case(id: &str, class: usize, last_time: u64) -> CaseInfo {
        CaseInfo {
            case_id: id.to_string(),
            class: Some(class),
            last_time,
        }
    }

    /// Brute-force AUC: count positive-negative pairs ordered correctly,
    /// half credit for ties.
    fn auc_by_pairs(scores: &[f64], positives: &[bool]) -> f64 {
        let mut wins = 0u64;
        let mut ties = 0u64;
        let mut pairs = 0u64;
        for (i, &pi) in positives.iter().enumerate() {
            if !pi {
                continue;
            }
            for (j, &pj) in positives.iter().enumerate() {
                if pj {
                    continue;
                }
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1;
                } else if scores[i] == scores[j] {
                    ties += 1;
                }
            }
        }
        (2 * wins + ties) as f64 / (2 * pairs) as f64
    }

    #[test]
    fn auc_known_example() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        assert_eq!(auc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn auc_degenerate_and_perfect() {
        let labels = [false, true, false, true];
        assert_eq!(auc(&[0.3; 4], &labels).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.9, 0.2, 0.8], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.1, 0.8, 0.2], &labels).unwrap(), 0.0);
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(MetricsError::SingleClass)
        ));
    }

    #[test]
    fn auc_equals_pair_counting_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let n = rng.gen_range(2..=200);
            // Dyadic scores on a coarse grid force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=16) as f64 / 16.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            let fast = auc(&scores, &labels).unwrap();
            let slow = auc_by_pairs(&scores, &labels);
            assert_eq!(fast, slow, "scores={scores:?} labels={labels:?}");
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(2..=60);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=32) as f64 / 32.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            // Affine map with exact dyadic coefficients preserves ties bit-for-bit.
            let mapped: Vec<f64> = scores.iter().map(|s| s * 4.0 + 3.0).collect();
            assert_eq!(auc(&scores, &labels).unwrap(), auc(&mapped, &labels).unwrap());
        }
    }

    #[test]
    fn accuracy_rules() {
        let preds = vec![Tensor::scalar(0.9), Tensor::scalar(0.2)];
        let targets = vec![Target::Class(1), Target::Class(1)];
        assert_eq!(accuracy(&preds, &targets, TaskKind::Binary).unwrap(), 0.5);
        // Exactly 0.5 goes to the positive class.
        assert_eq!(predicted_class(&Tensor::scalar(0.5), TaskKind::Binary), Some(1));
        // Argmax tie goes to the lowest index.
        let tied = Tensor::from_vec(1, 3, vec![0.4, 0.4, 0.2]);
        assert_eq!(predicted_class(&tied, TaskKind::Multiclass(3)), Some(0));
        assert!(matches!(
            accuracy(&preds, &targets, TaskKind::Regression),
            Err(MetricsError::NotApplicable { .. })
        ));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt());
        // A constant predictor at the mean scores the population std.
        let targets = [1.0, 2.0, 3.0, 4.0, 6.0];
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let preds = vec![mean; targets.len()];
        let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / targets.len() as f64;
        assert!((rmse(&preds, &targets).unwrap() - var.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn uniform_split_is_reproducible_and_disjoint() {
        let cases: Vec<CaseInfo> = (0..40).map(|i| case(&format!("c{i}"), i % 2, i as u64)).collect();
        let spec = SplitSpec {
            strategy: SplitStrategy::Uniform,
            val_fraction: 0.2,
            test_fraction: 0.1,
            seed: 3,
        };
        let [train, val, test] = split(&cases, &spec).unwrap();
        let again = split(&cases, &spec).unwrap();
        assert_eq!([train.clone(), val.clone(), test.clone()], again);
        assert_eq!(val.len(), 8);
        assert_eq!(test.len(), 4);
        assert_eq!(train.len(), 28);
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn stratified_split_preserves_minority_ratio() {
        // 90/10 class balance, 20% val + 20% test: each gets 2 minority cases.
        let cases: Vec<CaseInfo> = (0..100)
            .map(|i| case(&format!("c{i}"), usize::from(i < 10), i as u64))
            .collect();
        let spec = SplitSpec {
            strategy: SplitStrategy::Stratified,
            val_fraction: 0.2,
            test_fraction: 0.2,
            seed: 9,
        };
        let [train, val, test] = split(&cases, &spec).unwrap();
        let minority = |part: &[usize]| part.iter().filter(|&&i| cases[i].class == Some(1)).count();
        assert_eq!(minority(&val), 2);
        assert_eq!(minority(&test), 2);
        assert_eq!(minority(&train), 6);
        assert_eq!(val.len(), 20);
        assert_eq!(test.len(), 20);
    }

    #[test]
    fn stratified_split_rejects_tiny_class() {
        let mut cases: Vec<CaseInfo> = (0..20).map(|i| case(&format!("c{i}"), 0, i as u64)).collect();
        cases.push(case("rare", 1, 99));
        let spec = SplitSpec {
            strategy: SplitStrategy::Stratified,
            val_fraction: 0.2,
            test_fraction: 0.2,
            seed: 0,
        };
        assert!(matches!(
            split(&cases, &spec),
            Err(MetricsError::ClassTooSmall { class: 1, count: 1, needed: 3 })
        ));
    }

    #[test]
    fn temporal_split_takes_latest_cases() {
        let cases: Vec<CaseInfo> = (1..=10).map(|day| case(&format!("d{day}"), 0, day)).collect();
        let spec = SplitSpec {
            strategy: SplitStrategy::TemporalLatest,
            val_fraction: 0.2,
            test_fraction: 0.3,
            seed: 1,
        };
        let [train, val, test] = split(&cases, &spec).unwrap();
        let test_days: Vec<u64> = test.iter().map(|&i| cases[i].last_time).collect();
        assert_eq!(test_days, vec![8, 9, 10]);
        assert!(train.iter().chain(&val).all(|&i| cases[i].last_time <= 7));
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let cases = vec![case("a", 0, 0), case("b", 1, 1)];
        for (v, t) in [(0.6, 0.5), (1.0, 0.0), (-0.1, 0.2)] {
            let spec = SplitSpec {
                strategy: SplitStrategy::Uniform,
                val_fraction: v,
                test_fraction: t,
                seed: 0,
            };
            assert!(matches!(split(&cases, &spec), Err(MetricsError::BadFractions { .. })));
        }
    }

    #[test]
    fn report_contains_only_applicable_metrics() {
        let preds = vec![Tensor::scalar(0.9), Tensor::scalar(0.1)];
        let targets = vec![Target::Class(1), Target::Class(0)];
        let report = MetricsReport::compute(&preds, &targets, TaskKind::Binary, "h", Some(3)).unwrap();
        assert_eq!(report.accuracy, Some(1.0));
        assert_eq!(report.auc, Some(1.0));
        assert_eq!(report.rmse, None);
        assert_eq!(report.class_counts, Some(vec![1, 1]));
        let json = report.to_json();
        assert!(json.contains("\"auc\""));
        assert!(!json.contains("\"rmse\""));

        let preds = vec![Tensor::scalar(1.5)];
        let targets = vec![Target::Real(2.0)];
        let report = MetricsReport::compute(&preds, &targets, TaskKind::Regression, "h", None).unwrap();
        assert_eq!(report.rmse, Some(0.5));
        assert_eq!(report.accuracy, None);

        // Single-class AUC degrades to a warning, not an error.
        let preds = vec![Tensor::scalar(0.9)];
        let targets = vec![Target::Class(1)];
        let report = MetricsReport::compute(&preds, &targets, TaskKind::Binary, "h", None).unwrap();
        assert_eq!(report.auc, None);
        assert_eq!(report.warnings.len(), 1);
    }
}
