//! Training loop, evaluation, and stratified ten-fold cross-validation.

pub mod metrics;

pub use metrics::{wilcoxon_signed_rank, ClassMetrics, EvalReport, WilcoxonResult};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::csp::{apply_filter, fit_ovr_filter};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::forward::forward;
use crate::model::{ModelConfig, ModelParams, RawTensor};
use crate::numcore::{AdamState, ParamUpdate, Tape};
use crate::preprocess::{fit_standardization, standardize, Trial};

/// Optimization settings. Defaults:
/// Adam at 2e-4 with β₁ = 0.5, β₂ = 0.9, batches of 50, ten folds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
            batch_size: 50,
            epochs: 500,
            seed: 0,
            folds: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("cross-validation needs at least 2 folds".into()));
        }
        Ok(())
    }
}

/// One spatially filtered trial ready for the network.
#[derive(Debug, Clone)]
pub struct FilteredTrial {
    /// `C_f × T` feature matrix (`Z = W X`).
    pub features: Mat,
    pub label: usize,
}

/// Train a fresh model on filtered trials.
///
/// Mini-batches are reshuffled each epoch from the seeded generator, dropout
/// is active, and one Adam step runs per batch. Returns the trained
/// parameters and the per-epoch mean loss curve.
pub fn train(
    trials: &[FilteredTrial],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams<RawTensor>, Vec<f64>)> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if trials.is_empty() {
        return Err(Error::Train("empty training set".into()));
    }
    for t in trials {
        if t.features.rows() != model_cfg.n_feature_channels
            || t.features.cols() != model_cfg.t_samples
        {
            return Err(Error::shape(
                "train",
                (t.features.rows(), t.features.cols()),
                (model_cfg.n_feature_channels, model_cfg.t_samples),
            ));
        }
        if t.label >= model_cfg.n_classes {
            return Err(Error::Data(format!(
                "label {} out of range for {} classes",
                t.label, model_cfg.n_classes
            )));
        }
    }

    let mut params = ModelParams::init(model_cfg, train_cfg.seed);
    let mut adam = AdamState::new(
        train_cfg.learning_rate,
        train_cfg.beta1,
        train_cfg.beta2,
        train_cfg.epsilon,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut order: Vec<usize> = (0..trials.len()).collect();
    let mut loss_curve = Vec::with_capacity(train_cfg.epochs);

    for _epoch in 0..train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let mut prob_rows = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &idx in batch {
                let trial = &trials[idx];
                let trace = forward(&mut tape, &trial.features, &bound, model_cfg, true, &mut rng)?;
                prob_rows.push(trace.probabilities);
                labels.push(trial.label);
            }
            let batch_probs = tape.concat_rows(&prob_rows)?;
            let loss = tape.cross_entropy(batch_probs, &labels)?;
            tape.backward(loss)?;
            epoch_loss += tape.scalar(loss) * batch.len() as f64;

            let grads: Vec<(String, Option<Vec<f64>>)> = bound
                .tensors()
                .into_iter()
                .map(|(name, id)| (name, tape.grad(*id).map(|g| g.to_vec())))
                .collect();
            let mut updates: Vec<ParamUpdate> = Vec::with_capacity(grads.len());
            let mut tensors = params.tensors_mut();
            for ((name, tensor), (gname, grad)) in tensors.iter_mut().zip(&grads) {
                debug_assert_eq!(name, gname);
                updates.push(ParamUpdate {
                    name: gname,
                    values: &mut tensor.values,
                    grad: grad.as_deref(),
                });
            }
            adam.step(&mut updates)?;
        }
        loss_curve.push(epoch_loss / trials.len() as f64);
    }
    Ok((params, loss_curve))
}

/// Evaluate trained parameters on held-out filtered trials (argmax decisions,
/// dropout off).
pub fn evaluate(
    params: &ModelParams<RawTensor>,
    model_cfg: &ModelConfig,
    trials: &[FilteredTrial],
) -> Result<EvalReport> {
    if trials.is_empty() {
        return Err(Error::Data("evaluate: no trials".into()));
    }
    let n = model_cfg.n_classes;
    let mut confusion = vec![vec![0u64; n]; n];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for t in trials {
        if t.label >= n {
            return Err(Error::Data(format!(
                "label {} out of range for {n} classes",
                t.label
            )));
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let trace = forward(&mut tape, &t.features, &bound, model_cfg, false, &mut rng)?;
        let probs = tape.values(trace.probabilities);
        let predicted = argmax(probs);
        confusion[t.label][predicted] += 1;
    }
    Ok(EvalReport::from_confusion(confusion))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// CSP settings for the fold runner.
#[derive(Debug, Clone, Copy)]
pub struct CspConfig {
    pub n_classes: usize,
    pub s_rows: usize,
}

/// Events emitted while a cross-validation run executes, for leakage checks.
#[derive(Debug, Clone)]
pub enum CvEvent {
    FoldSplit {
        fold: usize,
        train_indices: Vec<usize>,
        test_indices: Vec<usize>,
    },
    StandardizationFitted {
        fold: usize,
        trial_indices: Vec<usize>,
    },
    CspFitted {
        fold: usize,
        trial_indices: Vec<usize>,
    },
}

pub type CvObserver<'a> = &'a (dyn Fn(&CvEvent) + Sync);

/// Cross-validation outcome: per-fold reports plus the pooled report whose
/// confusion matrix sums the folds and whose `fold_accuracies` carries the
/// per-fold overall accuracies in fold order.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub fold_reports: Vec<EvalReport>,
    pub pooled: EvalReport,
}

impl CvOutcome {
    pub fn mean_accuracy(&self) -> f64 {
        self.pooled.mean_fold_accuracy().unwrap_or(0.0)
    }

    pub fn std_accuracy(&self) -> f64 {
        self.pooled.std_fold_accuracy().unwrap_or(0.0)
    }
}

/// Seeded stratified fold assignment: within each class the (shuffled)
/// trials are dealt round-robin, so fold sizes differ by at most one per
/// class. Returns per-fold test index lists sorted ascending.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config("need at least 2 folds".into()));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &label) in labels.iter().enumerate() {
        per_class[label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_sets: Vec<Vec<usize>> = vec![Vec::new(); folds];
    for (class, indices) in per_class.iter_mut().enumerate() {
        if indices.len() < folds {
            return Err(Error::Data(format!(
                "class {class} has only {} trials for {folds} folds",
                indices.len()
            )));
        }
        indices.shuffle(&mut rng);
        for (i, &idx) in indices.iter().enumerate() {
            fold_sets[i % folds].push(idx);
        }
    }
    for set in fold_sets.iter_mut() {
        set.sort_unstable();
    }
    Ok(fold_sets)
}

/// Run stratified k-fold cross-validation end to end.
///
/// Per fold, standardization statistics and the CSP filter are fitted on the
/// training portion only, a fresh model is trained, and the held-out portion
/// is scored. Folds run on separate threads; determinism comes from per-fold
/// seeds, not scheduling.
pub fn run_cv(
    trials: &[Trial],
    model_template: &ModelConfig,
    train_cfg: &TrainConfig,
    csp_cfg: CspConfig,
    observer: Option<CvObserver<'_>>,
) -> Result<CvOutcome> {
    train_cfg.validate()?;
    let labels: Vec<usize> = trials.iter().map(|t| t.label).collect();
    let fold_sets = stratified_folds(&labels, train_cfg.folds, train_cfg.seed)?;

    let fold_inputs: Vec<(usize, Vec<usize>, Vec<usize>)> = fold_sets
        .iter()
        .enumerate()
        .map(|(fold, test_indices)| {
            let test: Vec<usize> = test_indices.clone();
            let train: Vec<usize> = (0..trials.len()).filter(|i| !test.contains(i)).collect();
            (fold, train, test)
        })
        .collect();

    if let Some(hook) = observer {
        for (fold, train_idx, test_idx) in &fold_inputs {
            hook(&CvEvent::FoldSplit {
                fold: *fold,
                train_indices: train_idx.clone(),
                test_indices: test_idx.clone(),
            });
        }
    }

    let results: Vec<Result<EvalReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = fold_inputs
            .iter()
            .map(|(fold, train_idx, test_idx)| {
                scope.spawn(move || {
                    run_fold(
                        trials,
                        *fold,
                        train_idx,
                        test_idx,
                        model_template,
                        train_cfg,
                        csp_cfg,
                        observer,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fold thread panicked"))
            .collect()
    });

    let mut fold_reports = Vec::with_capacity(results.len());
    for r in results {
        fold_reports.push(r?);
    }

    let n = csp_cfg.n_classes;
    let mut pooled_confusion = vec![vec![0u64; n]; n];
    for report in &fold_reports {
        for i in 0..n {
            for j in 0..n {
                pooled_confusion[i][j] += report.confusion[i][j];
            }
        }
    }
    let mut pooled = EvalReport::from_confusion(pooled_confusion);
    pooled.fold_accuracies = fold_reports.iter().map(|r| r.overall_accuracy).collect();
    Ok(CvOutcome {
        fold_reports,
        pooled,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    trials: &[Trial],
    fold: usize,
    train_idx: &[usize],
    test_idx: &[usize],
    model_template: &ModelConfig,
    train_cfg: &TrainConfig,
    csp_cfg: CspConfig,
    observer: Option<CvObserver<'_>>,
) -> Result<EvalReport> {
    let train_trials: Vec<Trial> = train_idx.iter().map(|&i| trials[i].clone()).collect();
    let test_trials: Vec<Trial> = test_idx.iter().map(|&i| trials[i].clone()).collect();

    let stats = fit_standardization(&train_trials, &format!("fold{fold}-train"))?;
    if let Some(hook) = observer {
        hook(&CvEvent::StandardizationFitted {
            fold,
            trial_indices: train_idx.to_vec(),
        });
    }
    let train_std: Vec<Trial> = train_trials
        .iter()
        .map(|t| standardize(t, &stats))
        .collect::<Result<_>>()?;
    let test_std: Vec<Trial> = test_trials
        .iter()
        .map(|t| standardize(t, &stats))
        .collect::<Result<_>>()?;

    let filter = fit_ovr_filter(&train_std, csp_cfg.n_classes, csp_cfg.s_rows)?;
    if let Some(hook) = observer {
        hook(&CvEvent::CspFitted {
            fold,
            trial_indices: train_idx.to_vec(),
        });
    }

    let to_filtered = |ts: &[Trial]| -> Result<Vec<FilteredTrial>> {
        ts.iter()
            .map(|t| {
                Ok(FilteredTrial {
                    features: apply_filter(&filter, t)?,
                    label: t.label,
                })
            })
            .collect()
    };
    let train_feat = to_filtered(&train_std)?;
    let test_feat = to_filtered(&test_std)?;

    let mut model_cfg = model_template.clone();
    model_cfg.n_feature_channels = filter.n_rows();
    model_cfg.t_samples = train_feat[0].features.cols();
    model_cfg.validate()?;

    let mut fold_train_cfg = train_cfg.clone();
    fold_train_cfg.seed = train_cfg
        .seed
        .wrapping_add((fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));

    let (params, _loss_curve) = train(&train_feat, &model_cfg, &fold_train_cfg)?;
    evaluate(&params, &model_cfg, &test_feat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig::tiny()
    }

    fn random_filtered(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<FilteredTrial> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let features = Mat::from_vec(
                    cfg.n_feature_channels,
                    cfg.t_samples,
                    (0..cfg.n_feature_channels * cfg.t_samples)
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect(),
                );
                FilteredTrial {
                    features,
                    label: i % cfg.n_classes,
                }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let cfg = tiny_cfg();
        let trials = random_filtered(&cfg, 6, 1);
        let train_cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            batch_size: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let (params, losses) = train(&trials, &cfg, &train_cfg).unwrap();
        let init = ModelParams::init(&cfg, train_cfg.seed);
        for ((_, a), (_, b)) in params.tensors().iter().zip(init.tensors()) {
            assert_eq!(a.values, b.values);
        }
        assert_eq!(losses.len(), 1);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let cfg = tiny_cfg();
        let err = train(&[], &cfg, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Train(_)));
    }

    #[test]
    fn training_is_seed_deterministic() {
        let cfg = tiny_cfg();
        let trials = random_filtered(&cfg, 9, 2);
        let train_cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let (p1, l1) = train(&trials, &cfg, &train_cfg).unwrap();
        let (p2, l2) = train(&trials, &cfg, &train_cfg).unwrap();
        for ((_, a), (_, b)) in p1.tensors().iter().zip(p2.tensors()) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(l1, l2);
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        // Class-dependent constant offsets make the task trivially separable.
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials: Vec<FilteredTrial> = (0..12)
            .map(|i| {
                let label = i % cfg.n_classes;
                let offset = label as f64 * 2.0 - 2.0;
                let features = Mat::from_vec(
                    cfg.n_feature_channels,
                    cfg.t_samples,
                    (0..cfg.n_feature_channels * cfg.t_samples)
                        .map(|j| offset * ((j % 7) as f64 * 0.3).sin() + rng.gen_range(-0.1..0.1))
                        .collect(),
                );
                FilteredTrial { features, label }
            })
            .collect();
        let train_cfg = TrainConfig {
            epochs: 40,
            batch_size: 6,
            learning_rate: 2e-3,
            seed: 7,
            ..TrainConfig::default()
        };
        let (_params, losses) = train(&trials, &cfg, &train_cfg).unwrap();
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "final {} vs first {}",
            losses.last().unwrap(),
            losses.first().unwrap()
        );
    }

    #[test]
    fn evaluate_counts_into_the_confusion_matrix() {
        let cfg = tiny_cfg();
        let trials = random_filtered(&cfg, 9, 4);
        let params = ModelParams::init(&cfg, 1);
        let report = evaluate(&params, &cfg, &trials).unwrap();
        assert_eq!(report.total_trials(), 9);
        assert_eq!(report.n_classes(), cfg.n_classes);
        // Row sums equal per-class true counts.
        for class in 0..cfg.n_classes {
            let row_sum: u64 = report.confusion[class].iter().sum();
            let truth = trials.iter().filter(|t| t.label == class).count() as u64;
            assert_eq!(row_sum, truth);
        }
    }

    #[test]
    fn stratified_folds_partition_all_trials() {
        let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
        let folds = stratified_folds(&labels, 2, 9).unwrap();
        assert_eq!(folds.len(), 2);
        let mut seen = vec![false; labels.len()];
        for fold in &folds {
            for &i in fold {
                assert!(!seen[i], "trial {i} appears in two folds");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "folds must cover every trial");
        // Stratification: each fold holds 10 trials, at most 3 per class.
        for fold in &folds {
            for class in 0..4 {
                let count = fold.iter().filter(|&&i| labels[i] == class).count();
                assert!((2..=3).contains(&count));
            }
        }
    }

    #[test]
    fn folds_reject_underpopulated_classes() {
        let labels = vec![0, 0, 0, 1];
        let err = stratified_folds(&labels, 3, 0).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }
}
