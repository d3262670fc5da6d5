//! One-versus-rest common-spatial-pattern filtering.
//!
//! For each "one" class: average the trial covariances of the class (R1) and
//! of the rest (R2), whiten the composite R = R1 + R2, diagonalize the
//! whitened R2, and keep the rows of `BᵀP` whose complementary eigenvalues
//! `Λ' = 1 - Λ` are largest. Stacking the per-class sub-filters gives the
//! projection `W`, applied as `Z = W X` so the temporal dimension survives.

use crate::error::{Error, Result};
use crate::linalg::{sort_eigenpairs, sym_eig, EigOrder, Mat};
use crate::preprocess::Trial;

/// Relative ridge added to the composite covariance before whitening.
const REGULARIZATION: f64 = 1e-8;

/// The sub-filter produced by one one-versus-rest pass.
#[derive(Debug, Clone)]
pub struct OvrSubfilter {
    /// `S × C_eeg` projection rows (rows of `BᵀP`).
    pub projection: Mat,
    /// Class treated as "one".
    pub one_class: usize,
    /// The retained `Λ'` values, sorted descending, each in [0, 1].
    pub eigvals_one: Vec<f64>,
}

/// Stacked OVR-CSP spatial filter.
#[derive(Debug, Clone)]
pub struct SpatialFilter {
    /// `(N_sub · S) × C_eeg` stack of sub-filter projections.
    pub w: Mat,
    pub subfilters: Vec<OvrSubfilter>,
    /// Classes in stacking order; binary tasks keep a single sub-filter.
    pub class_order: Vec<usize>,
}

impl SpatialFilter {
    pub fn n_rows(&self) -> usize {
        self.w.rows()
    }

    pub fn n_channels(&self) -> usize {
        self.w.cols()
    }
}

/// Sample covariance of the channel rows of one trial.
///
/// Channels are centered individually; the normalization is `1/(T-1)`.
/// `T ≤ C_eeg` is accepted but leaves the estimate rank-deficient.
pub fn trial_covariance(trial: &Trial) -> Mat {
    let c = trial.channels();
    let t = trial.samples();
    let mut centered = trial.data.clone();
    for ch in 0..c {
        let row = centered.row_mut(ch);
        let mu = row.iter().sum::<f64>() / t as f64;
        for v in row.iter_mut() {
            *v -= mu;
        }
    }
    let denom = if t > 1 { (t - 1) as f64 } else { 1.0 };
    let mut cov = Mat::zeros(c, c);
    for i in 0..c {
        for j in 0..=i {
            let dot: f64 = centered
                .row(i)
                .iter()
                .zip(centered.row(j))
                .map(|(a, b)| a * b)
                .sum();
            cov[(i, j)] = dot / denom;
            cov[(j, i)] = dot / denom;
        }
    }
    cov
}

/// Arithmetic mean of trial covariances over the trials selected by `class_set`.
pub fn class_mean_cov<F>(trials: &[Trial], class_set: F) -> Result<Mat>
where
    F: Fn(usize) -> bool,
{
    let selected: Vec<&Trial> = trials.iter().filter(|t| class_set(t.label)).collect();
    if selected.is_empty() {
        return Err(Error::Data("class_mean_cov: no trials match the class set".into()));
    }
    let c = selected[0].channels();
    let mut acc = Mat::zeros(c, c);
    for t in &selected {
        acc = acc.add(&trial_covariance(t))?;
    }
    Ok(acc.scale(1.0 / selected.len() as f64))
}

/// Build one sub-filter from the two class-mean covariances.
///
/// Steps: `R = R1 + R2`; eigendecompose `R = U Λ Uᵀ` (Λ descending);
/// whiten with `P = Λ^{-1/2} Uᵀ`; diagonalize `S2 = P R2 Pᵀ = B Λs Bᵀ`
/// (Λs ascending); return the first `S` rows of `BᵀP` together with
/// `Λ' = 1 - Λs`, which measures class-one variance along each row.
pub fn build_subfilter(r1: &Mat, r2: &Mat, s: usize, one_class: usize) -> Result<OvrSubfilter> {
    let c = r1.rows();
    if r1.cols() != c || r2.rows() != c || r2.cols() != c {
        return Err(Error::shape(
            "build_subfilter",
            (r1.rows(), r1.cols()),
            (r2.rows(), r2.cols()),
        ));
    }
    if s < 1 || s > c {
        return Err(Error::Config(format!(
            "sub-filter rows S={s} must lie in [1, {c}]"
        )));
    }
    let scale = r1.max_abs().max(r2.max_abs()).max(1e-300);
    if r1.asymmetry() > 1e-9 * scale || r2.asymmetry() > 1e-9 * scale {
        return Err(Error::Numeric(
            "build_subfilter: covariance inputs are not symmetric".into(),
        ));
    }

    // Composite covariance. Averaged covariances can be numerically
    // singular; if the spectrum dips below the relative ridge level, add the
    // ridge and re-decompose. Well-conditioned inputs stay untouched so the
    // joint diagonalization is exact for them.
    let r = r1.add(r2)?;
    let ridge = REGULARIZATION * r.trace() / c as f64;
    let (vals, vecs) = sym_eig(&r)?;
    let (vals, vecs) = sort_eigenpairs(vals, vecs, EigOrder::Descending);
    let (vals, vecs) = if vals.last().copied().unwrap_or(0.0) <= ridge {
        let mut regularized = r.clone();
        for i in 0..c {
            regularized[(i, i)] += ridge;
        }
        let (v, u) = sym_eig(&regularized)?;
        sort_eigenpairs(v, u, EigOrder::Descending)
    } else {
        (vals, vecs)
    };
    if vals.iter().any(|&v| v <= 0.0) {
        return Err(Error::Numeric(format!(
            "composite covariance is not positive definite (min eigenvalue {:.3e})",
            vals.last().copied().unwrap_or(f64::NAN)
        )));
    }

    // P = Λ^{-1/2} Uᵀ.
    let mut p = vecs.transpose();
    for (i, &lambda) in vals.iter().enumerate() {
        let inv_sqrt = 1.0 / lambda.sqrt();
        for v in p.row_mut(i) {
            *v *= inv_sqrt;
        }
    }

    // S2 = P R2 Pᵀ, symmetrized against roundoff.
    let s2 = p.matmul(r2)?.matmul(&p.transpose())?;
    let mut s2_sym = s2.clone();
    for i in 0..c {
        for j in 0..c {
            s2_sym[(i, j)] = 0.5 * (s2[(i, j)] + s2[(j, i)]);
        }
    }
    let (ls, b) = sym_eig(&s2_sym)?;
    let (ls, b) = sort_eigenpairs(ls, b, EigOrder::Ascending);

    // Whitened class covariances sum to I, so eigenvalues live in [0, 1]
    // up to roundoff.
    for &v in &ls {
        if !(-1e-8..=1.0 + 1e-8).contains(&v) {
            return Err(Error::Numeric(format!(
                "whitened eigenvalue {v} escapes [0, 1]"
            )));
        }
    }

    let full = b.transpose().matmul(&p)?;
    let mut projection = Mat::zeros(s, c);
    for row in 0..s {
        projection.row_mut(row).copy_from_slice(full.row(row));
    }
    let eigvals_one: Vec<f64> = ls[..s]
        .iter()
        .map(|&v| (1.0 - v).clamp(0.0, 1.0))
        .collect();

    Ok(OvrSubfilter {
        projection,
        one_class,
        eigvals_one,
    })
}

/// Fit the stacked OVR filter from training trials.
///
/// Every class in `[0, n_classes)` must be present. For `n_classes == 2`
/// only the class-0 sub-filter is built; the second pass is redundant by
/// symmetry.
pub fn fit_ovr_filter(trials: &[Trial], n_classes: usize, s: usize) -> Result<SpatialFilter> {
    if n_classes < 2 {
        return Err(Error::Config(format!(
            "OVR filtering needs at least 2 classes, got {n_classes}"
        )));
    }
    for class in 0..n_classes {
        if !trials.iter().any(|t| t.label == class) {
            return Err(Error::Data(format!(
                "class {class} has no training trials"
            )));
        }
    }
    let class_order: Vec<usize> = if n_classes == 2 {
        vec![0]
    } else {
        (0..n_classes).collect()
    };

    let mut subfilters = Vec::with_capacity(class_order.len());
    for &one in &class_order {
        let r1 = class_mean_cov(trials, |l| l == one)?;
        let r2 = class_mean_cov(trials, |l| l != one)?;
        subfilters.push(build_subfilter(&r1, &r2, s, one)?);
    }
    let projections: Vec<&Mat> = subfilters.iter().map(|f| &f.projection).collect();
    let w = Mat::vstack(&projections)?;
    Ok(SpatialFilter {
        w,
        subfilters,
        class_order,
    })
}

/// `Z = W X`: project one trial into feature-channel space.
pub fn apply_filter(filter: &SpatialFilter, trial: &Trial) -> Result<Mat> {
    if filter.n_channels() != trial.channels() {
        return Err(Error::shape(
            "apply_filter",
            (filter.n_rows(), filter.n_channels()),
            (trial.channels(), trial.samples()),
        ));
    }
    filter.w.matmul(&trial.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trial_from(data: Mat, label: usize) -> Trial {
        Trial {
            data,
            label,
            subject_id: "t".into(),
            fs: 250.0,
        }
    }

    fn random_spd(c: usize, rng: &mut ChaCha8Rng) -> Mat {
        // A Aᵀ + small ridge is symmetric positive definite.
        let mut a = Mat::zeros(c, c);
        for i in 0..c {
            for j in 0..c {
                a[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        let mut spd = a.matmul(&a.transpose()).unwrap();
        for i in 0..c {
            spd[(i, i)] += 0.1;
        }
        spd
    }

    #[test]
    fn identical_channels_give_rank_one_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let row: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut data = Mat::zeros(2, 100);
        data.row_mut(0).copy_from_slice(&row);
        data.row_mut(1).copy_from_slice(&row);
        let cov = trial_covariance(&trial_from(data, 0));
        assert!((cov[(0, 0)] - cov[(0, 1)]).abs() < 1e-12);
        assert!((cov[(1, 1)] - cov[(1, 0)]).abs() < 1e-12);
    }

    #[test]
    fn covariance_of_unit_noise_approaches_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = 4;
        let t = 10_000;
        // Uniform on [-√3, √3] has unit variance.
        let lim = 3.0f64.sqrt();
        let data = Mat::from_vec(c, t, (0..c * t).map(|_| rng.gen_range(-lim..lim)).collect());
        let cov = trial_covariance(&trial_from(data, 0));
        for i in 0..c {
            for j in 0..c {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - want).abs() < 0.05, "({i},{j}) = {}", cov[(i, j)]);
            }
        }
    }

    #[test]
    fn constant_channel_has_zero_covariance_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = Mat::zeros(2, 50);
        for v in data.row_mut(0) {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in data.row_mut(1) {
            *v = 4.2;
        }
        let cov = trial_covariance(&trial_from(data, 0));
        assert!(cov[(1, 1)].abs() < 1e-20);
        assert!(cov[(0, 1)].abs() < 1e-20);
        assert!(cov[(1, 0)].abs() < 1e-20);
    }

    #[test]
    fn class_mean_cov_averages() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mk = |label: usize, rng: &mut ChaCha8Rng| {
            trial_from(
                Mat::from_vec(2, 30, (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect()),
                label,
            )
        };
        let trials = vec![mk(0, &mut rng), mk(0, &mut rng)];
        let a = trial_covariance(&trials[0]);
        let b = trial_covariance(&trials[1]);
        let mean = class_mean_cov(&trials, |l| l == 0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((mean[(i, j)] - 0.5 * (a[(i, j)] + b[(i, j)])).abs() < 1e-14);
            }
        }

        // One trial: its own covariance.
        let single = class_mean_cov(&trials[..1], |l| l == 0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((single[(i, j)] - a[(i, j)]).abs() < 1e-15);
            }
        }

        assert!(class_mean_cov(&trials, |l| l == 9).is_err());
    }

    #[test]
    fn rest_set_averages_the_complement() {
        // 4-class set with class 0 as "one": R2 must average classes {1,2,3}.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut trials = Vec::new();
        for label in 0..4 {
            for _ in 0..3 {
                trials.push(trial_from(
                    Mat::from_vec(3, 40, (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect()),
                    label,
                ));
            }
        }
        let rest = class_mean_cov(&trials, |l| l != 0).unwrap();
        // Direct recomputation over the complement.
        let mut acc = Mat::zeros(3, 3);
        let mut n = 0;
        for t in &trials {
            if t.label != 0 {
                acc = acc.add(&trial_covariance(t)).unwrap();
                n += 1;
            }
        }
        assert_eq!(n, 9);
        let direct = acc.scale(1.0 / 9.0);
        for i in 0..3 {
            for j in 0..3 {
                assert!((rest[(i, j)] - direct[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_classes_are_degenerate_but_deterministic() {
        let half_eye = Mat::identity(2).scale(0.5);
        let f1 = build_subfilter(&half_eye, &half_eye, 2, 0).unwrap();
        let f2 = build_subfilter(&half_eye, &half_eye, 2, 0).unwrap();
        for &v in &f1.eigvals_one {
            assert!((v - 0.5).abs() < 1e-9, "Λ' = {v}");
        }
        assert_eq!(f1.projection, f2.projection);
    }

    #[test]
    fn two_by_two_closed_form_selects_high_variance_direction() {
        // R1 = diag(4,1), R2 = diag(1,4), S = 1: the retained row maximizes
        // class-one variance, with ratio wᵀR1w / wᵀR2w = 4.
        let r1 = Mat::from_rows(&[vec![4.0, 0.0], vec![0.0, 1.0]]);
        let r2 = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]);
        let f = build_subfilter(&r1, &r2, 1, 0).unwrap();
        let w = f.projection.row(0);
        let quad = |m: &Mat| m.data()[0] * w[0] * w[0]
            + (m.data()[1] + m.data()[2]) * w[0] * w[1]
            + m.data()[3] * w[1] * w[1];
        let ratio = quad(&r1) / quad(&r2);
        assert!((ratio - 4.0).abs() < 1e-6, "variance ratio {ratio}");
        // Λ' = 4/5 for that direction.
        assert!((f.eigvals_one[0] - 0.8).abs() < 1e-8);
    }

    #[test]
    fn joint_diagonalization_identity() {
        // Full filter BᵀP diagonalizes both classes and the diagonals sum to 1.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for &c in &[3usize, 8] {
            let r1 = random_spd(c, &mut rng);
            let r2 = random_spd(c, &mut rng);
            let f = build_subfilter(&r1, &r2, c, 0).unwrap();
            let w = &f.projection;
            let d1 = w.matmul(&r1).unwrap().matmul(&w.transpose()).unwrap();
            let d2 = w.matmul(&r2).unwrap().matmul(&w.transpose()).unwrap();
            for i in 0..c {
                for j in 0..c {
                    if i != j {
                        assert!(d1[(i, j)].abs() < 1e-8, "d1({i},{j}) = {}", d1[(i, j)]);
                        assert!(d2[(i, j)].abs() < 1e-8, "d2({i},{j}) = {}", d2[(i, j)]);
                    }
                }
                let sum = d1[(i, i)] + d2[(i, i)];
                assert!((sum - 1.0).abs() < 1e-7, "diag sum {sum}");
            }
        }
    }

    #[test]
    fn whitening_property() {
        // P (R1+R2) Pᵀ = I. Recovered via the full projection with S = C and
        // the Λs/Λ' complementarity.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = 5;
        let r1 = random_spd(c, &mut rng);
        let r2 = random_spd(c, &mut rng);
        let f = build_subfilter(&r1, &r2, c, 0).unwrap();
        let r = r1.add(&r2).unwrap();
        let w = &f.projection; // BᵀP for S = C
        let white = w.matmul(&r).unwrap().matmul(&w.transpose()).unwrap();
        for i in 0..c {
            for j in 0..c {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((white[(i, j)] - want).abs() < 1e-7, "({i},{j})");
            }
        }
        // Λ + Λ' = 1 within 1e-10 by construction.
        for &v in &f.eigvals_one {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn non_symmetric_covariance_is_rejected() {
        let bad = Mat::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]);
        let good = Mat::identity(2);
        assert!(build_subfilter(&bad, &good, 1, 0).is_err());
    }

    #[test]
    fn ovr_filter_shapes_match_dataset_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // 4 classes, 22 channels, S = 4: W is 16×22.
        let mut trials = Vec::new();
        for label in 0..4 {
            for _ in 0..4 {
                let data = Mat::from_vec(
                    22,
                    60,
                    (0..22 * 60)
                        .map(|_| rng.gen_range(-1.0..1.0) * (1.0 + label as f64))
                        .collect(),
                );
                trials.push(trial_from(data, label));
            }
        }
        let filter = fit_ovr_filter(&trials, 4, 4).unwrap();
        assert_eq!(filter.w.rows(), 16);
        assert_eq!(filter.w.cols(), 22);
        assert_eq!(filter.class_order, vec![0, 1, 2, 3]);

        // Binary task, 3 channels, S = 3: a single sub-filter, W is 3×3.
        let mut trials = Vec::new();
        for label in 0..2 {
            for _ in 0..4 {
                let data = Mat::from_vec(
                    3,
                    50,
                    (0..150)
                        .map(|_| rng.gen_range(-1.0..1.0) * (1.0 + label as f64))
                        .collect(),
                );
                trials.push(trial_from(data, label));
            }
        }
        let filter = fit_ovr_filter(&trials, 2, 3).unwrap();
        assert_eq!(filter.w.rows(), 3);
        assert_eq!(filter.w.cols(), 3);
        assert_eq!(filter.subfilters.len(), 1);
    }

    #[test]
    fn missing_class_is_named() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trials: Vec<Trial> = (0..4)
            .map(|_| {
                trial_from(
                    Mat::from_vec(2, 30, (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect()),
                    0,
                )
            })
            .collect();
        let err = fit_ovr_filter(&trials, 3, 1).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }

    #[test]
    fn trial_order_does_not_change_the_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut trials = Vec::new();
        for label in 0..3 {
            for _ in 0..5 {
                let scale = 0.5 + label as f64;
                trials.push(trial_from(
                    Mat::from_vec(
                        4,
                        80,
                        (0..320).map(|_| rng.gen_range(-1.0..1.0) * scale).collect(),
                    ),
                    label,
                ));
            }
        }
        let f1 = fit_ovr_filter(&trials, 3, 2).unwrap();
        trials.reverse();
        let f2 = fit_ovr_filter(&trials, 3, 2).unwrap();
        for (a, b) in f1.w.data().iter().zip(f2.w.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn apply_filter_basics() {
        let eye = SpatialFilter {
            w: Mat::identity(3),
            subfilters: vec![],
            class_order: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = Mat::from_vec(3, 20, (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let trial = trial_from(data.clone(), 0);
        let z = apply_filter(&eye, &trial).unwrap();
        assert_eq!(z, data);

        let zero_trial = trial_from(Mat::zeros(3, 20), 0);
        let z = apply_filter(&eye, &zero_trial).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));

        // Dataset-2a shape arithmetic: 16×22 times 22×1000 → 16×1000.
        let w = Mat::zeros(16, 22);
        let filter = SpatialFilter {
            w,
            subfilters: vec![],
            class_order: vec![],
        };
        let trial = trial_from(Mat::zeros(22, 1000), 0);
        let z = apply_filter(&filter, &trial).unwrap();
        assert_eq!((z.rows(), z.cols()), (16, 1000));

        // Channel mismatch is an error.
        let bad = trial_from(Mat::zeros(5, 20), 0);
        assert!(apply_filter(&filter, &bad).is_err());
    }

    #[test]
    fn csp_separates_synthetic_two_class_data() {
        // Distinct diagonal covariances; the log-variance of the first CSP
        // component must separate the classes perfectly with a threshold
        // oracle (1-D LDA).
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut trials = Vec::new();
        for label in 0..2usize {
            for _ in 0..20 {
                let mut data = Mat::zeros(2, 200);
                let (s0, s1) = if label == 0 { (2.0, 0.5) } else { (0.5, 2.0) };
                for t in 0..200 {
                    data[(0, t)] = rng.gen_range(-1.0..1.0) * s0;
                    data[(1, t)] = rng.gen_range(-1.0..1.0) * s1;
                }
                trials.push(trial_from(data, label));
            }
        }
        let filter = fit_ovr_filter(&trials, 2, 1).unwrap();
        let feats: Vec<(f64, usize)> = trials
            .iter()
            .map(|t| {
                let z = apply_filter(&filter, t).unwrap();
                let var = z.row(0).iter().map(|v| v * v).sum::<f64>() / z.cols() as f64;
                (var.ln(), t.label)
            })
            .collect();
        // Threshold between the class means.
        let mean = |label: usize| {
            let vals: Vec<f64> = feats
                .iter()
                .filter(|(_, l)| *l == label)
                .map(|(f, _)| *f)
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let (m0, m1) = (mean(0), mean(1));
        let threshold = 0.5 * (m0 + m1);
        let correct = feats
            .iter()
            .filter(|(f, l)| ((*f > threshold) == (m0 > m1)) == (*l == 0))
            .count();
        assert_eq!(correct, trials.len(), "training accuracy must be 100%");
    }
}
