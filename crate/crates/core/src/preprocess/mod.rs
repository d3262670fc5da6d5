//! Raw recording to standardized trial matrices: segmentation, [4, 40] Hz
//! band-pass, and z-score standardization with training-set statistics.

pub mod filter;

pub use filter::BandpassFilter;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// A continuous multi-channel recording (channels × samples).
#[derive(Debug, Clone)]
pub struct Recording {
    pub data: Mat,
    pub fs: f64,
    pub subject_id: String,
}

/// One segmented trial: channels × time samples plus a class label.
#[derive(Debug, Clone)]
pub struct Trial {
    pub data: Mat,
    pub label: usize,
    pub subject_id: String,
    pub fs: f64,
}

impl Trial {
    pub fn channels(&self) -> usize {
        self.data.rows()
    }

    pub fn samples(&self) -> usize {
        self.data.cols()
    }

    /// Trials must stay finite through every preprocessing step.
    pub fn validate_finite(&self) -> Result<()> {
        if self.data.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "trial (subject {}, label {}) contains non-finite samples",
                self.subject_id, self.label
            )));
        }
        Ok(())
    }
}

/// Per-channel mean and variance pooled over the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Identifier of the split the statistics came from.
    pub source: String,
}

/// Cut trials out of a continuous recording.
///
/// `events` holds `(onset_sample, label)` pairs; `window` is `[t0, t1)` in
/// seconds relative to each onset. The resulting trial length is
/// `round((t1 - t0) · fs)` samples and sample values are copied untouched.
pub fn segment(raw: &Recording, events: &[(usize, usize)], window: (f64, f64)) -> Result<Vec<Trial>> {
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(Error::Segment(format!(
            "window [{t0}, {t1}] is empty or inverted"
        )));
    }
    let t_len = ((t1 - t0) * raw.fs).round() as i64;
    if t_len < 1 {
        return Err(Error::Segment(format!(
            "window [{t0}, {t1}] at {} Hz yields no samples",
            raw.fs
        )));
    }
    let total = raw.data.cols() as i64;
    let mut trials = Vec::with_capacity(events.len());
    for (idx, &(onset, label)) in events.iter().enumerate() {
        let start = onset as i64 + (t0 * raw.fs).round() as i64;
        let end = start + t_len;
        if start < 0 || end > total {
            return Err(Error::Segment(format!(
                "event {idx} (onset {onset}, label {label}): window [{start}, {end}) \
                 exceeds recording of {total} samples"
            )));
        }
        let mut data = Mat::zeros(raw.data.rows(), t_len as usize);
        for c in 0..raw.data.rows() {
            let src = &raw.data.row(c)[start as usize..end as usize];
            data.row_mut(c).copy_from_slice(src);
        }
        trials.push(Trial {
            data,
            label,
            subject_id: raw.subject_id.clone(),
            fs: raw.fs,
        });
    }
    Ok(trials)
}

/// Zero-phase band-pass over every channel of a continuous recording.
pub fn bandpass_recording(raw: &Recording, low: f64, high: f64) -> Result<Recording> {
    let filter = BandpassFilter::design(low, high, raw.fs)?;
    let mut data = raw.data.clone();
    for c in 0..data.rows() {
        let filtered = filter.filtfilt(data.row(c));
        data.row_mut(c).copy_from_slice(&filtered);
    }
    Ok(Recording {
        data,
        fs: raw.fs,
        subject_id: raw.subject_id.clone(),
    })
}

/// Zero-phase band-pass over every channel of a segmented trial.
pub fn bandpass_trial(trial: &Trial, low: f64, high: f64) -> Result<Trial> {
    let filter = BandpassFilter::design(low, high, trial.fs)?;
    let mut data = trial.data.clone();
    for c in 0..data.rows() {
        let filtered = filter.filtfilt(data.row(c));
        data.row_mut(c).copy_from_slice(&filtered);
    }
    let out = Trial {
        data,
        label: trial.label,
        subject_id: trial.subject_id.clone(),
        fs: trial.fs,
    };
    out.validate_finite()?;
    Ok(out)
}

/// Pool per-channel mean and variance over all samples of the training trials.
pub fn fit_standardization(trials: &[Trial], source: &str) -> Result<StandardizationStats> {
    if trials.len() < 2 {
        return Err(Error::Data(format!(
            "standardization needs at least 2 trials, got {}",
            trials.len()
        )));
    }
    let channels = trials[0].channels();
    for t in trials {
        if t.channels() != channels {
            return Err(Error::shape(
                "fit_standardization",
                (channels, "*"),
                (t.channels(), t.samples()),
            ));
        }
    }
    let mut mean = vec![0.0; channels];
    let mut count = 0usize;
    for t in trials {
        count += t.samples();
        for c in 0..channels {
            mean[c] += t.data.row(c).iter().sum::<f64>();
        }
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut variance = vec![0.0; channels];
    for t in trials {
        for c in 0..channels {
            variance[c] += t
                .data
                .row(c)
                .iter()
                .map(|v| (v - mean[c]) * (v - mean[c]))
                .sum::<f64>();
        }
    }
    for (c, v) in variance.iter_mut().enumerate() {
        *v /= count as f64;
        if *v <= 0.0 || !v.is_finite() {
            return Err(Error::Data(format!(
                "degenerate channel {c}: zero variance in training data"
            )));
        }
    }
    Ok(StandardizationStats {
        mean,
        variance,
        source: source.to_string(),
    })
}

/// z-score one trial with training statistics: `X = (x - μ) / σ` per channel.
pub fn standardize(trial: &Trial, stats: &StandardizationStats) -> Result<Trial> {
    if stats.mean.len() != trial.channels() {
        return Err(Error::shape(
            "standardize",
            (stats.mean.len(), "*"),
            (trial.channels(), trial.samples()),
        ));
    }
    let mut data = trial.data.clone();
    for c in 0..data.rows() {
        let mu = stats.mean[c];
        let sigma = stats.variance[c].sqrt();
        for v in data.row_mut(c) {
            *v = (*v - mu) / sigma;
        }
    }
    let out = Trial {
        data,
        label: trial.label,
        subject_id: trial.subject_id.clone(),
        fs: trial.fs,
    };
    out.validate_finite()?;
    Ok(out)
}

/// Inverse of [`standardize`]: `x = X·σ + μ` per channel.
pub fn destandardize(trial: &Trial, stats: &StandardizationStats) -> Result<Trial> {
    if stats.mean.len() != trial.channels() {
        return Err(Error::shape(
            "destandardize",
            (stats.mean.len(), "*"),
            (trial.channels(), trial.samples()),
        ));
    }
    let mut data = trial.data.clone();
    for c in 0..data.rows() {
        let mu = stats.mean[c];
        let sigma = stats.variance[c].sqrt();
        for v in data.row_mut(c) {
            *v = *v * sigma + mu;
        }
    }
    Ok(Trial {
        data,
        label: trial.label,
        subject_id: trial.subject_id.clone(),
        fs: trial.fs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp_recording(channels: usize, samples: usize, fs: f64) -> Recording {
        let mut data = Mat::zeros(channels, samples);
        for c in 0..channels {
            for t in 0..samples {
                data[(c, t)] = (c * samples + t) as f64;
            }
        }
        Recording {
            data,
            fs,
            subject_id: "test".into(),
        }
    }

    #[test]
    fn empty_window_is_rejected() {
        let rec = ramp_recording(2, 100, 10.0);
        assert!(segment(&rec, &[(0, 0)], (0.0, 0.0)).is_err());
        assert!(segment(&rec, &[(0, 0)], (1.0, 0.5)).is_err());
    }

    #[test]
    fn four_second_window_yields_1000_samples() {
        let rec = ramp_recording(3, 2000, 250.0);
        let trials = segment(&rec, &[(100, 1)], (2.0, 6.0)).unwrap();
        assert_eq!(trials[0].samples(), 1000);
        assert_eq!(trials[0].label, 1);
    }

    #[test]
    fn segmentation_copies_exact_samples() {
        let rec = ramp_recording(1, 200, 10.0);
        let trials = segment(&rec, &[(100, 0)], (0.0, 1.0)).unwrap();
        let expect: Vec<f64> = (100..110).map(|v| v as f64).collect();
        assert_eq!(trials[0].data.row(0), expect.as_slice());
    }

    #[test]
    fn out_of_bounds_event_is_named() {
        let rec = ramp_recording(1, 100, 10.0);
        let err = segment(&rec, &[(0, 0), (95, 2)], (0.0, 1.0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("event 1") && msg.contains("95"), "{msg}");
    }

    #[test]
    fn flat_channel_is_degenerate() {
        let mut a = Mat::zeros(2, 50);
        for tpos in 0..50 {
            a[(0, tpos)] = tpos as f64;
        }
        let trial = |data: Mat| Trial {
            data,
            label: 0,
            subject_id: "x".into(),
            fs: 10.0,
        };
        let err = fit_standardization(&[trial(a.clone()), trial(a)], "train").unwrap_err();
        assert!(err.to_string().contains("channel 1"), "{err}");
    }

    #[test]
    fn two_point_stats_by_hand() {
        // Channel values {0, 2} across two one-sample trials: mean 1, variance 1.
        let t0 = Trial {
            data: Mat::from_vec(1, 1, vec![0.0]),
            label: 0,
            subject_id: "x".into(),
            fs: 1.0,
        };
        let t1 = Trial {
            data: Mat::from_vec(1, 1, vec![2.0]),
            label: 1,
            subject_id: "x".into(),
            fs: 1.0,
        };
        let stats = fit_standardization(&[t0, t1], "train").unwrap();
        assert_eq!(stats.mean, vec![1.0]);
        assert_eq!(stats.variance, vec![1.0]);
    }

    #[test]
    fn standardize_reference_points() {
        let stats = StandardizationStats {
            mean: vec![0.0],
            variance: vec![4.0],
            source: "train".into(),
        };
        let t = Trial {
            data: Mat::from_vec(1, 2, vec![2.0, 0.0]),
            label: 0,
            subject_id: "x".into(),
            fs: 1.0,
        };
        let s = standardize(&t, &stats).unwrap();
        assert_eq!(s.data.row(0), &[1.0, 0.0]);

        // x = μ everywhere → zero output.
        let stats = StandardizationStats {
            mean: vec![7.5],
            variance: vec![2.0],
            source: "train".into(),
        };
        let t = Trial {
            data: Mat::from_vec(1, 4, vec![7.5; 4]),
            label: 0,
            subject_id: "x".into(),
            fs: 1.0,
        };
        let s = standardize(&t, &stats).unwrap();
        assert!(s.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_count_mismatch_is_rejected() {
        let stats = StandardizationStats {
            mean: vec![0.0, 0.0],
            variance: vec![1.0, 1.0],
            source: "train".into(),
        };
        let t = Trial {
            data: Mat::from_vec(1, 2, vec![1.0, 2.0]),
            label: 0,
            subject_id: "x".into(),
            fs: 1.0,
        };
        assert!(standardize(&t, &stats).is_err());
    }

    #[test]
    fn self_standardization_yields_unit_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let trials: Vec<Trial> = (0..6)
            .map(|i| {
                let data = Mat::from_vec(
                    3,
                    400,
                    (0..1200)
                        .map(|_| rng.gen_range(-5.0..5.0) + (i as f64))
                        .collect(),
                );
                Trial {
                    data,
                    label: i % 2,
                    subject_id: "x".into(),
                    fs: 100.0,
                }
            })
            .collect();
        let stats = fit_standardization(&trials, "train").unwrap();
        let standardized: Vec<Trial> = trials
            .iter()
            .map(|t| standardize(t, &stats).unwrap())
            .collect();
        // Pooled per-channel statistics of the standardized corpus.
        for c in 0..3 {
            let mut sum = 0.0;
            let mut count = 0usize;
            for t in &standardized {
                sum += t.data.row(c).iter().sum::<f64>();
                count += t.samples();
            }
            let mean = sum / count as f64;
            let mut var = 0.0;
            for t in &standardized {
                var += t
                    .data
                    .row(c)
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            var /= count as f64;
            assert!(mean.abs() < 1e-10, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-10, "channel {c} var {var}");
        }
    }

    #[test]
    fn standardize_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = Mat::from_vec(2, 100, (0..200).map(|_| rng.gen_range(-3.0..9.0)).collect());
        let trial = Trial {
            data,
            label: 0,
            subject_id: "x".into(),
            fs: 100.0,
        };
        let stats = StandardizationStats {
            mean: vec![2.0, -1.0],
            variance: vec![4.0, 0.25],
            source: "train".into(),
        };
        let there = standardize(&trial, &stats).unwrap();
        let back = destandardize(&there, &stats).unwrap();
        for (a, b) in back.data.data().iter().zip(trial.data.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bandpass_trial_matches_recording_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rec = Recording {
            data: Mat::from_vec(2, 500, (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            fs: 250.0,
            subject_id: "x".into(),
        };
        let filtered = bandpass_recording(&rec, 4.0, 40.0).unwrap();
        let trial = Trial {
            data: rec.data.clone(),
            label: 0,
            subject_id: "x".into(),
            fs: 250.0,
        };
        let tf = bandpass_trial(&trial, 4.0, 40.0).unwrap();
        for (a, b) in tf.data.data().iter().zip(filtered.data.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
