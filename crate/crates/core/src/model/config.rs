//! Model hyperparameters and ablation switches.

use crate::error::{Error, Result};

/// Stage removal switches mirroring the ablation experiments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation {
    pub drop_spatial: bool,
    pub drop_temporal: bool,
    pub drop_posenc: bool,
    pub drop_ff: bool,
}

impl Ablation {
    pub fn none() -> Self {
        Ablation::default()
    }
}

/// Full architectural description; every parameter shape derives from this.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Feature channels after spatial filtering (N·S).
    pub n_feature_channels: usize,
    /// Time samples per trial.
    pub t_samples: usize,
    /// Slice width d; one slice is one attention token.
    pub slice_d: usize,
    /// Attention heads h.
    pub n_heads: usize,
    /// Position-encoding kernel width (odd).
    pub k_c: usize,
    /// Feed-forward expansion factor.
    pub n_f: usize,
    /// Temporal block repeats.
    pub n_a: usize,
    pub n_classes: usize,
    /// Total query/key projection width across heads.
    pub d_k: usize,
    /// Total value projection width across heads.
    pub d_v: usize,
    pub dropout_spatial: f64,
    pub dropout_temporal: f64,
    pub ln_eps: f64,
    pub ablation: Ablation,
}

impl ModelConfig {
    /// Standard defaults: slice 10, h = 5, k_c = 51, N_f = 4, N_a = 3,
    /// dropout 0.3 spatial / 0.5 temporal, per-head projection width d.
    pub fn new(n_feature_channels: usize, t_samples: usize, n_classes: usize) -> Self {
        let slice_d = 10;
        let n_heads = 5;
        ModelConfig {
            n_feature_channels,
            t_samples,
            slice_d,
            n_heads,
            k_c: 51,
            n_f: 4,
            n_a: 3,
            n_classes,
            d_k: n_heads * slice_d,
            d_v: n_heads * slice_d,
            dropout_spatial: 0.3,
            dropout_temporal: 0.5,
            ln_eps: 1e-5,
            ablation: Ablation::none(),
        }
    }

    /// BCI competition IV dataset 2a: 22 electrodes, 4 classes, S = 4 CSP
    /// rows per class, [2, 6] s at 250 Hz.
    pub fn dataset_2a() -> Self {
        ModelConfig::new(16, 1000, 4)
    }

    /// BCI competition IV dataset 2b: 3 bipolar electrodes, 2 classes,
    /// a single S = 3 sub-filter, [3, 7] s at 250 Hz.
    pub fn dataset_2b() -> Self {
        ModelConfig::new(3, 1000, 2)
    }

    /// Desk-scale configuration used by the gradient suite.
    pub fn tiny() -> Self {
        let slice_d = 4;
        let n_heads = 2;
        ModelConfig {
            n_feature_channels: 4,
            t_samples: 40,
            slice_d,
            n_heads,
            k_c: 5,
            n_f: 4,
            n_a: 2,
            n_classes: 3,
            d_k: n_heads * slice_d,
            d_v: n_heads * slice_d,
            dropout_spatial: 0.3,
            dropout_temporal: 0.5,
            ln_eps: 1e-5,
            ablation: Ablation::none(),
        }
    }

    pub fn n_slices(&self) -> usize {
        self.t_samples / self.slice_d
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.slice_d < 2 {
            return Err(Error::Config(format!(
                "slice width must be at least 2 (layer normalization needs it), got {}",
                self.slice_d
            )));
        }
        if self.t_samples % self.slice_d != 0 {
            return Err(Error::Config(format!(
                "T = {} is not divisible by slice width {}; adjust the trial window or the slice size",
                self.t_samples, self.slice_d
            )));
        }
        if self.n_heads == 0 || self.d_k % self.n_heads != 0 || self.d_v % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_k = {} and d_v = {} must be divisible by h = {}",
                self.d_k, self.d_v, self.n_heads
            )));
        }
        if self.k_c % 2 == 0 {
            return Err(Error::Config(format!(
                "position-encoding kernel width must be odd, got {}",
                self.k_c
            )));
        }
        if self.k_c > self.t_samples {
            return Err(Error::Config(format!(
                "position-encoding kernel width {} exceeds T = {}",
                self.k_c, self.t_samples
            )));
        }
        if !self.ablation.drop_spatial && self.n_feature_channels < 2 {
            return Err(Error::Config(format!(
                "spatial attention needs at least 2 feature channels, got {}",
                self.n_feature_channels
            )));
        }
        if self.n_feature_channels == 0 {
            return Err(Error::Config("feature channel count must be positive".into()));
        }
        for (name, rate) in [
            ("spatial", self.dropout_spatial),
            ("temporal", self.dropout_temporal),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!(
                    "{name} dropout rate must be in [0, 1), got {rate}"
                )));
            }
        }
        if self.n_f == 0 || (self.n_a == 0 && !self.ablation.drop_temporal) {
            return Err(Error::Config(
                "feed-forward expansion and block count must be positive".into(),
            ));
        }
        Ok(())
    }
}
