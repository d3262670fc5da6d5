//! Trainable parameters, generic over the tensor representation.
//!
//! `ModelParams<RawTensor>` is the stored form; `ModelParams<TensorId>` is
//! the same structure bound to a tape for one forward/backward pass. The
//! canonical tensor order produced by [`ModelParams::tensors`] is what the
//! optimizer state, the checkpoint format, and the parameter count rely on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::numcore::{Tape, TensorId};

/// A plain tensor: shape plus row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl RawTensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RawTensor {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        RawTensor {
            rows,
            cols,
            values: vec![1.0; rows * cols],
        }
    }

    fn xavier(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        RawTensor {
            rows,
            cols,
            values: (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SpatialParams<T> {
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
}

#[derive(Debug, Clone)]
pub struct PosencParams<T> {
    pub kernel: T,
    pub bias: T,
}

#[derive(Debug, Clone)]
pub struct FeedForwardParams<T> {
    pub ln_gain: T,
    pub ln_bias: T,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Debug, Clone)]
pub struct BlockParams<T> {
    pub ln_gain: T,
    pub ln_bias: T,
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
    pub ff: Option<FeedForwardParams<T>>,
}

#[derive(Debug, Clone)]
pub struct HeadParams<T> {
    pub ln_gain: T,
    pub ln_bias: T,
    pub fc_w: T,
    pub fc_b: T,
}

/// Every trainable tensor of the network. Stages removed by ablation are
/// simply absent, so the parameter count and the optimizer see only what
/// the forward pass uses.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub spatial: Option<SpatialParams<T>>,
    pub posenc: Option<PosencParams<T>>,
    pub blocks: Vec<BlockParams<T>>,
    pub head: HeadParams<T>,
}

impl<T> ModelParams<T> {
    /// Canonical `(name, tensor)` listing. The order is load-bearing.
    pub fn tensors(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        if let Some(s) = &self.spatial {
            out.push(("spatial.wq".to_string(), &s.wq));
            out.push(("spatial.bq".to_string(), &s.bq));
            out.push(("spatial.wk".to_string(), &s.wk));
            out.push(("spatial.bk".to_string(), &s.bk));
            out.push(("spatial.wv".to_string(), &s.wv));
            out.push(("spatial.bv".to_string(), &s.bv));
        }
        if let Some(p) = &self.posenc {
            out.push(("posenc.kernel".to_string(), &p.kernel));
            out.push(("posenc.bias".to_string(), &p.bias));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.ln_gain"), &b.ln_gain));
            out.push((format!("block{i}.ln_bias"), &b.ln_bias));
            out.push((format!("block{i}.wq"), &b.wq));
            out.push((format!("block{i}.wk"), &b.wk));
            out.push((format!("block{i}.wv"), &b.wv));
            out.push((format!("block{i}.wo"), &b.wo));
            if let Some(ff) = &b.ff {
                out.push((format!("block{i}.ff.ln_gain"), &ff.ln_gain));
                out.push((format!("block{i}.ff.ln_bias"), &ff.ln_bias));
                out.push((format!("block{i}.ff.w1"), &ff.w1));
                out.push((format!("block{i}.ff.b1"), &ff.b1));
                out.push((format!("block{i}.ff.w2"), &ff.w2));
                out.push((format!("block{i}.ff.b2"), &ff.b2));
            }
        }
        out.push(("head.ln_gain".to_string(), &self.head.ln_gain));
        out.push(("head.ln_bias".to_string(), &self.head.ln_bias));
        out.push(("head.fc_w".to_string(), &self.head.fc_w));
        out.push(("head.fc_b".to_string(), &self.head.fc_b));
        out
    }

    /// Mutable variant of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut out = Vec::new();
        if let Some(s) = &mut self.spatial {
            out.push(("spatial.wq".to_string(), &mut s.wq));
            out.push(("spatial.bq".to_string(), &mut s.bq));
            out.push(("spatial.wk".to_string(), &mut s.wk));
            out.push(("spatial.bk".to_string(), &mut s.bk));
            out.push(("spatial.wv".to_string(), &mut s.wv));
            out.push(("spatial.bv".to_string(), &mut s.bv));
        }
        if let Some(p) = &mut self.posenc {
            out.push(("posenc.kernel".to_string(), &mut p.kernel));
            out.push(("posenc.bias".to_string(), &mut p.bias));
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.ln_gain"), &mut b.ln_gain));
            out.push((format!("block{i}.ln_bias"), &mut b.ln_bias));
            out.push((format!("block{i}.wq"), &mut b.wq));
            out.push((format!("block{i}.wk"), &mut b.wk));
            out.push((format!("block{i}.wv"), &mut b.wv));
            out.push((format!("block{i}.wo"), &mut b.wo));
            if let Some(ff) = &mut b.ff {
                out.push((format!("block{i}.ff.ln_gain"), &mut ff.ln_gain));
                out.push((format!("block{i}.ff.ln_bias"), &mut ff.ln_bias));
                out.push((format!("block{i}.ff.w1"), &mut ff.w1));
                out.push((format!("block{i}.ff.b1"), &mut ff.b1));
                out.push((format!("block{i}.ff.w2"), &mut ff.w2));
                out.push((format!("block{i}.ff.b2"), &mut ff.b2));
            }
        }
        out.push(("head.ln_gain".to_string(), &mut self.head.ln_gain));
        out.push(("head.ln_bias".to_string(), &mut self.head.ln_bias));
        out.push(("head.fc_w".to_string(), &mut self.head.fc_w));
        out.push(("head.fc_b".to_string(), &mut self.head.fc_b));
        out
    }

    /// Apply `f` to every tensor, preserving structure.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            spatial: self.spatial.as_ref().map(|s| SpatialParams {
                wq: f(&s.wq),
                bq: f(&s.bq),
                wk: f(&s.wk),
                bk: f(&s.bk),
                wv: f(&s.wv),
                bv: f(&s.bv),
            }),
            posenc: self.posenc.as_ref().map(|p| PosencParams {
                kernel: f(&p.kernel),
                bias: f(&p.bias),
            }),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    ln_gain: f(&b.ln_gain),
                    ln_bias: f(&b.ln_bias),
                    wq: f(&b.wq),
                    wk: f(&b.wk),
                    wv: f(&b.wv),
                    wo: f(&b.wo),
                    ff: b.ff.as_ref().map(|ff| FeedForwardParams {
                        ln_gain: f(&ff.ln_gain),
                        ln_bias: f(&ff.ln_bias),
                        w1: f(&ff.w1),
                        b1: f(&ff.b1),
                        w2: f(&ff.w2),
                        b2: f(&ff.b2),
                    }),
                })
                .collect(),
            head: HeadParams {
                ln_gain: f(&self.head.ln_gain),
                ln_bias: f(&self.head.ln_bias),
                fc_w: f(&self.head.fc_w),
                fc_b: f(&self.head.fc_b),
            },
        }
    }
}

impl ModelParams<RawTensor> {
    /// Seed-deterministic initialization: Xavier-uniform weights, zero
    /// biases, unit layer-norm gains. Tensors are drawn in canonical order.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.n_feature_channels;
        let d = cfg.slice_d;

        let spatial = (!cfg.ablation.drop_spatial).then(|| SpatialParams {
            wq: RawTensor::xavier(c, c, c, c, &mut rng),
            bq: RawTensor::zeros(c, 1),
            wk: RawTensor::xavier(c, c, c, c, &mut rng),
            bk: RawTensor::zeros(c, 1),
            wv: RawTensor::xavier(c, c, c, c, &mut rng),
            bv: RawTensor::zeros(c, 1),
        });
        let posenc = (!cfg.ablation.drop_posenc).then(|| PosencParams {
            kernel: RawTensor::xavier(c, cfg.k_c, cfg.k_c, cfg.k_c, &mut rng),
            bias: RawTensor::zeros(c, 1),
        });
        let n_blocks = if cfg.ablation.drop_temporal { 0 } else { cfg.n_a };
        let blocks = (0..n_blocks)
            .map(|_| BlockParams {
                ln_gain: RawTensor::ones(1, d),
                ln_bias: RawTensor::zeros(1, d),
                wq: RawTensor::xavier(d, cfg.d_k, d, cfg.d_k, &mut rng),
                wk: RawTensor::xavier(d, cfg.d_k, d, cfg.d_k, &mut rng),
                wv: RawTensor::xavier(d, cfg.d_v, d, cfg.d_v, &mut rng),
                wo: RawTensor::xavier(cfg.d_v, d, cfg.d_v, d, &mut rng),
                ff: (!cfg.ablation.drop_ff).then(|| FeedForwardParams {
                    ln_gain: RawTensor::ones(1, d),
                    ln_bias: RawTensor::zeros(1, d),
                    w1: RawTensor::xavier(d, cfg.n_f * d, d, cfg.n_f * d, &mut rng),
                    b1: RawTensor::zeros(1, cfg.n_f * d),
                    w2: RawTensor::xavier(cfg.n_f * d, d, cfg.n_f * d, d, &mut rng),
                    b2: RawTensor::zeros(1, d),
                }),
            })
            .collect();
        let head = HeadParams {
            ln_gain: RawTensor::ones(1, d),
            ln_bias: RawTensor::zeros(1, d),
            fc_w: RawTensor::xavier(d, cfg.n_classes, d, cfg.n_classes, &mut rng),
            fc_b: RawTensor::zeros(1, cfg.n_classes),
        };
        ModelParams {
            spatial,
            posenc,
            blocks,
            head,
        }
    }

    /// Total trainable scalar count.
    pub fn count_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Insert every tensor into a tape as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<TensorId> {
        self.map(|t| tape.leaf(t.values.clone(), t.rows, t.cols, true))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Ablation;

    #[test]
    fn canonical_order_is_stable_between_variants() {
        let cfg = ModelConfig::tiny();
        let mut params = ModelParams::init(&cfg, 1);
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = params.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        let mapped = params.map(|t| t.len());
        let names_mapped: Vec<String> = mapped.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mapped);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::tiny();
        let a = ModelParams::init(&cfg, 7);
        let b = ModelParams::init(&cfg, 7);
        for ((_, ta), (_, tb)) in a.tensors().iter().zip(b.tensors()) {
            assert_eq!(ta.values, tb.values);
        }
        let c = ModelParams::init(&cfg, 8);
        let same = a
            .tensors()
            .iter()
            .zip(c.tensors())
            .all(|((_, ta), (_, tc))| ta.values == tc.values);
        assert!(!same, "different seeds must differ");
    }

    #[test]
    fn dataset_2a_parameter_budget() {
        let params = ModelParams::init(&ModelConfig::dataset_2a(), 0);
        let count = params.count_params();
        assert!(
            (6_000..=11_000).contains(&count),
            "2a config has {count} params"
        );
    }

    #[test]
    fn dataset_2b_is_strictly_smaller() {
        let a = ModelParams::init(&ModelConfig::dataset_2a(), 0).count_params();
        let b = ModelParams::init(&ModelConfig::dataset_2b(), 0).count_params();
        assert!(b < a, "2b ({b}) must be below 2a ({a})");
    }

    #[test]
    fn single_fc_layer_counts_44() {
        // d = 10 → N = 4 with bias: 10·4 + 4.
        let head = HeadParams {
            ln_gain: RawTensor::zeros(0, 0),
            ln_bias: RawTensor::zeros(0, 0),
            fc_w: RawTensor::zeros(10, 4),
            fc_b: RawTensor::zeros(1, 4),
        };
        assert_eq!(head.fc_w.len() + head.fc_b.len(), 44);
    }

    #[test]
    fn empty_model_counts_zero() {
        let params: ModelParams<RawTensor> = ModelParams {
            spatial: None,
            posenc: None,
            blocks: vec![],
            head: HeadParams {
                ln_gain: RawTensor::zeros(0, 0),
                ln_bias: RawTensor::zeros(0, 0),
                fc_w: RawTensor::zeros(0, 0),
                fc_b: RawTensor::zeros(0, 0),
            },
        };
        assert_eq!(params.count_params(), 0);
    }

    #[test]
    fn ablation_removes_parameters() {
        let mut cfg = ModelConfig::tiny();
        let full = ModelParams::init(&cfg, 0).count_params();
        cfg.ablation = Ablation {
            drop_spatial: true,
            ..Ablation::none()
        };
        let no_spatial = ModelParams::init(&cfg, 0).count_params();
        assert!(no_spatial < full);
        cfg.ablation = Ablation {
            drop_temporal: true,
            ..Ablation::none()
        };
        let no_temporal = ModelParams::init(&cfg, 0).count_params();
        assert!(no_temporal < full);
        cfg.ablation = Ablation {
            drop_ff: true,
            ..Ablation::none()
        };
        let no_ff = ModelParams::init(&cfg, 0).count_params();
        assert!(no_ff < full);
    }
}
