//! Differentiable classifier backbones behind a flat-parameter interface,
//! the binary cross-entropy loss with exact backpropagation, and first-order
//! optimizers.

mod checkpoint;
mod mlp;
mod optim;
mod rescnn;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use optim::{adamw_step, sgd_step, AdamWState, Optimizer, OptimizerKind};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{FeatureMatrix, Sample};
use crate::par;

/// Probability clamp for the cross-entropy loss.
pub const PROB_EPS: f64 = 1e-7;

/// How batch losses (and gradients) are reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum Architecture {
    Mlp {
        hidden: usize,
    },
    #[serde(rename = "rescnn1d")]
    ResCnn1d {
        filters: usize,
    },
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Mlp { .. } => "mlp",
            Architecture::ResCnn1d { .. } => "rescnn1d",
        }
    }
}

/// Shape descriptors of a backbone: architecture plus the `window x
/// feature_dim` input it expects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    #[serde(flatten)]
    pub arch: Architecture,
    pub window: usize,
    pub feature_dim: usize,
}

impl BackboneSpec {
    pub fn mlp(window: usize, feature_dim: usize, hidden: usize) -> Self {
        Self {
            arch: Architecture::Mlp { hidden },
            window,
            feature_dim,
        }
    }

    pub fn rescnn(window: usize, feature_dim: usize, filters: usize) -> Self {
        Self {
            arch: Architecture::ResCnn1d { filters },
            window,
            feature_dim,
        }
    }

    pub fn param_len(&self) -> usize {
        match self.arch {
            Architecture::Mlp { hidden } => mlp::param_len(self.window * self.feature_dim, hidden),
            Architecture::ResCnn1d { filters } => rescnn::param_len(self.feature_dim, filters),
        }
    }
}

/// A parameterized classifier: forward outputs are probabilities in (0, 1),
/// gradients come from exact backpropagation.
#[derive(Clone, Debug)]
pub struct Backbone {
    spec: BackboneSpec,
    params: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Loss term and upstream logit gradient for one clamped prediction.
fn bce_term(y: f64, label: f64) -> (f64, f64) {
    let yc = y.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let loss = -(label * yc.ln() + (1.0 - label) * (1.0 - yc).ln());
    // Inside the clamp the sigmoid + cross-entropy gradient collapses to
    // y - label; at the clamp boundary the loss is flat in the logit.
    let dz = if y > PROB_EPS && y < 1.0 - PROB_EPS {
        y - label
    } else {
        0.0
    };
    (loss, dz)
}

impl Backbone {
    /// Uniform Glorot initialization for weight matrices, zero biases.
    pub fn init(spec: BackboneSpec, seed: u64) -> Self {
        let mut params = vec![0.0; spec.param_len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match spec.arch {
            Architecture::Mlp { hidden } => mlp::glorot_init(
                spec.window * spec.feature_dim,
                hidden,
                &mut params,
                &mut rng,
            ),
            Architecture::ResCnn1d { filters } => {
                rescnn::glorot_init(spec.feature_dim, filters, &mut params, &mut rng)
            }
        }
        Self { spec, params }
    }

    /// All-zero parameters; forward is exactly 0.5 everywhere.
    pub fn zeros(spec: BackboneSpec) -> Self {
        let params = vec![0.0; spec.param_len()];
        Self { spec, params }
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.params.len(),
            });
        }
        Ok(Self {
            spec: self.spec,
            params,
        })
    }

    fn check_shape(&self, features: &FeatureMatrix) -> Result<()> {
        if features.rows() != self.spec.window || features.cols() != self.spec.feature_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.spec.window, self.spec.feature_dim),
                actual: format!("{}x{}", features.rows(), features.cols()),
            });
        }
        Ok(())
    }

    fn forward_at(&self, params: &[f64], features: &FeatureMatrix) -> f64 {
        match self.spec.arch {
            Architecture::Mlp { hidden } => mlp::forward(features.as_slice(), hidden, params),
            Architecture::ResCnn1d { filters } => rescnn::forward(features, filters, params),
        }
    }

    /// Probability that the sample's next-day movement is up.
    pub fn forward_one(&self, features: &FeatureMatrix) -> Result<f64> {
        self.check_shape(features)?;
        Ok(self.forward_at(&self.params, features))
    }

    pub fn forward_batch(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        for s in samples {
            self.check_shape(&s.features)?;
        }
        Ok(par::map_ordered(samples, |s| {
            self.forward_at(&self.params, &s.features)
        }))
    }

    /// Hard predictions: class 1 iff the probability is at least 0.5.
    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<u8>> {
        Ok(self
            .forward_batch(samples)?
            .into_iter()
            .map(|y| u8::from(y >= 0.5))
            .collect())
    }

    /// Cross-entropy loss over a batch and its exact parameter gradient.
    pub fn loss_and_grad(
        &self,
        samples: &[Sample],
        reduction: LossReduction,
    ) -> Result<(f64, Vec<f64>)> {
        self.loss_and_grad_at(&self.params, samples, reduction)
    }

    /// Same as [`Backbone::loss_and_grad`] but evaluated at an external
    /// parameter vector; only the shape descriptors of `self` are used.
    pub fn loss_and_grad_at(
        &self,
        params: &[f64],
        samples: &[Sample],
        reduction: LossReduction,
    ) -> Result<(f64, Vec<f64>)> {
        if params.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: self.params.len(),
            });
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput("loss over an empty batch"));
        }
        for s in samples {
            self.check_shape(&s.features)?;
        }
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for sample in samples {
            let label = f64::from(sample.label);
            loss += match self.spec.arch {
                Architecture::Mlp { hidden } => mlp::loss_grad_accum(
                    sample.features.as_slice(),
                    hidden,
                    params,
                    label,
                    &mut grad,
                ),
                Architecture::ResCnn1d { filters } => {
                    rescnn::loss_grad_accum(&sample.features, filters, params, label, &mut grad)
                }
            };
        }
        if reduction == LossReduction::Mean {
            let n = samples.len() as f64;
            loss /= n;
            for g in &mut grad {
                *g /= n;
            }
        }
        Ok((loss, grad))
    }
}

/// Cross-entropy of already-computed probabilities, clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn bce(probabilities: &[f64], labels: &[u8], reduction: LossReduction) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probabilities.len(),
            right: labels.len(),
        });
    }
    let mut loss = 0.0;
    for (&y, &label) in probabilities.iter().zip(labels) {
        loss += bce_term(y, f64::from(label)).0;
    }
    if reduction == LossReduction::Mean && !labels.is_empty() {
        loss /= labels.len() as f64;
    }
    Ok(loss)
}

/// Anything the meta-training loops can differentiate through. The toy
/// models in tests implement this alongside [`Backbone`].
pub trait GradientModel: Sync {
    fn param_len(&self) -> usize;
    fn loss_and_grad_at(
        &self,
        params: &[f64],
        batch: &[Sample],
        reduction: LossReduction,
    ) -> Result<(f64, Vec<f64>)>;
}

impl GradientModel for Backbone {
    fn param_len(&self) -> usize {
        self.params.len()
    }

    fn loss_and_grad_at(
        &self,
        params: &[f64],
        batch: &[Sample],
        reduction: LossReduction,
    ) -> Result<(f64, Vec<f64>)> {
        Backbone::loss_and_grad_at(self, params, batch, reduction)
    }
}

pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn fill_uniform(slice: &mut [f64], bound: f64, rng: &mut ChaCha8Rng) {
    for v in slice {
        *v = rng.gen_range(-bound..=bound);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::make_samples;
    use crate::market_data::{synthesize, Regime};
    use approx::assert_relative_eq;

    fn test_samples(n: usize, window: usize) -> Vec<Sample> {
        let series = synthesize(8, 120, Regime::Planted, 77).unwrap();
        let mut samples: Vec<Sample> = series
            .iter()
            .flat_map(|s| make_samples(s, window, 0.55, -0.5))
            .collect();
        samples.truncate(n);
        assert_eq!(samples.len(), n);
        samples
    }

    fn specs() -> [BackboneSpec; 2] {
        [BackboneSpec::mlp(5, 2, 8), BackboneSpec::rescnn(5, 2, 4)]
    }

    #[test]
    fn zero_parameters_output_exactly_half() {
        for spec in specs() {
            let model = Backbone::zeros(spec);
            let samples = test_samples(16, 5);
            for sample in &samples {
                assert_eq!(model.forward_one(&sample.features).unwrap(), 0.5);
            }
            // Threshold ties go to class 1.
            let predictions = model.predict(&samples).unwrap();
            assert!(predictions.iter().all(|p| *p == 1));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        for spec in specs() {
            let model = Backbone::init(spec, 3);
            let samples = test_samples(32, 5);
            let a = model.forward_batch(&samples).unwrap();
            let b = model.forward_batch(&samples).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|y| *y > 0.0 && *y < 1.0));
        }
    }

    #[test]
    fn batch_of_4096_gives_4096_probabilities() {
        let series = synthesize(24, 200, Regime::Planted, 5).unwrap();
        let mut samples: Vec<Sample> = series
            .iter()
            .flat_map(|s| make_samples(s, 5, 0.55, -0.5))
            .collect();
        samples.truncate(4096);
        assert_eq!(samples.len(), 4096);
        let model = Backbone::init(BackboneSpec::mlp(5, 2, 8), 1);
        assert_eq!(model.forward_batch(&samples).unwrap().len(), 4096);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let model = Backbone::init(BackboneSpec::mlp(5, 2, 8), 3);
        let samples = test_samples(1, 4);
        assert!(model.forward_batch(&samples).is_err());
    }

    #[test]
    fn param_round_trip_is_identity() {
        for spec in specs() {
            let model = Backbone::init(spec, 9);
            let samples = test_samples(8, 5);
            let before = model.forward_batch(&samples).unwrap();
            let mut copy = Backbone::zeros(spec);
            copy.set_params(model.params()).unwrap();
            assert_eq!(copy.params(), model.params());
            let after = copy.forward_batch(&samples).unwrap();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn bce_of_half_is_ln_two() {
        let loss = bce(&[0.5], &[1], LossReduction::Sum).unwrap();
        assert_relative_eq!(loss, std::f64::consts::LN_2, max_relative = 1e-12);
    }

    #[test]
    fn perfect_confident_prediction_hits_clamp() {
        let loss = bce(&[1.0], &[1], LossReduction::Sum).unwrap();
        let expected = -(1.0 - PROB_EPS).ln();
        assert_relative_eq!(loss, expected, max_relative = 1e-9);
        assert!(loss < 2e-7);
    }

    #[test]
    fn bce_length_mismatch_is_an_error() {
        assert!(bce(&[0.5, 0.5], &[1], LossReduction::Sum).is_err());
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    /// Central finite differences with step 1e-5, probing random
    /// coordinates of both architectures.
    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let step = 1e-5;
        let samples = test_samples(12, 5);
        for spec in specs() {
            let model = Backbone::init(spec, 21);
            let (_, grad) = model.loss_and_grad(&samples, LossReduction::Sum).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(40);
            for _ in 0..25 {
                let i = rng.gen_range(0..model.param_len());
                let mut plus = model.params().to_vec();
                plus[i] += step;
                let mut minus = model.params().to_vec();
                minus[i] -= step;
                let (lp, _) = model
                    .loss_and_grad_at(&plus, &samples, LossReduction::Sum)
                    .unwrap();
                let (lm, _) = model
                    .loss_and_grad_at(&minus, &samples, LossReduction::Sum)
                    .unwrap();
                let numeric = (lp - lm) / (2.0 * step);
                let err = relative_error(numeric, grad[i]);
                assert!(
                    err < 1e-4,
                    "{} coordinate {i}: analytic {} vs numeric {} (rel {err})",
                    spec.arch.tag(),
                    grad[i],
                    numeric
                );
            }
        }
    }

    #[test]
    fn mean_reduction_scales_sum_by_batch_size() {
        let samples = test_samples(10, 5);
        let model = Backbone::init(BackboneSpec::mlp(5, 2, 8), 2);
        let (sum_loss, sum_grad) = model.loss_and_grad(&samples, LossReduction::Sum).unwrap();
        let (mean_loss, mean_grad) = model.loss_and_grad(&samples, LossReduction::Mean).unwrap();
        assert_relative_eq!(mean_loss * 10.0, sum_loss, max_relative = 1e-12);
        assert_relative_eq!(mean_grad[3] * 10.0, sum_grad[3], max_relative = 1e-12);
    }
}
