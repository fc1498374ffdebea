//! Network definition, forward pass, and backpropagation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gelu, gelu_derivative, wing_loss, WingLossParams};
use crate::{Error, Result};

/// Which residual a model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Range,
    Angle,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Range => write!(f, "range"),
            ModelKind::Angle => write!(f, "angle"),
        }
    }
}

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `W x` for a vector of length `cols`.
    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }
}

/// Variance floor inside LayerNorm.
const LN_EPS: f64 = 1e-5;

/// One residual-correction sub-network with its frozen normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpModel {
    pub kind: ModelKind,
    pub layer_dims: Vec<usize>,
    pub weights: Vec<RealMat>,
    pub biases: Vec<Vec<f64>>,
    pub ln_gain: Vec<Vec<f64>>,
    pub ln_offset: Vec<Vec<f64>>,
    pub dropout_rate: f64,
    /// Physical scale of the Tanh output (meters or radians).
    pub output_scale: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub wing: WingLossParams,
    pub seed: u64,
}

/// Per-parameter gradients, same layout as the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<RealMat>,
    pub biases: Vec<Vec<f64>>,
    pub ln_gain: Vec<Vec<f64>>,
    pub ln_offset: Vec<Vec<f64>>,
}

struct LayerCache {
    input: Vec<f64>,
    /// `(z - mean) / sqrt(var + eps)`.
    z_hat: Vec<f64>,
    inv_std: f64,
    /// LayerNorm output (GELU input).
    y: Vec<f64>,
    /// Dropout keep mask, already divided by the keep probability.
    mask: Vec<f64>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    last_input: Vec<f64>,
    /// Tanh output in (-1, 1).
    bounded: f64,
}

impl MlpModel {
    /// Fresh model with seeded uniform Glorot init; gains 1, offsets and
    /// biases 0.
    pub fn new(
        kind: ModelKind,
        layer_dims: &[usize],
        dropout_rate: f64,
        output_scale: f64,
        wing: WingLossParams,
        seed: u64,
    ) -> Self {
        assert!(layer_dims.len() >= 2 && *layer_dims.last().unwrap() == 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = RealMat::zeros(fan_out, fan_in);
            for v in &mut w.data {
                *v = rng.gen_range(-bound..bound);
            }
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        let hidden = &layer_dims[1..layer_dims.len() - 1];
        Self {
            kind,
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            ln_gain: hidden.iter().map(|&d| vec![1.0; d]).collect(),
            ln_offset: hidden.iter().map(|&d| vec![0.0; d]).collect(),
            dropout_rate,
            output_scale,
            feature_mean: vec![0.0; layer_dims[0]],
            feature_std: vec![1.0; layer_dims[0]],
            wing,
            seed,
        }
    }

    pub fn num_hidden(&self) -> usize {
        self.layer_dims.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    fn normalize(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} features, got {}",
                self.input_dim(),
                features.len()
            )));
        }
        Ok(features
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }

    fn forward_cached(&self, features: &[f64], dropout_rng: Option<&mut ChaCha8Rng>) -> Result<ForwardCache> {
        let mut a = self.normalize(features)?;
        let mut layers = Vec::with_capacity(self.num_hidden());
        let keep = 1.0 - self.dropout_rate;
        let mut rng = dropout_rng;
        for h in 0..self.num_hidden() {
            let z = {
                let mut z = self.weights[h].matvec(&a);
                for (zi, b) in z.iter_mut().zip(&self.biases[h]) {
                    *zi += b;
                }
                z
            };
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv_std = 1.0 / (var + LN_EPS).sqrt();
            let z_hat: Vec<f64> = z.iter().map(|v| (v - mean) * inv_std).collect();
            let y: Vec<f64> = z_hat
                .iter()
                .zip(self.ln_gain[h].iter().zip(&self.ln_offset[h]))
                .map(|(zh, (g, o))| g * zh + o)
                .collect();
            let act: Vec<f64> = y.iter().map(|&v| gelu(v)).collect();
            let mask: Vec<f64> = match rng.as_deref_mut() {
                Some(r) if self.dropout_rate > 0.0 => act
                    .iter()
                    .map(|_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect(),
                _ => vec![1.0; act.len()],
            };
            let next: Vec<f64> = act.iter().zip(&mask).map(|(v, m)| v * m).collect();
            layers.push(LayerCache { input: a, z_hat, inv_std, y, mask });
            a = next;
        }
        let last = self.weights.last().unwrap();
        let raw = last.matvec(&a)[0] + self.biases.last().unwrap()[0];
        Ok(ForwardCache { layers, last_input: a, bounded: raw.tanh() })
    }

    /// Deterministic inference: the scaled correction in physical units,
    /// bounded by `output_scale` in magnitude.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        let cache = self.forward_cached(features, None)?;
        Ok(cache.bounded * self.output_scale)
    }

    /// Training-mode forward pass (dropout active). Exposed for tests.
    pub fn forward_training(&self, features: &[f64], rng: &mut ChaCha8Rng) -> Result<f64> {
        let cache = self.forward_cached(features, Some(rng))?;
        Ok(cache.bounded * self.output_scale)
    }

    /// Mean Wing loss of the batch and exact gradients for every weight,
    /// bias, and LayerNorm parameter. Targets are unit-normalized.
    ///
    /// Dropout masks are drawn from `dropout_rng`; pass `None` for a
    /// deterministic (inference-path) gradient.
    pub fn backward(
        &self,
        batch: &[(Vec<f64>, f64)],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        let mut grads = Gradients {
            weights: self.weights.iter().map(|w| RealMat::zeros(w.rows, w.cols)).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            ln_gain: self.ln_gain.iter().map(|g| vec![0.0; g.len()]).collect(),
            ln_offset: self.ln_offset.iter().map(|o| vec![0.0; o.len()]).collect(),
        };
        let mut total_loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for (features, target) in batch {
            let cache = self.forward_cached(features, dropout_rng.as_deref_mut())?;
            let (loss, dloss) = wing_loss(cache.bounded, *target, &self.wing);
            total_loss += loss * scale;
            // Through tanh.
            let draw = dloss * (1.0 - cache.bounded * cache.bounded) * scale;

            // Output dense layer.
            let last = self.weights.len() - 1;
            for (j, a) in cache.last_input.iter().enumerate() {
                grads.weights[last].data[j] += draw * a;
            }
            grads.biases[last][0] += draw;
            let mut da: Vec<f64> =
                self.weights[last].row(0).iter().map(|w| draw * w).collect();

            for h in (0..self.num_hidden()).rev() {
                let layer = &cache.layers[h];
                // Dropout, then GELU.
                let dy: Vec<f64> = da
                    .iter()
                    .zip(&layer.mask)
                    .zip(&layer.y)
                    .map(|((d, m), &y)| d * m * gelu_derivative(y))
                    .collect();
                // LayerNorm parameters.
                for (j, dyj) in dy.iter().enumerate() {
                    grads.ln_gain[h][j] += dyj * layer.z_hat[j];
                    grads.ln_offset[h][j] += dyj;
                }
                // Through the normalization itself.
                let dzh: Vec<f64> =
                    dy.iter().zip(&self.ln_gain[h]).map(|(d, g)| d * g).collect();
                let n = dzh.len() as f64;
                let mean_dzh = dzh.iter().sum::<f64>() / n;
                let mean_dzh_zh =
                    dzh.iter().zip(&layer.z_hat).map(|(d, z)| d * z).sum::<f64>() / n;
                let dz: Vec<f64> = dzh
                    .iter()
                    .zip(&layer.z_hat)
                    .map(|(d, z)| layer.inv_std * (d - mean_dzh - z * mean_dzh_zh))
                    .collect();
                // Dense layer h.
                for (j, dzj) in dz.iter().enumerate() {
                    grads.biases[h][j] += dzj;
                    let row = &mut grads.weights[h].data
                        [j * self.layer_dims[h]..(j + 1) * self.layer_dims[h]];
                    for (gw, a) in row.iter_mut().zip(&layer.input) {
                        *gw += dzj * a;
                    }
                }
                da = (0..self.layer_dims[h])
                    .map(|i| {
                        dz.iter()
                            .enumerate()
                            .map(|(j, d)| d * self.weights[h].data[j * self.layer_dims[h] + i])
                            .sum()
                    })
                    .collect();
            }
        }
        Ok((total_loss, grads))
    }

    /// All trainable parameters as mutable slices, in a fixed order
    /// shared with [`Gradients::slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .map(|w| w.data.as_mut_slice())
            .chain(self.biases.iter_mut().map(|b| b.as_mut_slice()))
            .chain(self.ln_gain.iter_mut().map(|g| g.as_mut_slice()))
            .chain(self.ln_offset.iter_mut().map(|o| o.as_mut_slice()))
            .collect()
    }
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .map(|w| w.data.as_slice())
            .chain(self.biases.iter().map(|b| b.as_slice()))
            .chain(self.ln_gain.iter().map(|g| g.as_slice()))
            .chain(self.ln_offset.iter().map(|o| o.as_slice()))
            .collect()
    }
}

/// Bump when the on-disk layout changes incompatibly.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: MlpModel,
}

/// Writes the model as versioned JSON. Doubles survive the round trip
/// bit-exactly.
pub fn save_model(model: &MlpModel, path: &std::path::Path) -> Result<()> {
    let file = ModelFile { format_version: MODEL_FORMAT_VERSION, model: model.clone() };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Reads a model back, checking the format version and the kind tag.
pub fn load_model(path: &std::path::Path, expected_kind: ModelKind) -> Result<MlpModel> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported format version {} (expected {})",
            file.format_version, MODEL_FORMAT_VERSION
        )));
    }
    if file.model.kind != expected_kind {
        return Err(Error::ModelFile(format!(
            "model at {} is a {} model, expected {}",
            path.display(),
            file.model.kind,
            expected_kind
        )));
    }
    Ok(file.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64, dropout: f64) -> MlpModel {
        MlpModel::new(ModelKind::Range, &[2, 3, 1], dropout, 1.5, WingLossParams::default(), seed)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut m = tiny(1, 0.0);
        for s in m.param_slices_mut() {
            s.fill(0.0);
        }
        // tanh(0) = 0 regardless of the input.
        assert_eq!(m.predict(&[3.0, -7.0]).unwrap(), 0.0);
    }

    #[test]
    fn output_bounded_by_scale() {
        let m = MlpModel::new(
            ModelKind::Angle,
            &[4, 8, 8, 1],
            0.0,
            0.087,
            WingLossParams::default(),
            9,
        );
        for trial in 0..50 {
            let x: Vec<f64> = (0..4).map(|i| ((trial * 7 + i) as f64).sin() * 100.0).collect();
            let out = m.predict(&x).unwrap();
            assert!(out.abs() < 0.087);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = tiny(2, 0.0);
        assert!(m.predict(&[1.0]).is_err());
        assert!(m.predict(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn forward_matches_scalar_golden_value() {
        // Fixed tiny network with hand-set parameters; golden value from
        // an independent scalar walk through the same arithmetic.
        let mut m = tiny(0, 0.0);
        m.weights[0].data = vec![0.5, -0.25, 0.1, 0.3, -0.2, 0.4];
        m.biases[0] = vec![0.01, -0.02, 0.03];
        m.ln_gain[0] = vec![1.1, 0.9, 1.0];
        m.ln_offset[0] = vec![0.0, 0.05, -0.05];
        m.weights[1].data = vec![0.7, -0.6, 0.2];
        m.biases[1] = vec![0.1];
        let x = [0.8, -0.4];

        // Scalar recomputation.
        let z = [
            0.5 * 0.8 + (-0.25) * (-0.4) + 0.01,
            0.1 * 0.8 + 0.3 * (-0.4) - 0.02,
            -0.2 * 0.8 + 0.4 * (-0.4) + 0.03,
        ];
        let mean = (z[0] + z[1] + z[2]) / 3.0;
        let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        let inv = 1.0 / (var + 1e-5).sqrt();
        let gains = [1.1, 0.9, 1.0];
        let offsets = [0.0, 0.05, -0.05];
        let mut a = [0.0; 3];
        for i in 0..3 {
            let y = gains[i] * (z[i] - mean) * inv + offsets[i];
            a[i] = super::super::gelu(y);
        }
        let raw = 0.7 * a[0] - 0.6 * a[1] + 0.2 * a[2] + 0.1;
        let expected = raw.tanh() * 1.5;

        let got = m.predict(&x).unwrap();
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }

    #[test]
    fn gradients_match_central_differences() {
        // Randomized tiny networks, inference path (no dropout) so the
        // loss is deterministic. Covers LayerNorm and GELU paths.
        for seed in 0..5u64 {
            let mut m = MlpModel::new(
                ModelKind::Range,
                &[3, 5, 4, 1],
                0.0,
                1.0,
                WingLossParams::new(0.7, 0.08).unwrap(),
                seed,
            );
            let batch: Vec<(Vec<f64>, f64)> = (0..4)
                .map(|i| {
                    let x: Vec<f64> =
                        (0..3).map(|j| ((seed as f64 + 1.0) * (i * 3 + j + 1) as f64).sin()).collect();
                    (x, 0.4 * ((i as f64) - 1.5))
                })
                .collect();
            let (_, grads) = m.backward(&batch, None).unwrap();
            let flat_grads: Vec<f64> =
                grads.slices().iter().flat_map(|s| s.iter().copied()).collect();

            let mut idx = 0usize;
            let num_params = flat_grads.len();
            let mut worst = 0.0f64;
            for p in 0..num_params {
                let h = 1e-6;
                let eval = |m: &mut MlpModel, v: f64| -> f64 {
                    let mut flat = 0usize;
                    for s in m.param_slices_mut() {
                        if p < flat + s.len() {
                            let old = s[p - flat];
                            s[p - flat] = v;
                            return old;
                        }
                        flat += s.len();
                    }
                    unreachable!()
                };
                let orig = eval(&mut m, f64::NAN);
                eval(&mut m, orig + h);
                let (lp, _) = m.backward(&batch, None).unwrap();
                eval(&mut m, orig - h);
                let (lm, _) = m.backward(&batch, None).unwrap();
                eval(&mut m, orig);
                let fd = (lp - lm) / (2.0 * h);
                let g = flat_grads[p];
                let denom = g.abs().max(fd.abs()).max(1e-4);
                worst = worst.max((g - fd).abs() / denom);
                idx += 1;
            }
            assert_eq!(idx, num_params);
            assert!(worst < 1e-4, "seed {seed}: worst relative gradient error {worst}");
        }
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let mut m = tiny(4, 0.0);
        for s in m.param_slices_mut() {
            s.fill(0.0);
        }
        let batch = vec![(vec![1.0, -2.0], 0.0), (vec![0.5, 0.5], 0.0)];
        let (loss, grads) = m.backward(&batch, None).unwrap();
        assert_eq!(loss, 0.0);
        for s in grads.slices() {
            assert!(s.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let m = tiny(8, 0.0);
        let samples = vec![(vec![0.3, 0.9], 0.2), (vec![-0.5, 0.1], -0.4), (vec![1.2, -0.3], 0.6)];
        let (_, batch_grads) = m.backward(&samples, None).unwrap();
        let per: Vec<Gradients> = samples
            .iter()
            .map(|s| m.backward(std::slice::from_ref(s), None).unwrap().1)
            .collect();
        let batch_flat: Vec<f64> =
            batch_grads.slices().iter().flat_map(|s| s.iter().copied()).collect();
        let mut mean_flat = vec![0.0; batch_flat.len()];
        for g in &per {
            for (acc, v) in
                mean_flat.iter_mut().zip(g.slices().iter().flat_map(|s| s.iter().copied()))
            {
                *acc += v / 3.0;
            }
        }
        for (a, b) in batch_flat.iter().zip(&mean_flat) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("range.model.json");
        let mut m = tiny(11, 0.1);
        // Give the normalization non-trivial values to exercise the
        // full field set.
        m.feature_mean = vec![0.123456789012345, -7.5];
        m.feature_std = vec![2.5, 0.030000000000000002];
        save_model(&m, &path).unwrap();
        let loaded = load_model(&path, ModelKind::Range).unwrap();
        assert_eq!(m.layer_dims, loaded.layer_dims);
        assert_eq!(m.weights, loaded.weights);
        assert_eq!(m.biases, loaded.biases);
        assert_eq!(m.ln_gain, loaded.ln_gain);
        assert_eq!(m.ln_offset, loaded.ln_offset);
        assert_eq!(m.feature_mean, loaded.feature_mean);
        assert_eq!(m.feature_std, loaded.feature_std);
        let x = [0.37, -1.9];
        assert_eq!(m.predict(&x).unwrap(), loaded.predict(&x).unwrap());
    }

    #[test]
    fn wrong_kind_tag_is_a_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&tiny(5, 0.0), &path).unwrap();
        match load_model(&path, ModelKind::Angle) {
            Err(crate::Error::ModelFile(msg)) => assert!(msg.contains("range")),
            other => panic!("expected ModelFile error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_a_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&tiny(5, 0.0), &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 99");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_model(&path, ModelKind::Range),
            Err(crate::Error::ModelFile(_))
        ));
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&tiny(5, 0.0), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            load_model(&path, ModelKind::Range),
            Err(crate::Error::Serde(_))
        ));
    }

    #[test]
    fn dropout_only_active_in_training() {
        let m = tiny(3, 0.5);
        let x = [0.7, -0.2];
        let a = m.predict(&x).unwrap();
        let b = m.predict(&x).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let outs: Vec<f64> =
            (0..8).map(|_| m.forward_training(&x, &mut rng).unwrap()).collect();
        assert!(outs.iter().any(|o| (o - a).abs() > 1e-12));
    }
}
