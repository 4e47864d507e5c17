//! Small dense MLPs over f32 weights with f64 accumulation, plus the pairwise
//! scorers the patch classifier runs on.

use super::FeatureError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn tag(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self, FeatureError> {
        match tag {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            other => Err(FeatureError::UnknownActivation(other)),
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }
}

/// One dense layer: `y = act(W x + b)` with `W` stored row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(
        rows: usize,
        cols: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
        activation: Activation,
    ) -> Result<Self, FeatureError> {
        if weights.len() != rows * cols {
            return Err(FeatureError::DimensionMismatch {
                what: "layer weights",
                expected: rows * cols,
                got: weights.len(),
            });
        }
        if bias.len() != rows {
            return Err(FeatureError::DimensionMismatch {
                what: "layer bias",
                expected: rows,
                got: bias.len(),
            });
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFiniteWeights);
        }
        Ok(Self { rows, cols, weights, bias, activation })
    }
}

/// A stack of dense layers with matching inner dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    layers: Vec<Layer>,
}

impl MlpWeights {
    pub fn new(layers: Vec<Layer>) -> Result<Self, FeatureError> {
        if layers.is_empty() {
            return Err(FeatureError::EmptyMlp);
        }
        for i in 1..layers.len() {
            if layers[i].cols != layers[i - 1].rows {
                return Err(FeatureError::DimensionChainBroken {
                    layer: i,
                    expected: layers[i].cols,
                    got: layers[i - 1].rows,
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    /// Forward pass with f64 accumulation throughout; the final layer's
    /// activations are rounded to f32 at the end.
    pub fn forward(&self, input: &[f32]) -> Result<Vec<f32>, FeatureError> {
        if input.len() != self.input_dim() {
            return Err(FeatureError::DimensionMismatch {
                what: "MLP input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(self.forward_f64(&input.iter().map(|v| *v as f64).collect::<Vec<_>>()))
    }

    /// Forward pass on an f64 input the caller has already sized correctly.
    pub fn forward_f64(&self, input: &[f64]) -> Vec<f32> {
        debug_assert_eq!(input.len(), self.input_dim());
        let mut x = input.to_vec();
        let mut y = Vec::new();
        for layer in &self.layers {
            y.clear();
            y.reserve(layer.rows);
            for r in 0..layer.rows {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                let mut acc = layer.bias[r] as f64;
                for (w, v) in row.iter().zip(&x) {
                    acc += *w as f64 * *v;
                }
                y.push(layer.activation.apply(acc));
            }
            std::mem::swap(&mut x, &mut y);
        }
        x.iter().map(|v| *v as f32).collect()
    }

    /// Forward pass to a single scalar; panics unless the output is 1-wide.
    pub fn forward_scalar(&self, input_a: &[f32], input_b: &[f32]) -> f64 {
        assert_eq!(self.output_dim(), 1, "scorer MLP must output one logit");
        debug_assert_eq!(input_a.len() + input_b.len(), self.input_dim());
        let mut x: Vec<f64> = Vec::with_capacity(self.input_dim());
        x.extend(input_a.iter().map(|v| *v as f64));
        x.extend(input_b.iter().map(|v| *v as f64));
        let mut y = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            y.clear();
            y.reserve(layer.rows);
            for r in 0..layer.rows {
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                let mut acc = layer.bias[r] as f64;
                for (w, v) in row.iter().zip(&x) {
                    acc += *w as f64 * *v;
                }
                y.push(layer.activation.apply(acc));
            }
            if li + 1 == self.layers.len() {
                return y[0];
            }
            std::mem::swap(&mut x, &mut y);
        }
        unreachable!("MlpWeights is never empty")
    }
}

/// Uniform Glorot-style random MLP for tests and synthetic weight files.
pub fn random_mlp(dims: &[usize], hidden_activation: Activation, seed: u64) -> MlpWeights {
    assert!(dims.len() >= 2, "need at least input and output dims");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for i in 1..dims.len() {
        let (rows, cols) = (dims[i], dims[i - 1]);
        let a = (6.0 / (rows + cols) as f64).sqrt() as f32;
        let weights = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
        let bias = (0..rows).map(|_| rng.random_range(-0.1..0.1)).collect();
        let act = if i + 1 == dims.len() { Activation::Identity } else { hidden_activation };
        layers.push(Layer::new(rows, cols, weights, bias, act).unwrap());
    }
    MlpWeights::new(layers).unwrap()
}

/// Scores how well a 3D point descriptor matches a 2D patch descriptor.
/// Higher is better. `null_logit` competes as the "not in this image" class.
pub trait PairwiseScorer: Sync {
    fn score(&self, point_desc: &[f32], patch_desc: &[f32]) -> f64;
    fn null_logit(&self) -> f64;
}

/// Learned classifier: a pairwise MLP over the concatenated descriptors plus
/// a bias logit for the null class.
#[derive(Debug, Clone)]
pub struct PatchClassifier {
    pub pairwise: MlpWeights,
    pub null_logit: f64,
}

impl PairwiseScorer for PatchClassifier {
    fn score(&self, point_desc: &[f32], patch_desc: &[f32]) -> f64 {
        self.pairwise.forward_scalar(point_desc, patch_desc)
    }

    fn null_logit(&self) -> f64 {
        self.null_logit
    }
}

/// Closed-form scorer equal to [`neg_l1_mlp`]: `-scale * |p - q|_1`.
/// Used by the synthetic oracle; exercises the same classify path without
/// paying for a 2n-wide matrix multiply per pair.
#[derive(Debug, Clone, Copy)]
pub struct NegL1Scorer {
    pub scale: f64,
    pub null_logit: f64,
}

impl PairwiseScorer for NegL1Scorer {
    fn score(&self, point_desc: &[f32], patch_desc: &[f32]) -> f64 {
        -self.scale * super::l1_distance(point_desc, patch_desc)
    }

    fn null_logit(&self) -> f64 {
        self.null_logit
    }
}

/// Explicit two-layer ReLU network computing `-scale * |p - q|_1` for inputs
/// `concat(p, q)` of width `2 * dim`: the hidden layer produces
/// `relu(p - q)` and `relu(q - p)`, the output sums them with weight `-scale`.
pub fn neg_l1_mlp(dim: usize, scale: f32) -> MlpWeights {
    let mut w1 = vec![0.0f32; 2 * dim * 2 * dim];
    for i in 0..dim {
        // Row i: p_i - q_i.
        w1[i * 2 * dim + i] = 1.0;
        w1[i * 2 * dim + dim + i] = -1.0;
        // Row dim + i: q_i - p_i.
        w1[(dim + i) * 2 * dim + i] = -1.0;
        w1[(dim + i) * 2 * dim + dim + i] = 1.0;
    }
    let l1 = Layer::new(2 * dim, 2 * dim, w1, vec![0.0; 2 * dim], Activation::Relu).unwrap();
    let l2 = Layer::new(1, 2 * dim, vec![-scale; 2 * dim], vec![0.0], Activation::Identity)
        .unwrap();
    MlpWeights::new(vec![l1, l2]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn forward_matches_matrix_multiply_oracle() {
        // Independent route: nalgebra dense matrices in f64.
        use nalgebra::{DMatrix, DVector};
        let mlp = random_mlp(&[7, 11, 5], Activation::Relu, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let input: Vec<f32> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = mlp.forward(&input).unwrap();
            let mut x = DVector::from_iterator(7, input.iter().map(|v| *v as f64));
            for layer in mlp.layers() {
                let w = DMatrix::from_row_iterator(
                    layer.rows,
                    layer.cols,
                    layer.weights.iter().map(|v| *v as f64),
                );
                let b = DVector::from_iterator(layer.rows, layer.bias.iter().map(|v| *v as f64));
                x = w * x + b;
                if layer.activation == Activation::Relu {
                    x.apply(|v| *v = v.max(0.0));
                }
            }
            for (a, b) in got.iter().zip(x.iter()) {
                assert!((*a as f64 - b).abs() < 1e-6, "forward {a} vs oracle {b}");
            }
        }
    }

    #[test]
    fn dimension_chain_is_validated() {
        let l1 = Layer::new(4, 3, vec![0.0; 12], vec![0.0; 4], Activation::Relu).unwrap();
        let l2 = Layer::new(2, 5, vec![0.0; 10], vec![0.0; 2], Activation::Identity).unwrap();
        assert_eq!(
            MlpWeights::new(vec![l1, l2]).unwrap_err(),
            FeatureError::DimensionChainBroken { layer: 1, expected: 5, got: 4 }
        );
        assert_eq!(MlpWeights::new(vec![]).unwrap_err(), FeatureError::EmptyMlp);
    }

    #[test]
    fn layer_validates_shapes_and_finiteness() {
        assert!(matches!(
            Layer::new(2, 2, vec![0.0; 3], vec![0.0; 2], Activation::Relu),
            Err(FeatureError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            Layer::new(1, 1, vec![f32::INFINITY], vec![0.0], Activation::Relu),
            Err(FeatureError::NonFiniteWeights)
        ));
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let mlp = random_mlp(&[4, 2], Activation::Relu, 0);
        assert!(matches!(
            mlp.forward(&[0.0; 3]),
            Err(FeatureError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_weight_network_outputs_bias_path() {
        let l1 = Layer::new(3, 2, vec![0.0; 6], vec![1.0, -2.0, 0.5], Activation::Relu).unwrap();
        let l2 = Layer::new(1, 3, vec![1.0, 1.0, 1.0], vec![0.25], Activation::Identity).unwrap();
        let mlp = MlpWeights::new(vec![l1, l2]).unwrap();
        // relu([1, -2, 0.5]) = [1, 0, 0.5]; sum + 0.25 = 1.75.
        let out = mlp.forward(&[9.0, -9.0]).unwrap();
        assert_eq!(out, vec![1.75]);
    }

    #[test]
    fn neg_l1_network_equals_direct_scorer() {
        let dim = 16;
        let mlp = neg_l1_mlp(dim, 1.5);
        let classifier = PatchClassifier { pairwise: mlp, null_logit: -1.0 };
        let direct = NegL1Scorer { scale: 1.5, null_logit: -1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = classifier.score(&p, &q);
            let b = direct.score(&p, &q);
            assert!((a - b).abs() < 1e-6, "mlp {a} vs direct {b}");
        }
    }

    #[test]
    fn forward_scalar_matches_forward_on_concat() {
        let mlp = random_mlp(&[10, 8, 1], Activation::Relu, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let concat: Vec<f32> = a.iter().chain(b.iter()).copied().collect();
        let via_forward = mlp.forward(&concat).unwrap()[0] as f64;
        let via_scalar = mlp.forward_scalar(&a, &b);
        assert!((via_forward - via_scalar).abs() < 1e-6);
    }
}
