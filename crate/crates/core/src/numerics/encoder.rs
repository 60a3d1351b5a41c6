use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// One dense layer: `y = x · Wᵀ + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Layer {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Feed-forward encoder: tanh on every hidden layer, identity on the last.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    layers: Vec<Layer>,
}

/// Per-parameter partial derivatives, laid out exactly like [`EncoderParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    layers: Vec<Layer>,
}

/// Everything `encoder_backward` needs from the matching forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Matrix,
    /// Post-activation output of each layer; the last entry is the embedding.
    activations: Vec<Matrix>,
    dims: Vec<(usize, usize)>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.rows()
    }
}

fn layer_dims(layers: &[Layer]) -> Vec<(usize, usize)> {
    layers
        .iter()
        .map(|l| (l.output_dim(), l.input_dim()))
        .collect()
}

fn check_chain(layers: &[Layer]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::shape("encoder needs at least one layer"));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.bias.len() != l.output_dim() {
            return Err(Error::shape(format!(
                "layer {i}: bias length {} != output dim {}",
                l.bias.len(),
                l.output_dim()
            )));
        }
        if l.input_dim() == 0 || l.output_dim() == 0 {
            return Err(Error::shape(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].output_dim() != pair[1].input_dim() {
            return Err(Error::shape(format!(
                "layer {i} outputs {} but layer {} expects {}",
                pair[0].output_dim(),
                i + 1,
                pair[1].input_dim()
            )));
        }
    }
    Ok(())
}

macro_rules! layered_values {
    ($t:ty) => {
        impl $t {
            pub fn layers(&self) -> &[Layer] {
                &self.layers
            }

            /// Total number of scalar parameters.
            pub fn len(&self) -> usize {
                self.layers
                    .iter()
                    .map(|l| l.weight.as_slice().len() + l.bias.len())
                    .sum()
            }

            pub fn is_empty(&self) -> bool {
                self.len() == 0
            }

            /// Flat iteration order: per layer, weights row-major then bias.
            pub fn values(&self) -> impl Iterator<Item = &f64> {
                self.layers
                    .iter()
                    .flat_map(|l| l.weight.as_slice().iter().chain(l.bias.iter()))
            }

            pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
                self.layers.iter_mut().flat_map(|l| {
                    let Layer { weight, bias } = l;
                    weight.as_mut_slice().iter_mut().chain(bias.iter_mut())
                })
            }

            pub fn to_flat(&self) -> Vec<f64> {
                self.values().copied().collect()
            }

            pub fn dims(&self) -> Vec<(usize, usize)> {
                layer_dims(&self.layers)
            }

            pub fn is_finite(&self) -> bool {
                self.values().all(|v| v.is_finite())
            }
        }
    };
}

layered_values!(EncoderParams);
layered_values!(Gradients);

impl EncoderParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        check_chain(&layers)?;
        Ok(EncoderParams { layers })
    }

    /// Glorot-uniform weights, zero biases. `sizes` lists every width
    /// from input to embedding, e.g. `[16, 64, 64, 32]`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("encoder needs an input and an output size"));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out);
                for v in layer.weight.as_mut_slice() {
                    *v = rng.random_range(-limit..=limit);
                }
                layer
            })
            .collect();
        EncoderParams::new(layers)
    }

    /// Single linear layer with `weight = I`, `bias = 0`.
    pub fn identity(dim: usize) -> Self {
        EncoderParams {
            layers: vec![Layer {
                weight: Matrix::identity(dim),
                bias: vec![0.0; dim],
            }],
        }
    }

    /// Encoder whose output is `constant` for every input.
    pub fn constant(input_dim: usize, constant: &[f64]) -> Self {
        let mut layer = Layer::zeros(input_dim, constant.len());
        layer.bias.copy_from_slice(constant);
        EncoderParams {
            layers: vec![layer],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Widths from input to embedding.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    /// Mutable access to the parameter at a flat index.
    pub fn value_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            if idx < nw {
                return &mut l.weight.as_mut_slice()[idx];
            }
            idx -= nw;
            if idx < l.bias.len() {
                return &mut l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Overwrites every parameter from a flat slice in [`values`](Self::values) order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::shape(format!(
                "flat parameter vector has {} entries, encoder has {}",
                flat.len(),
                self.len()
            )));
        }
        for (p, &v) in self.values_mut().zip(flat) {
            *p = v;
        }
        Ok(())
    }
}

impl Gradients {
    pub fn check_congruent(&self, params: &EncoderParams) -> Result<()> {
        if self.dims() != params.dims() {
            return Err(Error::shape(format!(
                "gradient layout {:?} does not match encoder {:?}",
                self.dims(),
                params.dims()
            )));
        }
        Ok(())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape("adding gradients of different layouts"));
        }
        for (a, &b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Runs the encoder on a batch (one instance per row).
pub fn encoder_forward(params: &EncoderParams, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::shape(format!(
            "encoder expects {} input features, got {}",
            params.input_dim(),
            inputs.cols()
        )));
    }
    let last = params.layers.len() - 1;
    let mut activations = Vec::with_capacity(params.layers.len());
    for (i, layer) in params.layers.iter().enumerate() {
        let x = if i == 0 { inputs } else { &activations[i - 1] };
        let mut z = x.matmul_transposed(&layer.weight)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
                if i != last {
                    *v = v.tanh();
                }
            }
        }
        activations.push(z);
    }
    let embeddings = activations[last].clone();
    Ok((
        embeddings,
        ForwardCache {
            inputs: inputs.clone(),
            activations,
            dims: params.dims(),
        },
    ))
}

/// Exact reverse pass: maps `∂loss/∂embeddings` to `∂loss/∂params`.
pub fn encoder_backward(
    params: &EncoderParams,
    cache: &ForwardCache,
    d_embeddings: &Matrix,
) -> Result<Gradients> {
    if cache.dims != params.dims() {
        return Err(Error::shape("forward cache was produced by a different encoder"));
    }
    let out = &cache.activations[cache.activations.len() - 1];
    if d_embeddings.shape() != out.shape() {
        return Err(Error::shape(format!(
            "upstream gradient is {}x{}, embeddings are {}x{}",
            d_embeddings.rows(),
            d_embeddings.cols(),
            out.rows(),
            out.cols()
        )));
    }
    let mut grads = params.zeros_like();
    let last = params.layers.len() - 1;
    let mut delta = d_embeddings.clone();
    for i in (0..=last).rev() {
        if i != last {
            // tanh'(z) = 1 - tanh(z)²
            let a = &cache.activations[i];
            for (d, &y) in delta.as_mut_slice().iter_mut().zip(a.as_slice()) {
                *d *= 1.0 - y * y;
            }
        }
        let input = if i == 0 {
            &cache.inputs
        } else {
            &cache.activations[i - 1]
        };
        let g = &mut grads.layers[i];
        g.weight = delta.transposed_matmul(input)?;
        for r in delta.row_iter() {
            for (b, &d) in g.bias.iter_mut().zip(r) {
                *b += d;
            }
        }
        if i > 0 {
            delta = delta.matmul(&params.layers[i].weight)?;
        }
    }
    Ok(grads)
}

/// Central-difference gradient estimate, one parameter at a time.
pub fn finite_diff_gradient<F>(loss_fn: F, params: &EncoderParams, h: f64) -> Result<Gradients>
where
    F: Fn(&EncoderParams) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::numeric(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = params.clone();
    let base = probe.to_flat();
    let mut grads = params.zeros_like();
    let mut out = Vec::with_capacity(base.len());
    for (idx, &orig) in base.iter().enumerate() {
        let mut eval = |v: f64| -> Result<f64> {
            *probe.value_mut(idx) = v;
            let l = loss_fn(&probe);
            if !l.is_finite() {
                return Err(Error::numeric(format!(
                    "loss is {l} at parameter {idx} perturbed to {v}"
                )));
            }
            Ok(l)
        };
        let plus = eval(orig + h)?;
        let minus = eval(orig - h)?;
        eval(orig)?;
        out.push((plus - minus) / (2.0 * h));
    }
    for (g, v) in grads.values_mut().zip(out) {
        *g = v;
    }
    Ok(grads)
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over all parameters.
pub fn max_relative_error(a: &Gradients, b: &Gradients, floor: f64) -> f64 {
    a.values()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_encoder_passes_input_through() {
        let params = EncoderParams::identity(2);
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let (e, _) = encoder_forward(&params, &x).unwrap();
        assert_eq!(e, x);
    }

    #[test]
    fn zero_weights_give_zero_embedding() {
        let mut params = EncoderParams::init(&[3, 5, 2], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for v in params.values_mut() {
            *v = 0.0;
        }
        let x = random_matrix(4, 3, &mut ChaCha8Rng::seed_from_u64(2));
        let (e, _) = encoder_forward(&params, &x).unwrap();
        assert!(e.as_slice().iter().all(|&v| v == 0.0));
    }

    /// Straight scalar loops, no matrix helpers.
    fn scalar_forward(params: &EncoderParams, x: &Matrix) -> Vec<Vec<f64>> {
        let n = params.layers().len();
        (0..x.rows())
            .map(|r| {
                let mut a: Vec<f64> = x.row(r).to_vec();
                for (i, l) in params.layers().iter().enumerate() {
                    let mut z = vec![0.0; l.output_dim()];
                    for o in 0..l.output_dim() {
                        let mut s = l.bias[o];
                        for k in 0..l.input_dim() {
                            s += l.weight[(o, k)] * a[k];
                        }
                        z[o] = if i + 1 < n { s.tanh() } else { s };
                    }
                    a = z;
                }
                a
            })
            .collect()
    }

    #[test]
    fn forward_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = EncoderParams::init(&[4, 6, 3], &mut rng).unwrap();
        let x = random_matrix(5, 4, &mut rng);
        let (e, _) = encoder_forward(&params, &x).unwrap();
        let oracle = scalar_forward(&params, &x);
        for (r, row) in oracle.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((e[(r, c)] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let params = EncoderParams::identity(3);
        assert!(matches!(
            encoder_forward(&params, &Matrix::zeros(2, 4)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = EncoderParams::init(&[3, 4, 2], &mut rng).unwrap();
        let x = random_matrix(6, 3, &mut rng);
        let (_, cache) = encoder_forward(&params, &x).unwrap();
        let g = encoder_backward(&params, &cache, &Matrix::zeros(6, 2)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = EncoderParams::init(&[3, 2], &mut rng).unwrap();
        let x = random_matrix(5, 3, &mut rng);
        let d = random_matrix(5, 2, &mut rng);
        let (_, cache) = encoder_forward(&params, &x).unwrap();
        let g = encoder_backward(&params, &cache, &d).unwrap();
        let expected = d.transpose().matmul(&x).unwrap();
        assert!(g.layers()[0].weight.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = EncoderParams::init(&[3, 4, 2], &mut rng).unwrap();
        let b = EncoderParams::init(&[3, 5, 2], &mut rng).unwrap();
        let (_, cache) = encoder_forward(&a, &Matrix::zeros(2, 3)).unwrap();
        assert!(encoder_backward(&b, &cache, &Matrix::zeros(2, 2)).is_err());
        assert!(encoder_backward(&a, &cache, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let params = EncoderParams::init(&[4, 5, 5, 3], &mut rng).unwrap();
            let x = random_matrix(6, 4, &mut rng);
            let target = random_matrix(6, 3, &mut rng);
            // loss = Σ sin(e) · t
            let loss = |p: &EncoderParams| {
                let (e, _) = encoder_forward(p, &x).unwrap();
                e.as_slice()
                    .iter()
                    .zip(target.as_slice())
                    .map(|(a, t)| a.sin() * t)
                    .sum::<f64>()
            };
            let (e, cache) = encoder_forward(&params, &x).unwrap();
            let mut d = e.map(f64::cos);
            for (v, t) in d.as_mut_slice().iter_mut().zip(target.as_slice()) {
                *v *= t;
            }
            let analytic = encoder_backward(&params, &cache, &d).unwrap();
            let numeric = finite_diff_gradient(loss, &params, 1e-5).unwrap();
            let err = max_relative_error(&analytic, &numeric, 1e-6);
            assert!(err < 1e-6, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn finite_diff_of_sum_is_one() {
        let params = EncoderParams::init(&[2, 3], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = finite_diff_gradient(|p| p.values().sum(), &params, 1e-4).unwrap();
        assert!(g.values().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn finite_diff_of_half_square_norm_is_params() {
        let params = EncoderParams::init(&[3, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let g = finite_diff_gradient(|p| 0.5 * p.values().map(|v| v * v).sum::<f64>(), &params, 1e-5)
            .unwrap();
        for (gv, pv) in g.values().zip(params.values()) {
            assert!((gv - pv).abs() < 1e-7);
        }
    }

    #[test]
    fn finite_diff_rejects_bad_step_and_nan() {
        let params = EncoderParams::identity(2);
        assert!(finite_diff_gradient(|_| 0.0, &params, 0.0).is_err());
        assert!(matches!(
            finite_diff_gradient(|_| f64::NAN, &params, 1e-3),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = EncoderParams::init(&[4, 8, 2], &mut rng).unwrap();
        let x = random_matrix(3, 4, &mut rng);
        let a = encoder_forward(&params, &x).unwrap().0;
        let b = encoder_forward(&params, &x).unwrap().0;
        assert_eq!(a.as_slice(), b.as_slice());
    }
}
