//! Small fully connected network with ReLU hidden layers and sigmoid outputs,
//! trained with Adam. Used for the action-value, dynamics and distilled
//! state-value models.

use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const MAGIC: &[u8] = b"TOWMLP\n";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum WeightsError {
    #[error("weight file i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    Version(u32),
    #[error("malformed layer manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `inputs × outputs`
    pub weights: Array2<f32>,
    pub bias: Array1<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f32>>,
    /// Sigmoid outputs of the last layer.
    pub output: Array2<f32>,
}

pub struct Gradients {
    layers: Vec<(Array2<f32>, Array1<f32>)>,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Mlp {
    /// He-initialized network with the given layer widths, e.g.
    /// `[72, 256, 128, 64, 4]`.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output widths");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let std = (2.0 / w[0] as f32).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                Dense {
                    weights: Array2::from_shape_fn((w[0], w[1]), |_| normal.sample(rng)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").weights.ncols()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.dim()).collect()
    }

    pub fn forward(&self, x: ArrayView2<f32>) -> Array2<f32> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weights) + &layer.bias;
            if i == last {
                z.mapv_inplace(sigmoid);
            } else {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<f32>) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weights) + &layer.bias;
            if i == last {
                z.mapv_inplace(sigmoid);
            } else {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut h, z));
        }
        ForwardCache { inputs, output: h }
    }

    /// Backpropagates `grad_logits`, the loss gradient with respect to the
    /// pre-sigmoid outputs.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: Array2<f32>) -> Gradients {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut delta = grad_logits;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            layers.push((gw, gb));
            if i > 0 {
                let mut prev = delta.dot(&layer.weights.t());
                // ReLU derivative: the cached input to layer i is the post-ReLU
                // activation of layer i-1.
                prev.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        layers.reverse();
        Gradients { layers }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), WeightsError> {
        w.write_all(MAGIC)?;
        let shapes: Vec<String> = self
            .shapes()
            .iter()
            .map(|(i, o)| format!("{i}x{o}"))
            .collect();
        writeln!(
            w,
            "version {FORMAT_VERSION} layers {} shapes {}",
            self.layers.len(),
            shapes.join(",")
        )?;
        for layer in &self.layers {
            for v in layer.weights.iter().chain(layer.bias.iter()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, WeightsError> {
        let mut magic = [0u8; MAGIC.len()];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(WeightsError::BadMagic);
        }
        let mut header = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            r.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            header.push(byte[0]);
        }
        let header = String::from_utf8(header).map_err(|e| WeightsError::Manifest(e.to_string()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let bad = || WeightsError::Manifest(header.clone());
        if parts.len() != 6 || parts[0] != "version" || parts[2] != "layers" || parts[4] != "shapes" {
            return Err(bad());
        }
        let version: u32 = parts[1].parse().map_err(|_| bad())?;
        if version != FORMAT_VERSION {
            return Err(WeightsError::Version(version));
        }
        let count: usize = parts[3].parse().map_err(|_| bad())?;
        let shapes = parts[5]
            .split(',')
            .map(|s| {
                let (i, o) = s.split_once('x').ok_or_else(bad)?;
                Ok((i.parse().map_err(|_| bad())?, o.parse().map_err(|_| bad())?))
            })
            .collect::<Result<Vec<(usize, usize)>, WeightsError>>()?;
        if shapes.len() != count || count == 0 {
            return Err(bad());
        }
        let mut read_f32s = |n: usize| -> Result<Vec<f32>, WeightsError> {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect())
        };
        let mut layers = Vec::with_capacity(count);
        for (i, o) in shapes {
            let weights = Array2::from_shape_vec((i, o), read_f32s(i * o)?)
                .map_err(|e| WeightsError::Manifest(e.to_string()))?;
            let bias = Array1::from_vec(read_f32s(o)?);
            layers.push(Dense { weights, bias });
        }
        Ok(Mlp { layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WeightsError> {
        let file = std::fs::File::create(path)?;
        self.write_to(io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WeightsError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(io::BufReader::new(file))
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f32,
    beta1: f32,
    beta2: f32,
    epsilon: f32,
    step: i32,
    moments: Vec<(Array2<f32>, Array1<f32>, Array2<f32>, Array1<f32>)>,
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f32) -> Self {
        let moments = net
            .layers
            .iter()
            .map(|l| {
                (
                    Array2::zeros(l.weights.dim()),
                    Array1::zeros(l.bias.len()),
                    Array2::zeros(l.weights.dim()),
                    Array1::zeros(l.bias.len()),
                )
            })
            .collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments,
        }
    }

    pub fn apply(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.learning_rate;
        for ((layer, (gw, gb)), (mw, mb, vw, vb)) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.moments.iter_mut())
        {
            let update = |p: &mut f32, g: f32, m: &mut f32, v: &mut f32| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            ndarray::Zip::from(&mut layer.weights)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

/// Mean squared error over sigmoid outputs: returns the loss and the gradient
/// with respect to the logits. `mask` zeroes components that carry no target.
pub fn mse_logit_grad(output: &Array2<f32>, target: &Array2<f32>, mask: Option<&Array2<f32>>) -> (f32, Array2<f32>) {
    let n = output.nrows().max(1) as f32;
    let mut grad = Array2::zeros(output.dim());
    let mut loss = 0.0;
    ndarray::Zip::indexed(&mut grad)
        .and(output)
        .and(target)
        .for_each(|(r, c), g, &y, &t| {
            let w = mask.map_or(1.0, |m| m[(r, c)]);
            let e = (y - t) * w;
            loss += e * e;
            *g = 2.0 * e * y * (1.0 - y) / n;
        });
    (loss / n, grad)
}

/// Binary cross-entropy over sigmoid outputs.
pub fn bce_logit_grad(output: &Array2<f32>, target: &Array2<f32>) -> (f32, Array2<f32>) {
    let n = output.nrows().max(1) as f32;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(output.dim());
    ndarray::Zip::from(&mut grad)
        .and(output)
        .and(target)
        .for_each(|g, &y, &t| {
            let y = y.clamp(1e-7, 1.0 - 1e-7);
            loss -= t * y.ln() + (1.0 - t) * (1.0 - y).ln();
            *g = (y - t) / n;
        });
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn outputs_are_probabilities() {
        let net = Mlp::new(&[6, 16, 8, 3], &mut ChaCha8Rng::seed_from_u64(0));
        let x = Array2::from_shape_fn((5, 6), |(i, j)| (i * 7 + j) as f32 * 10.0 - 100.0);
        let y = net.forward(x.view());
        assert_eq!(y.dim(), (5, 3));
        assert!(y.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[3, 5, 4, 2], &mut rng);
        let x = array![[0.3f32, -0.2, 0.9], [0.1, 0.4, -0.5]];
        let t = array![[0.2f32, 0.9], [0.7, 0.1]];
        let loss_of = |n: &Mlp| mse_logit_grad(&n.forward(x.view()), &t, None).0;
        let cache = net.forward_cached(x.view());
        let (_, g) = mse_logit_grad(&cache.output, &t, None);
        let grads = net.backward(&cache, g);
        let h = 1e-3f32;
        for (li, layer) in net.layers.iter().enumerate() {
            for idx in [(0, 0), (layer.weights.nrows() - 1, layer.weights.ncols() - 1)] {
                let mut plus = net.clone();
                plus.layers[li].weights[idx] += h;
                let mut minus = net.clone();
                minus.layers[li].weights[idx] -= h;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let analytic = grads.layers[li].0[idx];
                assert!((numeric - analytic).abs() < 2e-3, "layer {li} {idx:?}: {numeric} vs {analytic}");
            }
        }
    }

    #[test]
    fn adam_fits_a_tiny_mapping() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Mlp::new(&[2, 16, 1], &mut rng);
        let mut adam = Adam::new(&net, 1e-2);
        let x = array![[0.0f32, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let t = array![[0.1f32], [0.9], [0.9], [0.1]];
        let mut last = f32::MAX;
        for _ in 0..2000 {
            let cache = net.forward_cached(x.view());
            let (loss, g) = mse_logit_grad(&cache.output, &t, None);
            let grads = net.backward(&cache, g);
            adam.apply(&mut net, &grads);
            last = loss;
        }
        assert!(last < 1e-3, "loss {last}");
    }

    #[test]
    fn weight_file_round_trips_bit_exactly() {
        let net = Mlp::new(&[4, 3, 2], &mut ChaCha8Rng::seed_from_u64(2));
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"TOWMLP\nversion 1 layers 2 shapes 4x3,3x2\n"));
        let back = Mlp::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(matches!(Mlp::read_from(&b"NOTMLP\nxx"[..]), Err(WeightsError::BadMagic)));
        let mut buf = Vec::new();
        Mlp::new(&[2, 2], &mut ChaCha8Rng::seed_from_u64(0)).write_to(&mut buf).unwrap();
        let pos = buf.windows(9).position(|w| w == b"version 1").unwrap();
        buf[pos + 8] = b'9';
        assert!(matches!(Mlp::read_from(buf.as_slice()), Err(WeightsError::Version(9))));
    }
}
