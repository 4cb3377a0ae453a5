use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
}

/// Layer widths of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub d_in: usize,
    pub d_phi: [usize; 2],
    pub d_h: usize,
}

impl ModelShape {
    pub fn new(d_in: usize, d_phi: [usize; 2], d_h: usize) -> Result<Self> {
        if d_in == 0 || d_phi.contains(&0) || d_h == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(Self { d_in, d_phi, d_h })
    }

    pub fn latent_dim(&self) -> usize {
        self.d_phi[1]
    }
}

/// Affine map `y = W x + b` with `W` stored row-major as `outputs x inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform weights on `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`, zero bias.
    fn he_uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    pub(crate) fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *slot = self.bias[o] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulate parameter gradients into `grad` and, if requested, the
    /// input gradient into `d_input`.
    #[inline]
    pub(crate) fn backprop(&self, input: &[f64], d_out: &[f64], grad: &mut Linear, d_input: Option<&mut [f64]>) {
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let gw = &mut grad.weight[o * self.inputs..(o + 1) * self.inputs];
            for (w, &x) in gw.iter_mut().zip(input) {
                *w += g * x;
            }
        }
        if let Some(d_in) = d_input {
            for (o, &g) in d_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                for (d, &wv) in d_in.iter_mut().zip(w) {
                    *d += g * wv;
                }
            }
        }
    }
}

/// One outcome head: hidden affine + activation + dropout, then a scalar output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub hidden: Linear,
    pub output: Linear,
}

/// Shared encoder and two outcome heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfrParams {
    pub encoder: [Linear; 2],
    pub heads: [Head; 2],
    pub dropout_rate: f64,
    pub activation: Activation,
    /// Squash the final encoder layer with `tanh` instead of the activation.
    pub bounded_latent: bool,
}

/// Gradients share the parameter layout.
pub type CfrGradients = CfrParams;

impl CfrParams {
    /// He-uniform initialization from a seed.
    pub fn init(shape: ModelShape, dropout_rate: f64, bounded_latent: bool, seed: u64) -> Result<Self> {
        check_dropout(dropout_rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [d1, d2] = shape.d_phi;
        let encoder = [
            Linear::he_uniform(shape.d_in, d1, &mut rng),
            Linear::he_uniform(d1, d2, &mut rng),
        ];
        let head = |rng: &mut ChaCha8Rng| Head {
            hidden: Linear::he_uniform(d2, shape.d_h, rng),
            output: Linear::he_uniform(shape.d_h, 1, rng),
        };
        let heads = [head(&mut rng), head(&mut rng)];
        Ok(Self {
            encoder,
            heads,
            dropout_rate,
            activation: Activation::Elu,
            bounded_latent,
        })
    }

    /// All-zero parameters with the given shape.
    pub fn zeros(shape: ModelShape, dropout_rate: f64, bounded_latent: bool) -> Self {
        let [d1, d2] = shape.d_phi;
        let head = || Head {
            hidden: Linear::zeros(d2, shape.d_h),
            output: Linear::zeros(shape.d_h, 1),
        };
        Self {
            encoder: [Linear::zeros(shape.d_in, d1), Linear::zeros(d1, d2)],
            heads: [head(), head()],
            dropout_rate,
            activation: Activation::Elu,
            bounded_latent,
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            d_in: self.encoder[0].inputs,
            d_phi: [self.encoder[0].outputs, self.encoder[1].outputs],
            d_h: self.heads[0].hidden.outputs,
        }
    }

    /// A zero gradient container of the same shape.
    pub fn zeros_like(&self) -> CfrGradients {
        Self::zeros(self.shape(), self.dropout_rate, self.bounded_latent)
    }

    fn layers(&self) -> [&Linear; 6] {
        [
            &self.encoder[0],
            &self.encoder[1],
            &self.heads[0].hidden,
            &self.heads[0].output,
            &self.heads[1].hidden,
            &self.heads[1].output,
        ]
    }

    fn layers_mut(&mut self) -> [&mut Linear; 6] {
        let [e0, e1] = &mut self.encoder;
        let [h0, h1] = &mut self.heads;
        [
            e0,
            e1,
            &mut h0.hidden,
            &mut h0.output,
            &mut h1.hidden,
            &mut h1.output,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters in a fixed order: for each layer (encoder 1, encoder 2,
    /// head 0 hidden, head 0 output, head 1 hidden, head 1 output) the
    /// weights then the biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`CfrParams::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut pos = 0;
        for l in self.layers_mut() {
            for buf in [&mut l.weight, &mut l.bias] {
                let n = buf.len();
                buf.copy_from_slice(&flat[pos..pos + n]);
                pos += n;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers()
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numerical("parameters contain NaN or infinity".into()))
        }
    }

    /// `self += s * other` over every tensor.
    pub fn add_scaled(&mut self, s: f64, other: &CfrParams) {
        for (a, b) in self.layers_mut().into_iter().zip(other.layers()) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += s * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += s * y;
            }
        }
    }

    fn validate(&self) -> Result<()> {
        check_dropout(self.dropout_rate)?;
        let chain = [
            (&self.encoder[0], None),
            (&self.encoder[1], Some(self.encoder[0].outputs)),
            (&self.heads[0].hidden, Some(self.encoder[1].outputs)),
            (&self.heads[1].hidden, Some(self.encoder[1].outputs)),
            (&self.heads[0].output, Some(self.heads[0].hidden.outputs)),
            (&self.heads[1].output, Some(self.heads[1].hidden.outputs)),
        ];
        for (l, expected_in) in chain {
            if l.weight.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::invalid("tensor size does not match its declared shape"));
            }
            if expected_in.is_some_and(|e| e != l.inputs) || l.inputs == 0 || l.outputs == 0 {
                return Err(Error::invalid("layer shapes do not chain"));
            }
        }
        if self.heads[0].output.outputs != 1 || self.heads[1].output.outputs != 1 {
            return Err(Error::invalid("heads must produce a scalar"));
        }
        if self.heads[0].hidden.outputs != self.heads[1].hidden.outputs {
            return Err(Error::invalid("heads must share their hidden width"));
        }
        self.check_finite()
    }
}

fn check_dropout(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// A named tensor in a checkpoint; `shape` is `[rows, cols]` for weights and
/// `[len]` for biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Versioned on-disk form of [`CfrParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub bounded_latent: bool,
    pub tensors: Vec<NamedTensor>,
}

const LAYER_NAMES: [&str; 6] = [
    "encoder.0",
    "encoder.1",
    "head0.hidden",
    "head0.output",
    "head1.hidden",
    "head1.output",
];

impl Checkpoint {
    pub fn from_params(params: &CfrParams) -> Self {
        let mut tensors = Vec::new();
        for (name, l) in LAYER_NAMES.iter().zip(params.layers()) {
            tensors.push(NamedTensor {
                name: format!("{name}.weight"),
                shape: vec![l.outputs, l.inputs],
                values: l.weight.clone(),
            });
            tensors.push(NamedTensor {
                name: format!("{name}.bias"),
                shape: vec![l.outputs],
                values: l.bias.clone(),
            });
        }
        Self {
            format_version: CHECKPOINT_VERSION,
            dropout_rate: params.dropout_rate,
            activation: params.activation,
            bounded_latent: params.bounded_latent,
            tensors,
        }
    }

    pub fn into_params(self) -> Result<CfrParams> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.format_version
            )));
        }
        let find = |name: &str| {
            self.tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::invalid(format!("checkpoint is missing tensor {name}")))
        };
        let mut layers = Vec::with_capacity(6);
        for name in LAYER_NAMES {
            let w = find(&format!("{name}.weight"))?;
            let b = find(&format!("{name}.bias"))?;
            let (outputs, inputs) = match w.shape[..] {
                [r, c] => (r, c),
                _ => return Err(Error::invalid(format!("{name}.weight must be 2-D"))),
            };
            if b.shape != [outputs] {
                return Err(Error::invalid(format!("{name}.bias has the wrong shape")));
            }
            layers.push(Linear {
                inputs,
                outputs,
                weight: w.values.clone(),
                bias: b.values.clone(),
            });
        }
        let mut it = layers.into_iter();
        let mut next = || it.next().expect("six layers");
        let params = CfrParams {
            encoder: [next(), next()],
            heads: [
                Head {
                    hidden: next(),
                    output: next(),
                },
                Head {
                    hidden: next(),
                    output: next(),
                },
            ],
            dropout_rate: self.dropout_rate,
            activation: self.activation,
            bounded_latent: self.bounded_latent,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
