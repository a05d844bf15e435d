//! Dense feed-forward networks over a [`ParamSet`]. A network is a set of
//! parameter indices plus widths, so the same structure can run against its
//! online parameters or an EMA target copy.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::tape::{NodeId, Tape};
use super::{ParamSet, Tensor};
use crate::error::{ArsqError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// layer normalization (learnable scale/shift, eps 1e-5) followed by SiLU
    SiluLayerNorm,
}

#[derive(Debug, Clone)]
pub struct DenseNetworkConfig {
    pub input_width: usize,
    pub hidden_widths: Vec<usize>,
    pub output_width: usize,
    pub activation: Activation,
    pub use_bias: bool,
    /// Apply the activation after the output layer too (used for shared
    /// trunks whose output feeds further layers).
    pub activate_output: bool,
    /// Zero the output layer so a fresh network emits zeros (used for
    /// advantage heads and value outputs to start from a uniform policy).
    pub zero_init_output: bool,
}

impl DenseNetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.output_width == 0 {
            return Err(ArsqError::InvalidConfig("network widths must be positive".into()));
        }
        if self.hidden_widths.contains(&0) {
            return Err(ArsqError::InvalidConfig("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LinearRef {
    w: usize,
    b: Option<usize>,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone)]
struct NormRef {
    gain: usize,
    shift: usize,
}

/// Dense MLP: linear layers with the configured activation after each hidden
/// layer (and optionally after the output layer).
#[derive(Debug, Clone)]
pub struct Mlp {
    config: DenseNetworkConfig,
    layers: Vec<LinearRef>,
    norms: Vec<Option<NormRef>>,
}

fn init_linear(
    params: &mut ParamSet,
    name: &str,
    rows: usize,
    cols: usize,
    use_bias: bool,
    zero: bool,
    rng: &mut ChaCha12Rng,
) -> LinearRef {
    let bound = 1.0 / (cols as f64).sqrt();
    let data: Vec<f64> = if zero {
        vec![0.0; rows * cols]
    } else {
        (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
    };
    let w = params.add(format!("{name}/w"), Tensor::new(vec![rows, cols], data).unwrap());
    let b = use_bias.then(|| params.add(format!("{name}/b"), Tensor::zeros(vec![rows])));
    LinearRef { w, b, rows, cols }
}

impl Mlp {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        config: DenseNetworkConfig,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let mut in_w = config.input_width;
        for (i, &h) in config.hidden_widths.iter().enumerate() {
            layers.push(init_linear(
                params,
                &format!("{prefix}/h{i}"),
                h,
                in_w,
                config.use_bias,
                false,
                rng,
            ));
            norms.push(make_norm(params, &format!("{prefix}/h{i}"), h, &config));
            in_w = h;
        }
        layers.push(init_linear(
            params,
            &format!("{prefix}/out"),
            config.output_width,
            in_w,
            config.use_bias,
            config.zero_init_output,
            rng,
        ));
        norms.push(if config.activate_output {
            make_norm(params, &format!("{prefix}/out"), config.output_width, &config)
        } else {
            None
        });
        Ok(Self {
            config,
            layers,
            norms,
        })
    }

    pub fn config(&self) -> &DenseNetworkConfig {
        &self.config
    }

    fn is_activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.config.activate_output
    }

    /// Graph-recording forward pass.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, input: NodeId) -> Result<NodeId> {
        if tape.value(input).len() != self.config.input_width {
            return Err(ArsqError::ShapeMismatch(format!(
                "input length {} != configured width {}",
                tape.value(input).len(),
                self.config.input_width
            )));
        }
        let mut x = input;
        for (i, lin) in self.layers.iter().enumerate() {
            let w = tape.param(params, lin.w);
            x = tape.matvec(w, x, lin.rows, lin.cols)?;
            if let Some(b) = lin.b {
                let bn = tape.param(params, b);
                x = tape.add(x, bn)?;
            }
            if self.is_activated(i) {
                x = match (self.config.activation, &self.norms[i]) {
                    (Activation::Tanh, _) => tape.tanh(x),
                    (Activation::SiluLayerNorm, Some(n)) => {
                        let gain = tape.param(params, n.gain);
                        let shift = tape.param(params, n.shift);
                        let y = tape.layer_norm(x, gain, shift)?;
                        tape.silu(y)
                    }
                    (Activation::SiluLayerNorm, None) => unreachable!(),
                };
            }
        }
        Ok(x)
    }

    /// Plain evaluation without building a graph; must match `forward`
    /// bit for bit.
    pub fn eval(&self, params: &ParamSet, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.config.input_width {
            return Err(ArsqError::ShapeMismatch(format!(
                "input length {} != configured width {}",
                input.len(),
                self.config.input_width
            )));
        }
        let mut x = input.to_vec();
        for (i, lin) in self.layers.iter().enumerate() {
            x = eval_linear(params, lin, &x);
            if self.is_activated(i) {
                match (self.config.activation, &self.norms[i]) {
                    (Activation::Tanh, _) => {
                        for v in &mut x {
                            *v = v.tanh();
                        }
                    }
                    (Activation::SiluLayerNorm, Some(n)) => {
                        let mean = x.iter().sum::<f64>() / x.len() as f64;
                        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
                            / x.len() as f64;
                        let inv_std = 1.0 / (var + 1e-5).sqrt();
                        let gain = params.data(n.gain);
                        let shift = params.data(n.shift);
                        for (j, v) in x.iter_mut().enumerate() {
                            let y = (*v - mean) * inv_std * gain[j] + shift[j];
                            *v = y * (1.0 / (1.0 + (-y).exp()));
                        }
                    }
                    (Activation::SiluLayerNorm, None) => unreachable!(),
                }
            }
        }
        Ok(x)
    }
}

fn make_norm(
    params: &mut ParamSet,
    prefix: &str,
    width: usize,
    config: &DenseNetworkConfig,
) -> Option<NormRef> {
    (config.activation == Activation::SiluLayerNorm).then(|| NormRef {
        gain: params.add(
            format!("{prefix}/ln_gain"),
            Tensor::new(vec![width], vec![1.0; width]).unwrap(),
        ),
        shift: params.add(format!("{prefix}/ln_shift"), Tensor::zeros(vec![width])),
    })
}

fn eval_linear(params: &ParamSet, lin: &LinearRef, x: &[f64]) -> Vec<f64> {
    let w = params.data(lin.w);
    let mut y = vec![0.0; lin.rows];
    for (r, out) in y.iter_mut().enumerate() {
        let row = &w[r * lin.cols..(r + 1) * lin.cols];
        *out = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
    if let Some(b) = lin.b {
        for (out, bv) in y.iter_mut().zip(params.data(b)) {
            *out += bv;
        }
    }
    y
}
