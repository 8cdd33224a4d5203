//! A small layered network built from per-pixel channel mixing, reaction-
//! diffusion layers and ReLU, trained with softmax cross-entropy and AdaGrad.

mod config;
mod data;
mod loss;
mod optim;
mod train;

pub use config::TrainConfig;
pub use data::{
    gaussian, gen_synthetic, random_field, rng_from_seed, uniform, LabeledExample, Labels,
};
pub use loss::softmax_xent;
pub use optim::AdaGradState;
pub use train::{evaluate_accuracy, pointwise_argmax_accuracy, train, TrainOptions, TrainReport};

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Result, VrdError};
use crate::field::{inner_product_matrix, Field};
use crate::linalg::Mat;
use crate::vrd::{vrd_backward, vrd_forward, VrdCache, VrdParams};

/// Layer descriptor as written in architecture strings (`mix:16`, `vrd:8`, `relu`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    ChannelMix(usize),
    Vrd(usize),
    Relu,
}

impl FromStr for LayerKind {
    type Err = VrdError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let width = |v: &str| -> Result<usize> {
            match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(VrdError::invalid(format!(
                    "bad channel count in layer `{s}`"
                ))),
            }
        };
        match s.split_once(':') {
            Some(("mix", n)) => Ok(LayerKind::ChannelMix(width(n)?)),
            Some(("vrd", n)) => Ok(LayerKind::Vrd(width(n)?)),
            None if s == "relu" => Ok(LayerKind::Relu),
            _ => Err(VrdError::invalid(format!("unknown layer descriptor `{s}`"))),
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::ChannelMix(n) => write!(f, "mix:{n}"),
            LayerKind::Vrd(n) => write!(f, "vrd:{n}"),
            LayerKind::Relu => write!(f, "relu"),
        }
    }
}

/// Parses a comma-separated architecture such as `mix:8,vrd:8,relu,mix:2`.
pub fn parse_arch(s: &str) -> Result<Vec<LayerKind>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `out(x) = weight · s(x) + bias`.
    ChannelMix {
        weight: Mat,
        bias: Vec<f64>,
    },
    Vrd(VrdParams),
    Relu,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::ChannelMix { weight, .. } => LayerKind::ChannelMix(weight.rows()),
            Layer::Vrd(p) => LayerKind::Vrd(p.n_out),
            Layer::Relu => LayerKind::Relu,
        }
    }

    fn in_channels(&self) -> Option<usize> {
        match self {
            Layer::ChannelMix { weight, .. } => Some(weight.cols()),
            Layer::Vrd(p) => Some(p.n_in),
            Layer::Relu => None,
        }
    }

    fn out_channels(&self, input: usize) -> usize {
        match self {
            Layer::ChannelMix { weight, .. } => weight.rows(),
            Layer::Vrd(p) => p.n_out,
            Layer::Relu => input,
        }
    }

    pub fn param_len(&self) -> usize {
        match self {
            Layer::ChannelMix { weight, bias } => weight.data().len() + bias.len(),
            Layer::Vrd(p) => p.len(),
            Layer::Relu => 0,
        }
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        match self {
            Layer::ChannelMix { weight, bias } => {
                out.extend_from_slice(weight.data());
                out.extend_from_slice(bias);
            }
            Layer::Vrd(p) => out.extend(p.to_flat()),
            Layer::Relu => {}
        }
    }

    fn read_params(&mut self, flat: &[f64]) -> Result<()> {
        match self {
            Layer::ChannelMix { weight, bias } => {
                let n = weight.data().len();
                weight.data_mut().copy_from_slice(&flat[..n]);
                bias.copy_from_slice(&flat[n..]);
            }
            Layer::Vrd(p) => *p = VrdParams::from_flat(p.n_in, p.n_out, flat)?,
            Layer::Relu => {}
        }
        Ok(())
    }
}

/// Per-layer state saved by [`Network::forward`].
#[derive(Debug, Clone)]
pub enum LayerCache {
    ChannelMix { input: Field },
    Vrd { input: Field, cache: Box<VrdCache> },
    Relu { input: Field },
}

/// Gradients returned by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct NetGrads {
    /// Per-layer parameter gradients, in [`Network::params_flat`] layout.
    pub layers: Vec<Vec<f64>>,
    pub dl_dinput: Field,
}

impl NetGrads {
    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub input_channels: usize,
    pub rng_seed: u64,
}

impl Network {
    /// Randomly initialized network for the given architecture.
    ///
    /// Channel-mix weights are uniform in `±sqrt(6 / (in + out))` with zero
    /// bias; reaction-diffusion layers use [`VrdParams::init`].
    pub fn build(arch: &[LayerKind], input_channels: usize, seed: u64) -> Result<Self> {
        if input_channels == 0 {
            return Err(VrdError::invalid(
                "network needs at least one input channel",
            ));
        }
        let mut rng = rng_from_seed(seed);
        let mut layers = Vec::with_capacity(arch.len());
        let mut c = input_channels;
        for kind in arch {
            let layer = match *kind {
                LayerKind::ChannelMix(out) => {
                    let a = (6.0 / (c + out) as f64).sqrt();
                    Layer::ChannelMix {
                        weight: Mat::from_fn(out, c, |_, _| rng.random_range(-a..a)),
                        bias: vec![0.0; out],
                    }
                }
                LayerKind::Vrd(out) => Layer::Vrd(VrdParams::init(c, out, &mut rng)),
                LayerKind::Relu => Layer::Relu,
            };
            c = layer.out_channels(c);
            layers.push(layer);
        }
        Ok(Network {
            layers,
            input_channels,
            rng_seed: seed,
        })
    }

    pub fn from_layers(layers: Vec<Layer>, input_channels: usize) -> Result<Self> {
        let net = Network {
            layers,
            input_channels,
            rng_seed: 0,
        };
        net.output_channels()?;
        Ok(net)
    }

    pub fn arch(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    /// Channel count after the last layer; errors on incompatible neighbors.
    pub fn output_channels(&self) -> Result<usize> {
        let mut c = self.input_channels;
        for (k, layer) in self.layers.iter().enumerate() {
            if let Some(expected) = layer.in_channels() {
                if expected != c {
                    return Err(VrdError::shape(format!(
                        "layer {k} ({}) expects {expected} channels, receives {c}",
                        layer.kind()
                    )));
                }
            }
            c = layer.out_channels(c);
        }
        Ok(c)
    }

    pub fn param_len(&self) -> usize {
        self.layers.iter().map(Layer::param_len).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        for layer in &self.layers {
            layer.write_params(&mut out);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_len() {
            return Err(VrdError::shape(format!(
                "network has {} parameters, got {}",
                self.param_len(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.param_len();
            layer.read_params(&flat[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    pub fn forward(&self, input: &Field) -> Result<(Field, Vec<LayerCache>)> {
        if input.channels() != self.input_channels {
            return Err(VrdError::shape(format!(
                "network takes {} input channels, got {}",
                self.input_channels,
                input.channels()
            )));
        }
        self.output_channels()?;
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::ChannelMix { weight, bias } => {
                    let mut out = x.mix_channels(weight)?;
                    add_bias(&mut out, bias);
                    caches.push(LayerCache::ChannelMix { input: x });
                    x = out;
                }
                Layer::Vrd(params) => {
                    let (out, cache) = vrd_forward(&x, params)?;
                    caches.push(LayerCache::Vrd {
                        input: x,
                        cache: Box::new(cache),
                    });
                    x = out;
                }
                Layer::Relu => {
                    let mut out = x.clone();
                    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                    caches.push(LayerCache::Relu { input: x });
                    x = out;
                }
            }
        }
        Ok((x, caches))
    }

    pub fn backward(&self, caches: &[LayerCache], dl_dscores: &Field) -> Result<NetGrads> {
        if caches.len() != self.layers.len() {
            return Err(VrdError::shape("cache count differs from layer count"));
        }
        let mut grad = dl_dscores.clone();
        let mut layer_grads = vec![Vec::new(); self.layers.len()];
        for (k, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            match (layer, cache) {
                (Layer::ChannelMix { weight, .. }, LayerCache::ChannelMix { input }) => {
                    let dw = inner_product_matrix(&grad, input)?;
                    let mut db = vec![0.0; weight.rows()];
                    for px in grad.data().chunks_exact(weight.rows()) {
                        for (d, g) in db.iter_mut().zip(px) {
                            *d += g;
                        }
                    }
                    let mut flat = dw.into_vec();
                    flat.extend(db);
                    layer_grads[k] = flat;
                    grad = grad.mix_channels(&weight.transpose())?;
                }
                (Layer::Vrd(params), LayerCache::Vrd { input, cache }) => {
                    let g = vrd_backward(&grad, cache, input, params)?;
                    layer_grads[k] = g.params_flat();
                    grad = g.dl_dsi;
                }
                (Layer::Relu, LayerCache::Relu { input }) => {
                    for (g, x) in grad.data_mut().iter_mut().zip(input.data()) {
                        if *x <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                _ => {
                    return Err(VrdError::shape(format!(
                        "cache {k} does not match its layer"
                    )))
                }
            }
        }
        Ok(NetGrads {
            layers: layer_grads,
            dl_dinput: grad,
        })
    }
}

fn add_bias(f: &mut Field, bias: &[f64]) {
    let c = bias.len();
    for px in f.data_mut().chunks_exact_mut(c) {
        for (v, b) in px.iter_mut().zip(bias) {
            *v += b;
        }
    }
}
