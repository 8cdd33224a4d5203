//! Synthetic segmentation data and the seeded generator behind it.
//!
//! The generator is xoshiro256++ seeded through splitmix64; uniforms take the
//! top 53 bits of each draw and normals use the cosine branch of Box–Muller,
//! so datasets are reproducible across implementations.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Result, VrdError};
use crate::field::Field;

pub fn rng_from_seed(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Uniform in `[0, 1)` from the top 53 bits of one draw.
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal via Box–Muller (one output per pair of uniforms).
pub fn gaussian(rng: &mut impl RngCore) -> f64 {
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Per-pixel class indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub height: usize,
    pub width: usize,
    pub data: Vec<usize>,
}

impl Labels {
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> usize) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Labels {
            height,
            width,
            data,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.data[i * self.width + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub input: Field,
    pub labels: Labels,
}

impl LabeledExample {
    pub fn new(input: Field, labels: Labels) -> Result<Self> {
        if input.height() != labels.height || input.width() != labels.width {
            return Err(VrdError::shape("labels and input lattice differ"));
        }
        Ok(LabeledExample { input, labels })
    }
}

fn random_between(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

fn paint_regions(rng: &mut impl RngCore, labels: &mut Labels, class: usize) {
    let (h, w) = (labels.height as f64, labels.width as f64);
    let n_shapes = 1 + (rng.next_u64() % 3) as usize;
    for _ in 0..n_shapes {
        let ci = random_between(rng, 0.0, h);
        let cj = random_between(rng, 0.0, w);
        if rng.next_u64() & 1 == 0 {
            let half_h = random_between(rng, h / 16.0, h / 4.0);
            let half_w = random_between(rng, w / 16.0, w / 4.0);
            for i in 0..labels.height {
                for j in 0..labels.width {
                    let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
                    if (y - ci).abs() <= half_h && (x - cj).abs() <= half_w {
                        labels.data[i * labels.width + j] = class;
                    }
                }
            }
        } else {
            let r = random_between(rng, h.min(w) / 10.0, h.min(w) / 4.0);
            for i in 0..labels.height {
                for j in 0..labels.width {
                    let (y, x) = (i as f64 + 0.5 - ci, j as f64 + 0.5 - cj);
                    if y * y + x * x <= r * r {
                        labels.data[i * labels.width + j] = class;
                    }
                }
            }
        }
    }
}

/// Blob segmentation task: class 0 is background, every later class paints
/// one to three random rectangles or discs over what came before. Inputs are
/// one-hot class indicators plus i.i.d. Gaussian noise.
pub fn gen_synthetic(
    seed: u64,
    n_examples: usize,
    height: usize,
    width: usize,
    n_classes: usize,
    noise_sigma: f64,
) -> Result<Vec<LabeledExample>> {
    if n_classes < 2 {
        return Err(VrdError::invalid(
            "synthetic data needs at least two classes",
        ));
    }
    if !(noise_sigma >= 0.0) {
        return Err(VrdError::invalid("noise_sigma must be non-negative"));
    }
    let mut rng = rng_from_seed(seed);
    (0..n_examples)
        .map(|_| {
            let mut labels = Labels {
                height,
                width,
                data: vec![0; height * width],
            };
            for class in 1..n_classes {
                paint_regions(&mut rng, &mut labels, class);
            }
            let mut input = Field::zeros(height, width, n_classes)?;
            for i in 0..height {
                for j in 0..width {
                    let label = labels.get(i, j);
                    for c in 0..n_classes {
                        let onehot = if c == label { 1.0 } else { 0.0 };
                        let noise = if noise_sigma > 0.0 {
                            noise_sigma * gaussian(&mut rng)
                        } else {
                            0.0
                        };
                        input.set(i, j, c, onehot + noise);
                    }
                }
            }
            LabeledExample::new(input, labels)
        })
        .collect()
}

/// Convenience for tests and benchmarks: a field of uniform `(−1, 1)` samples.
pub fn random_field(
    rng: &mut impl Rng,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<Field> {
    Field::from_fn(height, width, channels, |_, _, _| {
        rng.random_range(-1.0..1.0)
    })
}
