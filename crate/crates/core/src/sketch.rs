//! Random column sketches of the parameter vector.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{structure, validation, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// `s` distinct indices, uniform over all subsets.
    #[default]
    WithoutReplacement,
    /// `s` independent uniform indices; duplicates are possible.
    Iid,
}

/// Sorted parameter indices updated in one step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sketch {
    indices: Vec<usize>,
    num_params: usize,
}

impl Sketch {
    pub fn new(mut indices: Vec<usize>, num_params: usize) -> Result<Self> {
        indices.sort_unstable();
        if let Some(&k) = indices.last() {
            if k >= num_params {
                return Err(validation(format!("index {k} out of range for {num_params} parameters")));
            }
        }
        Ok(Self { indices, num_params })
    }

    /// All indices, the dense update.
    pub fn dense(num_params: usize) -> Self {
        Self { indices: (0..num_params).collect(), num_params }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn is_dense(&self) -> bool {
        self.indices.len() == self.num_params && self.indices.iter().enumerate().all(|(i, &k)| i == k)
    }

    pub fn has_duplicates(&self) -> bool {
        self.indices.windows(2).any(|w| w[0] == w[1])
    }

    /// Scatters a length-`s` vector into a zero vector of length `p`.
    /// Repeated indices accumulate.
    pub fn lift(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.indices.len() {
            return Err(structure(format!("lift of {} values through a sketch of size {}", values.len(), self.len())));
        }
        let mut out = vec![0.0; self.num_params];
        for (&k, &v) in self.indices.iter().zip(values) {
            out[k] += v;
        }
        Ok(out)
    }

    /// Gathers the sketched entries of a length-`p` vector.
    pub fn restrict(&self, full: &[f64]) -> Result<Vec<f64>> {
        if full.len() != self.num_params {
            return Err(structure(format!("restrict of length {} with p = {}", full.len(), self.num_params)));
        }
        Ok(self.indices.iter().map(|&k| full[k]).collect())
    }
}

/// Generator for the draw identified by `(seed, stream)`; independent streams
/// give independent draws for the same seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform sketch of `s` out of `p` indices for step `step_id`. `s == p`
/// always yields the dense sketch.
pub fn draw_sketch(p: usize, s: usize, seed: u64, step_id: u64) -> Result<Sketch> {
    draw_sketch_with(p, s, seed, step_id, SamplingMode::WithoutReplacement)
}

pub fn draw_sketch_with(p: usize, s: usize, seed: u64, stream: u64, mode: SamplingMode) -> Result<Sketch> {
    if s == 0 || s > p {
        return Err(validation(format!("sketch size {s} must lie in [1, {p}]")));
    }
    let mut rng = stream_rng(seed, stream);
    let indices = match mode {
        SamplingMode::WithoutReplacement if s == p => return Ok(Sketch::dense(p)),
        SamplingMode::WithoutReplacement => index::sample(&mut rng, p, s).into_vec(),
        SamplingMode::Iid => (0..s).map(|_| rng.random_range(0..p)).collect(),
    };
    Sketch::new(indices, p)
}
