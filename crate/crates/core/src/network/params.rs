use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ArchSpec;
use crate::error::{structure, Result};

/// One named block of the flat parameter vector, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl LayerBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered decomposition of `[0, p)` into layer blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    blocks: Vec<LayerBlock>,
}

impl ParamLayout {
    /// Builds a layout from `(name, rows, cols)` triples laid out back to back.
    pub fn from_shapes<S: Into<String>>(shapes: impl IntoIterator<Item = (S, usize, usize)>) -> Self {
        let mut offset = 0;
        let blocks = shapes
            .into_iter()
            .map(|(name, rows, cols)| {
                let block = LayerBlock { name: name.into(), rows, cols, offset };
                offset += rows * cols;
                block
            })
            .collect();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[LayerBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&LayerBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }

    /// Checks that blocks are contiguous and cover `[0, p)` once.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for b in &self.blocks {
            if b.offset != next {
                return Err(structure(format!(
                    "block `{}` starts at {} but previous block ends at {next}",
                    b.name, b.offset
                )));
            }
            next += b.len();
        }
        Ok(())
    }
}

/// Flat parameter vector together with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl ParamVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        if values.len() != layout.num_params() {
            return Err(structure(format!(
                "layout has {} parameters but {} values were given",
                layout.num_params(),
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(arch: &ArchSpec) -> Self {
        let layout = arch.layout();
        let values = vec![0.0; layout.num_params()];
        Self { values, layout }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases, phases
    /// uniform on `[0, 2pi)`, activation coefficients at their fixed initial values.
    pub fn init(arch: &ArchSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Self::zeros(arch);
        let d = arch.input_dim as f64;
        let w = arch.hidden_width as f64;
        for block in theta.layout.blocks.clone() {
            let slot = &mut theta.values[block.range()];
            let name = block.name.as_str();
            if name.ends_with(".act") {
                for (dst, &c) in slot.iter_mut().zip(arch.activation.initial_coeffs().iter().cycle()) {
                    *dst = c;
                }
                continue;
            }
            let bound = if name.starts_with("embed") { 1.0 / d.sqrt() } else { 1.0 / w.sqrt() };
            for v in slot.iter_mut() {
                *v = if name == "embed.phase" {
                    rng.random_range(0.0..std::f64::consts::TAU)
                } else {
                    rng.random_range(-bound..bound)
                };
            }
        }
        theta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|b| &self.values[b.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.block(name)?.range();
        Some(&mut self.values[range])
    }

    /// Splits into per-block vectors, in layout order.
    pub fn to_structured(&self) -> Vec<Vec<f64>> {
        self.layout.blocks.iter().map(|b| self.values[b.range()].to_vec()).collect()
    }

    /// Inverse of [`ParamVector::to_structured`].
    pub fn from_structured(layout: ParamLayout, blocks: &[Vec<f64>]) -> Result<Self> {
        if blocks.len() != layout.blocks.len() {
            return Err(structure(format!(
                "expected {} blocks, got {}",
                layout.blocks.len(),
                blocks.len()
            )));
        }
        let mut values = Vec::with_capacity(layout.num_params());
        for (b, data) in layout.blocks.iter().zip(blocks) {
            if data.len() != b.len() {
                return Err(structure(format!(
                    "block `{}` expects {} values, got {}",
                    b.name,
                    b.len(),
                    data.len()
                )));
            }
            values.extend_from_slice(data);
        }
        Self::new(layout, values)
    }
}
