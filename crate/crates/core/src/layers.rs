//! Layer-wise kernel stacks and the weights that combine them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WntkError};
use crate::linalg::{self, KernelMatrix};

/// Per-layer kernels `Θ_l`, `l = 1..=L`, on a fixed pair of sample sets.
///
/// The unweighted sum is the NTK; a weighted sum is the WNTK.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKernelStack {
    layers: Vec<KernelMatrix>,
}

impl LayerKernelStack {
    pub fn new(layers: Vec<KernelMatrix>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| WntkError::InvalidArgument("layer stack needs at least one layer".into()))?;
        let shape = first.shape();
        if let Some((l, bad)) = layers.iter().enumerate().find(|(_, m)| m.shape() != shape) {
            return Err(WntkError::ShapeMismatch(format!(
                "layer {} has shape {:?}, layer 1 has {:?}",
                l + 1,
                bad.shape(),
                shape
            )));
        }
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn nrows(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn ncols(&self) -> usize {
        self.layers[0].ncols()
    }

    /// Kernel of layer `l`, 1-based.
    pub fn layer(&self, l: usize) -> &KernelMatrix {
        &self.layers[l - 1]
    }

    pub fn layers(&self) -> &[KernelMatrix] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<KernelMatrix> {
        self.layers
    }

    /// Unweighted sum, accumulated from layer 1 upwards.
    pub fn sum(&self) -> KernelMatrix {
        let mut acc = DMatrix::zeros(self.nrows(), self.ncols());
        for layer in &self.layers {
            acc += layer;
        }
        acc
    }

    pub fn weighted_sum(&self, weights: &LayerWeights) -> Result<KernelMatrix> {
        wntk_weighted_sum(self, weights)
    }

    /// Restriction to the given rows and columns (e.g. a train/validation split).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self {
            layers: self.layers.iter().map(|m| linalg::select(m, rows, cols)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|m| m.transpose()).collect(),
        }
    }
}

/// Layer-wise WNTK weights `a_l`, one per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerWeights(Vec<f64>);

impl LayerWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(WntkError::InvalidArgument("layer weights must not be empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(WntkError::InvalidArgument(format!("non-finite layer weight {bad}")));
        }
        Ok(Self(values))
    }

    pub fn ones(depth: usize) -> Self {
        Self(vec![1.0; depth])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, l: usize) -> f64 {
        self.0[l - 1]
    }

    /// Set when any weight is negative: the weighted kernel may then be
    /// indefinite and regression falls back to the eigen solver.
    pub fn has_negative(&self) -> bool {
        self.0.iter().any(|v| *v < 0.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

pub(crate) fn check_depth(depth: usize, weights: &LayerWeights) -> Result<()> {
    if weights.len() != depth {
        return Err(WntkError::ShapeMismatch(format!(
            "{} layer weights for a depth-{} kernel stack",
            weights.len(),
            depth
        )));
    }
    Ok(())
}

/// `Σ_l a_l Θ_l`.
pub fn wntk_weighted_sum(stack: &LayerKernelStack, weights: &LayerWeights) -> Result<KernelMatrix> {
    check_depth(stack.depth(), weights)?;
    let mut acc = DMatrix::zeros(stack.nrows(), stack.ncols());
    for (layer, a) in stack.layers.iter().zip(weights.as_slice()) {
        acc += layer * *a;
    }
    Ok(acc)
}
