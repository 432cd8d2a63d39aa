//! Minimal differentiable-model kernel.
//!
//! Three architectures share one flat parameter layout: each layer's weights
//! followed by its biases, layers in forward order. Convolutions are 3x3,
//! stride 1, no padding; pooling is 2x2 with stride 2 (odd edges dropped).

mod gemm;
mod layers;
mod model;
mod train;

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model::{forward, init_params, loss_and_grad, Logits, Network};
pub use train::{evaluate, local_train, mean_loss, sgd_step, LocalTrainConfig};

/// Channel-major input geometry. Flat feature vectors use `1 x 1 x dims`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub const MNIST: InputShape = InputShape {
        channels: 1,
        height: 28,
        width: 28,
    };

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn flat(dims: usize) -> Self {
        Self {
            channels: 1,
            height: 1,
            width: dims,
        }
    }

    /// Number of scalars per sample.
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    /// Single affine layer followed by softmax.
    LogReg,
    /// Dense layers with ReLU between them.
    Mlp { hidden: Vec<usize> },
    /// conv(c1) -> relu -> pool -> conv(c2) -> relu -> pool -> dense -> relu -> dense.
    Cnn {
        conv1: usize,
        conv2: usize,
        dense: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input: InputShape,
    pub classes: usize,
}

impl ModelSpec {
    pub fn logreg(input: InputShape, classes: usize) -> Self {
        Self {
            architecture: Architecture::LogReg,
            input,
            classes,
        }
    }

    pub fn mlp(input: InputShape, hidden: Vec<usize>, classes: usize) -> Self {
        Self {
            architecture: Architecture::Mlp { hidden },
            input,
            classes,
        }
    }

    pub fn cnn(
        input: InputShape,
        conv1: usize,
        conv2: usize,
        dense: usize,
        classes: usize,
    ) -> Self {
        Self {
            architecture: Architecture::Cnn {
                conv1,
                conv2,
                dense,
            },
            input,
            classes,
        }
    }

    /// 32/64 3x3 kernels, 128 hidden units, on 1x28x28 digits.
    pub fn paper_cnn(classes: usize) -> Self {
        Self::cnn(InputShape::MNIST, 32, 64, 128, classes)
    }

    pub fn network(&self) -> Result<Network> {
        Network::compile(self)
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.network()?.param_count())
    }
}

/// Flat model parameters: the unit of upload, aggregation and similarity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub(crate) fn check_len(&self, expected: usize) -> Result<()> {
        if self.0.len() != expected {
            return Err(Error::Length {
                expected,
                actual: self.0.len(),
            });
        }
        Ok(())
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// A mini-batch: `labels.len()` samples stored contiguously, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("batch has no samples".into()));
        }
        if !inputs.len().is_multiple_of(labels.len()) {
            return Err(Error::Shape(format!(
                "{} input values do not divide into {} samples",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
