//! Reduced VGG-style classifier exposing pre-softmax logits and per-sample
//! input-pixel gradients.
//!
//! Each conv block is `3x3 conv (padding 1) -> ReLU -> 2x2 maxpool`, followed
//! by a dense tail whose last layer is the pre-softmax logit layer. No batch
//! norm, no dropout: a checkpoint is a pure parameter snapshot and every
//! forward pass is a deterministic function of (parameters, input).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, NodeId};
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

pub const CONV_KERNEL: usize = 3;
pub const CONV_PADDING: usize = 1;
pub const POOL_WINDOW: usize = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture of the classifier: conv blocks (filter counts; kernel and
/// pool size are fixed) followed by dense widths ending in `num_classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub input_shape: (usize, usize, usize),
    pub conv_blocks: Vec<usize>,
    pub dense_widths: Vec<usize>,
    pub num_classes: usize,
}

impl ModelArch {
    /// The default desk-scale architecture: 32x32 input, blocks of 8 and 16
    /// filters, dense 64 -> num_classes.
    pub fn desk(in_channels: usize, num_classes: usize) -> Self {
        ModelArch {
            input_shape: (in_channels, 32, 32),
            conv_blocks: vec![8, 16],
            dense_widths: vec![64, num_classes],
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (c, mut h, mut w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(ModelError::InvalidArch("zero-sized input".into()));
        }
        for (i, &filters) in self.conv_blocks.iter().enumerate() {
            if filters == 0 {
                return Err(ModelError::InvalidArch(format!("block {i} has 0 filters")));
            }
            if h % POOL_WINDOW != 0 || w % POOL_WINDOW != 0 {
                return Err(ModelError::InvalidArch(format!(
                    "spatial dims {h}x{w} before block {i} pool are not divisible by {POOL_WINDOW}"
                )));
            }
            h /= POOL_WINDOW;
            w /= POOL_WINDOW;
        }
        if self.dense_widths.is_empty() {
            return Err(ModelError::InvalidArch("empty dense tail".into()));
        }
        if *self.dense_widths.last().unwrap() != self.num_classes {
            return Err(ModelError::InvalidArch(format!(
                "dense tail ends in {} but num_classes is {}",
                self.dense_widths.last().unwrap(),
                self.num_classes
            )));
        }
        if self.num_classes == 0 {
            return Err(ModelError::InvalidArch(
                "num_classes must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Spatial dims after all conv blocks.
    fn final_spatial(&self) -> (usize, usize) {
        let (_, mut h, mut w) = self.input_shape;
        for _ in &self.conv_blocks {
            h /= POOL_WINDOW;
            w /= POOL_WINDOW;
        }
        (h, w)
    }

    /// Flattened width entering the dense tail.
    pub fn flat_width(&self) -> usize {
        let (h, w) = self.final_spatial();
        let channels = self
            .conv_blocks
            .last()
            .copied()
            .unwrap_or(self.input_shape.0);
        channels * h * w
    }
}

/// A classifier: architecture plus named parameter tensors in a fixed order.
#[derive(Debug, Clone)]
pub struct Model {
    arch: ModelArch,
    parameters: Vec<(String, Tensor)>,
    init_seed: u64,
}

/// Graph handles from one forward construction.
pub struct ForwardPass {
    pub graph: Graph,
    pub input: NodeId,
    pub logits: NodeId,
    /// Node ids aligned with `Model::parameters` order.
    pub param_nodes: Vec<NodeId>,
}

/// He-style fan-in scaled initialization from the named `init` stream.
pub fn build_model(arch: &ModelArch, seed: u64) -> Result<Model, ModelError> {
    arch.validate()?;
    let mut rng = Rng::stream(seed, "init");
    let mut parameters = Vec::new();
    let mut in_c = arch.input_shape.0;
    for (i, &filters) in arch.conv_blocks.iter().enumerate() {
        let fan_in = in_c * CONV_KERNEL * CONV_KERNEL;
        let std = (2.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..filters * fan_in)
            .map(|_| rng.next_gaussian() * std)
            .collect();
        parameters.push((
            format!("conv{i}.weight"),
            Tensor::new(vec![filters, in_c, CONV_KERNEL, CONV_KERNEL], w)?,
        ));
        parameters.push((format!("conv{i}.bias"), Tensor::zeros(vec![filters])));
        in_c = filters;
    }
    let mut in_w = arch.flat_width();
    for (j, &width) in arch.dense_widths.iter().enumerate() {
        let std = (2.0 / in_w as f64).sqrt();
        let w: Vec<f64> = (0..in_w * width)
            .map(|_| rng.next_gaussian() * std)
            .collect();
        parameters.push((
            format!("dense{j}.weight"),
            Tensor::new(vec![in_w, width], w)?,
        ));
        parameters.push((format!("dense{j}.bias"), Tensor::zeros(vec![width])));
        in_w = width;
    }
    Ok(Model {
        arch: arch.clone(),
        parameters,
        init_seed: seed,
    })
}

impl Model {
    pub fn from_parts(
        arch: ModelArch,
        parameters: Vec<(String, Tensor)>,
        init_seed: u64,
    ) -> Result<Self, ModelError> {
        arch.validate()?;
        Ok(Model {
            arch,
            parameters,
            init_seed,
        })
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn parameters(&self) -> &[(String, Tensor)] {
        &self.parameters
    }

    pub fn parameters_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.parameters
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Builds the forward graph for a `[B,C,H,W]` batch and returns the
    /// pre-softmax logits node of shape `[B, num_classes]`.
    pub fn forward_pass(
        &self,
        batch: &Tensor,
        input_requires_grad: bool,
        params_require_grad: bool,
    ) -> Result<ForwardPass, ModelError> {
        let (c, h, w) = self.arch.input_shape;
        let batch_size = match batch.shape() {
            [b, bc, bh, bw] if *bc == c && *bh == h && *bw == w => *b,
            other => {
                return Err(TensorError::Dimension {
                    op: "forward",
                    lhs: other.to_vec(),
                    rhs: vec![0, c, h, w],
                }
                .into())
            }
        };
        let mut graph = Graph::new();
        let input_tensor = if input_requires_grad {
            batch.clone().with_grad()
        } else {
            batch.clone()
        };
        let input = graph.leaf(input_tensor);
        let mut param_nodes = Vec::with_capacity(self.parameters.len());
        for (_, t) in &self.parameters {
            let t = if params_require_grad {
                t.clone().with_grad()
            } else {
                t.clone()
            };
            param_nodes.push(graph.leaf(t));
        }

        let mut x = input;
        let mut p = 0usize;
        for _ in &self.arch.conv_blocks {
            let conv = graph.conv2d(x, param_nodes[p], 1, CONV_PADDING)?;
            let biased = graph.add_channel_bias(conv, param_nodes[p + 1])?;
            let act = graph.relu(biased);
            x = graph.maxpool2d(act, POOL_WINDOW)?;
            p += 2;
        }
        x = graph.reshape(x, vec![batch_size, self.arch.flat_width()])?;
        let last = self.arch.dense_widths.len() - 1;
        for (j, _) in self.arch.dense_widths.iter().enumerate() {
            let lin = graph.matmul(x, param_nodes[p])?;
            x = graph.add_row_bias(lin, param_nodes[p + 1])?;
            if j != last {
                x = graph.relu(x);
            }
            p += 2;
        }
        Ok(ForwardPass {
            graph,
            input,
            logits: x,
            param_nodes,
        })
    }

    /// Pre-softmax logits for a batch; pure in the parameters.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        let pass = self.forward_pass(batch, false, false)?;
        Ok(pass.graph.output(pass.logits).clone())
    }

    /// Gradient of the single pre-softmax logit `class_index` with respect to
    /// the input pixels, averaged over color channels: an `[H, W]` map.
    pub fn input_gradient(&self, image: &Tensor, class_index: usize) -> Result<Tensor, ModelError> {
        if class_index >= self.arch.num_classes {
            return Err(ModelError::ClassOutOfRange {
                class: class_index,
                classes: self.arch.num_classes,
            });
        }
        let (c, h, w) = self.arch.input_shape;
        if image.shape() != [c, h, w] {
            return Err(TensorError::Dimension {
                op: "input_gradient",
                lhs: image.shape().to_vec(),
                rhs: vec![c, h, w],
            }
            .into());
        }
        let batch = Tensor::new(vec![1, c, h, w], image.data().to_vec())?;
        let mut pass = self.forward_pass(&batch, true, false)?;
        // Differentiate the raw logit, not the loss and not the softmax.
        let logit = pass.graph.select(pass.logits, class_index)?;
        pass.graph.backward(logit)?;
        let grad = pass.graph.grad(pass.input).expect("input requires grad");
        let mut map = vec![0.0; h * w];
        for ch in 0..c {
            for (m, g) in map.iter_mut().zip(&grad[ch * h * w..(ch + 1) * h * w]) {
                *m += g;
            }
        }
        let inv = 1.0 / c as f64;
        for m in &mut map {
            *m *= inv;
        }
        Ok(Tensor::new(vec![h, w], map)?)
    }

    /// Argmax class per row of a logits tensor, ties to the lowest index.
    pub fn predict_classes(logits: &Tensor) -> Vec<usize> {
        let classes = logits.shape()[logits.shape().len() - 1];
        logits
            .data()
            .chunks_exact(classes)
            .map(|row| {
                let mut best = 0usize;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}
