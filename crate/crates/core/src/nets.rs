//! Model zoo: LeNet and small-image AlexNet variants, represented as split
//! networks.
//!
//! Every model is a [`SplitNetwork`]: a first affine layer Upsilon (a
//! convolution in all built architectures), an implicit ReLU, and the
//! remainder Omega. The split exists because the noise analysis only needs
//! the first layer in closed form; the plain classifier is always the
//! composition Omega(relu(Upsilon(x))), never a second copy of the graph.
//!
//! Architecture quirks shared by all models: max-pools sit after their ReLU,
//! there is no dropout, and the first fully-connected layer is sized to the
//! conv stack's flatten width (3136 for LeNet on MNIST, 4096 for LeNet on
//! CIFAR, 256 for AlexNet).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, STREAM_INIT};
use crate::tensor::{Checkpoint, Graph, Tensor, VarId};

/// One layer of a network body. `Dense` weights are stored `[in, out]` so a
/// batch forward is `x * W + b`.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    Relu,
    MaxPool {
        k: usize,
        stride: usize,
    },
    Flatten,
}

impl Layer {
    fn is_affine(&self) -> bool {
        matches!(self, Layer::Conv { .. } | Layer::Dense { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchitectureId {
    #[serde(rename = "lenet-mnist")]
    LeNetMnist,
    #[serde(rename = "lenet-cifar")]
    LeNetCifar,
    #[serde(rename = "alexnet-cifar")]
    AlexNetCifar,
}

impl ArchitectureId {
    /// Input shape as (channels, height, width).
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            ArchitectureId::LeNetMnist => [1, 28, 28],
            ArchitectureId::LeNetCifar | ArchitectureId::AlexNetCifar => [3, 32, 32],
        }
    }

    /// Width of the conv stack's flattened output.
    pub fn flatten_width(self) -> usize {
        match self {
            ArchitectureId::LeNetMnist => 3136,
            ArchitectureId::LeNetCifar => 4096,
            ArchitectureId::AlexNetCifar => 256,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArchitectureId::LeNetMnist => "lenet-mnist",
            ArchitectureId::LeNetCifar => "lenet-cifar",
            ArchitectureId::AlexNetCifar => "alexnet-cifar",
        }
    }
}

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchitectureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lenet-mnist" => Ok(ArchitectureId::LeNetMnist),
            "lenet-cifar" => Ok(ArchitectureId::LeNetCifar),
            "alexnet-cifar" => Ok(ArchitectureId::AlexNetCifar),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?}; expected lenet-mnist, lenet-cifar, or alexnet-cifar"
            ))),
        }
    }
}

/// A classifier split after its first affine layer: `upsilon` is that layer,
/// `omega` is everything after the (implicit) first ReLU. The plain forward
/// pass is the composition of the two halves. `input_shape` is the per-example
/// shape (no batch dimension), e.g. `[1, 28, 28]` or `[2]` for a dense toy.
#[derive(Debug, Clone)]
pub struct SplitNetwork {
    pub id: String,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub(crate) upsilon: Layer,
    pub(crate) omega: Vec<Layer>,
}

impl SplitNetwork {
    /// Assembles a split network, enforcing that the head is affine (the
    /// closed-form noise analysis depends on it).
    pub fn new(
        id: impl Into<String>,
        input_shape: Vec<usize>,
        classes: usize,
        upsilon: Layer,
        omega: Vec<Layer>,
    ) -> Result<Self> {
        if !upsilon.is_affine() {
            return Err(Error::Usage(
                "split network head must be an affine (conv or dense) layer".into(),
            ));
        }
        Ok(SplitNetwork {
            id: id.into(),
            input_shape,
            classes,
            upsilon,
            omega,
        })
    }

    /// Named parameter tensors in a fixed order (head first, then omega
    /// layers in sequence). The same order is used for gradients, optimizer
    /// state, and checkpoints.
    pub fn param_views(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        collect_params(&self.upsilon, "upsilon", &mut |n, t| out.push((n, t)));
        for (i, layer) in self.omega.iter().enumerate() {
            collect_params(layer, &format!("omega.{i}"), &mut |n, t| out.push((n, t)));
        }
        out
    }

    pub fn param_views_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        match &mut self.upsilon {
            Layer::Conv { weight, bias, .. } | Layer::Dense { weight, bias } => {
                out.push(("upsilon.weight".into(), weight));
                out.push(("upsilon.bias".into(), bias));
            }
            _ => {}
        }
        for (i, layer) in self.omega.iter_mut().enumerate() {
            if let Layer::Conv { weight, bias, .. } | Layer::Dense { weight, bias } = layer {
                out.push((format!("omega.{i}.weight"), weight));
                out.push((format!("omega.{i}.bias"), bias));
            }
        }
        out
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.param_views().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records the network's parameters onto a graph. `trainable` leaves
    /// receive gradients; constants are for inference-only forwards.
    pub fn stage(&self, g: &mut Graph, trainable: bool) -> StagedNet {
        let mut put = |t: &Tensor| {
            if trainable {
                g.leaf(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let upsilon = stage_layer(&self.upsilon, &mut put);
        let omega = self.omega.iter().map(|l| stage_layer(l, &mut put)).collect();
        StagedNet {
            input_shape: self.input_shape.clone(),
            upsilon,
            omega,
        }
    }

    /// Batch logits, shape [N, classes].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let staged = self.stage(&mut g, false);
        let xid = g.constant(x.clone());
        let out = staged.logits(&mut g, xid)?;
        Ok(g.value(out).clone())
    }

    /// Predicted class per batch row: argmax with lowest-index tie-break.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(x)?))
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            architecture: self.id.clone(),
            seed,
            entries: self
                .param_views()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    /// Replaces all parameters from a checkpoint; the architecture id and
    /// every entry name/shape must match this network exactly.
    pub fn load_weights(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.architecture != self.id {
            return Err(Error::Config(format!(
                "checkpoint is for architecture {:?}, network is {:?}",
                ckpt.architecture, self.id
            )));
        }
        let mut views = self.param_views_mut();
        if views.len() != ckpt.entries.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} entries, network has {} parameters",
                ckpt.entries.len(),
                views.len()
            )));
        }
        for ((name, tensor), (ck_name, ck_tensor)) in views.iter_mut().zip(&ckpt.entries) {
            if name != ck_name {
                return Err(Error::Config(format!(
                    "checkpoint entry {ck_name:?} does not match parameter {name:?}"
                )));
            }
            if tensor.shape() != ck_tensor.shape() {
                return Err(Error::Config(format!(
                    "checkpoint entry {ck_name:?} has shape {:?}, parameter has {:?}",
                    ck_tensor.shape(),
                    tensor.shape()
                )));
            }
            **tensor = ck_tensor.clone();
        }
        Ok(())
    }
}

fn collect_params<'a>(layer: &'a Layer, prefix: &str, push: &mut impl FnMut(String, &'a Tensor)) {
    if let Layer::Conv { weight, bias, .. } | Layer::Dense { weight, bias } = layer {
        push(format!("{prefix}.weight"), weight);
        push(format!("{prefix}.bias"), bias);
    }
}

fn stage_layer(layer: &Layer, put: &mut impl FnMut(&Tensor) -> VarId) -> StagedLayer {
    match layer {
        Layer::Conv {
            weight,
            bias,
            stride,
            padding,
        } => StagedLayer::Conv {
            weight: put(weight),
            bias: put(bias),
            stride: *stride,
            padding: *padding,
        },
        Layer::Dense { weight, bias } => StagedLayer::Dense {
            weight: put(weight),
            bias: put(bias),
        },
        Layer::Relu => StagedLayer::Relu,
        Layer::MaxPool { k, stride } => StagedLayer::MaxPool {
            k: *k,
            stride: *stride,
        },
        Layer::Flatten => StagedLayer::Flatten,
    }
}

/// A network's parameters as graph variables, ready to build forward passes.
#[derive(Debug)]
pub struct StagedNet {
    input_shape: Vec<usize>,
    pub(crate) upsilon: StagedLayer,
    pub(crate) omega: Vec<StagedLayer>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum StagedLayer {
    Conv {
        weight: VarId,
        bias: VarId,
        stride: usize,
        padding: usize,
    },
    Dense {
        weight: VarId,
        bias: VarId,
    },
    Relu,
    MaxPool {
        k: usize,
        stride: usize,
    },
    Flatten,
}

impl StagedNet {
    /// Parameter variables in [`SplitNetwork::param_views`] order, for
    /// pairing gradients with the tensors they update.
    pub fn param_ids(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        let mut push = |l: &StagedLayer| {
            if let StagedLayer::Conv { weight, bias, .. } | StagedLayer::Dense { weight, bias } = l
            {
                out.push(*weight);
                out.push(*bias);
            }
        };
        push(&self.upsilon);
        for l in &self.omega {
            push(l);
        }
        out
    }

    fn check_input(&self, g: &Graph, x: VarId) -> Result<()> {
        let s = g.value(x).shape();
        if s.len() != self.input_shape.len() + 1 || s[1..] != self.input_shape[..] {
            return Err(Error::Shape {
                op: "forward",
                details: format!("input {s:?}, expected [N, {:?}]", self.input_shape),
            });
        }
        Ok(())
    }

    /// Per-example input shape (no batch dimension).
    pub fn element_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// The head's pre-activation Upsilon(x) = A x + c1.
    pub fn preactivation(&self, g: &mut Graph, x: VarId) -> Result<VarId> {
        self.check_input(g, x)?;
        apply_layer(g, &self.upsilon, x)
    }

    /// Everything after the first ReLU.
    pub fn omega_forward(&self, g: &mut Graph, h: VarId) -> Result<VarId> {
        let mut cur = h;
        for layer in &self.omega {
            cur = apply_layer(g, layer, cur)?;
        }
        Ok(cur)
    }

    /// Full classifier: Omega(relu(Upsilon(x))).
    pub fn logits(&self, g: &mut Graph, x: VarId) -> Result<VarId> {
        let pre = self.preactivation(g, x)?;
        let h = g.relu(pre);
        self.omega_forward(g, h)
    }
}

fn apply_layer(g: &mut Graph, layer: &StagedLayer, x: VarId) -> Result<VarId> {
    match *layer {
        StagedLayer::Conv {
            weight,
            bias,
            stride,
            padding,
        } => g.conv2d(x, weight, Some(bias), stride, padding),
        StagedLayer::Dense { weight, bias } => {
            let z = g.matmul(x, weight)?;
            g.add_bias(z, bias)
        }
        StagedLayer::Relu => Ok(g.relu(x)),
        StagedLayer::MaxPool { k, stride } => g.maxpool2d(x, k, stride),
        StagedLayer::Flatten => {
            let shape = g.value(x).shape().to_vec();
            let n = shape[0];
            let rest: usize = shape[1..].iter().product();
            g.reshape(x, &[n, rest])
        }
    }
}

/// Row-wise argmax with lowest-index tie-break.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let d = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks_exact(d)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Deterministic seeded model builder. Weights are uniform on
/// [-sqrt(1/fan_in), sqrt(1/fan_in)], biases start at zero.
pub fn build_model(arch: ArchitectureId, classes: usize, seed: u64) -> Result<SplitNetwork> {
    if classes < 2 {
        return Err(Error::Config(format!(
            "a classifier needs at least 2 classes, got {classes}"
        )));
    }
    let mut r = rng::stream(seed, &[STREAM_INIT]);
    let conv = |r: &mut rand_chacha::ChaCha12Rng, co: usize, ci: usize, k: usize, padding: usize, stride: usize| {
        Layer::Conv {
            weight: init_uniform(&[co, ci, k, k], ci * k * k, r),
            bias: Tensor::zeros(&[co]),
            stride,
            padding,
        }
    };
    let dense = |r: &mut rand_chacha::ChaCha12Rng, ci: usize, co: usize| Layer::Dense {
        weight: init_uniform(&[ci, co], ci, r),
        bias: Tensor::zeros(&[co]),
    };
    let (upsilon, omega) = match arch {
        ArchitectureId::LeNetMnist | ArchitectureId::LeNetCifar => {
            let in_ch = arch.input_shape()[0];
            let head = conv(&mut r, 6, in_ch, 5, 2, 1);
            let omega = vec![
                Layer::MaxPool { k: 2, stride: 2 },
                conv(&mut r, 16, 6, 5, 2, 1),
                Layer::Relu,
                Layer::Flatten,
                dense(&mut r, arch.flatten_width(), 120),
                Layer::Relu,
                dense(&mut r, 120, 84),
                Layer::Relu,
                dense(&mut r, 84, classes),
            ];
            (head, omega)
        }
        ArchitectureId::AlexNetCifar => {
            let head = conv(&mut r, 64, 3, 11, 5, 4);
            let omega = vec![
                Layer::MaxPool { k: 2, stride: 2 },
                conv(&mut r, 192, 64, 5, 2, 1),
                Layer::Relu,
                Layer::MaxPool { k: 2, stride: 2 },
                conv(&mut r, 384, 192, 3, 1, 1),
                Layer::Relu,
                conv(&mut r, 256, 384, 3, 1, 1),
                Layer::Relu,
                conv(&mut r, 256, 256, 3, 1, 1),
                Layer::Relu,
                Layer::MaxPool { k: 2, stride: 2 },
                Layer::Flatten,
                dense(&mut r, 256, 4096),
                Layer::Relu,
                dense(&mut r, 4096, 4096),
                Layer::Relu,
                dense(&mut r, 4096, classes),
            ];
            (head, omega)
        }
    };
    SplitNetwork::new(
        arch.as_str(),
        arch.input_shape().to_vec(),
        classes,
        upsilon,
        omega,
    )
}

fn init_uniform(shape: &[usize], fan_in: usize, r: &mut impl Rng) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.random_range(-bound..bound)).collect(),
    )
    .unwrap()
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let preds = argmax_rows(logits);
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len().max(1) as f64
}
