//! Small fixtures shared by unit tests across modules.

use crate::nets::{Layer, SplitNetwork};
use crate::tensor::Tensor;

/// Tiny dense 2 -> 3 -> 2 network with a single affine layer after the ReLU,
/// so the analytic expected prediction is exact on it.
pub(crate) fn toy_net() -> SplitNetwork {
    let upsilon = Layer::Dense {
        weight: Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap(),
        bias: Tensor::from_vec(vec![0.1, -0.2, 0.3]),
    };
    let omega = vec![Layer::Dense {
        weight: Tensor::new(vec![3, 2], vec![1.0, -0.5, 0.25, 2.0, -1.5, 0.75]).unwrap(),
        bias: Tensor::from_vec(vec![0.05, -0.1]),
    }];
    SplitNetwork::new("toy", vec![2], 2, upsilon, omega).unwrap()
}
