//! The analytic Gaussian branch: the Gaussian-ReLU mean T(mu, sigma), noise
//! variance propagation through the first affine layer, the expected
//! prediction, and the expected noise norm.
//!
//! For input noise n ~ N(0, Diag(sigma_x^2)) and a first layer Upsilon(x) =
//! A x + c1 followed by ReLU, the post-ReLU activations have mean
//! mu3 = T(mu2, sigma2) with mu2 = Upsilon(x), sigma2 = sqrt((A . A)
//! sigma_x^2) and T(m, s) = m CDF(m/s) + s PDF(m/s). Forwarding mu3 through
//! the rest of the network (Omega) approximates E[Phi(x + n)] at the cost of
//! a single extra forward pass; it is exact when Omega is affine.

use crate::error::{Error, Result};
use crate::nets::{Layer, SplitNetwork, StagedLayer, StagedNet};
use crate::special;
use crate::tensor::{kernels, Graph, Tensor, VarId};

/// Zero-mean Gaussian input noise: one variance for every input element, or
/// a per-element variance tensor shaped like one example.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Isotropic { variance: f64 },
    PerElement { variance: Tensor },
}

impl NoiseSpec {
    /// Isotropic noise given the standard deviation sigma_x.
    pub fn isotropic_std(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::Domain(format!(
                "noise standard deviation must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(NoiseSpec::Isotropic {
            variance: sigma * sigma,
        })
    }

    /// Isotropic noise given the variance sigma_x^2.
    pub fn isotropic_var(variance: f64) -> Result<Self> {
        if !variance.is_finite() || variance < 0.0 {
            return Err(Error::Domain(format!(
                "noise variance must be finite and >= 0, got {variance}"
            )));
        }
        Ok(NoiseSpec::Isotropic { variance })
    }

    /// Per-element variances, shaped like a single example (no batch dim).
    pub fn per_element_var(variance: Tensor) -> Result<Self> {
        if variance.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::Domain(
                "per-element noise variances must be finite and >= 0".into(),
            ));
        }
        Ok(NoiseSpec::PerElement { variance })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            NoiseSpec::Isotropic { variance } => *variance == 0.0,
            NoiseSpec::PerElement { variance } => variance.data().iter().all(|&v| v == 0.0),
        }
    }

    /// Variance image of shape [1, element_shape...], ready for a batch-free
    /// pass through the squared first layer.
    pub fn variance_tensor(&self, element_shape: &[usize]) -> Result<Tensor> {
        let mut shape = vec![1];
        shape.extend_from_slice(element_shape);
        match self {
            NoiseSpec::Isotropic { variance } => Ok(Tensor::full(&shape, *variance)),
            NoiseSpec::PerElement { variance } => {
                if variance.shape() != element_shape {
                    return Err(Error::Shape {
                        op: "variance_tensor",
                        details: format!(
                            "per-element variance {:?} vs input element {element_shape:?}",
                            variance.shape()
                        ),
                    });
                }
                variance.clone().reshape(&shape)
            }
        }
    }

    /// Per-element standard deviations, same layout as `variance_tensor`
    /// minus the leading 1.
    pub fn std_tensor(&self, element_shape: &[usize]) -> Result<Tensor> {
        let v = self.variance_tensor(element_shape)?;
        Ok(v.reshape(element_shape)?.map(f64::sqrt))
    }
}

/// First-layer activation statistics under input noise: pre-activation mean
/// and standard deviation, and the post-ReLU mean.
#[derive(Debug, Clone)]
pub struct GaussianActivationStats {
    pub mu2: Tensor,
    pub sigma2: Tensor,
    pub mu3: Tensor,
}

/// Standard normal CDF; finite input required.
pub fn gaussian_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("gaussian_cdf needs finite z, got {z}")));
    }
    Ok(special::normal_cdf(z))
}

/// Standard normal density; finite input required.
pub fn gaussian_pdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("gaussian_pdf needs finite z, got {z}")));
    }
    Ok(special::normal_pdf(z))
}

/// E[max(N(mu, sigma^2), 0)] for one scalar pair.
pub fn relu_gaussian_mean_scalar(mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!(
            "relu_gaussian_mean needs sigma >= 0, got {sigma}"
        )));
    }
    Ok(kernels::relu_gauss_mean_scalar(mu, sigma).0)
}

/// Elementwise E[max(N(mu, sigma^2), 0)]; shapes must match exactly.
/// Where sigma is 0 this is max(mu, 0).
pub fn relu_gaussian_mean(mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    if mu.shape() != sigma.shape() {
        return Err(Error::Shape {
            op: "relu_gaussian_mean",
            details: format!("mu {:?} vs sigma {:?}", mu.shape(), sigma.shape()),
        });
    }
    let mut out = Tensor::zeros(mu.shape());
    for ((o, &m), &s) in out.data_mut().iter_mut().zip(mu.data()).zip(sigma.data()) {
        if !(s >= 0.0) {
            return Err(Error::Domain(format!(
                "relu_gaussian_mean needs sigma >= 0, got {s}"
            )));
        }
        *o = kernels::relu_gauss_mean_scalar(m, s).0;
    }
    Ok(out)
}

/// First-layer description used by the variance pass.
pub(crate) enum SigmaHead {
    Conv {
        weight: VarId,
        stride: usize,
        padding: usize,
    },
    Dense {
        weight: VarId,
    },
}

impl SigmaHead {
    pub(crate) fn from_staged(layer: &StagedLayer) -> Result<SigmaHead> {
        match *layer {
            StagedLayer::Conv {
                weight,
                stride,
                padding,
                ..
            } => Ok(SigmaHead::Conv {
                weight,
                stride,
                padding,
            }),
            StagedLayer::Dense { weight, .. } => Ok(SigmaHead::Dense { weight }),
            _ => Err(Error::Usage(
                "variance pass needs an affine first layer".into(),
            )),
        }
    }
}

/// Records the variance pass on the graph: sigma2 = sqrt((A . A) applied to
/// sigma_x^2), with zero bias. The padding of a convolutional head
/// contributes zero variance (padding pixels are noise-free constants). The
/// result has a leading batch extent of 1 for broadcasting over mu2's rows,
/// and its gradient flows into the weight.
pub(crate) fn sigma_pass_on(
    g: &mut Graph,
    head: &SigmaHead,
    noise: &NoiseSpec,
    element_shape: &[usize],
) -> Result<VarId> {
    let var = noise.variance_tensor(element_shape)?;
    let vimg = g.constant(var);
    match *head {
        SigmaHead::Conv {
            weight,
            stride,
            padding,
        } => {
            let w2 = g.mul(weight, weight)?;
            let conv = g.conv2d(vimg, w2, None, stride, padding)?;
            g.sqrt(conv)
        }
        SigmaHead::Dense { weight } => {
            let w2 = g.mul(weight, weight)?;
            let z = g.matmul(vimg, w2)?;
            g.sqrt(z)
        }
    }
}

/// Pre-activation noise standard deviation for a first layer with weights A:
/// sqrt((A . A) sigma_x^2), shape [1, pre-activation dims...].
pub fn propagate_sigma(
    first_layer: &Layer,
    noise: &NoiseSpec,
    element_shape: &[usize],
) -> Result<Tensor> {
    let mut g = Graph::new();
    let head = match first_layer {
        Layer::Conv {
            weight,
            stride,
            padding,
            ..
        } => SigmaHead::Conv {
            weight: g.constant(weight.clone()),
            stride: *stride,
            padding: *padding,
        },
        Layer::Dense { weight, .. } => SigmaHead::Dense {
            weight: g.constant(weight.clone()),
        },
        _ => {
            return Err(Error::Usage(
                "propagate_sigma needs an affine first layer".into(),
            ))
        }
    };
    let out = sigma_pass_on(&mut g, &head, noise, element_shape)?;
    Ok(g.value(out).clone())
}

/// Builds the expected-prediction forward pass on an existing graph:
/// mu2 = Upsilon(x), sigma2 from the variance pass, mu3 = T(mu2, sigma2),
/// returns Omega(mu3). Gradients flow into the head weights through both mu2
/// and sigma2, and into all of Omega's parameters.
pub fn expected_prediction_on(
    g: &mut Graph,
    net: &StagedNet,
    x: VarId,
    noise: &NoiseSpec,
) -> Result<VarId> {
    let mu2 = net.preactivation(g, x)?;
    expected_prediction_from_mu2(g, net, mu2, noise)
}

/// Same as [`expected_prediction_on`] but continuing from an existing mu2
/// node, so a caller that already ran the clean forward pass reuses it
/// instead of paying for a second head pass.
pub fn expected_prediction_from_mu2(
    g: &mut Graph,
    net: &StagedNet,
    mu2: VarId,
    noise: &NoiseSpec,
) -> Result<VarId> {
    if noise.is_zero() {
        // T(mu, 0) is exactly ReLU; skip the dead variance pass.
        let h = g.relu(mu2);
        return net.omega_forward(g, h);
    }
    let head = SigmaHead::from_staged(&net.upsilon)?;
    let sigma2 = sigma_pass_on(g, &head, noise, net.element_shape())?;
    let mu3 = g.relu_gauss_mean(mu2, sigma2)?;
    net.omega_forward(g, mu3)
}

/// Approximate E[Phi(x + n)] for a batch x: the analytic first-moment
/// forward pass. Exact when Omega is affine; one extra forward pass of cost.
pub fn expected_prediction(net: &SplitNetwork, x: &Tensor, noise: &NoiseSpec) -> Result<Tensor> {
    let mut g = Graph::new();
    let staged = net.stage(&mut g, false);
    let xid = g.constant(x.clone());
    let out = expected_prediction_on(&mut g, &staged, xid, noise)?;
    Ok(g.value(out).clone())
}

/// First-layer activation statistics (mu2, sigma2, mu3) for a batch.
/// sigma2 is returned broadcast to mu2's shape.
pub fn activation_stats(
    net: &SplitNetwork,
    x: &Tensor,
    noise: &NoiseSpec,
) -> Result<GaussianActivationStats> {
    let mut g = Graph::new();
    let staged = net.stage(&mut g, false);
    let xid = g.constant(x.clone());
    let mu2 = staged.preactivation(&mut g, xid)?;
    let mu2 = g.value(mu2).clone();
    let sigma_row = propagate_sigma_of_net(net, noise)?;
    // Broadcast the one-row sigma across the batch.
    let rows = mu2.numel() / sigma_row.numel();
    let mut sigma2 = Tensor::zeros(mu2.shape());
    for chunk in sigma2.data_mut().chunks_exact_mut(sigma_row.numel()) {
        chunk.copy_from_slice(sigma_row.data());
    }
    debug_assert_eq!(rows * sigma_row.numel(), mu2.numel());
    let mu3 = relu_gaussian_mean(&mu2, &sigma2)?;
    Ok(GaussianActivationStats { mu2, sigma2, mu3 })
}

fn propagate_sigma_of_net(net: &SplitNetwork, noise: &NoiseSpec) -> Result<Tensor> {
    propagate_sigma(&net.upsilon, noise, &net.input_shape)
}

/// E[||n||_2] for n ~ N(0, sigma^2 I_n): sqrt(2) sigma Gamma((n+1)/2) /
/// Gamma(n/2), the chi-distribution mean. Tends to sigma*sqrt(n) for large n.
pub fn expected_noise_norm(n: usize, sigma: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::Domain(format!(
            "expected_noise_norm needs n >= 1, got {n}"
        )));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::Domain(format!(
            "expected_noise_norm needs sigma >= 0, got {sigma}"
        )));
    }
    let half = n as f64 / 2.0;
    let ratio = (special::ln_gamma(half + 0.5)? - special::ln_gamma(half)?).exp();
    Ok(special::SQRT_2 * sigma * ratio)
}
