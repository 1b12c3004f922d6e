//! Model parameters and forward builders: a shared shallow extractor, the two
//! feature disentanglers, per-branch discriminators, and a bilinear form for
//! domain scoring.

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, ValueGraph};
use crate::matrix::Matrix;

/// Negative-side slope of the leaky rectifier used throughout.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    /// Width of the shallow extractor's hidden layer.
    pub hidden_shallow: usize,
    /// Width of the disentangled feature space.
    pub hidden: usize,
    pub n_classes: usize,
    pub n_domains: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0
            || self.hidden_shallow == 0
            || self.hidden == 0
            || self.n_classes < 2
            || self.n_domains == 0
        {
            return Err(Error::Config(format!(
                "degenerate model dims: {self:?} (need nonzero sizes and >= 2 classes)"
            )));
        }
        Ok(())
    }
}

/// One affine layer; `weight` is input x output, `bias` is 1 x output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut weight = Matrix::zeros(fan_in, fan_out);
        for w in weight.data_mut() {
            *w = rng.gen_range(-limit..limit);
        }
        Dense {
            weight,
            bias: Matrix::zeros(1, fan_out),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// Shared shallow extractor, two leaky-rectified layers.
    pub extractor: [Dense; 2],
    /// Linear map to class-related features (no activation).
    pub class_disentangler: Dense,
    /// Linear map to domain-related features (no activation).
    pub domain_disentangler: Dense,
    /// Per-class sigmoid discriminator over class features.
    pub class_head: Dense,
    /// Per-domain sigmoid discriminator over domain features.
    pub domain_head: Dense,
    /// Bilinear form for domain-prototype scoring, hidden x hidden.
    pub bilinear: Matrix,
}

impl ModelParams {
    /// Seeded init: Glorot-uniform weights, zero biases, N(0, 1/hidden)
    /// entries for the bilinear form.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extractor = [
            Dense::glorot(&mut rng, dims.feature_dim, dims.hidden_shallow),
            Dense::glorot(&mut rng, dims.hidden_shallow, dims.hidden),
        ];
        let class_disentangler = Dense::glorot(&mut rng, dims.hidden, dims.hidden);
        let domain_disentangler = Dense::glorot(&mut rng, dims.hidden, dims.hidden);
        let class_head = Dense::glorot(&mut rng, dims.hidden, dims.n_classes);
        let domain_head = Dense::glorot(&mut rng, dims.hidden, dims.n_domains);

        let normal = rand_distr::Normal::new(0.0, (1.0 / dims.hidden as f64).sqrt())
            .expect("valid std dev");
        let mut bilinear = Matrix::zeros(dims.hidden, dims.hidden);
        for w in bilinear.data_mut() {
            *w = normal.sample(&mut rng);
        }
        Ok(ModelParams {
            dims,
            extractor,
            class_disentangler,
            domain_disentangler,
            class_head,
            domain_head,
            bilinear,
        })
    }

    /// All trainable matrices in a fixed, documented order:
    /// extractor W0, b0, W1, b1; class disentangler W, b; domain disentangler
    /// W, b; class head W, b; domain head W, b; bilinear.
    pub fn param_list(&self) -> Vec<&Matrix> {
        vec![
            &self.extractor[0].weight,
            &self.extractor[0].bias,
            &self.extractor[1].weight,
            &self.extractor[1].bias,
            &self.class_disentangler.weight,
            &self.class_disentangler.bias,
            &self.domain_disentangler.weight,
            &self.domain_disentangler.bias,
            &self.class_head.weight,
            &self.class_head.bias,
            &self.domain_head.weight,
            &self.domain_head.bias,
            &self.bilinear,
        ]
    }

    pub fn param_list_mut(&mut self) -> Vec<&mut Matrix> {
        let [e0, e1] = &mut self.extractor;
        vec![
            &mut e0.weight,
            &mut e0.bias,
            &mut e1.weight,
            &mut e1.bias,
            &mut self.class_disentangler.weight,
            &mut self.class_disentangler.bias,
            &mut self.domain_disentangler.weight,
            &mut self.domain_disentangler.bias,
            &mut self.class_head.weight,
            &mut self.class_head.bias,
            &mut self.domain_head.weight,
            &mut self.domain_head.bias,
            &mut self.bilinear,
        ]
    }

    /// Register every parameter as a graph leaf, in `param_list` order.
    pub fn register(&self, g: &mut ValueGraph) -> Result<ParamNodes> {
        let ids: Vec<NodeId> = self
            .param_list()
            .into_iter()
            .map(|m| g.leaf(m.clone()))
            .collect::<Result<_>>()?;
        Ok(ParamNodes { ids })
    }
}

/// Graph leaf ids of the registered parameters, in `param_list` order.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    ids: Vec<NodeId>,
}

impl ParamNodes {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// Wrap pre-existing leaf ids (e.g. from a gradient checker) as the
    /// parameter set; order must match `ModelParams::param_list`.
    pub fn from_ids(ids: &[NodeId]) -> Result<Self> {
        if ids.len() != 13 {
            return Err(Error::Config(format!(
                "expected 13 parameter nodes, got {}",
                ids.len()
            )));
        }
        Ok(ParamNodes { ids: ids.to_vec() })
    }

    fn dense(&self, i: usize) -> (NodeId, NodeId) {
        (self.ids[2 * i], self.ids[2 * i + 1])
    }

    pub fn bilinear(&self) -> NodeId {
        self.ids[12]
    }
}

fn affine(g: &mut ValueGraph, x: NodeId, layer: (NodeId, NodeId)) -> Result<NodeId> {
    let wx = g.matmul(x, layer.0)?;
    g.add(wx, layer.1)
}

/// Shared shallow extractor: two leaky-rectified affine layers.
pub fn shallow(g: &mut ValueGraph, params: &ParamNodes, x: NodeId) -> Result<NodeId> {
    let h0 = affine(g, x, params.dense(0))?;
    let h0 = g.leaky_relu(h0, LEAKY_SLOPE)?;
    let h1 = affine(g, h0, params.dense(1))?;
    g.leaky_relu(h1, LEAKY_SLOPE)
}

/// Both disentangled views of a batch; the shallow trunk is built exactly once
/// and shared by the two linear heads. Returns (class features, domain features).
pub fn disentangle(g: &mut ValueGraph, params: &ParamNodes, x: NodeId) -> Result<(NodeId, NodeId)> {
    let trunk = shallow(g, params, x)?;
    let class_features = affine(g, trunk, params.dense(2))?;
    let domain_features = affine(g, trunk, params.dense(3))?;
    Ok((class_features, domain_features))
}

/// Per-class sigmoid discriminator over class features: each output entry is
/// an independent one-vs-rest probability (rows do not sum to 1).
pub fn discriminate_class(g: &mut ValueGraph, params: &ParamNodes, v: NodeId) -> Result<NodeId> {
    let logits = affine(g, v, params.dense(4))?;
    g.sigmoid(logits)
}

/// Per-domain sigmoid discriminator over domain features.
pub fn discriminate_domain(g: &mut ValueGraph, params: &ParamNodes, v: NodeId) -> Result<NodeId> {
    let logits = affine(g, v, params.dense(5))?;
    g.sigmoid(logits)
}

/// Bilinear similarity of one pair of vectors: x^T S p.
pub fn bilinear_sim(g: &mut ValueGraph, s: NodeId, x: NodeId, proto: NodeId) -> Result<NodeId> {
    let sp = {
        let pt = g.transpose(proto)?;
        g.matmul(s, pt)?
    };
    g.matmul(x, sp)
}

/// Batch domain scores against a prototype matrix (one row per domain):
/// X S P^T, or the plain dot-product X P^T when `s` is None.
pub fn bilinear_scores(
    g: &mut ValueGraph,
    s: Option<NodeId>,
    domain_features: NodeId,
    protos: NodeId,
) -> Result<NodeId> {
    let pt = g.transpose(protos)?;
    match s {
        Some(s) => {
            let xs = g.matmul(domain_features, s)?;
            g.matmul(xs, pt)
        }
        None => g.matmul(domain_features, pt),
    }
}

/// Plain (value-level) disentangled features for a batch, via a throwaway
/// graph so the arithmetic is identical to the training path.
pub fn forward_features(params: &ModelParams, x: &Matrix) -> Result<(Matrix, Matrix)> {
    if x.cols() != params.dims.feature_dim {
        return Err(Error::shape(
            "forward_features",
            format!("{} columns", params.dims.feature_dim),
            x.shape_str(),
        ));
    }
    let mut g = ValueGraph::new();
    let nodes = params.register(&mut g)?;
    let xid = g.leaf(x.clone())?;
    let (xc, xd) = disentangle(&mut g, &nodes, xid)?;
    Ok((g.value(xc).clone(), g.value(xd).clone()))
}
