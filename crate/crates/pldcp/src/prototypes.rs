//! Domain and class prototypes: computation over a source set, similarity-based
//! domain selection, and cosine class inference.
//!
//! Prototypes are plain means of disentangled features. Inference is two-stage:
//! pick the most similar source domain by bilinear score, then the class by
//! cosine similarity to that domain's class prototypes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, ValueGraph};
use crate::matrix::{self, Matrix};
use crate::network::{self, ModelParams};

/// Score assigned to a (domain, class) pair that has no samples: effectively
/// -inf, so the softmax assigns it exactly zero probability.
const MASKED_SCORE: f64 = -1e30;

/// Row-block size used when pushing a full source set through the network.
const FORWARD_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeStore {
    /// One row per domain: mean of that domain's domain features.
    pub domain_protos: Matrix,
    /// Per domain, an n_classes x hidden matrix of class-feature means.
    /// Rows for absent classes are zero and masked out in `present`.
    pub class_protos: Vec<Matrix>,
    /// present[d][k] is true iff domain d has at least one sample of class k.
    pub present: Vec<Vec<bool>>,
}

impl PrototypeStore {
    pub fn n_domains(&self) -> usize {
        self.domain_protos.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.present.first().map_or(0, |p| p.len())
    }
}

/// Mean of `features` rows per domain id. Every id in `0..n_domains` must
/// appear; `domain_names[n]` is used in the error when domain n is empty.
pub fn compute_domain_prototypes(
    features: &Matrix,
    domain_ids: &[usize],
    n_domains: usize,
    domain_names: &[String],
) -> Result<Matrix> {
    if features.rows() != domain_ids.len() {
        return Err(Error::shape(
            "domain prototypes",
            format!("{} domain ids", features.rows()),
            domain_ids.len().to_string(),
        ));
    }
    let mut sums = Matrix::zeros(n_domains, features.cols());
    let mut counts = vec![0usize; n_domains];
    for (i, &d) in domain_ids.iter().enumerate() {
        for (s, &x) in sums.row_mut(d).iter_mut().zip(features.row(i)) {
            *s += x;
        }
        counts[d] += 1;
    }
    for d in 0..n_domains {
        if counts[d] == 0 {
            let name = domain_names.get(d).map(String::as_str).unwrap_or("?");
            return Err(Error::Data(format!(
                "domain {d} ({name}) has no samples; cannot form its prototype"
            )));
        }
        let inv = 1.0 / counts[d] as f64;
        for s in sums.row_mut(d) {
            *s *= inv;
        }
    }
    Ok(sums)
}

/// Per-(domain, class) means of `features` rows, plus a presence mask for
/// pairs with zero samples. Absent pairs are zero rows, masked.
pub fn compute_class_prototypes(
    features: &Matrix,
    domain_ids: &[usize],
    labels: &[u32],
    n_domains: usize,
    n_classes: usize,
) -> Result<(Vec<Matrix>, Vec<Vec<bool>>)> {
    if features.rows() != domain_ids.len() || features.rows() != labels.len() {
        return Err(Error::shape(
            "class prototypes",
            format!("{} ids and labels", features.rows()),
            format!("{} ids, {} labels", domain_ids.len(), labels.len()),
        ));
    }
    let mut sums = vec![Matrix::zeros(n_classes, features.cols()); n_domains];
    let mut counts = vec![vec![0usize; n_classes]; n_domains];
    for (i, (&d, &k)) in domain_ids.iter().zip(labels).enumerate() {
        let k = k as usize;
        if k >= n_classes {
            return Err(Error::Data(format!(
                "label {k} out of range for {n_classes} classes"
            )));
        }
        for (s, &x) in sums[d].row_mut(k).iter_mut().zip(features.row(i)) {
            *s += x;
        }
        counts[d][k] += 1;
    }
    let mut present = vec![vec![false; n_classes]; n_domains];
    for d in 0..n_domains {
        for k in 0..n_classes {
            if counts[d][k] > 0 {
                present[d][k] = true;
                let inv = 1.0 / counts[d][k] as f64;
                for s in sums[d].row_mut(k) {
                    *s *= inv;
                }
            }
        }
    }
    Ok((sums, present))
}

/// Inputs to a store refresh: disentangled features plus grouping data.
/// Borrowed so the trainer can pass slices of its source set directly.
pub struct StoreInputs<'a> {
    pub class_features: &'a Matrix,
    pub domain_features: &'a Matrix,
    pub domain_ids: &'a [usize],
    pub labels: &'a [u32],
    pub n_domains: usize,
    pub n_classes: usize,
    pub domain_names: &'a [String],
}

impl PrototypeStore {
    /// Build a store from already-disentangled features.
    pub fn from_features(inputs: StoreInputs<'_>) -> Result<Self> {
        let domain_protos = compute_domain_prototypes(
            inputs.domain_features,
            inputs.domain_ids,
            inputs.n_domains,
            inputs.domain_names,
        )?;
        let (class_protos, present) = compute_class_prototypes(
            inputs.class_features,
            inputs.domain_ids,
            inputs.labels,
            inputs.n_domains,
            inputs.n_classes,
        )?;
        Ok(PrototypeStore {
            domain_protos,
            class_protos,
            present,
        })
    }

    /// Forward the whole source set through the current weights (in row
    /// blocks) and recompute every prototype.
    pub fn compute(
        params: &ModelParams,
        features: &Matrix,
        domain_ids: &[usize],
        labels: &[u32],
        n_domains: usize,
        n_classes: usize,
        domain_names: &[String],
    ) -> Result<Self> {
        let (xc, xd) = forward_in_chunks(params, features)?;
        PrototypeStore::from_features(StoreInputs {
            class_features: &xc,
            domain_features: &xd,
            domain_ids,
            labels,
            n_domains,
            n_classes,
            domain_names,
        })
    }
}

/// Disentangle a feature matrix block by block to bound peak graph memory.
pub fn forward_in_chunks(params: &ModelParams, features: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = features.rows();
    let h = params.dims.hidden;
    let mut xc = Matrix::zeros(n, h);
    let mut xd = Matrix::zeros(n, h);
    let mut start = 0;
    while start < n {
        let end = (start + FORWARD_CHUNK).min(n);
        let mut block = Matrix::zeros(end - start, features.cols());
        for i in start..end {
            block.row_mut(i - start).copy_from_slice(features.row(i));
        }
        let (bc, bd) = network::forward_features(params, &block)?;
        for i in start..end {
            xc.row_mut(i).copy_from_slice(bc.row(i - start));
            xd.row_mut(i).copy_from_slice(bd.row(i - start));
        }
        start = end;
    }
    Ok((xc, xd))
}

/// Bilinear (or plain dot-product) scores of one domain-feature vector
/// against every domain prototype.
pub fn domain_scores(s: Option<&Matrix>, x_d: &[f64], domain_protos: &Matrix) -> Result<Vec<f64>> {
    let h = domain_protos.cols();
    if x_d.len() != h {
        return Err(Error::shape(
            "domain scores",
            format!("feature of length {h}"),
            x_d.len().to_string(),
        ));
    }
    let projected: Vec<f64> = match s {
        Some(s) => {
            if s.dims() != (h, h) {
                return Err(Error::shape("bilinear form", format!("{h}x{h}"), s.shape_str()));
            }
            // x^T S, so the score against prototype p is (x^T S) . p.
            (0..h)
                .map(|j| (0..h).map(|i| x_d[i] * s.at(i, j)).sum())
                .collect()
        }
        None => x_d.to_vec(),
    };
    Ok((0..domain_protos.rows())
        .map(|d| matrix::dot(&projected, domain_protos.row(d)))
        .collect())
}

/// Softmax of the bilinear scores: a probability vector over source domains.
pub fn domain_similarity(
    s: Option<&Matrix>,
    x_d: &[f64],
    domain_protos: &Matrix,
) -> Result<Vec<f64>> {
    Ok(matrix::softmax(&domain_scores(s, x_d, domain_protos)?))
}

/// Argmax with ties broken toward the lowest index.
pub fn select_domain(similarity: &[f64]) -> Result<usize> {
    if similarity.is_empty() {
        return Err(Error::Data("cannot select a domain from an empty score vector".into()));
    }
    let mut best = 0;
    for (i, &v) in similarity.iter().enumerate().skip(1) {
        if v > similarity[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Class probabilities for one sample given the selected domain's prototypes:
/// softmax over cosine similarities, with absent classes excluded from the
/// support (their probability is exactly zero).
pub fn class_inference(
    x_c: &[f64],
    class_protos: &Matrix,
    present: &[bool],
) -> Result<Vec<f64>> {
    let n_classes = class_protos.rows();
    if present.len() != n_classes {
        return Err(Error::shape(
            "class inference",
            format!("{n_classes} mask entries"),
            present.len().to_string(),
        ));
    }
    if !present.iter().any(|&p| p) {
        return Err(Error::Data(
            "selected domain has no class prototypes at all".into(),
        ));
    }
    let mut scores = vec![MASKED_SCORE; n_classes];
    for (k, &here) in present.iter().enumerate() {
        if here {
            scores[k] = matrix::cosine(x_c, class_protos.row(k))?;
        }
    }
    Ok(matrix::softmax(&scores))
}

/// Full two-stage inference for one sample: domain selection, then class
/// probabilities over the selected domain's prototypes.
pub fn infer_one(
    s: Option<&Matrix>,
    store: &PrototypeStore,
    x_c: &[f64],
    x_d: &[f64],
) -> Result<(usize, Vec<f64>)> {
    let sim = domain_similarity(s, x_d, &store.domain_protos)?;
    let d_star = select_domain(&sim)?;
    let l = class_inference(x_c, &store.class_protos[d_star], &store.present[d_star])?;
    Ok((d_star, l))
}

/// Per-sample prediction detail.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub domain: usize,
    pub label: u32,
    pub probabilities: Vec<f64>,
}

/// Batch prediction with a frozen store. `use_bilinear` selects between the
/// learned bilinear form and its plain dot-product ablation.
pub fn predict(
    params: &ModelParams,
    store: &PrototypeStore,
    features: &Matrix,
    use_bilinear: bool,
) -> Result<Vec<Prediction>> {
    let (xc, xd) = forward_in_chunks(params, features)?;
    let s = use_bilinear.then_some(&params.bilinear);
    (0..features.rows())
        .map(|i| {
            let (domain, l) = infer_one(s, store, xc.row(i), xd.row(i))?;
            let label = select_domain(&l)? as u32;
            Ok(Prediction {
                domain,
                label,
                probabilities: l,
            })
        })
        .collect()
}

/// Graph-side handle to a store registered as constant leaves.
pub struct StoreNodes {
    pub domain_protos: NodeId,
    pub class_protos: Vec<NodeId>,
}

impl StoreNodes {
    pub fn register(g: &mut ValueGraph, store: &PrototypeStore) -> Result<Self> {
        let domain_protos = g.leaf(store.domain_protos.clone())?;
        let class_protos = store
            .class_protos
            .iter()
            .map(|m| g.leaf(m.clone()))
            .collect::<Result<_>>()?;
        Ok(StoreNodes {
            domain_protos,
            class_protos,
        })
    }
}

/// Hard domain selection for a batch from value-level scores (one row per
/// sample). Shared by training and prediction so the tie rule cannot drift.
pub fn select_domains_per_row(scores: &Matrix) -> Result<Vec<usize>> {
    (0..scores.rows()).map(|i| select_domain(scores.row(i))).collect()
}

/// Differentiable class probabilities for a batch, given hard per-sample
/// domain choices. Masked classes enter the softmax with an effectively
/// -inf constant score, so their probability underflows to exactly zero and
/// no gradient flows through them.
pub fn class_probability_graph(
    g: &mut ValueGraph,
    store: &PrototypeStore,
    nodes: &StoreNodes,
    x_c: NodeId,
    d_star: &[usize],
) -> Result<NodeId> {
    let batch = g.value(x_c).rows();
    if d_star.len() != batch {
        return Err(Error::shape(
            "class probability batch",
            format!("{batch} domain choices"),
            d_star.len().to_string(),
        ));
    }
    let n_classes = store.n_classes();
    let masked = g.scalar(MASKED_SCORE)?;
    let mut rows = Vec::with_capacity(batch);
    for (i, &d) in d_star.iter().enumerate() {
        if !store.present[d].iter().any(|&p| p) {
            return Err(Error::Data(
                "selected domain has no class prototypes at all".into(),
            ));
        }
        let xi = g.row(x_c, i)?;
        let mut scores = Vec::with_capacity(n_classes);
        for k in 0..n_classes {
            if store.present[d][k] {
                let proto = g.row(nodes.class_protos[d], k)?;
                scores.push(g.cosine(xi, proto)?);
            } else {
                scores.push(masked);
            }
        }
        let stacked = g.stack_scalars(1, n_classes, &scores)?;
        rows.push(g.softmax_rows(stacked)?);
    }
    g.concat_rows(&rows)
}
