//! Per-attribute distribution estimators and the privacy objective.
//!
//! An [`AttributeFilter`] is a two-layer perceptron `h -> softmax(W2 relu(W1 h + b1) + b2)`
//! predicting one attribute from a user representation. Users who disclose
//! the attribute train it with cross-entropy; users who keep it private
//! leave it frozen and instead move their own representation so that its
//! prediction becomes uniform, i.e. they minimise `KL(p ‖ U) = ln C - H(p)`.

use crate::data::AttrMask;
use crate::error::{Error, Result};
use crate::numeric::{axpy, cross_entropy, entropy, softmax, Matrix, SimRng, PROB_FLOOR};
use crate::recmodel::{bpr_gradients_vectors, bpr_loss_vectors, BprTriple, RecModel};

pub const DEFAULT_HIDDEN: usize = 64;
/// Weights start as `N(0, (scale / sqrt(fan_in))^2)`.
pub const DEFAULT_INIT_SCALE: f64 = 0.1;

/// Parameter tensors in the order W1, b1, W2, b2.
pub type FilterTensors = [Vec<f64>; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeFilter {
    name: String,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub probs: Vec<f64>,
}

impl AttributeFilter {
    /// All-zero parameters; predicts the uniform distribution everywhere.
    pub fn zeros(name: impl Into<String>, classes: usize, hidden: usize, input_dim: usize) -> Self {
        AttributeFilter {
            name: name.into(),
            w1: Matrix::zeros(hidden, input_dim),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(classes, hidden),
            b2: vec![0.0; classes],
        }
    }

    /// Gaussian weights with standard deviation `init_scale / sqrt(fan_in)`,
    /// zero biases.
    pub fn random(
        name: impl Into<String>,
        classes: usize,
        hidden: usize,
        input_dim: usize,
        init_scale: f64,
        rng: &mut SimRng,
    ) -> Self {
        let s1 = init_scale / (input_dim.max(1) as f64).sqrt();
        let s2 = init_scale / (hidden.max(1) as f64).sqrt();
        let w1 = Matrix::from_fn(hidden, input_dim, |_, _| rng.gaussian(0.0, s1));
        let w2 = Matrix::from_fn(classes, hidden, |_, _| rng.gaussian(0.0, s2));
        AttributeFilter {
            name: name.into(),
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; classes],
        }
    }

    pub fn from_parts(name: String, w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>) -> Result<Self> {
        let hidden = w1.rows();
        if b1.len() != hidden || w2.cols() != hidden || b2.len() != w2.rows() {
            return Err(Error::dim(format!(
                "filter {name}: W1 {:?}, b1 {}, W2 {:?}, b2 {}",
                w1.shape(),
                b1.len(),
                w2.shape(),
                b2.len()
            )));
        }
        if w2.rows() < 2 {
            return Err(Error::param(format!("filter {name} needs at least 2 classes")));
        }
        let f = AttributeFilter { name, w1, b1, w2, b2 };
        if !f.is_finite() {
            return Err(Error::state(format!("filter {} has non-finite parameters", f.name)));
        }
        Ok(f)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> usize {
        self.w2.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), &mut self.b1, self.w2.as_mut_slice(), &mut self.b2]
    }

    /// Zero tensors shaped like this filter's parameters.
    pub fn zero_tensors(&self) -> FilterTensors {
        self.tensors().map(|t| vec![0.0; t.len()])
    }

    /// `self += alpha * delta`, tensor by tensor.
    pub fn add_scaled(&mut self, alpha: f64, delta: &FilterTensors) {
        for (p, d) in self.tensors_mut().into_iter().zip(delta) {
            axpy(alpha, d, p);
        }
    }

    /// `self - other` tensor by tensor.
    pub fn diff(&self, other: &AttributeFilter) -> FilterTensors {
        let mine = self.tensors();
        let theirs = other.tensors();
        std::array::from_fn(|k| mine[k].iter().zip(theirs[k]).map(|(a, b)| a - b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.input_dim() {
            return Err(Error::dim(format!(
                "filter {} expects input of length {}, got {}",
                self.name,
                self.input_dim(),
                h.len()
            )));
        }
        Ok(())
    }

    pub fn forward_trace(&self, h: &[f64]) -> Result<ForwardTrace> {
        self.check_input(h)?;
        let mut pre = self.w1.matvec(h)?;
        axpy(1.0, &self.b1, &mut pre);
        let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let mut logits = self.w2.matvec(&act)?;
        axpy(1.0, &self.b2, &mut logits);
        let probs = softmax(&logits)?;
        Ok(ForwardTrace { pre, act, probs })
    }

    /// Predicted class distribution for representation `h`.
    pub fn forward(&self, h: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(h)?.probs)
    }

    /// Backpropagate a logit gradient to the input representation.
    fn input_gradient(&self, trace: &ForwardTrace, d_logits: &[f64]) -> Vec<f64> {
        let d_act = self.w2.matvec_t(d_logits).expect("shape checked by forward");
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(&trace.pre)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
        self.w1.matvec_t(&d_pre).expect("shape checked by forward")
    }

    /// Mean cross-entropy over `batch` and its gradient with respect to the
    /// filter parameters. Inputs are treated as constants.
    pub fn ce_gradients(&self, batch: &[(&[f64], usize)]) -> Result<(f64, FilterTensors)> {
        if batch.is_empty() {
            return Err(Error::param("filter training batch is empty"));
        }
        let mut grads = self.zero_tensors();
        let mut loss = 0.0;
        let (hidden, dim) = (self.hidden(), self.input_dim());
        for &(h, y) in batch {
            let trace = self.forward_trace(h)?;
            loss += cross_entropy(&trace.probs, y)?;
            let mut dz = trace.probs.clone();
            dz[y] -= 1.0;
            let d_act = self.w2.matvec_t(&dz)?;
            let [g_w1, g_b1, g_w2, g_b2] = &mut grads;
            for (c, &dzc) in dz.iter().enumerate() {
                axpy(dzc, &trace.act, &mut g_w2[c * hidden..(c + 1) * hidden]);
                g_b2[c] += dzc;
            }
            for (j, (&g, &z)) in d_act.iter().zip(&trace.pre).enumerate() {
                if z > 0.0 {
                    axpy(g, h, &mut g_w1[j * dim..(j + 1) * dim]);
                    g_b1[j] += g;
                }
            }
        }
        let n = batch.len() as f64;
        for t in grads.iter_mut() {
            t.iter_mut().for_each(|v| *v /= n);
        }
        Ok((loss / n, grads))
    }
}

pub fn filter_forward(filter: &AttributeFilter, h: &[f64]) -> Result<Vec<f64>> {
    filter.forward(h)
}

/// One SGD step on the batch's mean cross-entropy. Returns the loss measured
/// before the step.
pub fn filter_train_step(filter: &mut AttributeFilter, batch: &[(&[f64], usize)], lr: f64) -> Result<f64> {
    for &(_, y) in batch {
        if y >= filter.classes() {
            return Err(Error::Index(format!(
                "label {y} for filter {} with {} classes",
                filter.name,
                filter.classes()
            )));
        }
    }
    let (loss, grads) = filter.ce_gradients(batch)?;
    filter.add_scaled(-lr, &grads);
    Ok(loss)
}

/// `KL(filter(h) ‖ uniform) = ln C - H(filter(h))`.
pub fn privacy_loss(filter: &AttributeFilter, h: &[f64]) -> Result<f64> {
    let p = filter.forward(h)?;
    Ok(kl_to_uniform(&p))
}

fn kl_to_uniform(p: &[f64]) -> f64 {
    ((p.len() as f64).ln() - entropy(p)).max(0.0)
}

/// Loss and gradient of [`privacy_loss`] with respect to `h`; the filter is
/// only read.
pub fn privacy_loss_and_gradient(filter: &AttributeFilter, h: &[f64]) -> Result<(f64, Vec<f64>)> {
    let trace = filter.forward_trace(h)?;
    let p = &trace.probs;
    let logp: Vec<f64> = p.iter().map(|&v| v.max(PROB_FLOOR).ln()).collect();
    let mean_logp: f64 = p.iter().zip(&logp).map(|(a, b)| a * b).sum();
    let d_logits: Vec<f64> = p.iter().zip(&logp).map(|(&pk, &lk)| pk * (lk - mean_logp)).collect();
    Ok((kl_to_uniform(p), filter.input_gradient(&trace, &d_logits)))
}

pub fn privacy_gradient(filter: &AttributeFilter, h: &[f64]) -> Result<Vec<f64>> {
    Ok(privacy_loss_and_gradient(filter, h)?.1)
}

/// Utility/privacy trade-off: `β` weighs the privacy term, `1 - β` the
/// recommendation term.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivacyWeights {
    beta: f64,
    per_attribute: Option<Vec<f64>>,
}

impl PrivacyWeights {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::param(format!("beta must lie in [0, 1], got {beta}")));
        }
        Ok(PrivacyWeights { beta, per_attribute: None })
    }

    /// Relative importance per attribute id; renormalised over each user's
    /// private set.
    pub fn with_attribute_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::param("attribute weights must be finite and non-negative"));
        }
        self.per_attribute = Some(weights);
        Ok(self)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `(attribute, weight)` pairs over `mask`, summing to 1 (empty for an
    /// empty mask).
    pub fn weights_for(&self, mask: AttrMask) -> Vec<(usize, f64)> {
        let ids: Vec<usize> = mask.iter().collect();
        if ids.is_empty() {
            return Vec::new();
        }
        let equal = 1.0 / ids.len() as f64;
        match &self.per_attribute {
            Some(w) => {
                let raw: Vec<f64> = ids.iter().map(|&t| w.get(t).copied().unwrap_or(0.0)).collect();
                let total: f64 = raw.iter().sum();
                if total > 0.0 {
                    ids.into_iter().zip(raw).map(|(t, v)| (t, v / total)).collect()
                } else {
                    ids.into_iter().map(|t| (t, equal)).collect()
                }
            }
            None => ids.into_iter().map(|t| (t, equal)).collect(),
        }
    }
}

/// Weighted privacy loss `Σ_t w_t KL(g_t(h) ‖ U)` over `mask` and its
/// gradient in `h`.
pub fn privacy_term(
    filters: &[AttributeFilter],
    h: &[f64],
    mask: AttrMask,
    weights: &PrivacyWeights,
) -> Result<(f64, Vec<f64>)> {
    let mut loss = 0.0;
    let mut grad = vec![0.0; h.len()];
    for (t, w) in weights.weights_for(mask) {
        let f = filters
            .get(t)
            .ok_or_else(|| Error::state(format!("no filter for private attribute {t}")))?;
        let (l, g) = privacy_loss_and_gradient(f, h)?;
        loss += w * l;
        axpy(w, &g, &mut grad);
    }
    Ok((loss, grad))
}

/// Joint local objective value and gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct JointLoss {
    pub loss: f64,
    /// Mean BPR loss over the triples (unweighted).
    pub bpr: f64,
    /// Weighted privacy loss (before multiplying by β).
    pub privacy: f64,
    pub user_grad: Vec<f64>,
    /// Gradients per touched item, ascending item id.
    pub item_grads: Vec<(usize, Vec<f64>)>,
}

/// `(1-β)·mean BPR + β·Σ_{t∈mask} w_t·KL(g_t(e_u) ‖ U)` for one user's
/// triples. The privacy part only reaches the user embedding; filters get no
/// gradient here.
pub fn joint_local_loss(
    model: &RecModel,
    filters: &[AttributeFilter],
    triples: &[BprTriple],
    user: usize,
    mask: AttrMask,
    weights: &PrivacyWeights,
) -> Result<JointLoss> {
    if user >= model.num_users() {
        return Err(Error::Index(format!("user {user}")));
    }
    if let Some(t) = mask.iter().find(|&t| t >= filters.len()) {
        return Err(Error::state(format!("no filter for private attribute {t}")));
    }
    let beta = weights.beta();
    let e_u = model.user(user);
    let mut user_grad = vec![0.0; model.dim()];
    let mut items: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    let mut bpr = 0.0;
    let scale = if triples.is_empty() { 0.0 } else { 1.0 / triples.len() as f64 };
    for t in triples {
        if t.user != user {
            return Err(Error::param(format!("triple for user {} in user {user}'s batch", t.user)));
        }
        if t.pos >= model.num_items() || t.neg >= model.num_items() {
            return Err(Error::Index(format!("triple {t:?}")));
        }
        let (pos, neg) = (model.item(t.pos), model.item(t.neg));
        bpr += bpr_loss_vectors(e_u, pos, neg);
        let g = bpr_gradients_vectors(e_u, pos, neg);
        let w = (1.0 - beta) * scale;
        axpy(w, &g.user, &mut user_grad);
        let d = model.dim();
        axpy(w, &g.pos, items.entry(t.pos).or_insert_with(|| vec![0.0; d]));
        axpy(w, &g.neg, items.entry(t.neg).or_insert_with(|| vec![0.0; d]));
    }
    bpr *= scale;
    let (privacy, priv_grad) = privacy_term(filters, e_u, mask, weights)?;
    axpy(beta, &priv_grad, &mut user_grad);
    Ok(JointLoss {
        loss: (1.0 - beta) * bpr + beta * privacy,
        bpr,
        privacy,
        user_grad,
        item_grads: items.into_iter().collect(),
    })
}
