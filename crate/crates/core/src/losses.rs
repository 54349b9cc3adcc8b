//! Training objectives and their gradients with respect to the online
//! representations. Momentum representations, proxies and consistency targets
//! are treated as constants. Every loss is a mean over the anchors of a batch.

use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::math::{dot, softmax_unchecked, FeatureMatrix, Matrix};
use crate::proxy::{nearest_negative_proxies, MemoryMode, ProxyMemory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub agnostic: f64,
    pub cross: f64,
    pub hard: f64,
    pub soft: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self { agnostic: 0.5, cross: 0.07, hard: 0.1, soft: 0.4 }
    }
}

impl Temperatures {
    pub fn validate(&self) -> Result<()> {
        for t in [self.agnostic, self.cross, self.hard, self.soft] {
            if !(t > 0.0) {
                return Err(IceError::InvalidTemperature(t));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub hard: f64,
    pub soft: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { hard: 1.0, soft: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.hard >= 0.0 && self.soft >= 0.0) {
            return Err(IceError::InvalidConfig("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Negatives in the denominator of the hard instance loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeSet {
    All,
    Hardest,
}

/// Divergence used by the soft instance consistency loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Divergence {
    Kl,
    SquaredError,
}

/// A scalar loss and its gradient w.r.t. each row of the online batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad: FeatureMatrix,
}

impl LossTerm {
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self { value: 0.0, grad: Matrix::zeros(rows, cols) }
    }
}

/// Softmax log loss with the positive at logit index 0.
///
/// Returns the loss and the softmax probabilities, from which the gradient
/// w.r.t. each similarity is `(p_j - [j == 0]) / tau`.
pub fn contrastive_log_loss(sims: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let (top, max) = sims
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
    let rest: f64 =
        sims.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, s)| ((s - max) / tau).exp()).sum();
    let value = (max - sims[0]) / tau + rest.ln_1p();
    (value, softmax_unchecked(sims, tau))
}

fn accumulate(grad: &mut [f64], targets: &[&[f64]], probs: &[f64], scale: f64) {
    for (t, p) in targets.iter().zip(probs) {
        for (g, v) in grad.iter_mut().zip(t.iter()) {
            *g += scale * p * v;
        }
    }
}

fn check_batch(f: &FeatureMatrix, labels: &[usize]) -> Result<()> {
    if labels.len() != f.rows() {
        return Err(IceError::ShapeMismatch(format!("{} labels for {} rows", labels.len(), f.rows())));
    }
    if f.rows() == 0 {
        return Err(IceError::ShapeMismatch("empty batch".into()));
    }
    Ok(())
}

/// Softmax over all cluster proxies with the anchor's own proxy as positive.
pub fn proxy_agnostic_loss(f: &FeatureMatrix, labels: &[usize], memory: &ProxyMemory, tau: f64) -> Result<LossTerm> {
    check_batch(f, labels)?;
    if !(tau > 0.0) {
        return Err(IceError::InvalidTemperature(tau));
    }
    if memory.clusters.len() < 2 {
        return Err(IceError::InsufficientClusters { needed: 2, found: memory.clusters.len() });
    }
    let b = f.rows();
    let mut out = LossTerm::zero(b, f.cols());
    let mut sims = Vec::with_capacity(memory.clusters.len());
    let mut targets: Vec<&[f64]> = Vec::with_capacity(memory.clusters.len());
    for r in 0..b {
        let pos = memory.cluster_proxy(labels[r])?;
        let fr = f.row(r);
        sims.clear();
        targets.clear();
        sims.push(dot(fr, pos.vector.as_slice()));
        targets.push(pos.vector.as_slice());
        for p in memory.clusters.iter().filter(|p| p.cluster_id != labels[r]) {
            sims.push(dot(fr, p.vector.as_slice()));
            targets.push(p.vector.as_slice());
        }
        let (v, probs) = contrastive_log_loss(&sims, tau);
        out.value += v / b as f64;
        let g = out.grad.row_mut(r);
        let scale = 1.0 / (tau * b as f64);
        accumulate(g, &targets, &probs, scale);
        for (gi, pi) in g.iter_mut().zip(pos.vector.as_slice()) {
            *gi -= scale * pi;
        }
    }
    Ok(out)
}

/// For each anchor, one softmax log loss per camera proxy of its cluster taken
/// under another camera, contrasted with the `n_neg` nearest proxies of other
/// clusters. Anchors whose cluster has no other camera contribute zero.
pub fn cross_camera_loss(
    f: &FeatureMatrix,
    labels: &[usize],
    cameras: &[usize],
    memory: &ProxyMemory,
    tau: f64,
    n_neg: usize,
) -> Result<LossTerm> {
    check_batch(f, labels)?;
    if memory.mode != MemoryMode::Aware {
        return Err(IceError::ModeMismatch);
    }
    if !(tau > 0.0) {
        return Err(IceError::InvalidTemperature(tau));
    }
    if cameras.len() != f.rows() {
        return Err(IceError::ShapeMismatch("one camera id per batch row".into()));
    }
    let b = f.rows();
    let mut out = LossTerm::zero(b, f.cols());
    for r in 0..b {
        memory.cluster_proxy(labels[r])?;
        let fr = f.row(r);
        let positives: Vec<_> =
            memory.camera_proxies_of(labels[r]).iter().filter(|p| p.camera_id != cameras[r]).collect();
        if positives.is_empty() {
            continue;
        }
        let negatives = nearest_negative_proxies(memory, fr, labels[r], n_neg)?;
        let neg_sims: Vec<f64> = negatives.iter().map(|p| dot(fr, p.vector.as_slice())).collect();
        let mut targets: Vec<&[f64]> = Vec::with_capacity(negatives.len() + 1);
        targets.push(&[]);
        targets.extend(negatives.iter().map(|p| p.vector.as_slice()));
        let mut sims = Vec::with_capacity(negatives.len() + 1);
        let scale = 1.0 / (tau * positives.len() as f64 * b as f64);
        let g = out.grad.row_mut(r);
        for pos in &positives {
            sims.clear();
            sims.push(dot(fr, pos.vector.as_slice()));
            sims.extend_from_slice(&neg_sims);
            targets[0] = pos.vector.as_slice();
            let (v, probs) = contrastive_log_loss(&sims, tau);
            out.value += v / (positives.len() * b) as f64;
            accumulate(g, &targets, &probs, scale);
            for (gi, pi) in g.iter_mut().zip(pos.vector.as_slice()) {
                *gi -= scale * pi;
            }
        }
    }
    Ok(out)
}

/// Index of the same-label momentum instance least similar to each anchor.
pub fn mine_hardest_positives(f: &FeatureMatrix, m: &FeatureMatrix, labels: &[usize]) -> Vec<usize> {
    (0..f.rows())
        .map(|i| {
            let mut best = usize::MAX;
            let mut best_sim = f64::INFINITY;
            for j in 0..m.rows() {
                if labels[j] == labels[i] {
                    let s = dot(f.row(i), m.row(j));
                    if s < best_sim {
                        best_sim = s;
                        best = j;
                    }
                }
            }
            best
        })
        .collect()
}

/// Softmax log loss between each online anchor, its hardest positive momentum
/// instance and the momentum instances of other labels.
pub fn hard_instance_loss(
    f: &FeatureMatrix,
    m: &FeatureMatrix,
    labels: &[usize],
    tau: f64,
    negatives: NegativeSet,
) -> Result<LossTerm> {
    check_batch(f, labels)?;
    if m.rows() != f.rows() || m.cols() != f.cols() {
        return Err(IceError::ShapeMismatch("online and momentum batches differ in shape".into()));
    }
    if !(tau > 0.0) {
        return Err(IceError::InvalidTemperature(tau));
    }
    let b = f.rows();
    let hardest = mine_hardest_positives(f, m, labels);
    let mut out = LossTerm::zero(b, f.cols());
    for i in 0..b {
        let fi = f.row(i);
        let k = hardest[i];
        let mut sims = vec![dot(fi, m.row(k))];
        let mut targets: Vec<&[f64]> = vec![m.row(k)];
        let neg: Vec<usize> = (0..b).filter(|&j| labels[j] != labels[i]).collect();
        if neg.is_empty() {
            return Err(IceError::NoNegatives);
        }
        match negatives {
            NegativeSet::All => {
                for &j in &neg {
                    sims.push(dot(fi, m.row(j)));
                    targets.push(m.row(j));
                }
            }
            NegativeSet::Hardest => {
                let j = neg
                    .iter()
                    .copied()
                    .max_by(|&a, &c| dot(fi, m.row(a)).total_cmp(&dot(fi, m.row(c))).then(c.cmp(&a)))
                    .expect("nonempty");
                sims.push(dot(fi, m.row(j)));
                targets.push(m.row(j));
            }
        }
        let (v, probs) = contrastive_log_loss(&sims, tau);
        out.value += v / b as f64;
        let scale = 1.0 / (tau * b as f64);
        let g = out.grad.row_mut(i);
        accumulate(g, &targets, &probs, scale);
        for (gi, mi) in g.iter_mut().zip(m.row(k)) {
            *gi -= scale * mi;
        }
    }
    Ok(out)
}

/// Row `a` of `p` is the anchor's prediction distribution over the batch on
/// augmented inputs, row `a` of `q` its target distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyDistributions {
    pub p: Matrix,
    pub q: Matrix,
}

/// `P_a = softmax(<f_a, m_j> / tau)` and `Q_a = softmax(<t_a, t_j> / tau)`
/// over every instance `j` of the batch, where `m` is the momentum batch on the
/// same augmented inputs as `f` and `t` the momentum target batch.
pub fn consistency_distributions(
    f: &FeatureMatrix,
    m_aug: &FeatureMatrix,
    target: &FeatureMatrix,
    tau: f64,
) -> Result<ConsistencyDistributions> {
    if !(tau > 0.0) {
        return Err(IceError::InvalidTemperature(tau));
    }
    let b = f.rows();
    if m_aug.rows() != b || target.rows() != b || m_aug.cols() != f.cols() || target.cols() != f.cols() || b == 0 {
        return Err(IceError::ShapeMismatch("consistency batches must be aligned".into()));
    }
    let mut p = Matrix::zeros(b, b);
    let mut q = Matrix::zeros(b, b);
    let mut s = vec![0.0; b];
    for a in 0..b {
        for (j, sj) in s.iter_mut().enumerate() {
            *sj = dot(f.row(a), m_aug.row(j));
        }
        p.row_mut(a).copy_from_slice(&softmax_unchecked(&s, tau));
        for (j, sj) in s.iter_mut().enumerate() {
            *sj = dot(target.row(a), target.row(j));
        }
        q.row_mut(a).copy_from_slice(&softmax_unchecked(&s, tau));
    }
    Ok(ConsistencyDistributions { p, q })
}

/// Mean over anchors of `KL(P_a || Q_a)`, with its gradient w.r.t. `P`.
pub fn soft_consistency_loss(dists: &ConsistencyDistributions) -> (f64, Matrix) {
    divergence(dists, Divergence::Kl)
}

fn divergence(dists: &ConsistencyDistributions, kind: Divergence) -> (f64, Matrix) {
    let b = dists.p.rows();
    let mut grad = Matrix::zeros(b, dists.p.cols());
    let mut total = 0.0;
    for a in 0..b {
        let (p, q) = (dists.p.row(a), dists.q.row(a));
        let g = grad.row_mut(a);
        for j in 0..p.len() {
            match kind {
                Divergence::Kl => {
                    let l = (p[j] / q[j]).ln();
                    total += p[j] * l;
                    g[j] = (l + 1.0) / b as f64;
                }
                Divergence::SquaredError => {
                    let d = p[j] - q[j];
                    total += d * d;
                    g[j] = 2.0 * d / b as f64;
                }
            }
        }
    }
    (total / b as f64, grad)
}

/// Mean `KL(P_a || Q_a)` alone, for diagnostics.
pub fn mean_kl(dists: &ConsistencyDistributions) -> f64 {
    divergence(dists, Divergence::Kl).0
}

/// Consistency loss with its gradient pulled back through the softmax of `P`
/// onto the online anchors.
pub fn soft_instance_loss(
    f: &FeatureMatrix,
    m_aug: &FeatureMatrix,
    target: &FeatureMatrix,
    tau: f64,
    kind: Divergence,
) -> Result<(LossTerm, ConsistencyDistributions)> {
    let dists = consistency_distributions(f, m_aug, target, tau)?;
    let (value, gp) = divergence(&dists, kind);
    let b = f.rows();
    let mut grad = Matrix::zeros(b, f.cols());
    for a in 0..b {
        let p = dists.p.row(a);
        let g = gp.row(a);
        let mean: f64 = p.iter().zip(g).map(|(pj, gj)| pj * gj).sum();
        let row = grad.row_mut(a);
        for j in 0..b {
            let ds = p[j] * (g[j] - mean) / tau;
            for (r, mj) in row.iter_mut().zip(m_aug.row(j)) {
                *r += ds * mj;
            }
        }
    }
    Ok((LossTerm { value, grad }, dists))
}

/// Component losses of one iteration. `cross` is `None` for an agnostic memory.
#[derive(Debug, Clone)]
pub struct LossComponents {
    pub agnostic: LossTerm,
    pub cross: Option<LossTerm>,
    pub hard: LossTerm,
    pub soft: LossTerm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub agnostic: f64,
    pub cross: f64,
    pub proxy: f64,
    pub hard: f64,
    pub soft: f64,
    pub total: f64,
    pub grad: FeatureMatrix,
}

/// `proxy = agnostic + 0.5 cross`, `total = proxy + w_h hard + w_s soft`,
/// applied identically to values and gradients.
pub fn total_loss(c: &LossComponents, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    let cross = c.cross.as_ref();
    for (name, v) in [
        ("agnostic", c.agnostic.value),
        ("cross", cross.map_or(0.0, |t| t.value)),
        ("hard", c.hard.value),
        ("soft", c.soft.value),
    ] {
        if !v.is_finite() {
            return Err(IceError::NonFiniteLoss(name));
        }
    }
    let cross_v = cross.map_or(0.0, |t| t.value);
    let proxy = c.agnostic.value + 0.5 * cross_v;
    let total = proxy + weights.hard * c.hard.value + weights.soft * c.soft.value;
    let mut grad = c.agnostic.grad.clone();
    if let Some(t) = cross {
        grad.add_scaled(&t.grad, 0.5)?;
    }
    if weights.hard != 0.0 {
        grad.add_scaled(&c.hard.grad, weights.hard)?;
    }
    if weights.soft != 0.0 {
        grad.add_scaled(&c.soft.grad, weights.soft)?;
    }
    if !grad.is_finite() {
        return Err(IceError::NonFiniteLoss("gradient"));
    }
    Ok(LossBreakdown {
        agnostic: c.agnostic.value,
        cross: cross_v,
        proxy,
        hard: c.hard.value,
        soft: c.soft.value,
        total,
        grad,
    })
}
