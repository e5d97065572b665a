//! Raw trainable parameters and the per-family loss/gradient math.
//!
//! Parameters live in one flat `Vec<f64>` — user embeddings, then item
//! embeddings, then (for the MLP head) layer weights — so optimizer steps
//! are a single axpy and finite-difference verification can perturb any
//! coordinate uniformly.

use super::{ModelFamily, TrainConfig};
use crate::error::{Error, Result};
use crate::types::{ItemId, LabeledExample, UserId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[inline]
pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a 0/1 label, in the form that
/// stays finite for any finite logit.
#[inline]
pub(crate) fn bce_logit(s: f64, y: f64) -> f64 {
    s.max(0.0) - s * y + (-s.abs()).exp().ln_1p()
}

/// Bipartite interaction graph with symmetric-normalized edge weights,
/// built from the positives a particular model trains on.
pub(crate) struct Graph {
    user_adj: Vec<Vec<u32>>,
    item_adj: Vec<Vec<u32>>,
    /// 1/sqrt(degree), zero-degree nodes mapped to 0 (they stay inert).
    user_inv_sqrt: Vec<f64>,
    item_inv_sqrt: Vec<f64>,
}

impl Graph {
    fn new(num_users: usize, num_items: usize, positives: &[(UserId, ItemId)]) -> Graph {
        let mut user_adj = vec![Vec::new(); num_users];
        let mut item_adj = vec![Vec::new(); num_items];
        for &(u, i) in positives {
            user_adj[u.index()].push(i.0);
            item_adj[i.index()].push(u.0);
        }
        let inv = |adj: &Vec<Vec<u32>>| {
            adj.iter()
                .map(|n| {
                    if n.is_empty() {
                        0.0
                    } else {
                        1.0 / (n.len() as f64).sqrt()
                    }
                })
                .collect()
        };
        let user_inv_sqrt = inv(&user_adj);
        let item_inv_sqrt = inv(&item_adj);
        Graph {
            user_adj,
            item_adj,
            user_inv_sqrt,
            item_inv_sqrt,
        }
    }

    /// One propagation sweep: each side is replaced by the normalized sum
    /// of its neighbors on the other side.
    fn step(&self, users: &[f64], items: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
        let mut new_users = vec![0.0; users.len()];
        let mut new_items = vec![0.0; items.len()];
        for (u, neighbors) in self.user_adj.iter().enumerate() {
            let wu = self.user_inv_sqrt[u];
            let dst = &mut new_users[u * dim..(u + 1) * dim];
            for &i in neighbors {
                let w = wu * self.item_inv_sqrt[i as usize];
                let src = &items[i as usize * dim..(i as usize + 1) * dim];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        for (i, neighbors) in self.item_adj.iter().enumerate() {
            let wi = self.item_inv_sqrt[i];
            let dst = &mut new_items[i * dim..(i + 1) * dim];
            for &u in neighbors {
                let w = wi * self.user_inv_sqrt[u as usize];
                let src = &users[u as usize * dim..(u as usize + 1) * dim];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        (new_users, new_items)
    }

    /// Mean of the 0..=layers propagation powers applied to (users, items).
    /// The adjacency operator is symmetric, so this same routine maps
    /// gradients at the propagated embeddings back to the raw ones.
    fn combine(
        &self,
        users: &[f64],
        items: &[f64],
        dim: usize,
        layers: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut acc_u = users.to_vec();
        let mut acc_i = items.to_vec();
        let mut cur_u = users.to_vec();
        let mut cur_i = items.to_vec();
        for _ in 0..layers {
            let (nu, ni) = self.step(&cur_u, &cur_i, dim);
            for (a, v) in acc_u.iter_mut().zip(&nu) {
                *a += v;
            }
            for (a, v) in acc_i.iter_mut().zip(&ni) {
                *a += v;
            }
            cur_u = nu;
            cur_i = ni;
        }
        let scale = 1.0 / (layers as f64 + 1.0);
        for a in acc_u.iter_mut().chain(acc_i.iter_mut()) {
            *a *= scale;
        }
        (acc_u, acc_i)
    }
}

/// MLP head sizes for the concatenation model: 2·dim → dim → dim/2 → 1.
pub(crate) fn mlp_param_len(dim: usize) -> usize {
    let d2 = dim / 2;
    dim * 2 * dim + dim + d2 * dim + d2 + d2 + 1
}

/// A model mid-training: flat parameters plus whatever fixed structure the
/// family needs. Exposed so gradient behavior can be verified externally
/// against finite differences.
pub struct TrainState {
    pub family: ModelFamily,
    pub dim: usize,
    pub layers: usize,
    pub num_users: usize,
    pub num_items: usize,
    /// Flat parameters: user embeddings, item embeddings, MLP weights.
    pub params: Vec<f64>,
    graph: Option<Graph>,
}

impl TrainState {
    /// Seeded uniform(-0.05, 0.05) initialization. `positives` define the
    /// propagation graph and are only consulted by the graph family.
    pub fn new(
        family: ModelFamily,
        num_users: usize,
        num_items: usize,
        cfg: &TrainConfig,
        positives: &[(UserId, ItemId)],
    ) -> Result<TrainState> {
        if cfg.dim == 0 {
            return Err(Error::InvalidArgument("dim must be >= 1".into()));
        }
        if family == ModelFamily::Ncf && cfg.dim < 2 {
            return Err(Error::InvalidArgument(
                "the MLP head needs dim >= 2 (hidden width dim/2)".into(),
            ));
        }
        let n_emb = (num_users + num_items) * cfg.dim;
        let n_extra = match family {
            ModelFamily::Ncf => mlp_param_len(cfg.dim),
            _ => 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive_seed(
            cfg.seed,
            crate::seed::Stream::ParamInit,
            0,
        ));
        let params = (0..n_emb + n_extra)
            .map(|_| rng.random_range(-0.05..0.05))
            .collect();
        let graph = match family {
            ModelFamily::LightGcn => Some(Graph::new(num_users, num_items, positives)),
            _ => None,
        };
        Ok(TrainState {
            family,
            dim: cfg.dim,
            layers: cfg.layers,
            num_users,
            num_items,
            params,
            graph,
        })
    }

    #[inline]
    fn user_slice(&self, u: usize) -> &[f64] {
        &self.params[u * self.dim..(u + 1) * self.dim]
    }

    #[inline]
    fn item_slice(&self, i: usize) -> &[f64] {
        let off = (self.num_users + i) * self.dim;
        &self.params[off..off + self.dim]
    }

    fn mlp(&self) -> &[f64] {
        &self.params[(self.num_users + self.num_items) * self.dim..]
    }

    /// Embeddings in serving form: raw for the dot-product families,
    /// propagated and layer-averaged for the graph family.
    pub fn serving_vectors(&self) -> (Vec<f64>, Vec<f64>) {
        let users = &self.params[..self.num_users * self.dim];
        let items =
            &self.params[self.num_users * self.dim..(self.num_users + self.num_items) * self.dim];
        match (&self.family, &self.graph) {
            (ModelFamily::LightGcn, Some(g)) => g.combine(users, items, self.dim, self.layers),
            _ => (users.to_vec(), items.to_vec()),
        }
    }

    /// Predicted interaction probability in the current parameter state.
    pub fn predict(&self, user: UserId, item: ItemId) -> f64 {
        match self.family {
            ModelFamily::MfLogit => {
                let s = dot(self.user_slice(user.index()), self.item_slice(item.index()));
                sigmoid(s)
            }
            ModelFamily::Ncf => {
                let mut x = Vec::with_capacity(2 * self.dim);
                x.extend_from_slice(self.user_slice(user.index()));
                x.extend_from_slice(self.item_slice(item.index()));
                let (s, _, _) = mlp_forward(self.mlp(), self.dim, &x);
                sigmoid(s)
            }
            ModelFamily::LightGcn => {
                let (fu, fi) = self.serving_vectors();
                let s = dot(
                    &fu[user.index() * self.dim..(user.index() + 1) * self.dim],
                    &fi[item.index() * self.dim..(item.index() + 1) * self.dim],
                );
                sigmoid(s)
            }
        }
    }

    /// Mean binary cross-entropy of the batch (forward pass only).
    pub fn loss(&self, batch: &[LabeledExample]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let sum: f64 = match self.family {
            ModelFamily::MfLogit => batch
                .iter()
                .map(|ex| {
                    let s = dot(self.user_slice(ex.user.index()), self.item_slice(ex.item.index()));
                    bce_logit(s, ex.label as u8 as f64)
                })
                .sum(),
            ModelFamily::Ncf => batch
                .iter()
                .map(|ex| {
                    let mut x = Vec::with_capacity(2 * self.dim);
                    x.extend_from_slice(self.user_slice(ex.user.index()));
                    x.extend_from_slice(self.item_slice(ex.item.index()));
                    let (s, _, _) = mlp_forward(self.mlp(), self.dim, &x);
                    bce_logit(s, ex.label as u8 as f64)
                })
                .sum(),
            ModelFamily::LightGcn => {
                let (fu, fi) = self.serving_vectors();
                batch
                    .iter()
                    .map(|ex| {
                        let s = dot(
                            &fu[ex.user.index() * self.dim..(ex.user.index() + 1) * self.dim],
                            &fi[ex.item.index() * self.dim..(ex.item.index() + 1) * self.dim],
                        );
                        bce_logit(s, ex.label as u8 as f64)
                    })
                    .sum()
            }
        };
        sum / batch.len() as f64
    }

    /// Mean batch loss and its gradient, written into `grad` (which must
    /// match the parameter length and is zeroed here).
    pub fn loss_and_grad(&self, batch: &[LabeledExample], grad: &mut [f64]) -> f64 {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer shape");
        grad.fill(0.0);
        if batch.is_empty() {
            return 0.0;
        }
        let inv_n = 1.0 / batch.len() as f64;
        let dim = self.dim;
        let mut total = 0.0;
        match self.family {
            ModelFamily::MfLogit => {
                for ex in batch {
                    let (u, i) = (ex.user.index(), ex.item.index());
                    let s = dot(self.user_slice(u), self.item_slice(i));
                    let y = ex.label as u8 as f64;
                    total += bce_logit(s, y);
                    let ds = (sigmoid(s) - y) * inv_n;
                    let (gu, gi) = embedding_grads(grad, self.num_users, dim, u, i);
                    for d in 0..dim {
                        gu[d] += ds * self.item_slice(i)[d];
                        gi[d] += ds * self.user_slice(u)[d];
                    }
                }
            }
            ModelFamily::Ncf => {
                let d2 = dim / 2;
                let mlp = self.mlp();
                let (w1, rest) = mlp.split_at(dim * 2 * dim);
                let (_b1, rest) = rest.split_at(dim);
                let (w2, rest) = rest.split_at(d2 * dim);
                let (_b2, rest) = rest.split_at(d2);
                let (w3, _b3) = rest.split_at(d2);
                let w1_off = (self.num_users + self.num_items) * dim;
                let b1_off = w1_off + dim * 2 * dim;
                let w2_off = b1_off + dim;
                let b2_off = w2_off + d2 * dim;
                let w3_off = b2_off + d2;
                let b3_off = w3_off + d2;
                for ex in batch {
                    let (u, i) = (ex.user.index(), ex.item.index());
                    let mut x = Vec::with_capacity(2 * dim);
                    x.extend_from_slice(self.user_slice(u));
                    x.extend_from_slice(self.item_slice(i));
                    let (s, h1, h2) = mlp_forward(mlp, dim, &x);
                    let y = ex.label as u8 as f64;
                    total += bce_logit(s, y);
                    let ds = (sigmoid(s) - y) * inv_n;

                    // Output layer; dh2 is the gradient at h2's pre-ReLU input.
                    let mut dh2 = vec![0.0; d2];
                    for c in 0..d2 {
                        grad[w3_off + c] += ds * h2[c];
                        if h2[c] > 0.0 {
                            dh2[c] = ds * w3[c];
                        }
                    }
                    grad[b3_off] += ds;
                    // Second hidden layer.
                    let mut dh1 = vec![0.0; dim];
                    for r in 0..d2 {
                        if dh2[r] != 0.0 {
                            for c in 0..dim {
                                grad[w2_off + r * dim + c] += dh2[r] * h1[c];
                                if h1[c] > 0.0 {
                                    dh1[c] += dh2[r] * w2[r * dim + c];
                                }
                            }
                            grad[b2_off + r] += dh2[r];
                        }
                    }
                    // First hidden layer and the embeddings behind x.
                    let mut dx = vec![0.0; 2 * dim];
                    for r in 0..dim {
                        if dh1[r] != 0.0 {
                            for c in 0..2 * dim {
                                grad[w1_off + r * 2 * dim + c] += dh1[r] * x[c];
                                dx[c] += dh1[r] * w1[r * 2 * dim + c];
                            }
                            grad[b1_off + r] += dh1[r];
                        }
                    }
                    let (gu, gi) = embedding_grads(grad, self.num_users, dim, u, i);
                    for d in 0..dim {
                        gu[d] += dx[d];
                        gi[d] += dx[dim + d];
                    }
                }
            }
            ModelFamily::LightGcn => {
                let (fu, fi) = self.serving_vectors();
                let mut dfu = vec![0.0; self.num_users * dim];
                let mut dfi = vec![0.0; self.num_items * dim];
                for ex in batch {
                    let (u, i) = (ex.user.index(), ex.item.index());
                    let su = &fu[u * dim..(u + 1) * dim];
                    let si = &fi[i * dim..(i + 1) * dim];
                    let s = dot(su, si);
                    let y = ex.label as u8 as f64;
                    total += bce_logit(s, y);
                    let ds = (sigmoid(s) - y) * inv_n;
                    for d in 0..dim {
                        dfu[u * dim + d] += ds * si[d];
                        dfi[i * dim + d] += ds * su[d];
                    }
                }
                let g = self.graph.as_ref().expect("graph family has a graph");
                let (gu, gi) = g.combine(&dfu, &dfi, dim, self.layers);
                grad[..self.num_users * dim].copy_from_slice(&gu);
                grad[self.num_users * dim..(self.num_users + self.num_items) * dim]
                    .copy_from_slice(&gi);
            }
        }
        total * inv_n
    }
}

/// Disjoint mutable views of one user row and one item row of the gradient.
fn embedding_grads(
    grad: &mut [f64],
    num_users: usize,
    dim: usize,
    u: usize,
    i: usize,
) -> (&mut [f64], &mut [f64]) {
    let item_off = (num_users + i) * dim;
    let (head, tail) = grad.split_at_mut(item_off);
    (&mut head[u * dim..(u + 1) * dim], &mut tail[..dim])
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward pass of the concatenation MLP; returns the output logit and the
/// post-ReLU hidden activations (needed for the backward pass).
pub(crate) fn mlp_forward(mlp: &[f64], dim: usize, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let d2 = dim / 2;
    let (w1, rest) = mlp.split_at(dim * 2 * dim);
    let (b1, rest) = rest.split_at(dim);
    let (w2, rest) = rest.split_at(d2 * dim);
    let (b2, rest) = rest.split_at(d2);
    let (w3, b3) = rest.split_at(d2);
    let mut h1 = vec![0.0; dim];
    for r in 0..dim {
        let mut acc = b1[r];
        for c in 0..2 * dim {
            acc += w1[r * 2 * dim + c] * x[c];
        }
        h1[r] = acc.max(0.0);
    }
    let mut h2 = vec![0.0; d2];
    for r in 0..d2 {
        let mut acc = b2[r];
        for c in 0..dim {
            acc += w2[r * dim + c] * h1[c];
        }
        h2[r] = acc.max(0.0);
    }
    let mut s = b3[0];
    for c in 0..d2 {
        s += w3[c] * h2[c];
    }
    (s, h1, h2)
}
