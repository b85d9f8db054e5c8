//! Forward pass, cell-wise aggregation, Bernoulli loss, and exact
//! reverse-mode gradients.
//!
//! Submanifold semantics: every layer's output sites equal the input occupied
//! sites, and a tap's contribution is skipped when the tapped cell is
//! unoccupied. This is equivalent to a dense convolution with zero features
//! at empty cells whose outputs are read only at occupied cells, which is
//! what the oracle tests check against.

use std::collections::HashMap;

use super::{Gradients, KernelError, ModelParams};
use crate::grid::{neighborhood_of_state, Cell, NeighborhoodSpec, State};

/// Probabilities are clamped to `[ε, 1-ε]` inside the loss to bound the logs.
pub const LOSS_PROB_CLAMP: f64 = 1e-7;

const NO_TARGET: u32 = u32::MAX;

/// Per-cell logits: row `i` is the state's `i`-th cell in canonical order,
/// column `j` is the spec's `j`-th offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Logits {
    pub fn from_rows(data: Vec<f64>, rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols);
        Logits { data, rows, cols }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Aggregated Bernoulli occupancy over `N(s)`: per-support-cell mean of the
/// sigmoid outputs of every occupied cell predicting it.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyField {
    support: State,
    probs: Vec<f64>,
    contributor_counts: Vec<u32>,
}

impl OccupancyField {
    /// Build a field from explicit values; used by chain code paths that
    /// construct fields without a network (and by tests).
    pub fn with_values(
        support: State,
        probs: Vec<f64>,
        contributor_counts: Vec<u32>,
    ) -> Result<Self, KernelError> {
        if probs.len() != support.len()
            || contributor_counts.len() != support.len()
            || probs.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || contributor_counts.contains(&0)
        {
            return Err(KernelError::InvalidField);
        }
        Ok(OccupancyField {
            support,
            probs,
            contributor_counts,
        })
    }

    /// Support cells in canonical order; exactly the in-bounds `N(s)`.
    pub fn support(&self) -> &State {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn contributor_counts(&self) -> &[u32] {
        &self.contributor_counts
    }

    pub fn prob_at(&self, cell: Cell) -> Option<f64> {
        self.support
            .cells()
            .binary_search(&cell)
            .ok()
            .map(|i| self.probs[i])
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Site adjacency for the conv taps, CSR layout: entry `(tap, neighbor_site)`.
struct Adjacency {
    entries: Vec<(u32, u32)>,
    start: Vec<usize>,
}

fn build_adjacency(s: &State, kernel: &NeighborhoodSpec) -> Adjacency {
    let index: HashMap<Cell, u32> = s
        .iter()
        .enumerate()
        .map(|(i, c)| (c, i as u32))
        .collect();
    let mut entries = Vec::with_capacity(s.len() * kernel.size() / 2);
    let mut start = Vec::with_capacity(s.len() + 1);
    start.push(0);
    for c in s.iter() {
        for (k, &o) in kernel.offsets().iter().enumerate() {
            if let Some(&j) = index.get(&c.offset(o)) {
                entries.push((k as u32, j));
            }
        }
        start.push(entries.len());
    }
    Adjacency { entries, start }
}

/// Mapping from each `(site, offset)` logit to its support index, with the
/// support itself: out-of-bounds targets map to `NO_TARGET` and are dropped
/// before normalization (those cells simply cannot be occupied).
fn build_support(s: &State, spec: &NeighborhoodSpec) -> (State, Vec<u32>) {
    let support = neighborhood_of_state(s, spec, true);
    let n = spec.size();
    let mut target_idx = vec![NO_TARGET; s.len() * n];
    for (i, c) in s.iter().enumerate() {
        for (j, &o) in spec.offsets().iter().enumerate() {
            let t = c.offset(o);
            if t.in_bounds(s.resolution()) {
                let idx = support
                    .cells()
                    .binary_search(&t)
                    .expect("in-bounds neighborhood cell is in support");
                target_idx[i * n + j] = idx as u32;
            }
        }
    }
    (support, target_idx)
}

/// Everything one evaluation of the network produces, cached so the trainer
/// can reuse a single forward pass for the loss, the gradients, and the
/// transition sampling.
pub struct ForwardPass {
    site_count: usize,
    adjacency: Adjacency,
    /// `activations[0]` is the constant input; `activations[l]` the
    /// post-ReLU output of conv layer `l`. Row-major `[site][channel]`.
    activations: Vec<Vec<f64>>,
    logits: Logits,
    sigmoids: Vec<f64>,
    target_idx: Vec<u32>,
    field: OccupancyField,
    kink_margin: f64,
}

impl ForwardPass {
    pub fn run(
        params: &ModelParams,
        s: &State,
        spec: &NeighborhoodSpec,
    ) -> Result<ForwardPass, KernelError> {
        if s.is_empty() {
            return Err(KernelError::EmptyState);
        }
        if params.head_width != spec.size() {
            return Err(KernelError::HeadWidthMismatch {
                expected: spec.size(),
                actual: params.head_width,
            });
        }
        let kernel = params
            .arch
            .kernel_offsets()
            .map_err(|e| KernelError::InvalidArchitecture(e.to_string()))?;
        let adjacency = build_adjacency(s, &kernel);
        let m = s.len();
        let channels = &params.arch.channels;

        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(channels.len());
        activations.push(vec![1.0; m * channels[0]]);
        let mut kink_margin = f64::INFINITY;
        for (l, layer) in params.tensors.convs.iter().enumerate() {
            let (cin, cout) = (channels[l], channels[l + 1]);
            let mut out = vec![0.0; m * cout];
            let input = &activations[l];
            for i in 0..m {
                let row = &mut out[i * cout..(i + 1) * cout];
                row.copy_from_slice(&layer.bias);
                for &(k, j) in &adjacency.entries[adjacency.start[i]..adjacency.start[i + 1]] {
                    let w_tap = &layer.weight[(k as usize) * cin * cout..][..cin * cout];
                    let feat = &input[(j as usize) * cin..][..cin];
                    for (ci, &f) in feat.iter().enumerate() {
                        if f != 0.0 {
                            let w = &w_tap[ci * cout..][..cout];
                            for (r, &wv) in row.iter_mut().zip(w) {
                                *r += wv * f;
                            }
                        }
                    }
                }
            }
            for v in out.iter_mut() {
                kink_margin = kink_margin.min(v.abs());
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            activations.push(out);
        }

        let n = params.head_width;
        let c_last = *channels.last().expect("validated arch");
        let feats = activations.last().expect("at least input activations");
        let head = &params.tensors.head;
        let mut logit_data = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut logit_data[i * n..(i + 1) * n];
            row.copy_from_slice(&head.bias);
            let feat = &feats[i * c_last..][..c_last];
            for (ci, &f) in feat.iter().enumerate() {
                if f != 0.0 {
                    let w = &head.weight[ci * n..][..n];
                    for (r, &wv) in row.iter_mut().zip(w) {
                        *r += wv * f;
                    }
                }
            }
        }
        let logits = Logits::from_rows(logit_data, m, n);

        let (support, target_idx) = build_support(s, spec);
        let sigmoids: Vec<f64> = logits.as_slice().iter().map(|&x| sigmoid(x)).collect();
        let mut sums = vec![0.0; support.len()];
        let mut counts = vec![0u32; support.len()];
        for (pos, &t) in target_idx.iter().enumerate() {
            if t != NO_TARGET {
                sums[t as usize] += sigmoids[pos];
                counts[t as usize] += 1;
            }
        }
        let probs: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| {
                debug_assert!(c > 0, "every support cell has a contributor");
                s / f64::from(c)
            })
            .collect();
        let field = OccupancyField {
            support,
            probs,
            contributor_counts: counts,
        };

        Ok(ForwardPass {
            site_count: m,
            adjacency,
            activations,
            logits,
            sigmoids,
            target_idx,
            field,
            kink_margin,
        })
    }

    pub fn logits(&self) -> &Logits {
        &self.logits
    }

    pub fn field(&self) -> &OccupancyField {
        &self.field
    }

    pub fn into_field(self) -> OccupancyField {
        self.field
    }

    /// Smallest |pre-activation| seen across all hidden units: the distance
    /// to the nearest ReLU kink. Finite-difference harnesses skip states
    /// whose margin is smaller than the perturbation can move a unit, since
    /// a straddled kink makes the two-sided difference meaningless.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    /// Negative log-likelihood of `target` under the field (see [`loss`]).
    pub fn loss(&self, target: &State) -> Result<f64, KernelError> {
        loss(&self.field, target)
    }

    /// Loss plus exact gradients of the composite
    /// forward → aggregate → clamp → Bernoulli-NLL map.
    pub fn loss_and_grad(
        &self,
        params: &ModelParams,
        target: &State,
    ) -> Result<(f64, Gradients), KernelError> {
        let field = &self.field;
        let loss_value = loss(field, target)?;

        // d(loss)/d(prob): zero where the clamp is active.
        let mut dprob = vec![0.0; field.support.len()];
        let mut t_iter = target.cells().iter().peekable();
        for (idx, (&cell, &p)) in field
            .support
            .cells()
            .iter()
            .zip(&field.probs)
            .enumerate()
        {
            let occupied = match t_iter.peek() {
                Some(&&t) if t == cell => {
                    t_iter.next();
                    true
                }
                _ => false,
            };
            if p > LOSS_PROB_CLAMP && p < 1.0 - LOSS_PROB_CLAMP {
                dprob[idx] = if occupied { -1.0 / p } else { 1.0 / (1.0 - p) };
            }
        }

        let m = self.site_count;
        let n = self.logits.cols();
        let channels = &params.arch.channels;
        let c_last = *channels.last().expect("validated arch");
        let mut grads = params.tensors.zeros_like();

        // Through the mean aggregation and the sigmoid.
        let mut dlogit = vec![0.0; m * n];
        for (pos, &t) in self.target_idx.iter().enumerate() {
            if t != NO_TARGET {
                let t = t as usize;
                let sig = self.sigmoids[pos];
                let dsig = dprob[t] / f64::from(field.contributor_counts[t]);
                dlogit[pos] = dsig * sig * (1.0 - sig);
            }
        }

        // Head.
        let feats = self.activations.last().expect("activations");
        let mut dfeat = vec![0.0; m * c_last];
        {
            let head = &params.tensors.head;
            for i in 0..m {
                let g_row = &dlogit[i * n..(i + 1) * n];
                for (b, &g) in grads.head.bias.iter_mut().zip(g_row) {
                    *b += g;
                }
                let feat = &feats[i * c_last..][..c_last];
                let df = &mut dfeat[i * c_last..(i + 1) * c_last];
                for ci in 0..c_last {
                    let f = feat[ci];
                    let w = &head.weight[ci * n..][..n];
                    let dw = &mut grads.head.weight[ci * n..(ci + 1) * n];
                    let mut acc = 0.0;
                    for (co, &g) in g_row.iter().enumerate() {
                        dw[co] += f * g;
                        acc += w[co] * g;
                    }
                    df[ci] += acc;
                }
            }
        }

        // Conv layers, last to first. `dfeat` enters as the gradient w.r.t.
        // the layer's post-ReLU output.
        for l in (0..params.tensors.convs.len()).rev() {
            let (cin, cout) = (channels[l], channels[l + 1]);
            let post = &self.activations[l + 1];
            let input = &self.activations[l];
            let layer = &params.tensors.convs[l];
            let glayer = &mut grads.convs[l];

            // ReLU: the stored activation is the post value, so the mask is
            // simply post > 0.
            let mut gpre = dfeat;
            for (g, &a) in gpre.iter_mut().zip(post) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }

            let mut dinput = vec![0.0; m * cin];
            for i in 0..m {
                let g_row = &gpre[i * cout..(i + 1) * cout];
                for (b, &g) in glayer.bias.iter_mut().zip(g_row) {
                    *b += g;
                }
                for &(k, j) in
                    &self.adjacency.entries[self.adjacency.start[i]..self.adjacency.start[i + 1]]
                {
                    let base = (k as usize) * cin * cout;
                    let feat = &input[(j as usize) * cin..][..cin];
                    let dinp = &mut dinput[(j as usize) * cin..][..cin];
                    for ci in 0..cin {
                        let f = feat[ci];
                        let w = &layer.weight[base + ci * cout..][..cout];
                        let dw = &mut glayer.weight[base + ci * cout..][..cout];
                        let mut acc = 0.0;
                        for (co, &g) in g_row.iter().enumerate() {
                            dw[co] += f * g;
                            acc += w[co] * g;
                        }
                        dinp[ci] += acc;
                    }
                }
            }
            dfeat = dinput;
        }

        Ok((loss_value, grads))
    }
}

/// Per-cell logits for a state: `M × N`, rows in the state's canonical cell
/// order, columns in the spec's offset order.
pub fn forward(
    params: &ModelParams,
    s: &State,
    spec: &NeighborhoodSpec,
) -> Result<Logits, KernelError> {
    Ok(ForwardPass::run(params, s, spec)?.logits.clone())
}

/// Sigmoid each logit and average the contributions per target cell;
/// out-of-bounds targets are dropped.
pub fn aggregate(logits: &Logits, s: &State, spec: &NeighborhoodSpec) -> OccupancyField {
    assert_eq!(logits.rows(), s.len());
    assert_eq!(logits.cols(), spec.size());
    let (support, target_idx) = build_support(s, spec);
    let mut sums = vec![0.0; support.len()];
    let mut counts = vec![0u32; support.len()];
    for (pos, &t) in target_idx.iter().enumerate() {
        if t != NO_TARGET {
            sums[t as usize] += sigmoid(logits.as_slice()[pos]);
            counts[t as usize] += 1;
        }
    }
    let probs = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| s / f64::from(c))
        .collect();
    OccupancyField {
        support,
        probs,
        contributor_counts: counts,
    }
}

/// Bernoulli negative log-likelihood over the whole support, in nats:
/// `-Σ_c [y_c ln p̂_c + (1-y_c) ln(1-p̂_c)]` with `y_c = 1` iff `c ∈ target`
/// and probabilities clamped to `[ε, 1-ε]`.
pub fn loss(field: &OccupancyField, target: &State) -> Result<f64, KernelError> {
    for t in target.iter() {
        if field.support.cells().binary_search(&t).is_err() {
            return Err(KernelError::TargetOutsideSupport { cell: t });
        }
    }
    let mut total = 0.0;
    let mut t_iter = target.cells().iter().peekable();
    for (&cell, &p) in field.support.cells().iter().zip(&field.probs) {
        let occupied = match t_iter.peek() {
            Some(&&t) if t == cell => {
                t_iter.next();
                true
            }
            _ => false,
        };
        let p = p.clamp(LOSS_PROB_CLAMP, 1.0 - LOSS_PROB_CLAMP);
        total -= if occupied { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total)
}

/// Loss and exact gradients for `target` given `s`; convenience wrapper that
/// runs a fresh forward pass.
pub fn backward(
    params: &ModelParams,
    s: &State,
    spec: &NeighborhoodSpec,
    target: &State,
) -> Result<(f64, Gradients), KernelError> {
    ForwardPass::run(params, s, spec)?.loss_and_grad(params, target)
}
