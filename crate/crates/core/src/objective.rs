//! Cost evaluation on the grids: MMSE decoders, the pairwise distortion
//! tensor, power, entropy, the Lagrangian and free energy, and the Gibbs
//! association update.
//!
//! The channel is modelled on the output lattice: an input value `g` reaches
//! node `y` with the mass given by [`OutputAxis::channel_weights`]. Decoder
//! and distortion use the same lattice likelihoods, so the decoder returned by
//! [`compute_decoder`] is the exact minimizer of the grid distortion for the
//! encoders it was built from.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::codebook::{DecoderTable, InputTable};
use crate::error::{Error, Result};
use crate::numerics::{build_output_axis, NoiseModel, OutputAxis, OutputGrid, Side, SourceModel, UNDERFLOW_FLOOR};

/// Lagrange multipliers on the two encoder powers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangeWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LagrangeWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0) || !lambda1.is_finite() || !lambda2.is_finite() {
            return Err(Error::config(format!(
                "Lagrange multipliers must be finite and nonnegative, got {lambda1}, {lambda2}"
            )));
        }
        Ok(LagrangeWeights { lambda1, lambda2 })
    }

    /// Shared multiplier: the total-power form `D + lambda (P1 + P2)`.
    pub fn total(lambda: f64) -> Result<Self> {
        Self::new(lambda, lambda)
    }

    pub fn for_side(&self, side: Side) -> f64 {
        match side {
            Side::One => self.lambda1,
            Side::Two => self.lambda2,
        }
    }

    pub fn is_total(&self) -> bool {
        self.lambda1 == self.lambda2
    }
}

/// Everything fixed during one optimization: the discretized source, both
/// channel noises, the multipliers and the output-lattice settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub source: SourceModel,
    pub noise1: NoiseModel,
    pub noise2: NoiseModel,
    pub weights: LagrangeWeights,
    pub n_y: usize,
    pub margin: f64,
}

impl Problem {
    pub fn noise(&self, side: Side) -> &NoiseModel {
        match side {
            Side::One => &self.noise1,
            Side::Two => &self.noise2,
        }
    }

    /// Output lattice covering both encoders' reachable channel outputs.
    pub fn output_grid(&self, in1: &InputTable, in2: &InputTable) -> Result<OutputGrid> {
        Ok(OutputGrid {
            y1: build_output_axis(&in1.values, &self.noise1, self.n_y, self.margin)?,
            y2: build_output_axis(&in2.values, &self.noise2, self.n_y, self.margin)?,
        })
    }

    /// Keeps `grid` while every encoder value stays inside its central band,
    /// otherwise builds a new one.
    pub fn refresh_grid(&self, grid: &OutputGrid, in1: &InputTable, in2: &InputTable) -> Result<(OutputGrid, bool)> {
        let fits = |ax: &OutputAxis, t: &InputTable, n: &NoiseModel| {
            let lo = t.values.iter().cloned().fold(f64::INFINITY, f64::min) + n.min();
            let hi = t.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + n.max();
            !ax.degenerate && ax.still_fits(lo, hi)
        };
        if fits(&grid.y1, in1, &self.noise1) && fits(&grid.y2, in2, &self.noise2) {
            Ok((*grid, false))
        } else {
            let fresh = self.output_grid(in1, in2)?;
            Ok((fresh, fresh != *grid))
        }
    }
}

/// Sparse lattice likelihoods for every `(node, model)` pair of an encoder.
#[derive(Debug, Clone)]
pub struct KernelTable {
    starts: Vec<usize>,
    offsets: Vec<usize>,
    weights: Vec<f64>,
}

impl KernelTable {
    pub fn build(table: &InputTable, axis: &OutputAxis, sigma: f64) -> Self {
        let count = table.n_x * table.k;
        let mut starts = Vec::with_capacity(count);
        let mut offsets = Vec::with_capacity(count + 1);
        let mut weights = Vec::new();
        let mut scratch = Vec::new();
        offsets.push(0);
        for &g in &table.values {
            starts.push(axis.channel_weights(g, sigma, &mut scratch));
            weights.extend_from_slice(&scratch);
            offsets.push(weights.len());
        }
        KernelTable {
            starts,
            offsets,
            weights,
        }
    }

    /// First node and weights for flat index `i * k + m`.
    #[inline]
    pub fn get(&self, idx: usize) -> (usize, &[f64]) {
        (self.starts[idx], &self.weights[self.offsets[idx]..self.offsets[idx + 1]])
    }
}

/// Conditional-mean decoders for the given encoders on `grid`.
///
/// Computed through the intermediate `M(x1, y2) = sum_x2 q(x1, x2) a2(y2, x2)`
/// so the cost is `O(Nx^2 Ny + Nx Ny^2)`. Nodes that no mass reaches are
/// filled from the nearest reached node.
pub fn compute_decoder(
    source: &SourceModel,
    noise1: &NoiseModel,
    noise2: &NoiseModel,
    enc1: &InputTable,
    enc2: &InputTable,
    grid: &OutputGrid,
) -> DecoderTable {
    let (n1, n2) = (source.n1(), source.n2());
    assert_eq!(enc1.n_x, n1, "encoder 1 is not aligned with source grid 1");
    assert_eq!(enc2.n_x, n2, "encoder 2 is not aligned with source grid 2");
    let (ny1, ny2) = (grid.y1.axis.n, grid.y2.axis.n);
    let ker1 = KernelTable::build(enc1, &grid.y1, noise1.std());
    let ker2 = KernelTable::build(enc2, &grid.y2, noise2.std());

    let mut m_z = vec![0.0; n1 * ny2];
    let mut m_x2 = vec![0.0; n1 * ny2];
    for i in 0..n1 {
        let (lo, hi) = source.row_support[i];
        let row_z = &mut m_z[i * ny2..(i + 1) * ny2];
        let row_x = &mut m_x2[i * ny2..(i + 1) * ny2];
        for j in lo..hi {
            let q = source.joint(i, j);
            if q == 0.0 {
                continue;
            }
            let x2 = source.x_grid_2[j];
            for m in 0..enc2.k {
                let idx = j * enc2.k + m;
                let pq = q * enc2.probs[idx];
                if pq == 0.0 {
                    continue;
                }
                let (s, w) = ker2.get(idx);
                for (t, &wt) in w.iter().enumerate() {
                    row_z[s + t] += pq * wt;
                    row_x[s + t] += pq * x2 * wt;
                }
            }
        }
    }

    let mut z = vec![0.0; ny1 * ny2];
    let mut num1 = vec![0.0; ny1 * ny2];
    let mut num2 = vec![0.0; ny1 * ny2];
    for i in 0..n1 {
        let x1 = source.x_grid_1[i];
        let row_z = &m_z[i * ny2..(i + 1) * ny2];
        let row_x = &m_x2[i * ny2..(i + 1) * ny2];
        for m in 0..enc1.k {
            let idx = i * enc1.k + m;
            let p = enc1.probs[idx];
            if p == 0.0 {
                continue;
            }
            let (s, w) = ker1.get(idx);
            for (t, &wt) in w.iter().enumerate() {
                let a = p * wt;
                let base = (s + t) * ny2;
                let zr = &mut z[base..base + ny2];
                for (zv, &mv) in zr.iter_mut().zip(row_z) {
                    *zv += a * mv;
                }
                let nr = &mut num1[base..base + ny2];
                for (nv, &mv) in nr.iter_mut().zip(row_z) {
                    *nv += a * x1 * mv;
                }
                let nr = &mut num2[base..base + ny2];
                for (nv, &mv) in nr.iter_mut().zip(row_x) {
                    *nv += a * mv;
                }
            }
        }
    }

    let mut valid = vec![false; ny1 * ny2];
    let mut xhat1 = vec![0.0; ny1 * ny2];
    let mut xhat2 = vec![0.0; ny1 * ny2];
    for p in 0..ny1 * ny2 {
        if z[p] >= UNDERFLOW_FLOOR {
            valid[p] = true;
            xhat1[p] = num1[p] / z[p];
            xhat2[p] = num2[p] / z[p];
        }
    }
    let filled = fill_from_nearest(&mut xhat1, &mut xhat2, &valid, ny1, ny2);
    DecoderTable {
        grid: *grid,
        xhat1,
        xhat2,
        filled_nodes: filled,
    }
}

/// Breadth-first fill of invalid nodes from valid neighbours (8-connected).
fn fill_from_nearest(a: &mut [f64], b: &mut [f64], valid: &[bool], n1: usize, n2: usize) -> usize {
    let missing = valid.iter().filter(|v| !**v).count();
    if missing == 0 || missing == valid.len() {
        return missing;
    }
    let mut done = valid.to_vec();
    let mut queue: VecDeque<usize> = (0..valid.len()).filter(|&p| valid[p]).collect();
    while let Some(p) = queue.pop_front() {
        let (i, j) = ((p / n2) as isize, (p % n2) as isize);
        for di in -1..=1isize {
            for dj in -1..=1isize {
                let (u, v) = (i + di, j + dj);
                if u < 0 || v < 0 || u >= n1 as isize || v >= n2 as isize {
                    continue;
                }
                let r = u as usize * n2 + v as usize;
                if !done[r] {
                    done[r] = true;
                    a[r] = a[p];
                    b[r] = b[p];
                    queue.push_back(r);
                }
            }
        }
    }
    missing
}

/// `D_{k1,k2}(x1, x2)` for every model pair and source node pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionTensor {
    pub k1: usize,
    pub k2: usize,
    pub n1: usize,
    pub n2: usize,
    pub values: Vec<f64>,
}

impl DistortionTensor {
    #[inline]
    pub fn at(&self, k1: usize, k2: usize, i: usize, j: usize) -> f64 {
        self.values[((k1 * self.k2 + k2) * self.n1 + i) * self.n2 + j]
    }
}

/// Rows of the decoder tables combined with the lattice weights of one
/// channel-1 input: `u = sum_t w[t] * table[s + t, :]`.
fn row_combination(table: &[f64], n2: usize, s: usize, w: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (t, &wt) in w.iter().enumerate() {
        let row = &table[(s + t) * n2..(s + t + 1) * n2];
        for (o, &r) in out.iter_mut().zip(row) {
            *o += wt * r;
        }
    }
}

#[inline]
fn sparse_dot(s: usize, w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(&v[s..s + w.len()]).map(|(a, b)| a * b).sum()
}

fn squared_table(dec: &DecoderTable) -> Vec<f64> {
    dec.xhat1.iter().zip(&dec.xhat2).map(|(a, b)| a * a + b * b).collect()
}

/// Expected squared error of every `(k1, k2, x1, x2)` under the lattice
/// channel and the node values of `decoder`. Pairs outside the joint support
/// are left at zero.
pub fn compute_distortion_tensor(
    source: &SourceModel,
    noise1: &NoiseModel,
    noise2: &NoiseModel,
    enc1: &InputTable,
    enc2: &InputTable,
    decoder: &DecoderTable,
) -> DistortionTensor {
    let (n1, n2) = (source.n1(), source.n2());
    let ny2 = decoder.n2();
    let ker1 = KernelTable::build(enc1, &decoder.grid.y1, noise1.std());
    let ker2 = KernelTable::build(enc2, &decoder.grid.y2, noise2.std());
    let sq = squared_table(decoder);
    let (k1n, k2n) = (enc1.k, enc2.k);
    let mut values = vec![0.0; k1n * k2n * n1 * n2];
    let mut u1 = vec![0.0; ny2];
    let mut u2 = vec![0.0; ny2];
    let mut us = vec![0.0; ny2];
    for k1 in 0..k1n {
        for i in 0..n1 {
            let x1 = source.x_grid_1[i];
            let (s, w) = ker1.get(i * k1n + k1);
            row_combination(&decoder.xhat1, ny2, s, w, &mut u1);
            row_combination(&decoder.xhat2, ny2, s, w, &mut u2);
            row_combination(&sq, ny2, s, w, &mut us);
            let (lo, hi) = source.row_support[i];
            for j in lo..hi {
                let x2 = source.x_grid_2[j];
                for k2 in 0..k2n {
                    let (s2, w2) = ker2.get(j * k2n + k2);
                    let a1 = sparse_dot(s2, w2, &u1);
                    let a2 = sparse_dot(s2, w2, &u2);
                    let b = sparse_dot(s2, w2, &us);
                    let d = x1 * x1 + x2 * x2 - 2.0 * x1 * a1 - 2.0 * x2 * a2 + b;
                    values[((k1 * k2n + k2) * n1 + i) * n2 + j] = d.max(0.0);
                }
            }
        }
    }
    DistortionTensor {
        k1: k1n,
        k2: k2n,
        n1,
        n2,
        values,
    }
}

/// `sum q(x1, x2) sum p(k1|x1) p(k2|x2) D_{k1,k2}(x1, x2)`.
pub fn expected_distortion(tensor: &DistortionTensor, source: &SourceModel, enc1: &InputTable, enc2: &InputTable) -> f64 {
    let n1 = tensor.n1;
    assert_eq!((enc1.k, enc2.k), (tensor.k1, tensor.k2), "model counts differ from tensor");
    let mut d = 0.0;
    for i in 0..n1 {
        let (lo, hi) = source.row_support[i];
        for j in lo..hi {
            let q = source.joint(i, j);
            if q == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for k1 in 0..tensor.k1 {
                let p1 = enc1.probs[i * tensor.k1 + k1];
                if p1 == 0.0 {
                    continue;
                }
                for k2 in 0..tensor.k2 {
                    s += p1 * enc2.probs[j * tensor.k2 + k2] * tensor.at(k1, k2, i, j);
                }
            }
            d += q * s;
        }
    }
    d
}

/// Per-node, per-model cost `d(k, x)` feeding the Gibbs update.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCosts {
    pub n_x: usize,
    pub k: usize,
    /// `values[i * k + m]`
    pub values: Vec<f64>,
    /// Rows whose marginal mass underflowed; only the power term is present.
    pub flagged: Vec<bool>,
}

/// `d(k, x) = E[D_{k,K'}(x, X') | x] + lambda g_k(x)^2` for the encoder on `side`,
/// where the expectation runs over the other source and the other encoder's
/// associations.
pub fn conditional_model_cost(
    tensor: &DistortionTensor,
    source: &SourceModel,
    other: &InputTable,
    lambda: f64,
    own: &InputTable,
    side: Side,
) -> ModelCosts {
    let (n1, n2) = (tensor.n1, tensor.n2);
    let (n_own, k_own) = (own.n_x, own.k);
    let mut values = vec![0.0; n_own * k_own];
    let flagged = match side {
        Side::One => source.flagged_1.clone(),
        Side::Two => source.flagged_2.clone(),
    };
    for i in 0..n_own {
        for m in 0..k_own {
            let g = own.values[i * k_own + m];
            let mut d = 0.0;
            if !flagged[i] {
                match side {
                    Side::One => {
                        let (lo, hi) = source.row_support[i];
                        for j in lo..hi {
                            let c = source.q_cond_2_given_1[i * n2 + j];
                            if c == 0.0 {
                                continue;
                            }
                            let mut s = 0.0;
                            for k2 in 0..other.k {
                                s += other.probs[j * other.k + k2] * tensor.at(m, k2, i, j);
                            }
                            d += c * s;
                        }
                    }
                    Side::Two => {
                        let (lo, hi) = source.col_support[i];
                        for j in lo..hi {
                            let c = source.q_cond_1_given_2[i * n1 + j];
                            if c == 0.0 {
                                continue;
                            }
                            let mut s = 0.0;
                            for k1 in 0..other.k {
                                s += other.probs[j * other.k + k1] * tensor.at(k1, m, j, i);
                            }
                            d += c * s;
                        }
                    }
                }
            }
            values[i * k_own + m] = d + lambda * g * g;
        }
    }
    ModelCosts {
        n_x: n_own,
        k: k_own,
        values,
        flagged,
    }
}

/// Gibbs associations `p(k|x) ∝ exp(-d(k, x) / T)`, stabilized per row.
pub fn gibbs_update(costs: &[f64], k: usize, temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    assert!(k >= 1 && costs.len() % k == 0);
    let mut out = vec![0.0; costs.len()];
    for (row, dst) in costs.chunks(k).zip(out.chunks_mut(k)) {
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for (d, o) in row.iter().zip(dst.iter_mut()) {
            *o = (-(d - lo) / temperature).exp();
            total += *o;
        }
        dst.iter_mut().for_each(|o| *o /= total);
    }
    out
}

/// Conditional entropy (nats) of the associations of one encoder.
pub fn association_entropy(probs: &[f64], k: usize, marginal: &[f64]) -> f64 {
    let mut h = 0.0;
    for (row, &q) in probs.chunks(k).zip(marginal) {
        let mut r = 0.0;
        for &p in row {
            if p > 0.0 {
                r -= p * p.ln();
            }
        }
        h += q * r;
    }
    h.max(0.0)
}

/// `H(K1|X1) + H(K2|X2)`.
pub fn compute_entropy(enc1: &InputTable, enc2: &InputTable, source: &SourceModel) -> f64 {
    association_entropy(&enc1.probs, enc1.k, &source.q_marg_1) + association_entropy(&enc2.probs, enc2.k, &source.q_marg_2)
}

/// `sum q(x) sum p(k|x) g_k(x)^2`.
pub fn table_power(table: &InputTable, marginal: &[f64]) -> f64 {
    let mut p = 0.0;
    for (i, &q) in marginal.iter().enumerate() {
        let mut s = 0.0;
        for m in 0..table.k {
            let g = table.values[i * table.k + m];
            s += table.probs[i * table.k + m] * g * g;
        }
        p += q * s;
    }
    p
}

/// Cost components at one temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub d: f64,
    pub p1: f64,
    pub p2: f64,
    pub h: f64,
    pub j: f64,
    pub f: f64,
}

pub fn cost_report(d: f64, p1: f64, p2: f64, h: f64, weights: &LagrangeWeights, temperature: f64) -> CostReport {
    let j = d + weights.lambda1 * p1 + weights.lambda2 * p2;
    CostReport {
        d,
        p1,
        p2,
        h,
        j,
        f: j - temperature * h,
    }
}

/// Conditional expected distortion of one encoder as a function of its own
/// channel-input value, with the decoder and the other encoder held fixed.
///
/// For own node `i` and input `g`,
/// `E[(x1 - X̂1)^2 + (x2 - X̂2)^2 | x_i, g] = base[i] + w(g) · coef[i]`,
/// where `w(g)` are the lattice likelihoods on the own output axis.
#[derive(Debug, Clone)]
pub struct ConditionalField {
    pub side: Side,
    pub axis: OutputAxis,
    pub sigma: f64,
    n_y: usize,
    pub base: Vec<f64>,
    coef: Vec<f64>,
    pub flagged: Vec<bool>,
}

impl ConditionalField {
    pub fn build(problem: &Problem, other: &InputTable, decoder: &DecoderTable, side: Side) -> Self {
        let source = &problem.source;
        let (n1, n2) = (source.n1(), source.n2());
        let (ny1, ny2) = (decoder.n1(), decoder.n2());
        let sq = squared_table(decoder);
        let other_side = side.other();
        let other_axis = match other_side {
            Side::One => &decoder.grid.y1,
            Side::Two => &decoder.grid.y2,
        };
        let ker = KernelTable::build(other, other_axis, problem.noise(other_side).std());
        let (n_own, ny_own, ny_other) = match side {
            Side::One => (n1, ny1, ny2),
            Side::Two => (n2, ny2, ny1),
        };
        let own_grid = source.grid(side);
        let other_grid = source.grid(other_side);
        let mut base = vec![0.0; n_own];
        let mut coef = vec![0.0; n_own * ny_own];
        let flagged = match side {
            Side::One => source.flagged_1.clone(),
            Side::Two => source.flagged_2.clone(),
        };
        let mut r0 = vec![0.0; ny_other];
        let mut rx = vec![0.0; ny_other];
        for i in 0..n_own {
            if flagged[i] {
                continue;
            }
            let x = own_grid[i];
            r0.iter_mut().for_each(|v| *v = 0.0);
            rx.iter_mut().for_each(|v| *v = 0.0);
            let (lo, hi) = match side {
                Side::One => source.row_support[i],
                Side::Two => source.col_support[i],
            };
            let mut second = 0.0;
            for j in lo..hi {
                let c = match side {
                    Side::One => source.q_cond_2_given_1[i * n2 + j],
                    Side::Two => source.q_cond_1_given_2[i * n1 + j],
                };
                if c == 0.0 {
                    continue;
                }
                let xo = other_grid[j];
                second += c * xo * xo;
                for m in 0..other.k {
                    let idx = j * other.k + m;
                    let cp = c * other.probs[idx];
                    if cp == 0.0 {
                        continue;
                    }
                    let (s, w) = ker.get(idx);
                    for (t, &wt) in w.iter().enumerate() {
                        r0[s + t] += cp * wt;
                        rx[s + t] += cp * xo * wt;
                    }
                }
            }
            base[i] = x * x + second;
            let (own_tab, other_tab) = match side {
                Side::One => (&decoder.xhat1, &decoder.xhat2),
                Side::Two => (&decoder.xhat2, &decoder.xhat1),
            };
            let (r_lo, r_hi) = support_of(&r0);
            let out = &mut coef[i * ny_own..(i + 1) * ny_own];
            for (y, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for yo in r_lo..r_hi {
                    let p = match side {
                        Side::One => y * ny2 + yo,
                        Side::Two => yo * ny2 + y,
                    };
                    acc += (-2.0 * x * own_tab[p] + sq[p]) * r0[yo] - 2.0 * other_tab[p] * rx[yo];
                }
                *o = acc;
            }
        }
        let axis = match side {
            Side::One => decoder.grid.y1,
            Side::Two => decoder.grid.y2,
        };
        ConditionalField {
            side,
            axis,
            sigma: problem.noise(side).std(),
            n_y: ny_own,
            base,
            coef,
            flagged,
        }
    }

    pub fn n_x(&self) -> usize {
        self.base.len()
    }

    /// Conditional expected distortion of node `i` sending `g`, less `base[i]`.
    #[inline]
    pub fn excess(&self, i: usize, g: f64, scratch: &mut Vec<f64>) -> f64 {
        let s = self.axis.channel_weights(g, self.sigma, scratch);
        sparse_dot(s, scratch, &self.coef[i * self.n_y..(i + 1) * self.n_y])
    }

    /// Conditional expected distortion of node `i` sending `g`.
    #[inline]
    pub fn distortion(&self, i: usize, g: f64, scratch: &mut Vec<f64>) -> f64 {
        if self.flagged[i] {
            return 0.0;
        }
        (self.base[i] + self.excess(i, g, scratch)).max(0.0)
    }
}

fn support_of(v: &[f64]) -> (usize, usize) {
    let lo = v.iter().position(|&x| x != 0.0).unwrap_or(0);
    let hi = v.iter().rposition(|&x| x != 0.0).map_or(0, |p| p + 1);
    (lo, hi.max(lo))
}

/// Grid distortion of the given encoders under `decoder`, evaluated through
/// the conditional field of encoder 1.
pub fn evaluate_distortion(problem: &Problem, enc1: &InputTable, enc2: &InputTable, decoder: &DecoderTable) -> f64 {
    let field = ConditionalField::build(problem, enc2, decoder, Side::One);
    let mut scratch = Vec::new();
    let mut d = 0.0;
    for (i, &q) in problem.source.q_marg_1.iter().enumerate() {
        if q == 0.0 || field.flagged[i] {
            continue;
        }
        let mut s = 0.0;
        for m in 0..enc1.k {
            let p = enc1.probs[i * enc1.k + m];
            if p == 0.0 {
                continue;
            }
            s += p * field.distortion(i, enc1.values[i * enc1.k + m], &mut scratch);
        }
        d += q * s;
    }
    d
}

/// Full cost report for a state, with the decoder given.
pub fn evaluate_state(
    problem: &Problem,
    enc1: &InputTable,
    enc2: &InputTable,
    decoder: &DecoderTable,
    temperature: f64,
) -> CostReport {
    let d = evaluate_distortion(problem, enc1, enc2, decoder);
    let p1 = table_power(enc1, &problem.source.q_marg_1);
    let p2 = table_power(enc2, &problem.source.q_marg_2);
    let h = compute_entropy(enc1, enc2, &problem.source);
    cost_report(d, p1, p2, h, &problem.weights, temperature)
}
