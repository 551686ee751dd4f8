//! Discretized sources, channel noise and channel-output lattices.
//!
//! Every expectation in the crate is a finite sum over these grids. Sources
//! live on uniform lattices with masses proportional to the bivariate normal
//! density at the nodes; channel outputs live on a uniform lattice per channel
//! and the additive noise is mapped onto that lattice by [`OutputAxis::channel_weights`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marginal masses below this are treated as underflow; the matching
/// conditional row is flagged instead of normalized.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// Joint masses smaller than this fraction of the largest joint mass are set
/// to zero before normalization.
pub const JOINT_PRUNE_REL: f64 = 1e-30;

/// Half width, in noise standard deviations, of the lattice noise kernel.
/// `exp(-8.5^2 / 2)` is below double-precision epsilon relative to the peak.
pub const KERNEL_HALF_WIDTH: f64 = 8.5;

pub const DEFAULT_SOURCE_SPAN: f64 = 5.0;
pub const DEFAULT_NOISE_SPAN: f64 = 4.0;
pub const DEFAULT_N_X: usize = 64;
pub const DEFAULT_N_N: usize = 9;
pub const DEFAULT_N_Y: usize = 96;

/// Minimum width of the encoder-value interval used when building an output axis.
pub const MIN_ENCODER_WIDTH: f64 = 1.0;

/// Uniform lattice `lo, lo + step, ..., lo + (n - 1) * step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformAxis {
    pub lo: f64,
    pub step: f64,
    pub n: usize,
}

impl UniformAxis {
    pub fn spanning(lo: f64, hi: f64, n: usize) -> Self {
        assert!(n >= 2, "uniform axis needs at least two nodes");
        UniformAxis {
            lo,
            step: (hi - lo) / (n - 1) as f64,
            n,
        }
    }

    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.value(self.n - 1)
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i)).collect()
    }

    /// Index of the node closest to `v`, clamped to the axis.
    #[inline]
    pub fn nearest(&self, v: f64) -> usize {
        let u = ((v - self.lo) / self.step).round();
        if u.is_nan() || u <= 0.0 {
            0
        } else if u >= (self.n - 1) as f64 {
            self.n - 1
        } else {
            u as usize
        }
    }
}

/// Discretized bivariate Gaussian source pair.
///
/// Tables are row-major with the first source on rows: `q_joint[i * n2 + j]`
/// is the mass of `(x_grid_1[i], x_grid_2[j])`. `q_cond_2_given_1` shares that
/// layout; `q_cond_1_given_2[j * n1 + i]` is `q(x1_i | x2_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub rho: f64,
    pub var1: f64,
    pub var2: f64,
    pub x_grid_1: Vec<f64>,
    pub x_grid_2: Vec<f64>,
    pub q_joint: Vec<f64>,
    pub q_marg_1: Vec<f64>,
    pub q_marg_2: Vec<f64>,
    pub q_cond_2_given_1: Vec<f64>,
    pub q_cond_1_given_2: Vec<f64>,
    pub flagged_1: Vec<bool>,
    pub flagged_2: Vec<bool>,
    /// Half-open column range `[lo, hi)` holding every nonzero mass of row `i`.
    pub row_support: Vec<(usize, usize)>,
    /// Half-open row range holding every nonzero mass of column `j`.
    pub col_support: Vec<(usize, usize)>,
}

/// Builds the discretized jointly Gaussian source on uniform grids spanning
/// `±span_sigmas` standard deviations.
pub fn build_source_model(
    rho: f64,
    var1: f64,
    var2: f64,
    n_x: usize,
    span_sigmas: f64,
) -> Result<SourceModel> {
    if !(rho.abs() < 1.0) {
        return Err(Error::config(format!("|rho| must be < 1, got {rho}")));
    }
    if !(var1 > 0.0 && var2 > 0.0) || !var1.is_finite() || !var2.is_finite() {
        return Err(Error::config(format!(
            "source variances must be positive, got {var1}, {var2}"
        )));
    }
    if n_x < 8 {
        return Err(Error::config(format!("N_x must be at least 8, got {n_x}")));
    }
    if !(span_sigmas > 0.0) || !span_sigmas.is_finite() {
        return Err(Error::config(format!(
            "span_sigmas must be positive, got {span_sigmas}"
        )));
    }
    let (s1, s2) = (var1.sqrt(), var2.sqrt());
    let x1 = UniformAxis::spanning(-span_sigmas * s1, span_sigmas * s1, n_x).values();
    let x2 = UniformAxis::spanning(-span_sigmas * s2, span_sigmas * s2, n_x).values();
    let denom = 2.0 * (1.0 - rho * rho);
    // Log-density up to a constant; the mode sits at the origin.
    let mut q = Vec::with_capacity(n_x * n_x);
    for &a in &x1 {
        let u = a / s1;
        for &b in &x2 {
            let v = b / s2;
            q.push(-(u * u - 2.0 * rho * u * v + v * v) / denom);
        }
    }
    let top = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cut = JOINT_PRUNE_REL.ln();
    for m in q.iter_mut() {
        let e = *m - top;
        *m = if e < cut { 0.0 } else { e.exp() };
    }
    let mut model = SourceModel::from_joint_masses(x1, x2, q)?;
    model.rho = rho;
    model.var1 = var1;
    model.var2 = var2;
    Ok(model)
}

impl SourceModel {
    /// Builds a source from explicit nonnegative masses on arbitrary ordered
    /// grids. Masses are normalized; `rho`, `var1`, `var2` are set to the
    /// grid moments.
    pub fn from_joint_masses(x_grid_1: Vec<f64>, x_grid_2: Vec<f64>, mut q_joint: Vec<f64>) -> Result<Self> {
        let (n1, n2) = (x_grid_1.len(), x_grid_2.len());
        if q_joint.len() != n1 * n2 {
            return Err(Error::config("joint mass table does not match the grids"));
        }
        if q_joint.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::config("joint masses must be finite and nonnegative"));
        }
        let total: f64 = q_joint.iter().sum();
        if !(total > 0.0) {
            return Err(Error::config("joint masses sum to zero"));
        }
        q_joint.iter_mut().for_each(|m| *m /= total);

        let mut q_marg_1 = vec![0.0; n1];
        let mut q_marg_2 = vec![0.0; n2];
        for i in 0..n1 {
            for j in 0..n2 {
                let m = q_joint[i * n2 + j];
                q_marg_1[i] += m;
                q_marg_2[j] += m;
            }
        }
        let mut q_cond_2_given_1 = vec![0.0; n1 * n2];
        let mut q_cond_1_given_2 = vec![0.0; n1 * n2];
        let flagged_1: Vec<bool> = q_marg_1.iter().map(|&m| m < UNDERFLOW_FLOOR).collect();
        let flagged_2: Vec<bool> = q_marg_2.iter().map(|&m| m < UNDERFLOW_FLOOR).collect();
        for i in 0..n1 {
            if flagged_1[i] {
                continue;
            }
            let row = &q_joint[i * n2..(i + 1) * n2];
            let s: f64 = row.iter().sum();
            for j in 0..n2 {
                q_cond_2_given_1[i * n2 + j] = row[j] / s;
            }
        }
        for j in 0..n2 {
            if flagged_2[j] {
                continue;
            }
            let s: f64 = (0..n1).map(|i| q_joint[i * n2 + j]).sum();
            for i in 0..n1 {
                q_cond_1_given_2[j * n1 + i] = q_joint[i * n2 + j] / s;
            }
        }
        let row_support = (0..n1)
            .map(|i| nonzero_range((0..n2).map(|j| q_joint[i * n2 + j])))
            .collect();
        let col_support = (0..n2)
            .map(|j| nonzero_range((0..n1).map(|i| q_joint[i * n2 + j])))
            .collect();

        let mut model = SourceModel {
            rho: 0.0,
            var1: 0.0,
            var2: 0.0,
            x_grid_1,
            x_grid_2,
            q_joint,
            q_marg_1,
            q_marg_2,
            q_cond_2_given_1,
            q_cond_1_given_2,
            flagged_1,
            flagged_2,
            row_support,
            col_support,
        };
        let (v1, v2) = (model.grid_variance(1), model.grid_variance(2));
        model.var1 = v1;
        model.var2 = v2;
        model.rho = model.grid_covariance() / (v1 * v2).sqrt();
        Ok(model)
    }

    #[inline]
    pub fn n1(&self) -> usize {
        self.x_grid_1.len()
    }

    #[inline]
    pub fn n2(&self) -> usize {
        self.x_grid_2.len()
    }

    #[inline]
    pub fn joint(&self, i: usize, j: usize) -> f64 {
        self.q_joint[i * self.n2() + j]
    }

    pub fn grid(&self, side: Side) -> &[f64] {
        match side {
            Side::One => &self.x_grid_1,
            Side::Two => &self.x_grid_2,
        }
    }

    pub fn marginal(&self, side: Side) -> &[f64] {
        match side {
            Side::One => &self.q_marg_1,
            Side::Two => &self.q_marg_2,
        }
    }

    pub fn std(&self, side: Side) -> f64 {
        match side {
            Side::One => self.var1.sqrt(),
            Side::Two => self.var2.sqrt(),
        }
    }

    /// Mean of source `which` (1 or 2) under the grid masses.
    pub fn grid_mean(&self, which: u8) -> f64 {
        let (x, q) = self.pick(which);
        x.iter().zip(q).map(|(x, q)| x * q).sum()
    }

    /// Variance of source `which` (1 or 2) under the grid masses.
    pub fn grid_variance(&self, which: u8) -> f64 {
        let (x, q) = self.pick(which);
        let m: f64 = x.iter().zip(q).map(|(x, q)| x * q).sum();
        x.iter().zip(q).map(|(x, q)| q * (x - m) * (x - m)).sum()
    }

    /// `E[X1 X2]` under the grid masses.
    pub fn grid_cross_moment(&self) -> f64 {
        let n2 = self.n2();
        let mut s = 0.0;
        for (i, &a) in self.x_grid_1.iter().enumerate() {
            for (j, &b) in self.x_grid_2.iter().enumerate() {
                s += self.q_joint[i * n2 + j] * a * b;
            }
        }
        s
    }

    pub fn grid_covariance(&self) -> f64 {
        self.grid_cross_moment() - self.grid_mean(1) * self.grid_mean(2)
    }

    fn pick(&self, which: u8) -> (&[f64], &[f64]) {
        match which {
            1 => (&self.x_grid_1, &self.q_marg_1),
            2 => (&self.x_grid_2, &self.q_marg_2),
            _ => panic!("source index must be 1 or 2"),
        }
    }
}

fn nonzero_range(it: impl Iterator<Item = f64>) -> (usize, usize) {
    let mut lo = usize::MAX;
    let mut hi = 0;
    for (k, m) in it.enumerate() {
        if m > 0.0 {
            lo = lo.min(k);
            hi = k + 1;
        }
    }
    if lo == usize::MAX {
        (0, 0)
    } else {
        (lo, hi)
    }
}

/// Which encoder/source a per-side quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    One,
    Two,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::One => Side::Two,
            Side::Two => Side::One,
        }
    }
}

/// Discretized zero-mean Gaussian channel noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub var: f64,
    pub n_grid: Vec<f64>,
    pub n_mass: Vec<f64>,
}

pub fn build_noise_model(var: f64, n_n: usize, span_sigmas: f64) -> Result<NoiseModel> {
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::config(format!("noise variance must be positive, got {var}")));
    }
    if n_n < 5 {
        return Err(Error::config(format!("N_n must be at least 5, got {n_n}")));
    }
    if !(span_sigmas > 0.0) || !span_sigmas.is_finite() {
        return Err(Error::config(format!(
            "noise span_sigmas must be positive, got {span_sigmas}"
        )));
    }
    let sd = var.sqrt();
    let axis = UniformAxis::spanning(-span_sigmas * sd, span_sigmas * sd, n_n);
    // Mirror the lower half so the grid is exactly symmetric.
    let mut n_grid = axis.values();
    for i in 0..n_n / 2 {
        n_grid[n_n - 1 - i] = -n_grid[i];
    }
    if n_n % 2 == 1 {
        n_grid[n_n / 2] = 0.0;
    }
    let mut n_mass: Vec<f64> = n_grid.iter().map(|n| (-n * n / (2.0 * var)).exp()).collect();
    let total: f64 = n_mass.iter().sum();
    n_mass.iter_mut().for_each(|m| *m /= total);
    for i in 0..n_n / 2 {
        n_mass[n_n - 1 - i] = n_mass[i];
    }
    Ok(NoiseModel { var, n_grid, n_mass })
}

impl NoiseModel {
    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn min(&self) -> f64 {
        self.n_grid[0]
    }

    pub fn max(&self) -> f64 {
        self.n_grid[self.n_grid.len() - 1]
    }

    pub fn grid_variance(&self) -> f64 {
        self.n_grid.iter().zip(&self.n_mass).map(|(n, m)| m * n * n).sum()
    }
}

/// Output lattice for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputAxis {
    pub axis: UniformAxis,
    /// Set when the encoder values spanned less than [`MIN_ENCODER_WIDTH`].
    pub degenerate: bool,
}

/// Channel-output lattices for both channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputGrid {
    pub y1: OutputAxis,
    pub y2: OutputAxis,
}

/// Builds the output axis covering `[min g + min n, max g + max n]` over the
/// given encoder values, widened on each side by `margin` times its width.
pub fn build_output_axis(values: &[f64], noise: &NoiseModel, n_y: usize, margin: f64) -> Result<OutputAxis> {
    if n_y < 16 {
        return Err(Error::config(format!("N_y must be at least 16, got {n_y}")));
    }
    if !(margin >= 0.0) {
        return Err(Error::config(format!("margin must be nonnegative, got {margin}")));
    }
    let (mut g_lo, mut g_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        if !v.is_finite() {
            return Err(Error::numeric("non-finite encoder value while building output grid"));
        }
        g_lo = g_lo.min(v);
        g_hi = g_hi.max(v);
    }
    if values.is_empty() {
        return Err(Error::config("no encoder values to cover"));
    }
    let mut degenerate = false;
    if g_hi - g_lo < MIN_ENCODER_WIDTH {
        let mid = 0.5 * (g_lo + g_hi);
        g_lo = mid - 0.5 * MIN_ENCODER_WIDTH;
        g_hi = mid + 0.5 * MIN_ENCODER_WIDTH;
        degenerate = true;
        log::debug!("encoder range degenerate; widened to [{g_lo}, {g_hi}]");
    }
    let lo = g_lo + noise.min();
    let hi = g_hi + noise.max();
    let pad = margin * (hi - lo);
    Ok(OutputAxis {
        axis: UniformAxis::spanning(lo - pad, hi + pad, n_y),
        degenerate,
    })
}

impl OutputAxis {
    /// Lattice likelihood of a channel input `g`: masses proportional to the
    /// noise density at `y_i - g` over nodes within [`KERNEL_HALF_WIDTH`]
    /// standard deviations, normalized to one. Inputs whose window misses the
    /// lattice put unit mass on the nearest edge node.
    ///
    /// Writes the weights into `out` and returns the index of the first node.
    pub fn channel_weights(&self, g: f64, sigma: f64, out: &mut Vec<f64>) -> usize {
        out.clear();
        let ax = &self.axis;
        let reach = KERNEL_HALF_WIDTH * sigma;
        let lo = ((g - reach - ax.lo) / ax.step).ceil();
        let hi = ((g + reach - ax.lo) / ax.step).floor();
        let last = (ax.n - 1) as f64;
        if !(lo <= last && hi >= 0.0 && lo <= hi) {
            out.push(1.0);
            return ax.nearest(g);
        }
        let start = lo.max(0.0) as usize;
        let end = hi.min(last) as usize;
        let inv = 1.0 / (2.0 * sigma * sigma);
        let near = ax.nearest(g).clamp(start, end);
        let peak = {
            let d = ax.value(near) - g;
            d * d * inv
        };
        // exp(-(d + h)^2 inv) = exp(-d^2 inv) * exp(-(2 d h + h^2) inv), and the
        // step ratio itself shrinks by exp(-2 h^2 inv) per node.
        let h = ax.step;
        let d0 = ax.value(start) - g;
        let mut w = (peak - d0 * d0 * inv).exp();
        let mut ratio = (-(2.0 * d0 * h + h * h) * inv).exp();
        let shrink = (-2.0 * h * h * inv).exp();
        let mut total = 0.0;
        for _ in start..=end {
            total += w;
            out.push(w);
            w *= ratio;
            ratio *= shrink;
        }
        out.iter_mut().for_each(|w| *w /= total);
        start
    }

    /// Whether `[lo, hi]` lies inside the central 90% of this axis and is not
    /// so narrow that more than half of the lattice would be idle.
    pub fn still_fits(&self, lo: f64, hi: f64) -> bool {
        let width = self.axis.hi() - self.axis.lo;
        let inner_lo = self.axis.lo + 0.05 * width;
        let inner_hi = self.axis.hi() - 0.05 * width;
        lo >= inner_lo && hi <= inner_hi && (hi - lo) >= 0.5 * (inner_hi - inner_lo)
    }
}
