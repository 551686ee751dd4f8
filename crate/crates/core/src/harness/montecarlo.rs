//! Evaluation of a designed system on the continuous source and channel.
//!
//! The deployed system sends the value of the source-grid node nearest to each
//! sample, adds Gaussian channel noise and decodes by bilinear interpolation
//! with edge clamping. [`monte_carlo_validate`] simulates it; [`deployed_distortion`]
//! integrates the same system in closed form over noise and source cells.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codebook::{DecoderTable, GridEncoder};
use crate::error::{Error, Result};
use crate::numerics::{OutputAxis, UniformAxis};

/// Minimum sample count accepted by [`monte_carlo_validate`].
pub const MIN_MC_SAMPLES: usize = 10_000;

/// Continuous bivariate Gaussian source and independent Gaussian channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousModel {
    pub rho: f64,
    pub var1: f64,
    pub var2: f64,
    pub noise_var1: f64,
    pub noise_var2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub d: f64,
    /// Standard error of `d`.
    pub stderr: f64,
    pub p1: f64,
    pub p2: f64,
    pub samples: usize,
}

pub fn monte_carlo_validate(
    enc1: &GridEncoder,
    enc2: &GridEncoder,
    decoder: &DecoderTable,
    model: &ContinuousModel,
    n_samples: usize,
    seed: u64,
) -> Result<McResult> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(Error::config(format!(
            "monte carlo needs at least {MIN_MC_SAMPLES} samples, got {n_samples}"
        )));
    }
    let (ax1, ax2) = (enc1.axis(), enc2.axis());
    let (s1, s2) = (model.var1.sqrt(), model.var2.sqrt());
    let (sn1, sn2) = (model.noise_var1.sqrt(), model.noise_var2.sqrt());
    let orth = (1.0 - model.rho * model.rho).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq, mut p1, mut p2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n_samples {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let x1 = s1 * z1;
        let x2 = s2 * (model.rho * z1 + orth * z2);
        let g1 = enc1.lookup(&ax1, x1);
        let g2 = enc2.lookup(&ax2, x2);
        let n1: f64 = rng.sample(StandardNormal);
        let n2: f64 = rng.sample(StandardNormal);
        let (h1, h2) = decoder.decode(g1 + sn1 * n1, g2 + sn2 * n2);
        let e = (x1 - h1).powi(2) + (x2 - h2).powi(2);
        sum += e;
        sum_sq += e * e;
        p1 += g1 * g1;
        p2 += g2 * g2;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McResult {
        d: mean,
        stderr: (var / n).sqrt(),
        p1: p1 / n,
        p2: p2 / n,
        samples: n_samples,
    })
}

/// Closed-form distortion and powers of the deployed system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeployedEval {
    pub d: f64,
    pub p1: f64,
    pub p2: f64,
}

/// Source tails beyond this many standard deviations are dropped.
const TAIL_SIGMAS: f64 = 9.0;

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

fn std_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
}

/// `P(a < Z < b)` for a standard normal, accurate in both tails.
fn std_mass(a: f64, b: f64) -> f64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    if a >= 0.0 {
        0.5 * (libm::erfc(a * r) - libm::erfc(b * r))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b * r) - libm::erfc(-a * r))
    } else {
        1.0 - 0.5 * (libm::erfc(-a * r) + libm::erfc(b * r))
    }
}

/// Partial moments `E[Y^p 1{a < Y < b}]`, `p = 0, 1, 2`, of `Y ~ N(mu, sigma^2)`.
fn partial_moments(mu: f64, sigma: f64, a: f64, b: f64) -> [f64; 3] {
    let (za, zb) = ((a - mu) / sigma, (b - mu) / sigma);
    let z0 = std_mass(za, zb);
    let (pa, pb) = (std_pdf(za), std_pdf(zb));
    let z1 = pa - pb;
    let edge = |z: f64, p: f64| if z.is_infinite() { 0.0 } else { z * p };
    let z2 = z0 + edge(za, pa) - edge(zb, pb);
    [
        z0,
        mu * z0 + sigma * z1,
        mu * mu * z0 + 2.0 * mu * sigma * z1 + sigma * sigma * z2,
    ]
}

/// Expected bilinear hat weights of `y = g + N(0, sigma^2)` on a clamped axis:
/// `e[a] = E[h_a(y)]` and the tridiagonal `M[a][a'] = E[h_a(y) h_a'(y)]`,
/// stored as `(diag, upper)` over the index range starting at `start`.
#[derive(Debug, Clone, Default)]
struct HatMoments {
    start: usize,
    e: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

fn hat_moments(axis: &UniformAxis, g: f64, sigma: f64) -> HatMoments {
    let reach = TAIL_SIGMAS * sigma;
    let n = axis.n;
    let h = axis.step;
    let lo_cell = (((g - reach - axis.lo) / h).floor().max(0.0) as usize).min(n - 2);
    let hi_cell = (((g + reach - axis.lo) / h).floor().max(0.0) as usize).min(n - 2);
    let start = lo_cell;
    let len = hi_cell - lo_cell + 2;
    let mut out = HatMoments {
        start,
        e: vec![0.0; len],
        diag: vec![0.0; len],
        upper: vec![0.0; len],
    };
    for t in lo_cell..=hi_cell {
        // y - y_t over [0, h]; u = (y - y_t) / h
        let [m0, m1, m2] = partial_moments(g - axis.value(t), sigma, 0.0, h);
        let eu = m1 / h;
        let eu2 = m2 / (h * h);
        let k = t - start;
        out.e[k] += m0 - eu;
        out.e[k + 1] += eu;
        out.diag[k] += m0 - 2.0 * eu + eu2;
        out.diag[k + 1] += eu2;
        out.upper[k] += eu - eu2;
    }
    let below = std_mass(f64::NEG_INFINITY, (axis.lo - g) / sigma);
    if below > 0.0 && lo_cell == 0 {
        out.e[0] += below;
        out.diag[0] += below;
    }
    let above = std_mass((axis.hi() - g) / sigma, f64::INFINITY);
    if above > 0.0 && hi_cell == n - 2 {
        out.e[len - 1] += above;
        out.diag[len - 1] += above;
    }
    out
}

/// Nearest-node cell bounds of a uniform source grid, with the outer cells
/// cut at `tail`.
fn cell_bounds(axis: &UniformAxis, i: usize, tail: f64) -> (f64, f64) {
    let x = axis.value(i);
    let lo = if i == 0 { (-tail).min(x) } else { x - 0.5 * axis.step };
    let hi = if i + 1 == axis.n { tail.max(x) } else { x + 0.5 * axis.step };
    (lo, hi)
}

/// `E_y[xhat . xhat]` for both tables given the hat moments of each channel.
fn decoded_second_moment(dec: &DecoderTable, m1: &HatMoments, m2: &HatMoments) -> f64 {
    let n2 = dec.n2();
    let len2 = m2.e.len();
    // (M2 T[a, .]) restricted to the second channel's window
    let apply = |tab: &[f64], a: usize, out: &mut [f64]| {
        let row = &tab[a * n2 + m2.start..a * n2 + m2.start + len2];
        for b in 0..len2 {
            let mut s = m2.diag[b] * row[b];
            if b + 1 < len2 {
                s += m2.upper[b] * row[b + 1];
            }
            if b > 0 {
                s += m2.upper[b - 1] * row[b - 1];
            }
            out[b] = s;
        }
    };
    let dot_row = |tab: &[f64], a: usize, v: &[f64]| -> f64 {
        tab[a * n2 + m2.start..a * n2 + m2.start + len2]
            .iter()
            .zip(v)
            .map(|(x, y)| x * y)
            .sum()
    };
    let mut buf = vec![0.0; len2];
    let mut total = 0.0;
    for tab in [&dec.xhat1, &dec.xhat2] {
        for k in 0..m1.e.len() {
            let a = m1.start + k;
            apply(tab, a, &mut buf);
            let mut s = m1.diag[k] * dot_row(tab, a, &buf);
            if k + 1 < m1.e.len() {
                // M1 is symmetric: both off-diagonal terms
                s += 2.0 * m1.upper[k] * dot_row(tab, a + 1, &buf);
            }
            total += s;
        }
    }
    total
}

fn decoded_mean(tab: &[f64], n2: usize, m1: &HatMoments, m2: &HatMoments) -> f64 {
    let mut s = 0.0;
    for (k, &w1) in m1.e.iter().enumerate() {
        if w1 == 0.0 {
            continue;
        }
        let row = &tab[(m1.start + k) * n2 + m2.start..];
        s += w1 * m2.e.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
    }
    s
}

/// Distortion and powers of the deployed system, integrated in closed form
/// over the channel noise and by Gauss-Legendre quadrature over the first
/// source with the second integrated exactly given the first.
pub fn deployed_distortion(
    enc1: &GridEncoder,
    enc2: &GridEncoder,
    decoder: &DecoderTable,
    model: &ContinuousModel,
) -> DeployedEval {
    let (ax1, ax2) = (enc1.axis(), enc2.axis());
    let (s1, s2) = (model.var1.sqrt(), model.var2.sqrt());
    let (tail1, tail2) = (TAIL_SIGMAS * s1, TAIL_SIGMAS * s2);
    let rho = model.rho;
    let cond_sd = s2 * (1.0 - rho * rho).sqrt();
    let (out1, out2): (&OutputAxis, &OutputAxis) = (&decoder.grid.y1, &decoder.grid.y2);
    let hats1: Vec<HatMoments> =
        enc1.values.iter().map(|&g| hat_moments(&out1.axis, g, model.noise_var1.sqrt())).collect();
    let hats2: Vec<HatMoments> =
        enc2.values.iter().map(|&g| hat_moments(&out2.axis, g, model.noise_var2.sqrt())).collect();

    let n2x = ax2.n;
    // sub-interval width along x1: fine against the cell and the conditional spread
    let sub = (ax1.step.min(cond_sd.max(1e-3 * s1) * s1 / (rho.abs() * s2).max(1e-12))) / 4.0;
    let mut d = 0.0;
    let mut p1 = 0.0;
    let mut p2 = 0.0;
    // per x2 cell accumulators for the current x1 cell: mass, E[x1], E[x2], E[x1^2 + x2^2]
    let mut acc = vec![[0.0f64; 4]; n2x];
    for i in 0..ax1.n {
        let (a, b) = cell_bounds(&ax1, i, tail1);
        p1 += std_mass(a / s1, b / s1) * enc1.values[i].powi(2);
        acc.iter_mut().for_each(|v| *v = [0.0; 4]);
        let pieces = ((b - a) / sub).ceil().max(1.0) as usize;
        let w = (b - a) / pieces as f64;
        for p in 0..pieces {
            let mid = a + (p as f64 + 0.5) * w;
            for (zn, zw) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
                let x1 = mid + 0.5 * w * zn;
                let dens = 0.5 * w * zw * std_pdf(x1 / s1) / s1;
                if dens == 0.0 {
                    continue;
                }
                let mu = rho * s2 / s1 * x1;
                let reach = TAIL_SIGMAS * cond_sd;
                let j_lo = ax2.nearest(mu - reach);
                let j_hi = ax2.nearest(mu + reach);
                for j in j_lo..=j_hi {
                    let (c, e) = cell_bounds(&ax2, j, tail2);
                    let [m0, m1, m2] = partial_moments(mu, cond_sd.max(f64::MIN_POSITIVE), c, e);
                    if m0 == 0.0 {
                        continue;
                    }
                    let v = &mut acc[j];
                    v[0] += dens * m0;
                    v[1] += dens * m0 * x1;
                    v[2] += dens * m1;
                    v[3] += dens * (m0 * x1 * x1 + m2);
                }
            }
        }
        for j in 0..n2x {
            let [m, ex1, ex2, ess] = acc[j];
            if m == 0.0 {
                continue;
            }
            let (h1, h2) = (&hats1[i], &hats2[j]);
            let a1 = decoded_mean(&decoder.xhat1, decoder.n2(), h1, h2);
            let a2 = decoded_mean(&decoder.xhat2, decoder.n2(), h1, h2);
            let bb = decoded_second_moment(decoder, h1, h2);
            d += ess - 2.0 * ex1 * a1 - 2.0 * ex2 * a2 + m * bb;
        }
    }
    for j in 0..n2x {
        let (c, e) = cell_bounds(&ax2, j, tail2);
        p2 += std_mass(c / s2, e / s2) * enc2.values[j].powi(2);
    }
    DeployedEval { d: d.max(0.0), p1, p2 }
}
