//! Encoder and decoder representations.

use serde::{Deserialize, Serialize};

use crate::numerics::{OutputGrid, UniformAxis};

/// One affine local model `g(x) = a x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineModel {
    pub a: f64,
    pub b: f64,
}

impl AffineModel {
    pub fn new(a: f64, b: f64) -> Self {
        AffineModel { a, b }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.a * x + self.b
    }
}

/// Piecewise-affine encoder with randomized associations.
///
/// `assoc[i * k + m]` is `p(m | grid[i])`. The partition cells are implicit:
/// after [`RandomizedEncoder::harden`] each grid node belongs to its argmax model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedEncoder {
    pub grid: Vec<f64>,
    pub models: Vec<AffineModel>,
    pub assoc: Vec<f64>,
}

/// A deterministic encoder sampled on a source grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hardened {
    pub values: Vec<f64>,
    pub index: Vec<usize>,
}

impl RandomizedEncoder {
    /// `k` copies of `model` with uniform associations.
    pub fn coincident(grid: Vec<f64>, model: AffineModel, k: usize) -> Self {
        assert!(k >= 1);
        let n = grid.len();
        RandomizedEncoder {
            grid,
            models: vec![model; k],
            assoc: vec![1.0 / k as f64; n * k],
        }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.models.len()
    }

    #[inline]
    pub fn n_x(&self) -> usize {
        self.grid.len()
    }

    /// Value of local model `k` at `x`. Panics when `k` is out of range.
    #[inline]
    pub fn eval_model(&self, k: usize, x: f64) -> f64 {
        self.models[k].eval(x)
    }

    #[inline]
    pub fn prob(&self, i: usize, k: usize) -> f64 {
        self.assoc[i * self.k() + k]
    }

    pub fn assoc_row(&self, i: usize) -> &[f64] {
        let k = self.k();
        &self.assoc[i * k..(i + 1) * k]
    }

    /// Argmax association per grid node; ties go to the lowest model index.
    pub fn harden(&self) -> Hardened {
        let mut values = Vec::with_capacity(self.n_x());
        let mut index = Vec::with_capacity(self.n_x());
        for (i, &x) in self.grid.iter().enumerate() {
            let row = self.assoc_row(i);
            let mut best = 0;
            for (m, &p) in row.iter().enumerate().skip(1) {
                if p > row[best] {
                    best = m;
                }
            }
            index.push(best);
            values.push(self.eval_model(best, x));
        }
        Hardened { values, index }
    }

    /// Replaces the associations by the one-hot table of [`harden`](Self::harden).
    pub fn harden_in_place(&mut self) {
        let h = self.harden();
        let k = self.k();
        self.assoc.iter_mut().for_each(|p| *p = 0.0);
        for (i, &m) in h.index.iter().enumerate() {
            self.assoc[i * k + m] = 1.0;
        }
    }

    /// `sum_x sum_k q(x) p(k|x) (a_k x + b_k)^2`.
    pub fn power(&self, marginal: &[f64]) -> f64 {
        assert_eq!(marginal.len(), self.n_x(), "marginal and encoder grids differ");
        let mut p = 0.0;
        for (i, (&x, &q)) in self.grid.iter().zip(marginal).enumerate() {
            let row = self.assoc_row(i);
            let mut s = 0.0;
            for (m, model) in self.models.iter().enumerate() {
                let g = model.eval(x);
                s += row[m] * g * g;
            }
            p += q * s;
        }
        p
    }

    /// Analytic partials of [`Self::power`] with respect to `(a_k, b_k)`.
    pub fn power_gradient(&self, marginal: &[f64], k: usize) -> (f64, f64) {
        assert_eq!(marginal.len(), self.n_x(), "marginal and encoder grids differ");
        let model = self.models[k];
        let (mut ga, mut gb) = (0.0, 0.0);
        for (i, (&x, &q)) in self.grid.iter().zip(marginal).enumerate() {
            let w = 2.0 * q * self.prob(i, k) * model.eval(x);
            ga += w * x;
            gb += w;
        }
        (ga, gb)
    }

    pub fn input_table(&self) -> InputTable {
        let k = self.k();
        let mut values = Vec::with_capacity(self.n_x() * k);
        for &x in &self.grid {
            values.extend(self.models.iter().map(|m| m.eval(x)));
        }
        InputTable {
            n_x: self.n_x(),
            k,
            values,
            probs: self.assoc.clone(),
        }
    }
}

/// Encoder as one unconstrained channel-input value per source node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEncoder {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl GridEncoder {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len());
        GridEncoder { grid, values }
    }

    pub fn from_hardened(enc: &RandomizedEncoder) -> Self {
        GridEncoder::new(enc.grid.clone(), enc.harden().values)
    }

    /// `E[g(X)^2]` under `marginal`.
    pub fn power(&self, marginal: &[f64]) -> f64 {
        assert_eq!(marginal.len(), self.values.len(), "marginal and encoder grids differ");
        self.values.iter().zip(marginal).map(|(g, q)| q * g * g).sum()
    }

    /// Standard deviation of the encoder output under `marginal`.
    pub fn output_std(&self, marginal: &[f64]) -> f64 {
        let mean: f64 = self.values.iter().zip(marginal).map(|(g, q)| q * g).sum();
        let var: f64 = self
            .values
            .iter()
            .zip(marginal)
            .map(|(g, q)| q * (g - mean) * (g - mean))
            .sum();
        var.max(0.0).sqrt()
    }

    /// Value at the source node nearest to `x`; the grid must be uniform.
    #[inline]
    pub fn lookup(&self, axis: &UniformAxis, x: f64) -> f64 {
        self.values[axis.nearest(x)]
    }

    /// The source grid as a uniform axis.
    pub fn axis(&self) -> UniformAxis {
        UniformAxis::spanning(self.grid[0], self.grid[self.grid.len() - 1], self.grid.len())
    }

    pub fn input_table(&self) -> InputTable {
        InputTable {
            n_x: self.values.len(),
            k: 1,
            values: self.values.clone(),
            probs: vec![1.0; self.values.len()],
        }
    }
}

/// Flattened view of an encoder as a finite mixture per source node:
/// node `i` emits `values[i * k + m]` with probability `probs[i * k + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTable {
    pub n_x: usize,
    pub k: usize,
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Tabulated MMSE decoders on an output grid.
///
/// Tables are row-major with `y1` on rows: `xhat1[i1 * n2 + i2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderTable {
    pub grid: OutputGrid,
    pub xhat1: Vec<f64>,
    pub xhat2: Vec<f64>,
    /// Nodes no probability mass reached; their values were filled from the
    /// nearest reached node.
    pub filled_nodes: usize,
}

impl DecoderTable {
    pub fn n1(&self) -> usize {
        self.grid.y1.axis.n
    }

    pub fn n2(&self) -> usize {
        self.grid.y2.axis.n
    }

    /// Builds a table by evaluating `f(y1, y2)` at every node.
    pub fn from_fn(grid: OutputGrid, mut f: impl FnMut(f64, f64) -> (f64, f64)) -> Self {
        let (a1, a2) = (grid.y1.axis, grid.y2.axis);
        let mut xhat1 = Vec::with_capacity(a1.n * a2.n);
        let mut xhat2 = Vec::with_capacity(a1.n * a2.n);
        for i in 0..a1.n {
            for j in 0..a2.n {
                let (u, v) = f(a1.value(i), a2.value(j));
                xhat1.push(u);
                xhat2.push(v);
            }
        }
        DecoderTable {
            grid,
            xhat1,
            xhat2,
            filled_nodes: 0,
        }
    }

    /// Bilinear interpolation of both estimates, clamped to the edge outside
    /// the grid.
    #[inline]
    pub fn decode(&self, y1: f64, y2: f64) -> (f64, f64) {
        let (i, t) = locate(&self.grid.y1.axis, y1);
        let (j, s) = locate(&self.grid.y2.axis, y2);
        let n2 = self.n2();
        let c00 = (1.0 - t) * (1.0 - s);
        let c01 = (1.0 - t) * s;
        let c10 = t * (1.0 - s);
        let c11 = t * s;
        let p = i * n2 + j;
        let q = p + n2;
        let interp = |tab: &[f64]| c00 * tab[p] + c01 * tab[p + 1] + c10 * tab[q] + c11 * tab[q + 1];
        (interp(&self.xhat1), interp(&self.xhat2))
    }
}

/// Cell index `i` (so that nodes `i` and `i + 1` bracket `v`) and fractional
/// offset, with clamping outside the axis.
#[inline]
fn locate(axis: &UniformAxis, v: f64) -> (usize, f64) {
    let u = (v - axis.lo) / axis.step;
    let top = (axis.n - 2) as f64;
    if !(u > 0.0) {
        (0, 0.0)
    } else if u >= top + 1.0 {
        (axis.n - 2, 1.0)
    } else {
        let i = u.floor().min(top);
        (i as usize, u - i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{build_source_model, OutputAxis};

    fn enc(models: Vec<AffineModel>, grid: Vec<f64>, assoc: Vec<f64>) -> RandomizedEncoder {
        RandomizedEncoder { grid, models, assoc }
    }

    #[test]
    fn eval_model_is_affine() {
        let e = enc(
            vec![AffineModel::new(2.0, 0.0), AffineModel::new(0.0, 3.0), AffineModel::new(1.0, -1.0)],
            vec![0.0],
            vec![1.0, 0.0, 0.0],
        );
        assert_eq!(e.eval_model(0, 1.0), 2.0);
        assert_eq!(e.eval_model(1, -7.5), 3.0);
        assert_eq!(e.eval_model(2, 1.0), 0.0);
    }

    #[test]
    #[should_panic]
    fn eval_model_out_of_range_panics() {
        let e = RandomizedEncoder::coincident(vec![0.0], AffineModel::new(1.0, 0.0), 2);
        e.eval_model(2, 0.0);
    }

    #[test]
    fn harden_takes_argmax_with_low_index_ties() {
        let models = vec![AffineModel::new(1.0, 0.0), AffineModel::new(-1.0, 0.0)];
        let e = enc(models.clone(), vec![2.0, 2.0, 2.0], vec![0.9, 0.1, 0.5, 0.5, 0.2, 0.8]);
        let h = e.harden();
        assert_eq!(h.index, vec![0, 0, 1]);
        assert_eq!(h.values, vec![2.0, 2.0, -2.0]);

        let same = RandomizedEncoder::coincident(vec![-1.0, 0.5, 3.0], AffineModel::new(0.7, 0.2), 4);
        let h = same.harden();
        for (v, x) in h.values.iter().zip(&same.grid) {
            assert_eq!(*v, 0.7 * x + 0.2);
        }
    }

    #[test]
    fn harden_is_idempotent() {
        let models = vec![AffineModel::new(1.0, 0.5), AffineModel::new(-2.0, 0.0)];
        let mut e = enc(models, vec![-1.0, 0.0, 1.0], vec![0.3, 0.7, 0.6, 0.4, 0.5, 0.5]);
        let first = e.harden();
        e.harden_in_place();
        assert_eq!(e.harden(), first);
    }

    #[test]
    fn power_of_linear_maps() {
        let s = build_source_model(0.0, 1.0, 1.0, 64, 5.0).unwrap();
        let var = s.grid_variance(1);
        let one = RandomizedEncoder::coincident(s.x_grid_1.clone(), AffineModel::new(1.0, 0.0), 1);
        assert!((one.power(&s.q_marg_1) - 1.0).abs() < 0.005);
        assert!((one.power(&s.q_marg_1) - var).abs() < 1e-12);
        let two = RandomizedEncoder::coincident(s.x_grid_1.clone(), AffineModel::new(2.0, 0.0), 3);
        assert!((two.power(&s.q_marg_1) - 4.0).abs() < 0.02);
        let zero = RandomizedEncoder::coincident(s.x_grid_1.clone(), AffineModel::new(0.0, 0.0), 2);
        assert_eq!(zero.power(&s.q_marg_1), 0.0);
    }

    #[test]
    fn power_gradient_of_single_model() {
        let s = build_source_model(0.0, 1.0, 1.0, 64, 5.0).unwrap();
        let e = RandomizedEncoder::coincident(s.x_grid_1.clone(), AffineModel::new(1.5, 0.25), 1);
        // P = a^2 E[x^2] + 2ab E[x] + b^2 with a symmetric grid
        let (ga, gb) = e.power_gradient(&s.q_marg_1, 0);
        assert!((ga - 3.0 * s.grid_variance(1)).abs() < 1e-12);
        assert!((gb - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_hot_power_matches_hardened_map() {
        let s = build_source_model(0.3, 1.0, 1.0, 32, 5.0).unwrap();
        let models = vec![AffineModel::new(1.0, 0.5), AffineModel::new(-0.5, 2.0), AffineModel::new(3.0, -1.0)];
        let assoc = (0..32)
            .flat_map(|i| {
                let mut r = vec![0.0; 3];
                r[(i * 7) % 3] = 1.0;
                r
            })
            .collect();
        let e = enc(models, s.x_grid_1.clone(), assoc);
        let g = GridEncoder::from_hardened(&e);
        assert!((e.power(&s.q_marg_1) - g.power(&s.q_marg_1)).abs() < 1e-12);
    }

    fn grid() -> OutputGrid {
        OutputGrid {
            y1: OutputAxis {
                axis: UniformAxis::spanning(-2.0, 2.0, 17),
                degenerate: false,
            },
            y2: OutputAxis {
                axis: UniformAxis::spanning(-1.0, 3.0, 21),
                degenerate: false,
            },
        }
    }

    #[test]
    fn decode_interpolates_and_clamps() {
        let t = DecoderTable::from_fn(grid(), |a, b| (a + 2.0 * b, a * b));
        // nodes
        let ax1 = t.grid.y1.axis;
        let ax2 = t.grid.y2.axis;
        for i in [0, 5, 16] {
            for j in [0, 7, 20] {
                let (u, v) = t.decode(ax1.value(i), ax2.value(j));
                assert!((u - (ax1.value(i) + 2.0 * ax2.value(j))).abs() < 1e-12);
                assert!((v - ax1.value(i) * ax2.value(j)).abs() < 1e-12);
            }
        }
        // bilinear reproduces bilinear functions everywhere inside
        let (u, v) = t.decode(0.33, 1.71);
        assert!((u - (0.33 + 2.0 * 1.71)).abs() < 1e-12);
        assert!((v - 0.33 * 1.71).abs() < 1e-12);
        // clamp
        let (u, _) = t.decode(10.0, 1.0);
        assert!((u - (2.0 + 2.0)).abs() < 1e-12);
        let (u, _) = t.decode(-10.0, -10.0);
        assert!((u - (-2.0 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn decode_constant_patch() {
        let t = DecoderTable::from_fn(grid(), |_, _| (0.25, -1.5));
        assert_eq!(t.decode(0.125, 0.1), (0.25, -1.5));
    }

    #[test]
    fn decode_refinement_error_shrinks() {
        // Smooth table; doubling resolution cuts the interpolation error by ~4.
        let f = |a: f64, b: f64| (a.sin() * b.cos(), 0.0);
        let mk = |n: usize| {
            let g = OutputGrid {
                y1: OutputAxis {
                    axis: UniformAxis::spanning(-2.0, 2.0, n),
                    degenerate: false,
                },
                y2: OutputAxis {
                    axis: UniformAxis::spanning(-2.0, 2.0, n),
                    degenerate: false,
                },
            };
            DecoderTable::from_fn(g, f)
        };
        let err = |t: &DecoderTable| {
            let mut m: f64 = 0.0;
            for k in 0..200 {
                let a = -1.9 + 3.8 * (k as f64 * 0.618).fract();
                let b = -1.9 + 3.8 * (k as f64 * 0.377).fract();
                m = m.max((t.decode(a, b).0 - f(a, b).0).abs());
            }
            m
        };
        let (e1, e2) = (err(&mk(17)), err(&mk(33)));
        assert!(e2 * 2.0 <= e1, "{e1} {e2}");
    }
}
