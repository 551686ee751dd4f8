//! Fixtures shared by the kernel benchmarks.

use zdmap_core::codebook::{GridEncoder, InputTable};
use zdmap_core::harness::config::ExperimentConfig;
use zdmap_core::numerics::{OutputGrid, Side};
use zdmap_core::objective::{compute_decoder, LagrangeWeights, Problem};
use zdmap_core::DecoderTable;

/// A default-sized problem with sawtooth encoders and their decoder.
pub struct Fixture {
    pub problem: Problem,
    pub enc1: GridEncoder,
    pub enc2: GridEncoder,
    pub in1: InputTable,
    pub in2: InputTable,
    pub grid: OutputGrid,
    pub decoder: DecoderTable,
}

fn sawtooth(grid: &[f64], period: f64, amp: f64) -> Vec<f64> {
    grid.iter()
        .map(|x| {
            let r = (x / period).rem_euclid(1.0);
            amp * (2.0 * r - 1.0)
        })
        .collect()
}

pub fn fixture(n_x: usize, n_y: usize) -> Fixture {
    let mut cfg = ExperimentConfig::default();
    cfg.source.n_x = n_x;
    cfg.grid.n_y = n_y;
    let problem = cfg.problem(LagrangeWeights::total(0.004).unwrap()).unwrap();
    let g1 = problem.source.grid(Side::One).to_vec();
    let g2 = problem.source.grid(Side::Two).to_vec();
    let enc1 = GridEncoder::new(g1.clone(), sawtooth(&g1, 1.3, 1.5));
    let enc2 = GridEncoder::new(g2.clone(), sawtooth(&g2, 0.9, 1.5));
    let (in1, in2) = (enc1.input_table(), enc2.input_table());
    let grid = problem.output_grid(&in1, &in2).unwrap();
    let decoder = compute_decoder(&problem.source, &problem.noise1, &problem.noise2, &in1, &in2, &grid);
    Fixture {
        problem,
        enc1,
        enc2,
        in1,
        in2,
        grid,
        decoder,
    }
}
