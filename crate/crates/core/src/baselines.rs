//! Greedy descent on unstructured grid encoders and noisy channel relaxation.
//!
//! Greedy descent alternates the MMSE decoder update with a pointwise search
//! over each encoder node's channel input. With the decoder fixed, a node's
//! contribution to the Lagrangian depends only on its own value, so every
//! node update is an exact descent step and a full sweep never raises `J`.

use serde::{Deserialize, Serialize};

use crate::codebook::{DecoderTable, GridEncoder};
use crate::error::{Error, Result};
use crate::numerics::{build_noise_model, OutputGrid, Side};
use crate::objective::{compute_decoder, evaluate_state, ConditionalField, CostReport, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedyConfig {
    /// Relative decrease of `J` over one sweep below which descent stops.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Number of uniformly spaced candidates besides the current value.
    pub candidates: usize,
    /// Candidates span `current ± span_stds * output std`.
    pub span_stds: f64,
    pub golden_iters: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        GreedyConfig {
            tol: 1e-5,
            max_sweeps: 2000,
            candidates: 33,
            span_stds: 2.0,
            golden_iters: 40,
        }
    }
}

impl GreedyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_sweeps == 0 || self.candidates < 2 || !(self.span_stds > 0.0) {
            return Err(Error::config(format!("invalid greedy settings: {self:?}")));
        }
        Ok(())
    }
}

/// Noisy channel relaxation schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcrConfig {
    /// Inflated noise variance of the first stage.
    pub sigma2_start: f64,
    /// Geometric factor applied to the noise variance between stages.
    pub ncr_alpha: f64,
    pub stages: usize,
}

impl NcrConfig {
    /// Checks the schedule against the true channel noise variance.
    pub fn validate(&self, true_var: f64) -> Result<()> {
        if !(self.ncr_alpha > 0.0 && self.ncr_alpha < 1.0) {
            return Err(Error::config(format!("ncr_alpha must lie in (0, 1), got {}", self.ncr_alpha)));
        }
        if self.stages == 0 {
            return Err(Error::config("NCR needs at least one stage"));
        }
        if !(self.sigma2_start >= true_var) {
            return Err(Error::config(format!(
                "sigma2_start ({}) is below the channel noise variance ({true_var})",
                self.sigma2_start
            )));
        }
        Ok(())
    }
}

impl Default for NcrConfig {
    fn default() -> Self {
        NcrConfig {
            sigma2_start: 1.0,
            ncr_alpha: 0.7,
            stages: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    pub enc1: GridEncoder,
    pub enc2: GridEncoder,
    pub decoder: DecoderTable,
    pub report: CostReport,
    pub sweeps: usize,
    /// `J` after every sweep, starting with the initial state.
    pub j_trace: Vec<f64>,
    /// Sweeps after which the output grid was rebuilt.
    pub rebuilt_after: Vec<usize>,
}

impl GreedyOutcome {
    pub fn j(&self) -> f64 {
        self.report.j
    }
}

/// Result of minimizing one node's contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeChoice {
    pub value: f64,
    pub cost: f64,
}

/// Node cost up to a node constant: `excess(i, v) + lambda v^2`.
#[inline]
pub fn node_cost(field: &ConditionalField, i: usize, v: f64, lambda: f64, scratch: &mut Vec<f64>) -> f64 {
    field.excess(i, v, scratch) + lambda * v * v
}

/// Candidate search around `current` followed by a golden-section refinement
/// around the best candidate. The current value is always a candidate.
pub fn minimize_node(
    field: &ConditionalField,
    i: usize,
    current: f64,
    lambda: f64,
    spread: f64,
    config: &GreedyConfig,
    scratch: &mut Vec<f64>,
) -> NodeChoice {
    let mut best = NodeChoice {
        value: current,
        cost: node_cost(field, i, current, lambda, scratch),
    };
    let n = config.candidates;
    let lo = current - config.span_stds * spread;
    let step = 2.0 * config.span_stds * spread / (n - 1) as f64;
    for c in 0..n {
        let v = lo + step * c as f64;
        let cost = node_cost(field, i, v, lambda, scratch);
        if cost < best.cost {
            best = NodeChoice { value: v, cost };
        }
    }
    // golden section on [best - step, best + step]
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (best.value - step, best.value + step);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = node_cost(field, i, c, lambda, scratch);
    let mut fd = node_cost(field, i, d, lambda, scratch);
    for _ in 0..config.golden_iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = node_cost(field, i, c, lambda, scratch);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = node_cost(field, i, d, lambda, scratch);
        }
    }
    for (v, cost) in [(c, fc), (d, fd)] {
        if cost < best.cost {
            best = NodeChoice { value: v, cost };
        }
    }
    best
}

/// Pointwise update of every node of the encoder on `side`, in the given order.
fn update_side(
    problem: &Problem,
    enc: &mut GridEncoder,
    other: &GridEncoder,
    decoder: &DecoderTable,
    side: Side,
    ascending: bool,
    config: &GreedyConfig,
) {
    let field = ConditionalField::build(problem, &other.input_table(), decoder, side);
    let marginal = problem.source.marginal(side);
    let lambda = problem.weights.for_side(side);
    let spread = enc.output_std(marginal).max(1e-3 * problem.source.std(side));
    let mut scratch = Vec::new();
    let n = enc.values.len();
    for step in 0..n {
        let i = if ascending { step } else { n - 1 - step };
        if marginal[i] == 0.0 || field.flagged[i] {
            continue;
        }
        let choice = minimize_node(&field, i, enc.values[i], lambda, spread, config, &mut scratch);
        enc.values[i] = choice.value;
    }
}

/// Greedy descent from the given encoders until the relative decrease of `J`
/// over a sweep falls to `config.tol`.
///
/// The output grid is `grid` when given and is otherwise built from the
/// initial encoders; it is rebuilt between sweeps only when the encoder
/// values leave its central band.
pub fn greedy_descend(
    init1: GridEncoder,
    init2: GridEncoder,
    problem: &Problem,
    config: &GreedyConfig,
    grid: Option<OutputGrid>,
) -> Result<GreedyOutcome> {
    config.validate()?;
    let source = &problem.source;
    if init1.values.len() != source.n1() || init2.values.len() != source.n2() {
        return Err(Error::config("initial encoders are not aligned with the source grids"));
    }
    let (mut enc1, mut enc2) = (init1, init2);
    let mut grid = match grid {
        Some(g) => g,
        None => problem.output_grid(&enc1.input_table(), &enc2.input_table())?,
    };
    let mut decoder = compute_decoder(source, &problem.noise1, &problem.noise2, &enc1.input_table(), &enc2.input_table(), &grid);
    let mut report = evaluate_state(problem, &enc1.input_table(), &enc2.input_table(), &decoder, 0.0);
    check_finite(&report)?;
    let mut j_trace = vec![report.j];
    let mut rebuilt_after = Vec::new();
    let mut sweeps = 0;
    let mut reached = false;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        let before = report.j;
        for ascending in [true, false] {
            update_side(problem, &mut enc1, &enc2, &decoder, Side::One, ascending, config);
            update_side(problem, &mut enc2, &enc1, &decoder, Side::Two, ascending, config);
        }
        let (in1, in2) = (enc1.input_table(), enc2.input_table());
        decoder = compute_decoder(source, &problem.noise1, &problem.noise2, &in1, &in2, &grid);
        report = evaluate_state(problem, &in1, &in2, &decoder, 0.0);
        check_finite(&report)?;
        j_trace.push(report.j);
        let converged = before - report.j <= config.tol * report.j.abs();

        let (next, rebuilt) = problem.refresh_grid(&grid, &in1, &in2)?;
        if rebuilt {
            grid = next;
            decoder = compute_decoder(source, &problem.noise1, &problem.noise2, &in1, &in2, &grid);
            report = evaluate_state(problem, &in1, &in2, &decoder, 0.0);
            check_finite(&report)?;
            rebuilt_after.push(sweeps);
            continue;
        }
        if converged {
            reached = true;
            break;
        }
    }
    if !reached {
        log::warn!("greedy descent stopped at the sweep cap ({}) before reaching tol", config.max_sweeps);
    }
    Ok(GreedyOutcome {
        enc1,
        enc2,
        decoder,
        report,
        sweeps,
        j_trace,
        rebuilt_after,
    })
}

fn check_finite(r: &CostReport) -> Result<()> {
    if r.j.is_finite() && r.d.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!(
            "non-finite cost during greedy descent (D={}, P1={}, P2={})",
            r.d, r.p1, r.p2
        )))
    }
}

/// Noise variance used at each NCR stage; the last stage always uses the
/// true variance.
pub fn ncr_schedule(config: &NcrConfig, true_var: f64) -> Vec<f64> {
    let n = config.stages.max(1);
    (0..n)
        .map(|s| {
            if s + 1 == n {
                true_var
            } else {
                (config.sigma2_start * config.ncr_alpha.powi(s as i32)).max(true_var)
            }
        })
        .collect()
}

/// Greedy descent tracked along a decreasing noise-variance schedule, each
/// stage warm-started from the previous one.
pub fn ncr(
    config: &NcrConfig,
    problem: &Problem,
    greedy: &GreedyConfig,
    init1: GridEncoder,
    init2: GridEncoder,
) -> Result<GreedyOutcome> {
    let true_var = problem.noise1.var.max(problem.noise2.var);
    config.validate(true_var)?;
    let (mut e1, mut e2) = (init1, init2);
    let mut last = None;
    let schedule = ncr_schedule(config, true_var);
    for (s, &var) in schedule.iter().enumerate() {
        let is_last = s + 1 == schedule.len();
        let stage = if is_last {
            problem.clone()
        } else {
            let scale = var / true_var;
            let mut p = problem.clone();
            p.noise1 = rescaled(&problem.noise1, scale)?;
            p.noise2 = rescaled(&problem.noise2, scale)?;
            p
        };
        let out = greedy_descend(e1, e2, &stage, greedy, None)?;
        log::debug!("NCR stage {s}: var={var:.4} J={:.6}", out.report.j);
        e1 = out.enc1.clone();
        e2 = out.enc2.clone();
        last = Some(out);
    }
    Ok(last.expect("at least one stage"))
}

fn rescaled(noise: &crate::numerics::NoiseModel, scale: f64) -> Result<crate::numerics::NoiseModel> {
    let span = noise.max() / noise.std();
    build_noise_model(noise.var * scale, noise.n_grid.len(), span)
}
