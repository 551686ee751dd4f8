//! Single runs, power tuning and sweeps.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annealer::{anneal_with, AnnealReport, TempRecord};
use crate::baselines::{greedy_descend, ncr};
use crate::codebook::{DecoderTable, GridEncoder, RandomizedEncoder};
use crate::error::{Error, Result};
use crate::numerics::Side;
use crate::objective::{CostReport, LagrangeWeights, Problem};

use super::config::{ExperimentConfig, InitKind, Method, PowerTarget, WeightsConfig};
use super::dump::{self, AnnealCsv, EncoderDump, MappingDump};
use super::montecarlo::{deployed_distortion, monte_carlo_validate, ContinuousModel, DeployedEval, McResult};

pub fn snr_db(d: f64) -> f64 {
    10.0 * (1.0 / d).log10()
}

pub fn csnr_db(p1: f64, p2: f64, noise_var: f64) -> f64 {
    10.0 * ((p1 + p2) / noise_var).log10()
}

/// A designed system and how it was obtained.
#[derive(Debug, Clone)]
pub struct Solved {
    pub weights: LagrangeWeights,
    pub enc1: GridEncoder,
    pub enc2: GridEncoder,
    pub decoder: DecoderTable,
    pub cost: CostReport,
    /// Annealed piecewise-affine encoders (DA only).
    pub annealed: Option<(RandomizedEncoder, RandomizedEncoder)>,
    pub report: Option<AnnealReport>,
}

impl Solved {
    pub fn mapping(&self) -> MappingDump {
        let (e1, e2) = match &self.annealed {
            Some((a1, a2)) => (EncoderDump::with_models(&self.enc1, a1), EncoderDump::with_models(&self.enc2, a2)),
            None => (EncoderDump::from_grid(&self.enc1), EncoderDump::from_grid(&self.enc2)),
        };
        MappingDump {
            encoder1: e1,
            encoder2: e2,
            decoder: self.decoder.clone(),
        }
    }
}

/// Starting encoders for greedy and NCR.
pub fn initial_encoders(cfg: &ExperimentConfig, problem: &Problem, seed: u64) -> (GridEncoder, GridEncoder) {
    let src = &problem.source;
    match cfg.init.kind {
        InitKind::Linear => {
            let make = |side: Side| {
                let grid = src.grid(side).to_vec();
                let values = grid.iter().map(|x| cfg.init.slope * x).collect();
                GridEncoder::new(grid, values)
            };
            (make(Side::One), make(Side::Two))
        }
        InitKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut make = |side: Side| {
                let grid = src.grid(side).to_vec();
                let n = Normal::new(0.0, cfg.init.scale * src.std(side)).expect("positive scale");
                let values = grid.iter().map(|_| n.sample(&mut rng)).collect();
                GridEncoder::new(grid, values)
            };
            let e1 = make(Side::One);
            (e1, make(Side::Two))
        }
    }
}

/// Runs the configured method once at fixed weights.
pub fn solve(
    cfg: &ExperimentConfig,
    weights: LagrangeWeights,
    seed: u64,
    on_record: &mut dyn FnMut(&TempRecord),
) -> Result<Solved> {
    let problem = cfg.problem(weights)?;
    match cfg.method {
        Method::Da => {
            let mut ac = cfg.anneal.clone();
            ac.rng_seed = seed;
            let out = anneal_with(&ac, &problem, |r| on_record(r))?;
            Ok(Solved {
                weights,
                enc1: out.enc1,
                enc2: out.enc2,
                decoder: out.decoder,
                cost: out.cost,
                annealed: Some((out.annealed1, out.annealed2)),
                report: Some(out.report),
            })
        }
        Method::Greedy | Method::Ncr => {
            let (i1, i2) = initial_encoders(cfg, &problem, seed);
            let out = if cfg.method == Method::Greedy {
                greedy_descend(i1, i2, &problem, &cfg.greedy, None)?
            } else {
                ncr(&cfg.ncr, &problem, &cfg.greedy, i1, i2)?
            };
            Ok(Solved {
                weights,
                enc1: out.enc1,
                enc2: out.enc2,
                decoder: out.decoder,
                cost: out.report,
                annealed: None,
                report: None,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningStep {
    pub lambda1: f64,
    pub lambda2: f64,
    pub p1: f64,
    pub p2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningInfo {
    pub target: PowerTarget,
    pub converged: bool,
    pub history: Vec<TuningStep>,
}

/// Log-scale bracket on one multiplier; the achieved power falls as the
/// multiplier grows.
#[derive(Debug, Clone, Copy)]
struct Bracket {
    target: f64,
    /// `(ln lambda, ln P)` with P above target
    low: Option<(f64, f64)>,
    /// `(ln lambda, ln P)` with P below target
    high: Option<(f64, f64)>,
    min: f64,
    max: f64,
}

impl Bracket {
    fn new(target: f64, min: f64, max: f64) -> Self {
        Bracket {
            target,
            low: None,
            high: None,
            min: min.ln(),
            max: max.ln(),
        }
    }

    fn hit(&self, p: f64, tol: f64) -> bool {
        (p - self.target).abs() <= tol * self.target
    }

    /// Records an evaluation and proposes the next multiplier.
    fn next(&mut self, lambda: f64, p: f64) -> f64 {
        let pt = (lambda.ln(), p.max(1e-300).ln());
        if p > self.target {
            self.low = Some(pt);
        } else {
            self.high = Some(pt);
        }
        let lt = self.target.ln();
        let next = match (self.low, self.high) {
            (Some(a), Some(b)) if a.0 < b.0 => {
                // interpolate log P against log lambda, kept inside the bracket
                let t = if a.1 > b.1 { (a.1 - lt) / (a.1 - b.1) } else { 0.5 };
                a.0 + t.clamp(0.1, 0.9) * (b.0 - a.0)
            }
            (Some(a), Some(b)) => {
                // non-monotone response: restart the bracket around the newest point
                if p > self.target {
                    self.high = None;
                    a.0 + 4f64.ln()
                } else {
                    self.low = None;
                    b.0 - 4f64.ln()
                }
            }
            (Some(a), None) => a.0 + 4f64.ln(),
            (None, Some(b)) => b.0 - 4f64.ln(),
            (None, None) => unreachable!(),
        };
        next.clamp(self.min, self.max).exp()
    }
}

/// Tunes the multipliers until the powers meet `target` within
/// `cfg.tuning.tol`. Returns the closest run when the budget runs out, with
/// `converged = false`.
pub fn tune(
    cfg: &ExperimentConfig,
    target: PowerTarget,
    seed: u64,
    on_record: &mut dyn FnMut(&TempRecord),
) -> Result<(Solved, TuningInfo)> {
    let t = &cfg.tuning;
    let (mut b1, mut b2) = match target {
        PowerTarget::Total(p) => (Bracket::new(p, t.lambda_min, t.lambda_max), None),
        PowerTarget::Individual(p1, p2) => (
            Bracket::new(p1, t.lambda_min, t.lambda_max),
            Some(Bracket::new(p2, t.lambda_min, t.lambda_max)),
        ),
    };
    let (mut l1, mut l2) = (t.lambda_init, t.lambda_init);
    let mut history = Vec::new();
    let mut best: Option<(f64, Solved)> = None;
    for it in 0..t.max_iters {
        let w = LagrangeWeights::new(l1, l2)?;
        let s = solve(cfg, w, seed, &mut *on_record)?;
        let (p1, p2) = (s.cost.p1, s.cost.p2);
        history.push(TuningStep {
            lambda1: l1,
            lambda2: l2,
            p1,
            p2,
        });
        let (err, done) = match &b2 {
            None => {
                let p = p1 + p2;
                ((p / b1.target - 1.0).abs(), b1.hit(p, t.tol))
            }
            Some(b2) => (
                (p1 / b1.target - 1.0).abs().max((p2 / b2.target - 1.0).abs()),
                b1.hit(p1, t.tol) && b2.hit(p2, t.tol),
            ),
        };
        log::info!("tuning step {it}: lambda=({l1:.4e},{l2:.4e}) P=({p1:.4},{p2:.4}) err={err:.4}");
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, s));
        }
        if done {
            let (_, s) = best.expect("just stored");
            return Ok((
                s,
                TuningInfo {
                    target,
                    converged: true,
                    history,
                },
            ));
        }
        match b2.as_mut() {
            None => {
                l1 = b1.next(l1, p1 + p2);
                l2 = l1;
            }
            Some(b2) => {
                l1 = b1.next(l1, p1);
                l2 = b2.next(l2, p2);
            }
        }
    }
    log::warn!("power tuning did not reach {target:?} within {} runs", t.max_iters);
    let (_, s) = best.expect("max_iters > 0");
    Ok((
        s,
        TuningInfo {
            target,
            converged: false,
            history,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSummary {
    pub t_init: f64,
    pub t_min: f64,
    pub temperatures: usize,
    pub critical_temperatures: Vec<f64>,
    /// Cluster counts at the last positive temperature.
    pub final_clusters: [usize; 2],
}

impl AnnealSummary {
    fn from_report(r: &AnnealReport) -> Self {
        let last = r.records.iter().rev().find(|x| x.t > 0.0);
        AnnealSummary {
            t_init: r.t_init,
            t_min: r.t_min,
            temperatures: r.records.iter().filter(|x| x.t > 0.0).count(),
            critical_temperatures: r.critical_temperatures.clone(),
            final_clusters: last.map_or([1, 1], |x| [x.clusters1, x.clusters2]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFiles {
    pub mapping_json: String,
    pub mapping_csv: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anneal_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Grid distortion, the design objective.
    pub d: f64,
    pub p1: f64,
    pub p2: f64,
    pub j: f64,
    pub snr_db: f64,
    pub csnr_db: f64,
    /// The designed system on the continuous source and channel, integrated in
    /// closed form (nearest-node encoder, bilinear decoder).
    pub deployed: DeployedEval,
    pub mc: Option<McResult>,
    /// Whether `d` lies within three standard errors of the simulated distortion.
    pub mc_within_3se: Option<bool>,
    pub anneal: Option<AnnealSummary>,
    pub tuning: Option<TuningInfo>,
    /// Set when power tuning missed its target.
    pub flagged: bool,
    pub files: Option<OutputFiles>,
}

pub fn continuous_model(cfg: &ExperimentConfig) -> ContinuousModel {
    ContinuousModel {
        rho: cfg.source.rho,
        var1: cfg.source.var1,
        var2: cfg.source.var2,
        noise_var1: cfg.noise.var1(),
        noise_var2: cfg.noise.var2(),
    }
}

/// Metrics and validation of a designed system.
pub fn evaluate(cfg: &ExperimentConfig, s: &Solved, seed: u64, tuning: Option<TuningInfo>) -> Result<RunResult> {
    let c = &s.cost;
    for (name, v) in [("D", c.d), ("P1", c.p1), ("P2", c.p2), ("J", c.j)] {
        if !v.is_finite() {
            return Err(Error::numeric(format!("final {name} is not finite")));
        }
    }
    let model = continuous_model(cfg);
    let deployed = deployed_distortion(&s.enc1, &s.enc2, &s.decoder, &model);
    let mc = if cfg.validate.enabled {
        Some(monte_carlo_validate(&s.enc1, &s.enc2, &s.decoder, &model, cfg.validate.mc_samples, seed)?)
    } else {
        None
    };
    Ok(RunResult {
        method: cfg.method,
        seed,
        lambda1: s.weights.lambda1,
        lambda2: s.weights.lambda2,
        d: c.d,
        p1: c.p1,
        p2: c.p2,
        j: c.j,
        snr_db: snr_db(c.d),
        csnr_db: csnr_db(c.p1, c.p2, cfg.noise.var),
        deployed,
        mc_within_3se: mc.map(|m| (c.d - m.d).abs() <= 3.0 * m.stderr),
        mc,
        anneal: s.report.as_ref().map(AnnealSummary::from_report),
        flagged: tuning.as_ref().is_some_and(|t| !t.converged),
        tuning,
        files: None,
    })
}

/// A run held in memory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: RunResult,
    pub solved: Solved,
}

/// Runs the configuration once without writing files.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    run_with(cfg, &mut |_| {})
}

pub fn run_with(cfg: &ExperimentConfig, on_record: &mut dyn FnMut(&TempRecord)) -> Result<RunOutcome> {
    cfg.validate()?;
    let seed = cfg.run.seed;
    let (solved, tuning) = match cfg.weights.fixed()? {
        Some(w) => (solve(cfg, w, seed, on_record)?, None),
        None => {
            let (s, t) = tune(cfg, cfg.weights.target()?, seed, on_record)?;
            (s, Some(t))
        }
    };
    let result = evaluate(cfg, &solved, seed, tuning)?;
    Ok(RunOutcome { result, solved })
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const MAPPING_JSON: &str = "mapping.json";
pub const MAPPING_CSV: &str = "mapping.csv";
pub const ANNEAL_CSV: &str = "anneal.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs the configuration and writes `summary.json`, `mapping.json`,
/// `mapping.csv` and, for annealing, `anneal.csv` into `out`.
pub fn run_to_dir(cfg: &ExperimentConfig, out: &Path) -> Result<RunResult> {
    cfg.validate()?;
    ensure_dir(out)?;
    let streaming = cfg.method == Method::Da && cfg.weights.fixed()?.is_some();
    let mut csv = if streaming {
        Some(AnnealCsv::create(&out.join(ANNEAL_CSV))?)
    } else {
        None
    };
    let mut csv_err = None;
    let outcome = run_with(cfg, &mut |r| {
        if let Some(w) = csv.as_mut() {
            if let Err(e) = w.push(r) {
                csv_err.get_or_insert(e);
            }
        }
    });
    if let Some(e) = csv_err {
        return Err(e);
    }
    let RunOutcome { mut result, solved } = outcome?;
    let anneal_csv = match &solved.report {
        Some(rep) => {
            if !streaming {
                dump::write_anneal_csv(&out.join(ANNEAL_CSV), &rep.records)?;
            }
            Some(ANNEAL_CSV.to_string())
        }
        None => None,
    };
    dump::dump_mapping(&solved.mapping(), &out.join(MAPPING_JSON), &out.join(MAPPING_CSV))?;
    result.files = Some(OutputFiles {
        mapping_json: MAPPING_JSON.into(),
        mapping_csv: MAPPING_CSV.into(),
        anneal_csv,
    });
    dump::write_json(&out.join(SUMMARY_FILE), &result)?;
    Ok(result)
}

/// Expands the sweep section into per-point weight settings.
pub fn sweep_points(cfg: &ExperimentConfig) -> Result<Vec<WeightsConfig>> {
    let s = &cfg.sweep;
    let lists = [!s.lambdas.is_empty(), !s.lambda_pairs.is_empty(), !s.targets.is_empty()];
    match lists.iter().filter(|b| **b).count() {
        0 => return Err(Error::config("sweep needs a nonempty lambdas, lambda_pairs or targets list")),
        1 => {}
        _ => return Err(Error::config("sweep takes exactly one of lambdas, lambda_pairs, targets")),
    }
    Ok(if !s.lambdas.is_empty() {
        s.lambdas.iter().map(|&lambda| WeightsConfig::Total { lambda }).collect()
    } else if !s.lambda_pairs.is_empty() {
        s.lambda_pairs
            .iter()
            .map(|&[lambda1, lambda2]| WeightsConfig::Individual { lambda1, lambda2 })
            .collect()
    } else {
        s.targets
            .iter()
            .map(|&t| WeightsConfig::PowerTarget {
                total: Some(t),
                p1: None,
                p2: None,
            })
            .collect()
    })
}

/// Configuration of sweep point `index`: its weights and seed `seed + index`.
pub fn point_config(cfg: &ExperimentConfig, weights: WeightsConfig, index: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.weights = weights;
    c.run.seed = cfg.run.seed.wrapping_add(index as u64);
    c.sweep = Default::default();
    c
}

/// Runs every sweep point. With `out`, each point writes its files to
/// `point_NNN/` and the curve goes to `sweep.csv` and `sweep.json`.
pub fn sweep(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let points = sweep_points(cfg)?;
    if let Some(o) = out {
        ensure_dir(o)?;
    }
    let mut rows = Vec::with_capacity(points.len());
    for (i, w) in points.into_iter().enumerate() {
        let pc = point_config(cfg, w, i);
        log::info!("sweep point {i}: {:?}", pc.weights);
        let r = match out {
            Some(o) => {
                let dir: PathBuf = o.join(format!("point_{i:03}"));
                let mut r = run_to_dir(&pc, &dir)?;
                if let Some(f) = r.files.as_mut() {
                    let prefix = format!("point_{i:03}/");
                    f.mapping_json.insert_str(0, &prefix);
                    f.mapping_csv.insert_str(0, &prefix);
                    if let Some(a) = f.anneal_csv.as_mut() {
                        a.insert_str(0, &prefix);
                    }
                }
                r
            }
            None => run(&pc)?.result,
        };
        rows.push(r);
    }
    if let Some(o) = out {
        dump::write_sweep_csv(&o.join(SWEEP_CSV), &rows)?;
        dump::write_json(&o.join(SWEEP_JSON), &rows)?;
    }
    Ok(rows)
}
