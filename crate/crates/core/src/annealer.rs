//! Deterministic annealing over piecewise-affine randomized encoders.
//!
//! The free energy `F = J - T H` is minimized at a geometric sequence of
//! temperatures. At each temperature the local models are perturbed, then
//! decoder, associations and local models are updated in turn until `F`
//! settles. Below the last temperature the associations are hardened and the
//! deterministic encoders are handed to greedy descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{greedy_descend, GreedyConfig};
use crate::codebook::{AffineModel, DecoderTable, GridEncoder, RandomizedEncoder};
use crate::error::{Error, Result};
use crate::numerics::{Side, SourceModel};
use crate::objective::{
    compute_decoder, compute_distortion_tensor, conditional_model_cost, evaluate_distortion, evaluate_state, gibbs_update,
    ConditionalField, CostReport, Problem,
};

/// Node weights `q(x) p(k|x)` below this are left out of a model's descent objective.
const NEGLIGIBLE_WEIGHT: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealConfig {
    pub k1: usize,
    pub k2: usize,
    /// Starting temperature; `None` uses `t_init_factor` times the initial distortion.
    pub t_init: Option<f64>,
    pub t_init_factor: f64,
    /// Final temperature; `None` uses `t_min_ratio * t_init`.
    pub t_min: Option<f64>,
    pub t_min_ratio: f64,
    pub alpha: f64,
    pub perturb_eps: f64,
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    pub gd_step_init: f64,
    pub gd_backtrack_factor: f64,
    pub gd_max_iters: usize,
    /// Parameter distance below which two local models count as one cluster.
    pub merge_tol: f64,
    /// Power the coincident initial models are scaled to; defaults to the source variance.
    pub p_target: Option<f64>,
    pub rng_seed: u64,
    /// Greedy settings for the zero-temperature phase.
    pub zero_temperature: GreedyConfig,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            k1: 8,
            k2: 8,
            t_init: None,
            t_init_factor: 10.0,
            t_min: None,
            t_min_ratio: 1e-5,
            alpha: 0.95,
            perturb_eps: 0.3,
            inner_tol: 1e-5,
            inner_max_iters: 50,
            gd_step_init: 1.0,
            gd_backtrack_factor: 0.5,
            gd_max_iters: 20,
            merge_tol: 0.02,
            p_target: None,
            rng_seed: 0,
            zero_temperature: GreedyConfig::default(),
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("anneal: {m}")));
        if self.k1 == 0 || self.k2 == 0 {
            return bad("model counts must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.perturb_eps >= 0.0) {
            return bad("perturb_eps must be nonnegative");
        }
        if !(self.inner_tol > 0.0) || self.inner_max_iters == 0 {
            return bad("inner_tol and inner_max_iters must be positive");
        }
        if !(self.gd_step_init > 0.0) || !(self.gd_backtrack_factor > 0.0 && self.gd_backtrack_factor < 1.0) {
            return bad("gd_step_init must be positive and gd_backtrack_factor in (0, 1)");
        }
        if !(self.t_init_factor > 0.0) || !(self.t_min_ratio > 0.0 && self.t_min_ratio < 1.0) {
            return bad("t_init_factor must be positive and t_min_ratio in (0, 1)");
        }
        if let Some(t) = self.t_init {
            if !(t > 0.0) {
                return bad("t_init must be positive");
            }
        }
        if let (Some(lo), Some(hi)) = (self.t_min, self.t_init) {
            if !(lo > 0.0 && lo < hi) {
                return bad("need 0 < t_min < t_init");
            }
        }
        if let Some(t) = self.t_min {
            if !(t > 0.0) {
                return bad("t_min must be positive");
            }
        }
        if !(self.merge_tol > 0.0) {
            return bad("merge_tol must be positive");
        }
        if let Some(p) = self.p_target {
            if !(p > 0.0) {
                return bad("p_target must be positive");
            }
        }
        self.zero_temperature.validate()
    }
}

/// Telemetry for one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TempRecord {
    pub t: f64,
    pub d: f64,
    pub p1: f64,
    pub p2: f64,
    pub h: f64,
    pub j: f64,
    pub f: f64,
    pub clusters1: usize,
    pub clusters2: usize,
    pub inner_iters: usize,
    /// Free energy after every inner iteration.
    pub f_trace: Vec<f64>,
}

impl TempRecord {
    fn new(t: f64, r: &CostReport, clusters: (usize, usize), inner_iters: usize, f_trace: Vec<f64>) -> Self {
        TempRecord {
            t,
            d: r.d,
            p1: r.p1,
            p2: r.p2,
            h: r.h,
            j: r.j,
            f: r.f,
            clusters1: clusters.0,
            clusters2: clusters.1,
            inner_iters,
            f_trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealReport {
    pub t_init: f64,
    pub t_min: f64,
    /// One record per temperature, followed by the zero-temperature record.
    pub records: Vec<TempRecord>,
    /// Temperatures at which the cluster count of either encoder grew.
    pub critical_temperatures: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealOutcome {
    /// Encoders at the end of annealing, with hardened associations.
    pub annealed1: RandomizedEncoder,
    pub annealed2: RandomizedEncoder,
    /// Final deterministic encoders after the zero-temperature phase.
    pub enc1: GridEncoder,
    pub enc2: GridEncoder,
    pub decoder: DecoderTable,
    pub report: AnnealReport,
    pub cost: CostReport,
}

/// Coincident local models scaled to the power target, uniform associations.
pub fn init_state(config: &AnnealConfig, source: &SourceModel) -> (RandomizedEncoder, RandomizedEncoder) {
    let slope = |var: f64| (config.p_target.unwrap_or(var) / var).sqrt();
    (
        RandomizedEncoder::coincident(source.x_grid_1.clone(), AffineModel::new(slope(source.var1), 0.0), config.k1),
        RandomizedEncoder::coincident(source.x_grid_2.clone(), AffineModel::new(slope(source.var2), 0.0), config.k2),
    )
}

/// Uniform perturbation of every slope and intercept, scaled by the mean
/// absolute slope (floored at 1e-3) and by `intercept_scale`.
pub fn perturb<R: Rng>(enc: &mut RandomizedEncoder, eps: f64, intercept_scale: f64, rng: &mut R) {
    if eps == 0.0 {
        return;
    }
    let mean_a = enc.models.iter().map(|m| m.a.abs()).sum::<f64>() / enc.k() as f64;
    let sa = eps * mean_a.max(1e-3);
    let sb = eps * intercept_scale;
    for m in enc.models.iter_mut() {
        m.a += sa * (2.0 * rng.random::<f64>() - 1.0);
        m.b += sb * (2.0 * rng.random::<f64>() - 1.0);
    }
}

/// Number of groups of local models under single linkage on
/// `max(|Δa|, |Δb| / intercept_scale) <= merge_tol`.
pub fn cluster_count(models: &[AffineModel], merge_tol: f64, intercept_scale: f64) -> usize {
    let n = models.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let d = (models[i].a - models[j].a)
                .abs()
                .max((models[i].b - models[j].b).abs() / intercept_scale);
            if d <= merge_tol {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    (0..n).filter(|&i| root(&mut parent, i) == i).count()
}

/// Finite-difference gradient descent settings for the local models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentSettings {
    pub step_init: f64,
    pub backtrack: f64,
    pub max_iters: usize,
}

impl From<&AnnealConfig> for DescentSettings {
    fn from(c: &AnnealConfig) -> Self {
        DescentSettings {
            step_init: c.gd_step_init,
            backtrack: c.gd_backtrack_factor,
            max_iters: c.gd_max_iters,
        }
    }
}

/// Central-difference gradient with relative step 1e-4 and absolute floor 1e-6.
pub fn fd_gradient(f: &mut impl FnMut(f64, f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let ha = (1e-4 * a.abs()).max(1e-6);
    let hb = (1e-4 * b.abs()).max(1e-6);
    let ga = (f(a + ha, b) - f(a - ha, b)) / (2.0 * ha);
    let gb = (f(a, b + hb) - f(a, b - hb)) / (2.0 * hb);
    (ga, gb)
}

/// Armijo backtracking descent on a two-parameter objective. Returns the new
/// parameters; they equal the input when no step was accepted.
pub fn descend(mut f: impl FnMut(f64, f64) -> f64, a0: f64, b0: f64, s: &DescentSettings) -> (f64, f64) {
    let (mut a, mut b) = (a0, b0);
    let mut fx = f(a, b);
    if !fx.is_finite() {
        return (a0, b0);
    }
    let mut t = s.step_init;
    for _ in 0..s.max_iters {
        let (ga, gb) = fd_gradient(&mut f, a, b);
        let g2 = ga * ga + gb * gb;
        if !(g2 > 0.0) || !g2.is_finite() {
            break;
        }
        let mut accepted = false;
        loop {
            let (na, nb) = (a - t * ga, b - t * gb);
            let fn_ = f(na, nb);
            if fn_.is_finite() && fn_ <= fx - 1e-4 * t * g2 {
                let gain = fx - fn_;
                a = na;
                b = nb;
                fx = fn_;
                accepted = gain > 1e-15 * fx.abs();
                break;
            }
            t *= s.backtrack;
            if t < 1e-12 * s.step_init {
                break;
            }
        }
        if !accepted {
            break;
        }
        t = (t / s.backtrack).min(1e6 * s.step_init);
    }
    (a, b)
}

/// Gradient descent on every local model of both encoders with decoder and
/// associations fixed. Encoder 1 is updated first; encoder 2 then sees the
/// new encoder 1.
pub fn optimize_models(
    enc1: &mut RandomizedEncoder,
    enc2: &mut RandomizedEncoder,
    decoder: &DecoderTable,
    problem: &Problem,
    settings: &DescentSettings,
) {
    for side in [Side::One, Side::Two] {
        let (own, other) = match side {
            Side::One => (&mut *enc1, &*enc2),
            Side::Two => (&mut *enc2, &*enc1),
        };
        let field = ConditionalField::build(problem, &other.input_table(), decoder, side);
        optimize_side(own, &field, problem.source.marginal(side), problem.weights.for_side(side), settings);
    }
}

/// Descent on the local models of one encoder against a fixed conditional field.
pub fn optimize_side(
    enc: &mut RandomizedEncoder,
    field: &ConditionalField,
    marginal: &[f64],
    lambda: f64,
    settings: &DescentSettings,
) {
    let k = enc.k();
    let mut scratch = Vec::new();
    for m in 0..k {
        // nodes carrying weight for this model
        let nodes: Vec<(usize, f64, f64)> = (0..enc.n_x())
            .filter_map(|i| {
                let w = marginal[i] * enc.assoc[i * k + m];
                (w > NEGLIGIBLE_WEIGHT && !field.flagged[i]).then_some((i, enc.grid[i], w))
            })
            .collect();
        let total: f64 = nodes.iter().map(|n| n.2).sum();
        if nodes.is_empty() || !(total > 0.0) {
            continue;
        }
        let obj = |a: f64, b: f64| {
            let mut s = 0.0;
            for &(i, x, w) in &nodes {
                let g = a * x + b;
                s += w * (field.excess(i, g, &mut scratch) + lambda * g * g);
            }
            s / total
        };
        let model = enc.models[m];
        let (a, b) = descend(obj, model.a, model.b, settings);
        enc.models[m] = AffineModel::new(a, b);
    }
}

/// Runs the full annealing schedule followed by the zero-temperature phase.
pub fn anneal(config: &AnnealConfig, problem: &Problem) -> Result<AnnealOutcome> {
    anneal_with(config, problem, |_| {})
}

/// As [`anneal`], calling `on_record` as each temperature completes.
pub fn anneal_with(
    config: &AnnealConfig,
    problem: &Problem,
    mut on_record: impl FnMut(&TempRecord),
) -> Result<AnnealOutcome> {
    config.validate()?;
    let source = &problem.source;
    let (mut enc1, mut enc2) = init_state(config, source);
    let (in1, in2) = (enc1.input_table(), enc2.input_table());
    let mut grid = problem.output_grid(&in1, &in2)?;
    let decoder = compute_decoder(source, &problem.noise1, &problem.noise2, &in1, &in2, &grid);
    let d0 = evaluate_distortion(problem, &in1, &in2, &decoder);
    drop(decoder);
    let t_init = config.t_init.unwrap_or(config.t_init_factor * d0.max(1e-12));
    let t_min = config.t_min.unwrap_or(config.t_min_ratio * t_init);
    if !(t_min < t_init) {
        return Err(Error::config(format!("need t_min ({t_min}) < t_init ({t_init})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let gd = DescentSettings::from(config);
    let (s1, s2) = (source.std(Side::One), source.std(Side::Two));
    let clusters = |e1: &RandomizedEncoder, e2: &RandomizedEncoder| {
        (
            cluster_count(&e1.models, config.merge_tol, s1),
            cluster_count(&e2.models, config.merge_tol, s2),
        )
    };

    let mut records: Vec<TempRecord> = Vec::new();
    let mut critical = Vec::new();
    let mut t = t_init;
    while t >= t_min * (1.0 - 1e-12) {
        let h1 = GridEncoder::from_hardened(&enc1).input_table();
        let h2 = GridEncoder::from_hardened(&enc2).input_table();
        grid = problem.refresh_grid(&grid, &h1, &h2)?.0;

        perturb(&mut enc1, config.perturb_eps, s1, &mut rng);
        perturb(&mut enc2, config.perturb_eps, s2, &mut rng);

        let mut f_trace: Vec<f64> = Vec::new();
        let mut report = None;
        for _ in 0..config.inner_max_iters {
            let (in1, in2) = (enc1.input_table(), enc2.input_table());
            let decoder = compute_decoder(source, &problem.noise1, &problem.noise2, &in1, &in2, &grid);
            let tensor = compute_distortion_tensor(source, &problem.noise1, &problem.noise2, &in1, &in2, &decoder);
            let c1 = conditional_model_cost(&tensor, source, &in2, problem.weights.lambda1, &in1, Side::One);
            enc1.assoc = gibbs_update(&c1.values, c1.k, t);
            let in1 = enc1.input_table();
            let c2 = conditional_model_cost(&tensor, source, &in1, problem.weights.lambda2, &in2, Side::Two);
            enc2.assoc = gibbs_update(&c2.values, c2.k, t);
            optimize_models(&mut enc1, &mut enc2, &decoder, problem, &gd);

            let r = evaluate_state(problem, &enc1.input_table(), &enc2.input_table(), &decoder, t);
            if !r.f.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite free energy at T={t}: D={} P1={} P2={} H={}",
                    r.d, r.p1, r.p2, r.h
                )));
            }
            let done = f_trace.last().is_some_and(|&prev: &f64| (prev - r.f).abs() <= config.inner_tol * r.f.abs());
            f_trace.push(r.f);
            report = Some(r);
            if done {
                break;
            }
        }
        let r = report.expect("at least one inner iteration");
        let c = clusters(&enc1, &enc2);
        if let Some(prev) = records.last() {
            if c.0 > prev.clusters1 || c.1 > prev.clusters2 {
                critical.push(t);
            }
        }
        let rec = TempRecord::new(t, &r, c, f_trace.len(), f_trace);
        log::debug!(
            "T={:.3e} D={:.5} P=({:.3},{:.3}) H={:.4} F={:.6} clusters=({},{}) iters={}",
            rec.t, rec.d, rec.p1, rec.p2, rec.h, rec.f, rec.clusters1, rec.clusters2, rec.inner_iters
        );
        on_record(&rec);
        records.push(rec);
        t *= config.alpha;
    }

    enc1.harden_in_place();
    enc2.harden_in_place();
    let g1 = GridEncoder::from_hardened(&enc1);
    let g2 = GridEncoder::from_hardened(&enc2);
    grid = problem.refresh_grid(&grid, &g1.input_table(), &g2.input_table())?.0;
    let out = greedy_descend(g1, g2, problem, &config.zero_temperature, Some(grid))?;
    let c = clusters(&enc1, &enc2);
    let rec = TempRecord::new(0.0, &out.report, c, out.sweeps, out.j_trace.clone());
    on_record(&rec);
    records.push(rec);

    Ok(AnnealOutcome {
        annealed1: enc1,
        annealed2: enc2,
        enc1: out.enc1,
        enc2: out.enc2,
        decoder: out.decoder,
        report: AnnealReport {
            t_init,
            t_min,
            records,
            critical_temperatures: critical,
        },
        cost: out.report,
    })
}

/// Zero-temperature phase on its own: greedy descent from deterministic
/// encoders on a given output grid.
pub fn zero_temperature_phase(
    config: &AnnealConfig,
    problem: &Problem,
    enc1: GridEncoder,
    enc2: GridEncoder,
    grid: crate::numerics::OutputGrid,
) -> Result<crate::baselines::GreedyOutcome> {
    greedy_descend(enc1, enc2, problem, &config.zero_temperature, Some(grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{build_noise_model, build_source_model};
    use crate::objective::{table_power, LagrangeWeights};

    fn problem() -> Problem {
        Problem {
            source: build_source_model(0.9, 1.0, 1.0, 24, 5.0).unwrap(),
            noise1: build_noise_model(0.1, 9, 4.0).unwrap(),
            noise2: build_noise_model(0.1, 9, 4.0).unwrap(),
            weights: LagrangeWeights::total(0.02).unwrap(),
            n_y: 40,
            margin: 0.1,
        }
    }

    #[test]
    fn init_is_coincident_and_uniform() {
        let p = problem();
        let cfg = AnnealConfig {
            p_target: Some(4.0),
            ..Default::default()
        };
        let (e1, e2) = init_state(&cfg, &build_source_model(0.5, 1.0, 1.0, 16, 5.0).unwrap());
        assert_eq!(e1.k(), 8);
        assert!(e1.models.iter().all(|m| m.a == 2.0 && m.b == 0.0));
        assert!(e2.assoc.iter().all(|p| *p == 0.125));
        assert_eq!(cluster_count(&e1.models, 0.02, 1.0), 1);
        let (e1, _) = init_state(&AnnealConfig::default(), &p.source);
        assert!((table_power(&e1.input_table(), &p.source.q_marg_1) - p.source.grid_variance(1)).abs() < 1e-9);
    }

    #[test]
    fn perturbation_is_seeded() {
        let base = RandomizedEncoder::coincident(vec![0.0, 1.0], AffineModel::new(1.0, 0.0), 4);
        let run = |seed| {
            let mut e = base.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            perturb(&mut e, 0.01, 1.0, &mut rng);
            e
        };
        assert_eq!(run(3), run(3));
        let e = run(3);
        for i in 0..4 {
            assert!((e.models[i].a - 1.0).abs() <= 0.01 && e.models[i].b.abs() <= 0.01);
            for j in i + 1..4 {
                assert_ne!(e.models[i], e.models[j]);
            }
        }
        let mut same = base.clone();
        perturb(&mut same, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(same, base);
    }

    #[test]
    fn cluster_counts() {
        let m = |a, b| AffineModel::new(a, b);
        assert_eq!(cluster_count(&[m(1.0, 0.0); 3], 0.01, 1.0), 1);
        assert_eq!(cluster_count(&[m(1.0, 0.0), m(1.0, 10.0)], 0.01, 1.0), 2);
        assert_eq!(cluster_count(&[m(1.0, 0.0), m(1.0, 0.0), m(-1.0, 2.0), m(-1.0, 2.0)], 0.01, 1.0), 2);
        // single linkage chains
        assert_eq!(cluster_count(&[m(0.0, 0.0), m(0.008, 0.0), m(0.016, 0.0)], 0.01, 1.0), 1);
    }

    #[test]
    fn descend_finds_quadratic_minimum() {
        let f = |a: f64, b: f64| (a - 1.5).powi(2) + 2.0 * (b + 0.5).powi(2) + 0.5 * (a - 1.5) * (b + 0.5);
        let s = DescentSettings {
            step_init: 1.0,
            backtrack: 0.5,
            max_iters: 200,
        };
        let (a, b) = descend(f, 0.0, 0.0, &s);
        assert!((a - 1.5).abs() < 1e-6 && (b + 0.5).abs() < 1e-6, "{a} {b}");
        // non-finite objective leaves parameters alone
        assert_eq!(descend(|_, _| f64::NAN, 0.3, 0.4, &s), (0.3, 0.4));
    }

    #[test]
    fn short_anneal_ends_deterministic() {
        let p = problem();
        let cfg = AnnealConfig {
            k1: 2,
            k2: 2,
            alpha: 0.5,
            t_min_ratio: 1e-3,
            ..Default::default()
        };
        let out = anneal(&cfg, &p).unwrap();
        let last = out.report.records.last().unwrap();
        assert_eq!(last.t, 0.0);
        assert_eq!(last.h, 0.0);
        assert!(out.report.records.windows(2).all(|w| w[1].t < w[0].t));
        for r in &out.report.records[..out.report.records.len() - 1] {
            for w in r.f_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "T={} {:?}", r.t, r.f_trace);
            }
        }
        assert!(out.annealed1.assoc.iter().all(|p| *p == 0.0 || *p == 1.0));
    }

    #[test]
    fn rejects_invalid_config() {
        let p = problem();
        for cfg in [
            AnnealConfig { alpha: 1.0, ..Default::default() },
            AnnealConfig { k1: 0, ..Default::default() },
            AnnealConfig { t_init: Some(1.0), t_min: Some(2.0), ..Default::default() },
            AnnealConfig { inner_tol: 0.0, ..Default::default() },
        ] {
            assert!(matches!(anneal(&cfg, &p), Err(Error::Config(_))));
        }
    }
}
