//! Fitting population parameters to a historical mortality series.
//!
//! The objective is the L1 distance between the simulated per-round
//! mortality rate (mean over a fixed set of replicate seeds) and the
//! historical series. Gradients come from a five-point finite-difference
//! stencil and the update is projected gradient descent.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::NumericError;
use crate::population::{build_population, GroupKey, Spread};
use crate::rng::{self, Purpose};
use crate::scenario::{GroupSelector, PopulationRule, Scenario, ScenarioFile};
use crate::simulator::{run_population, CampaignPlan, SimOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamTarget {
    /// Mean of the compliance distribution of the selected groups.
    MuMean { groups: GroupSelector },
    /// Mean of the SMS responsiveness distribution of the selected groups.
    RhoMean { groups: GroupSelector },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub target: ParamTarget,
    pub lower: f64,
    pub upper: f64,
}

/// Named parameters with box bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub specs: Vec<ParameterSpec>,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(specs: Vec<ParameterSpec>, values: Vec<f64>) -> Result<Self, NumericError> {
        if specs.len() != values.len() {
            return Err(NumericError::LengthMismatch {
                left: specs.len(),
                right: values.len(),
            });
        }
        for s in &specs {
            if !(s.lower < s.upper) || !s.lower.is_finite() || !s.upper.is_finite() {
                return Err(NumericError::Invalid(format!(
                    "parameter {}: bounds [{}, {}] are not a finite interval",
                    s.name, s.lower, s.upper
                )));
            }
        }
        let mut v = ParameterVector { specs, values };
        v.project();
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.specs.iter().map(|s| (s.lower, s.upper)).collect()
    }

    pub fn project(&mut self) {
        for (v, s) in self.values.iter_mut().zip(&self.specs) {
            *v = v.clamp(s.lower, s.upper);
        }
    }

    pub fn with_values(&self, values: &[f64]) -> Self {
        let mut p = ParameterVector {
            specs: self.specs.clone(),
            values: values.to_vec(),
        };
        p.project();
        p
    }

    /// Copy of `scenario` with the parameters written into its initial
    /// population spec. Later parameters win where selectors overlap.
    pub fn apply(&self, scenario: &Scenario) -> Scenario {
        let mut out = scenario.clone();
        for (spec, &v) in self.specs.iter().zip(&self.values) {
            for (i, g) in out.init.groups.iter_mut().enumerate() {
                let key = GroupKey::from_index(i);
                match &spec.target {
                    ParamTarget::MuMean { groups } if groups.matches(key) => g.mu.mean = v,
                    ParamTarget::RhoMean { groups } if groups.matches(key) => g.rho.mean = v,
                    _ => {}
                }
            }
        }
        out
    }

    /// Appends population rules to `file` that pin the fitted means. Spreads
    /// keep the sd `resolved` gives each group; when the selected groups
    /// disagree on sd, one rule per group is written.
    pub fn patch(&self, file: &ScenarioFile, resolved: &Scenario) -> ScenarioFile {
        let mut out = file.clone();
        for (spec, &v) in self.specs.iter().zip(&self.values) {
            let (groups, is_mu) = match &spec.target {
                ParamTarget::MuMean { groups } => (groups, true),
                ParamTarget::RhoMean { groups } => (groups, false),
            };
            let sd_of = |k: GroupKey| {
                let g = &resolved.init.groups[k.index()];
                if is_mu { g.mu.sd } else { g.rho.sd }
            };
            let keys: Vec<GroupKey> = GroupKey::all().filter(|k| groups.matches(*k)).collect();
            let Some(&first) = keys.first() else { continue };
            let rule = |sel: GroupSelector, sd: f64| {
                let spread = Some(Spread { mean: v, sd });
                if is_mu {
                    PopulationRule { groups: sel, mu: spread, ..Default::default() }
                } else {
                    PopulationRule { groups: sel, rho: spread, ..Default::default() }
                }
            };
            if keys.iter().all(|&k| sd_of(k) == sd_of(first)) {
                out.population.push(rule(groups.clone(), sd_of(first)));
            } else {
                for k in keys {
                    let sel = GroupSelector {
                        age_buckets: Some(vec![k.age_bucket]),
                        genders: Some(vec![k.gender]),
                        ses: Some(vec![k.ses]),
                    };
                    out.population.push(rule(sel, sd_of(k)));
                }
            }
        }
        out
    }
}

/// Sum of absolute differences between two series.
pub fn l1_loss(sim: &[f64], hist: &[f64]) -> Result<f64, NumericError> {
    if sim.len() != hist.len() {
        return Err(NumericError::LengthMismatch {
            left: sim.len(),
            right: hist.len(),
        });
    }
    Ok(sim.iter().zip(hist).map(|(a, b)| (a - b).abs()).sum())
}

/// Mean absolute error.
pub fn mae(sim: &[f64], hist: &[f64]) -> Result<f64, NumericError> {
    if hist.is_empty() {
        return Err(NumericError::TooShort { needed: 0, have: 0 });
    }
    Ok(l1_loss(sim, hist)? / hist.len() as f64)
}

/// Coefficient of determination of `sim` as a prediction of `hist`.
pub fn r_squared(sim: &[f64], hist: &[f64]) -> Result<f64, NumericError> {
    if sim.len() != hist.len() {
        return Err(NumericError::LengthMismatch {
            left: sim.len(),
            right: hist.len(),
        });
    }
    if hist.len() < 2 {
        return Err(NumericError::TooShort {
            needed: 1,
            have: hist.len(),
        });
    }
    let m = hist.iter().sum::<f64>() / hist.len() as f64;
    let ss_tot: f64 = hist.iter().map(|h| (h - m) * (h - m)).sum();
    if ss_tot <= 0.0 {
        return Err(NumericError::ZeroVariance);
    }
    let ss_res: f64 = sim.iter().zip(hist).map(|(s, h)| (h - s) * (h - s)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Stencil used for one coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stencil {
    Central { h: f64 },
    Forward { h: f64 },
    Backward { h: f64 },
}

impl Stencil {
    /// Picks a stencil that keeps every evaluation point inside `[lo, hi]`.
    /// The central stencil is preferred; its step shrinks down to a quarter
    /// of `h` before the one-sided stencils are tried.
    pub fn choose(x: f64, h: f64, lo: f64, hi: f64, coordinate: usize) -> Result<Self, NumericError> {
        let room = (x - lo).min(hi - x);
        if 2.0 * h <= room {
            return Ok(Stencil::Central { h });
        }
        if room / 2.0 >= h / 4.0 {
            return Ok(Stencil::Central { h: room / 2.0 });
        }
        if x + 4.0 * h <= hi {
            return Ok(Stencil::Forward { h });
        }
        if x - 4.0 * h >= lo {
            return Ok(Stencil::Backward { h });
        }
        let fwd = (hi - x) / 4.0;
        let bwd = (x - lo) / 4.0;
        if fwd.max(bwd) > 0.0 {
            return Ok(if fwd >= bwd {
                Stencil::Forward { h: fwd }
            } else {
                Stencil::Backward { h: bwd }
            });
        }
        Err(NumericError::NoStencilRoom(coordinate))
    }

    /// Offsets (in units of x) and weights; the derivative is
    /// `sum(w * f(x + offset)) / denominator`.
    fn points(self) -> ([f64; 5], [f64; 5], f64) {
        match self {
            Stencil::Central { h } => (
                [-2.0 * h, -h, 0.0, h, 2.0 * h],
                [1.0, -8.0, 0.0, 8.0, -1.0],
                12.0 * h,
            ),
            Stencil::Forward { h } => (
                [0.0, h, 2.0 * h, 3.0 * h, 4.0 * h],
                [-25.0, 48.0, -36.0, 16.0, -3.0],
                12.0 * h,
            ),
            Stencil::Backward { h } => (
                [0.0, -h, -2.0 * h, -3.0 * h, -4.0 * h],
                [25.0, -48.0, 36.0, -16.0, 3.0],
                12.0 * h,
            ),
        }
    }
}

/// Five-point finite-difference gradient of `f` at `x`, staying inside
/// `bounds`. Any non-finite objective value is an error.
pub fn stencil_gradient<F>(f: F, x: &[f64], h: f64, bounds: &[(f64, f64)]) -> Result<Vec<f64>, NumericError>
where
    F: Fn(&[f64]) -> Result<f64, NumericError> + Sync,
{
    if bounds.len() != x.len() {
        return Err(NumericError::LengthMismatch {
            left: x.len(),
            right: bounds.len(),
        });
    }
    if !(h > 0.0) {
        return Err(NumericError::Invalid(format!("stencil step {h} must be positive")));
    }
    let mut jobs = Vec::with_capacity(4 * x.len());
    let mut stencils = Vec::with_capacity(x.len());
    for (j, (&xj, &(lo, hi))) in x.iter().zip(bounds).enumerate() {
        let s = Stencil::choose(xj, h, lo, hi, j)?;
        let (offsets, weights, _) = s.points();
        for (o, w) in offsets.iter().zip(weights) {
            if w != 0.0 {
                jobs.push((j, *o, w));
            }
        }
        stencils.push(s);
    }
    let values: Vec<(usize, f64, f64)> = jobs
        .par_iter()
        .map(|&(j, o, w)| {
            let mut p = x.to_vec();
            p[j] += o;
            let v = f(&p)?;
            if !v.is_finite() {
                return Err(NumericError::NonFinite {
                    coordinate: j,
                    value: v,
                });
            }
            Ok((j, w, v))
        })
        .collect::<Result<_, _>>()?;
    let mut grad = vec![0.0; x.len()];
    for (j, w, v) in values {
        grad[j] += w * v;
    }
    for (g, s) in grad.iter_mut().zip(&stencils) {
        *g /= s.points().2;
    }
    Ok(grad)
}

/// One parameter to fit and its starting value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterStart {
    #[serde(flatten)]
    pub spec: ParameterSpec,
    pub start: f64,
}

/// Parameters and settings of a fit, as read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub parameters: Vec<ParameterStart>,
    #[serde(default)]
    pub config: FitConfig,
}

impl FitSpec {
    pub fn from_json_str(text: &str) -> Result<Self, NumericError> {
        serde_json::from_str(text).map_err(|e| NumericError::Invalid(format!("fit spec: {e}")))
    }

    pub fn start(&self) -> Result<ParameterVector, NumericError> {
        if self.parameters.is_empty() {
            return Err(NumericError::Invalid("fit spec lists no parameters".into()));
        }
        ParameterVector::new(
            self.parameters.iter().map(|p| p.spec.clone()).collect(),
            self.parameters.iter().map(|p| p.start).collect(),
        )
    }
}

/// Per-round disease mortality rate (deaths over the alive population at
/// the start of the round), averaged over replicates.
pub fn simulated_series(
    scenario: &Scenario,
    plan: &CampaignPlan,
    seeds: &[u64],
) -> Result<Vec<f64>, NumericError> {
    let runs: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&s| {
            let pop = build_population(&scenario.init, &scenario.clinical, &scenario.policy, s)
                .map_err(crate::error::SimError::from)?;
            let r = run_population(scenario, pop, plan, SimOptions::default())?;
            Ok(r.rounds
                .iter()
                .map(|x| {
                    if x.alive_start == 0 {
                        0.0
                    } else {
                        x.disease_deaths as f64 / x.alive_start as f64
                    }
                })
                .collect())
        })
        .collect::<Result<_, NumericError>>()?;
    let n = scenario.horizon() as usize;
    let mut mean = vec![0.0; n];
    for r in &runs {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    let k = runs.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    Ok(mean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub learning_rate: f64,
    /// Finite-difference step.
    pub step: f64,
    pub max_iterations: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Stop once R² of the fitted series reaches this value.
    pub r2_target: Option<f64>,
    /// Stop once the loss falls to this value.
    pub loss_target: Option<f64>,
    /// Halve the step until the loss decreases, and double it after an
    /// accepted step. Stops as stalled when no halving helps.
    pub backtracking: bool,
    pub max_halvings: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 1.0,
            step: 0.02,
            max_iterations: 300,
            replicates: 2,
            seed: 1,
            r2_target: None,
            loss_target: None,
            backtracking: true,
            max_halvings: 12,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), NumericError> {
        if !(self.learning_rate > 0.0) || !(self.step > 0.0) {
            return Err(NumericError::Invalid(
                "learning rate and finite-difference step must be positive".into(),
            ));
        }
        if self.replicates == 0 {
            return Err(NumericError::Invalid("replicates must be at least 1".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        rng::replicate_seeds(rng::derive_seed(self.seed, Purpose::Replicate, 1), self.replicates)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitTraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub mae: f64,
    pub r2: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    MaxIterations,
    /// No step size decreased the loss.
    Stalled,
    /// Loss stayed above ten times its initial value for five iterations.
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub params: ParameterVector,
    pub series: Vec<f64>,
    pub trace: Vec<FitTraceRow>,
    pub stop: StopReason,
}

impl FitOutcome {
    pub fn final_r2(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.r2)
    }

    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![
            "iteration".to_string(),
            "loss".into(),
            "mae".into(),
            "r2".into(),
            "grad_norm".into(),
            "learning_rate".into(),
        ];
        header.extend(self.params.specs.iter().map(|s| s.name.clone()));
        out.write_record(&header)?;
        for r in &self.trace {
            let mut rec = vec![
                r.iteration.to_string(),
                r.loss.to_string(),
                r.mae.to_string(),
                r.r2.to_string(),
                r.grad_norm.to_string(),
                r.learning_rate.to_string(),
            ];
            rec.extend(r.values.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Objective for one parameter vector.
pub struct Objective<'a> {
    pub scenario: &'a Scenario,
    pub plan: &'a CampaignPlan,
    pub historical: &'a [f64],
    pub template: &'a ParameterVector,
    pub seeds: Vec<u64>,
}

impl Objective<'_> {
    pub fn series(&self, values: &[f64]) -> Result<Vec<f64>, NumericError> {
        let s = self.template.with_values(values).apply(self.scenario);
        simulated_series(&s, self.plan, &self.seeds)
    }

    pub fn loss(&self, values: &[f64]) -> Result<f64, NumericError> {
        l1_loss(&self.series(values)?, self.historical)
    }

    pub fn evaluate(&self, values: &[f64]) -> Result<Evaluation, NumericError> {
        let series = self.series(values)?;
        Ok(Evaluation {
            loss: l1_loss(&series, self.historical)?,
            r2: r_squared(&series, self.historical)?,
            series,
        })
    }
}

/// Value of an objective at one point: the loss and a goodness-of-fit score
/// recorded alongside it.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub r2: f64,
    pub series: Vec<f64>,
}

/// Projected gradient descent on `objective` from `x0`. Returns the final
/// point, its evaluation, the trace and the stop reason. `mae_scale`
/// converts a loss into the trace's MAE column.
pub fn descend<F>(
    objective: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    cfg: &FitConfig,
    mae_scale: f64,
    progress: &dyn Fn(&FitTraceRow),
) -> Result<(Vec<f64>, Evaluation, Vec<FitTraceRow>, StopReason), NumericError>
where
    F: Fn(&[f64]) -> Result<Evaluation, NumericError> + Sync,
{
    cfg.validate()?;
    let project = |v: &mut [f64]| {
        for (xi, (lo, hi)) in v.iter_mut().zip(bounds) {
            *xi = xi.clamp(*lo, *hi);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let mut cur = objective(&x)?;
    if !cur.loss.is_finite() {
        return Err(NumericError::NonFinite {
            coordinate: 0,
            value: cur.loss,
        });
    }
    let initial_loss = cur.loss;
    let mut lr = cfg.learning_rate;
    let mut trace = Vec::new();
    let row = |iteration: usize, e: &Evaluation, g: f64, lr: f64, x: &[f64]| FitTraceRow {
        iteration,
        loss: e.loss,
        mae: e.loss * mae_scale,
        r2: e.r2,
        grad_norm: g,
        learning_rate: lr,
        values: x.to_vec(),
    };
    let reached = |e: &Evaluation| {
        cfg.r2_target.is_some_and(|t| e.r2 >= t) || cfg.loss_target.is_some_and(|t| e.loss <= t)
    };
    trace.push(row(0, &cur, f64::NAN, lr, &x));
    progress(&trace[0]);
    if reached(&cur) {
        return Ok((x, cur, trace, StopReason::TargetReached));
    }
    let mut above = 0usize;
    let mut stop = StopReason::MaxIterations;
    for iter in 1..=cfg.max_iterations {
        let grad = stencil_gradient(|p| objective(p).map(|e| e.loss), &x, cfg.step, bounds)?;
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let tries = if cfg.backtracking { cfg.max_halvings + 1 } else { 1 };
        let mut accepted = None;
        for _ in 0..tries {
            let mut cand: Vec<f64> = x.iter().zip(&grad).map(|(xi, g)| xi - lr * g).collect();
            project(&mut cand);
            let e = objective(&cand)?;
            if !e.loss.is_finite() {
                return Err(NumericError::NonFinite {
                    coordinate: 0,
                    value: e.loss,
                });
            }
            if !cfg.backtracking || e.loss < cur.loss {
                accepted = Some((cand, e));
                break;
            }
            lr *= 0.5;
        }
        let Some((cand, e)) = accepted else {
            trace.push(row(iter, &cur, gnorm, lr, &x));
            progress(trace.last().expect("just pushed"));
            stop = StopReason::Stalled;
            break;
        };
        let moved = cand != x;
        x = cand;
        cur = e;
        trace.push(row(iter, &cur, gnorm, lr, &x));
        progress(trace.last().expect("just pushed"));
        if reached(&cur) {
            stop = StopReason::TargetReached;
            break;
        }
        if cur.loss > 10.0 * initial_loss {
            above += 1;
            if above >= 5 {
                stop = StopReason::Diverged;
                break;
            }
        } else {
            above = 0;
        }
        if !moved {
            stop = StopReason::Stalled;
            break;
        }
        if cfg.backtracking {
            lr *= 2.0;
        }
    }
    Ok((x, cur, trace, stop))
}

/// Fits `start`'s parameters so the simulated mortality series under
/// `plan` matches `historical`. `progress` receives each trace row.
pub fn fit(
    scenario: &Scenario,
    plan: &CampaignPlan,
    historical: &[f64],
    start: &ParameterVector,
    cfg: &FitConfig,
    progress: &dyn Fn(&FitTraceRow),
) -> Result<FitOutcome, NumericError> {
    cfg.validate()?;
    if historical.len() != scenario.horizon() as usize {
        return Err(NumericError::LengthMismatch {
            left: scenario.horizon() as usize,
            right: historical.len(),
        });
    }
    // fail early on an unusable history
    r_squared(historical, historical)?;
    let obj = Objective {
        scenario,
        plan,
        historical,
        template: start,
        seeds: cfg.seeds(),
    };
    let (x, last, trace, stop) = descend(
        |p| obj.evaluate(p),
        &start.values,
        &start.bounds(),
        cfg,
        1.0 / historical.len() as f64,
        progress,
    )?;
    Ok(FitOutcome {
        params: start.with_values(&x),
        series: last.series,
        trace,
        stop,
    })
}

/// Reads a `round,value` CSV into a series ordered as in the file.
pub fn read_series_csv<R: Read>(r: R) -> Result<Vec<f64>, NumericError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| NumericError::Invalid(format!("series CSV: {e}")))?;
        let v: f64 = rec
            .get(1)
            .ok_or_else(|| NumericError::Invalid("series CSV needs two columns".into()))?
            .trim()
            .parse()
            .map_err(|e| NumericError::Invalid(format!("series CSV value: {e}")))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_series_csv<W: Write>(w: W, t0: u32, series: &[f64]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["round", "value"])?;
    for (i, v) in series.iter().enumerate() {
        out.write_record([(t0 as usize + i).to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
