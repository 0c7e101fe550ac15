//! Campaign strategies, Monte Carlo search over campaign tensors, and the
//! replicate-based comparison of strategies.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::campaign::{CampaignTensor, CellMap, StatusGrid};
use crate::error::SimError;
use crate::population::{build_population, PopulationState};
use crate::rng::{self, Purpose};
use crate::scenario::Scenario;
use crate::simulator::{run_population, CampaignPlan, SimOptions, SimulationResult};
use crate::stats::{self, Anova, TTest};

#[derive(Clone, Debug, PartialEq)]
pub enum CampaignStrategy {
    None,
    /// Whole budget spread evenly over rounds and over every eligible
    /// individual, as if the population were a single group.
    Naive,
    Greedy,
    /// Tensor over time × clinical status class.
    NaiveMc(CampaignTensor),
    /// Tensor over time × age bucket × gender × SES.
    SocioMc(CampaignTensor),
}

impl CampaignStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            CampaignStrategy::None => "none",
            CampaignStrategy::Naive => "naive",
            CampaignStrategy::Greedy => "greedy",
            CampaignStrategy::NaiveMc(_) => "naive_mc",
            CampaignStrategy::SocioMc(_) => "socio_mc",
        }
    }

    pub fn plan(&self, horizon: u32) -> CampaignPlan {
        match self {
            CampaignStrategy::None => CampaignPlan::None,
            CampaignStrategy::Naive => CampaignPlan::Tensor(naive_tensor(horizon)),
            CampaignStrategy::Greedy => CampaignPlan::Greedy,
            CampaignStrategy::NaiveMc(t) | CampaignStrategy::SocioMc(t) => {
                CampaignPlan::Tensor(t.clone())
            }
        }
    }
}

/// Single pooled cell and a single time block holding the whole budget.
pub fn naive_tensor(horizon: u32) -> CampaignTensor {
    CampaignTensor::uniform(
        CellMap::Status(StatusGrid {
            split_status: false,
        }),
        horizon,
        horizon,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimensions {
    StatusOnly,
    Socio,
}

impl Dimensions {
    pub fn cell_map(self, scenario: &Scenario) -> CellMap {
        match self {
            Dimensions::StatusOnly => CellMap::Status(scenario.status_grid),
            Dimensions::Socio => CellMap::Socio(scenario.campaign_grid),
        }
    }

    pub fn wrap(self, tensor: CampaignTensor) -> CampaignStrategy {
        match self {
            Dimensions::StatusOnly => CampaignStrategy::NaiveMc(tensor),
            Dimensions::Socio => CampaignStrategy::SocioMc(tensor),
        }
    }
}

/// Distribution of candidate tensors. Every sampler returns entries that sum
/// to one (less a hair, so that per-cell flooring never overshoots the
/// budget).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    /// Flat Dirichlet over all cells.
    DirichletUniform,
    /// Independent Gamma(shape) entries, normalized.
    IndependentThenNormalize { shape: f64 },
    /// Outer product of one Dirichlet(shape) draw per axis (time, then each
    /// cell axis). Axes of size one are not drawn.
    AxisProduct { shape: f64 },
    /// As `AxisProduct`, but every axis of every sample draws its own shape
    /// log-uniformly from `[min_shape, max_shape]`, so candidates range from
    /// diffuse to sharply concentrated.
    MixedAxisProduct { min_shape: f64, max_shape: f64 },
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler::AxisProduct { shape: 0.5 }
    }
}

const SIMPLEX_SHRINK: f64 = 1.0 - 1e-12;

fn gamma_weights<R: Rng + ?Sized>(n: usize, shape: f64, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(shape, 1.0).expect("positive shape");
    let mut w: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 && total.is_finite() {
        w.iter_mut().for_each(|x| *x /= total);
    } else {
        w.iter_mut().for_each(|x| *x = 1.0 / n as f64);
    }
    w
}

fn axis_product<R: Rng + ?Sized>(
    shape: &[usize],
    rng: &mut R,
    mut concentration: impl FnMut(&mut R) -> f64,
) -> Vec<f64> {
    let n: usize = shape.iter().product();
    let mut values = vec![1.0; n];
    let mut stride = n;
    for &len in shape {
        stride /= len;
        if len == 1 {
            continue;
        }
        let a = concentration(rng);
        let w = gamma_weights(len, a, rng);
        for (i, v) in values.iter_mut().enumerate() {
            *v *= w[(i / stride) % len];
        }
    }
    values
}

impl Sampler {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Sampler::DirichletUniform => Ok(()),
            Sampler::IndependentThenNormalize { shape } | Sampler::AxisProduct { shape } => {
                if shape > 0.0 && shape.is_finite() {
                    Ok(())
                } else {
                    Err(format!("sampler shape must be positive, got {shape}"))
                }
            }
            Sampler::MixedAxisProduct {
                min_shape,
                max_shape,
            } => {
                if min_shape > 0.0 && max_shape >= min_shape && max_shape.is_finite() {
                    Ok(())
                } else {
                    Err(format!(
                        "sampler shapes must satisfy 0 < min <= max, got [{min_shape}, {max_shape}]"
                    ))
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        cells: CellMap,
        horizon: u32,
        block_length: u32,
        rng: &mut R,
    ) -> CampaignTensor {
        let mut t = CampaignTensor::zeros(cells, horizon, block_length);
        let shape = t.shape();
        let n: usize = shape.iter().product();
        let values = match *self {
            Sampler::DirichletUniform => gamma_weights(n, 1.0, rng),
            Sampler::IndependentThenNormalize { shape } => gamma_weights(n, shape, rng),
            Sampler::AxisProduct { shape: a } => axis_product(&shape, rng, |_| a),
            Sampler::MixedAxisProduct {
                min_shape,
                max_shape,
            } => axis_product(&shape, rng, |rng| {
                let (lo, hi) = (min_shape.ln(), max_shape.ln());
                (lo + (hi - lo) * rng.random::<f64>()).exp()
            }),
        };
        for (i, v) in values.into_iter().enumerate() {
            t.set(i / t.num_cells(), i % t.num_cells(), v * SIMPLEX_SHRINK);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCSearchConfig {
    pub num_samples: usize,
    pub replicates_per_evaluation: usize,
    pub time_block_length: u32,
    #[serde(default)]
    pub sampler: Sampler,
    pub seed: u64,
    /// Draw fresh replicate seeds for every candidate instead of sharing one
    /// seed set across all of them.
    #[serde(default)]
    pub fresh_seeds: bool,
}

impl Default for MCSearchConfig {
    fn default() -> Self {
        MCSearchConfig {
            num_samples: 10_000,
            replicates_per_evaluation: 5,
            time_block_length: 28,
            sampler: Sampler::default(),
            seed: 0,
            fresh_seeds: false,
        }
    }
}

impl MCSearchConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| SimError::Config(crate::error::ConfigError::Invalid(m));
        if self.num_samples < 1 {
            return Err(bad("num_samples must be at least 1".into()));
        }
        if self.replicates_per_evaluation < 1 {
            return Err(bad("replicates_per_evaluation must be at least 1".into()));
        }
        if self.time_block_length < 1 {
            return Err(bad("time_block_length must be at least 1".into()));
        }
        self.sampler.validate().map_err(bad)
    }

    /// Replicate seeds used to evaluate candidate `index`.
    pub fn evaluation_seeds(&self, index: usize) -> Vec<u64> {
        let base = if self.fresh_seeds {
            rng::derive_seed(self.seed, Purpose::Candidate, index as u64)
        } else {
            rng::derive_seed(self.seed, Purpose::Replicate, 0)
        };
        rng::replicate_seeds(base, self.replicates_per_evaluation)
    }

    /// Candidate `index`, independent of evaluation order.
    pub fn candidate(&self, index: usize, cells: CellMap, horizon: u32) -> CampaignTensor {
        let mut r = rng::stream(self.seed, Purpose::Sampler, index as u64);
        self.sampler
            .sample(cells, horizon, self.time_block_length, &mut r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub index: usize,
    pub mr: f64,
    pub best_so_far: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: CampaignTensor,
    pub best_index: usize,
    pub best_mr: f64,
    pub trace: Vec<TraceRow>,
}

impl SearchOutcome {
    pub fn strategy(&self, dims: Dimensions) -> CampaignStrategy {
        dims.wrap(self.best.clone())
    }

    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sample", "mr", "best_so_far"])?;
        for r in &self.trace {
            out.write_record([
                r.index.to_string(),
                format!("{:e}", r.mr),
                format!("{:e}", r.best_so_far),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Evaluates a plan as the mean mortality rate over prebuilt populations.
pub fn evaluate(
    scenario: &Scenario,
    plan: &CampaignPlan,
    populations: &[PopulationState],
) -> Result<f64, SimError> {
    let mut total = 0.0;
    for pop in populations {
        total += run_population(scenario, pop.clone(), plan, SimOptions::default())?.mortality_rate();
    }
    Ok(total / populations.len() as f64)
}

fn populations(scenario: &Scenario, seeds: &[u64]) -> Result<Vec<PopulationState>, SimError> {
    seeds
        .par_iter()
        .map(|&s| {
            build_population(&scenario.init, &scenario.clinical, &scenario.policy, s)
                .map_err(SimError::from)
        })
        .collect()
}

/// Progress notification: candidates evaluated so far and the best mean MR.
pub type Progress<'a> = &'a (dyn Fn(usize, f64) + Sync);

const PROGRESS_EVERY: usize = 100;

/// Random search for the tensor with the lowest mean mortality rate.
///
/// Candidates are evaluated in parallel; the result depends only on the
/// configuration, with ties broken by candidate index.
pub fn mc_optimize(
    scenario: &Scenario,
    search: &MCSearchConfig,
    dims: Dimensions,
    progress: Option<Progress>,
) -> Result<SearchOutcome, SimError> {
    search.validate()?;
    let horizon = scenario.horizon();
    let cells = dims.cell_map(scenario);

    if scenario.campaign.sms_budget() == 0 {
        let zero = CampaignTensor::zeros(cells, horizon, search.time_block_length);
        let pops = populations(scenario, &search.evaluation_seeds(0))?;
        let mr = evaluate(scenario, &CampaignPlan::Tensor(zero.clone()), &pops)?;
        return Ok(SearchOutcome {
            best: zero,
            best_index: 0,
            best_mr: mr,
            trace: vec![TraceRow {
                index: 0,
                mr,
                best_so_far: mr,
            }],
        });
    }

    let shared = if search.fresh_seeds {
        None
    } else {
        Some(populations(scenario, &search.evaluation_seeds(0))?)
    };

    let mut mrs = Vec::with_capacity(search.num_samples);
    let mut best = f64::INFINITY;
    for start in (0..search.num_samples).step_by(PROGRESS_EVERY) {
        let end = (start + PROGRESS_EVERY).min(search.num_samples);
        let chunk: Vec<f64> = (start..end)
            .into_par_iter()
            .map(|i| {
                let plan = CampaignPlan::Tensor(search.candidate(i, cells, horizon));
                match &shared {
                    Some(p) => evaluate(scenario, &plan, p),
                    None => evaluate(scenario, &plan, &populations(scenario, &search.evaluation_seeds(i))?),
                }
            })
            .collect::<Result<_, _>>()?;
        best = chunk.iter().copied().fold(best, f64::min);
        mrs.extend(chunk);
        if let Some(cb) = progress {
            cb(end, best);
        }
    }

    let mut trace = Vec::with_capacity(mrs.len());
    let mut best_index = 0;
    let mut best_so_far = f64::INFINITY;
    for (i, &mr) in mrs.iter().enumerate() {
        if mr < best_so_far {
            best_so_far = mr;
            best_index = i;
        }
        trace.push(TraceRow {
            index: i,
            mr,
            best_so_far,
        });
    }
    Ok(SearchOutcome {
        best: search.candidate(best_index, cells, horizon),
        best_index,
        best_mr: best_so_far,
        trace,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrategySummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci95_half_width: f64,
    pub mean_spend: f64,
    pub max_spend: f64,
    pub rates: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub against: usize,
    pub label: String,
    /// Welch test of best < other.
    pub welch: Option<TTest>,
    /// Paired test over shared seeds of best < other.
    pub paired: Option<TTest>,
    pub exact_tie: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seeds: Vec<u64>,
    pub summaries: Vec<StrategySummary>,
    pub anova: Option<Anova>,
    /// Every outcome identical; no test statistics are meaningful.
    pub exact_tie: bool,
    /// Too few replicates for the confidence intervals to mean much.
    pub wide_ci: bool,
    pub best: usize,
    pub pairwise: Vec<PairwiseTest>,
}

impl ComparisonReport {
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["strategy", "n", "mean_mr", "sd_mr", "ci95_half_width", "mean_spend", "max_spend"])?;
        for s in &self.summaries {
            out.write_record([
                s.label.clone(),
                s.n.to_string(),
                format!("{:e}", s.mean),
                format!("{:e}", s.sd),
                format!("{:e}", s.ci95_half_width),
                format!("{:.4}", s.mean_spend),
                format!("{:.4}", s.max_spend),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

const WIDE_CI_BELOW: usize = 5;

fn ci95(xs: &[f64]) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    if xs.len() < 2 {
        return f64::INFINITY;
    }
    let q = StudentsT::new(0.0, 1.0, (xs.len() - 1) as f64)
        .expect("df > 0")
        .inverse_cdf(0.975);
    q * stats::std_error(xs)
}

/// Runs every strategy once per seed (seeds shared across strategies) and
/// compares the resulting mortality rates.
pub fn compare_campaigns(
    scenario: &Scenario,
    strategies: &[CampaignStrategy],
    seeds: &[u64],
) -> Result<ComparisonReport, SimError> {
    if seeds.len() < 2 {
        return Err(SimError::Config(crate::error::ConfigError::Invalid(
            "comparison needs at least 2 replicates".into(),
        )));
    }
    let horizon = scenario.horizon();
    let plans: Vec<CampaignPlan> = strategies.iter().map(|s| s.plan(horizon)).collect();
    // per seed, per strategy
    let runs: Vec<Vec<(f64, f64)>> = seeds
        .par_iter()
        .map(|&seed| {
            let pop = build_population(&scenario.init, &scenario.clinical, &scenario.policy, seed)?;
            plans
                .iter()
                .map(|plan| {
                    let r: SimulationResult =
                        run_population(scenario, pop.clone(), plan, SimOptions::default())?;
                    Ok((r.mortality_rate(), r.ledger.spent()))
                })
                .collect::<Result<Vec<_>, SimError>>()
        })
        .collect::<Result<_, _>>()?;

    let summaries: Vec<StrategySummary> = strategies
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let rates: Vec<f64> = runs.iter().map(|r| r[k].0).collect();
            let spend: Vec<f64> = runs.iter().map(|r| r[k].1).collect();
            StrategySummary {
                label: s.label().to_string(),
                n: rates.len(),
                mean: stats::mean(&rates),
                sd: stats::std_dev(&rates),
                ci95_half_width: ci95(&rates),
                mean_spend: stats::mean(&spend),
                max_spend: spend.iter().copied().fold(0.0, f64::max),
                rates,
            }
        })
        .collect();

    let groups: Vec<Vec<f64>> = summaries.iter().map(|s| s.rates.clone()).collect();
    let first = groups[0][0];
    let exact_tie = groups.iter().flatten().all(|&x| x == first);
    let anova = if exact_tie { None } else { stats::one_way_anova(&groups) };
    let best = (0..summaries.len())
        .min_by(|&a, &b| summaries[a].mean.total_cmp(&summaries[b].mean).then(a.cmp(&b)))
        .unwrap_or(0);
    let pairwise = (0..summaries.len())
        .filter(|&k| k != best)
        .map(|k| {
            let (a, b) = (&groups[best], &groups[k]);
            let tie = a == b;
            PairwiseTest {
                against: k,
                label: summaries[k].label.clone(),
                welch: if tie { None } else { stats::welch_t(a, b) },
                paired: if tie { None } else { stats::paired_t(a, b) },
                exact_tie: tie,
            }
        })
        .collect();
    Ok(ComparisonReport {
        seeds: seeds.to_vec(),
        summaries,
        anova,
        exact_tie,
        wide_ci: seeds.len() < WIDE_CI_BELOW,
        best,
        pairwise,
    })
}
