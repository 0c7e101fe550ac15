use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use serde::Serialize;
use serde_json::json;

use checkup_core::calibration::{self, FitSpec, FitTraceRow, StopReason};
use checkup_core::ingestion;
use checkup_core::optimizer::{self, CampaignStrategy, Dimensions, MCSearchConfig, Sampler};
use checkup_core::population::{build_population, Gender};
use checkup_core::rng;
use checkup_core::simulator::{self, CampaignPlan, SimOptions};
use checkup_core::{CampaignTensor, Scenario, ScenarioFile, SmsHeatmap};

use crate::manifest::RunManifest;
use crate::{
    Cli, Command, CompareArgs, DimensionsArg, FitArgs, HeatmapArgs, IngestArgs, InputError,
    OptimizeArgs, ReplayArgs, ScenarioArgs, SimulateArgs,
};

pub fn run(cli: Cli, args: &[String]) -> Result<()> {
    match cli.command {
        Command::Validate(a) => validate(&a),
        Command::Simulate(a) => simulate(&a, args),
        Command::Optimize(a) => optimize(&a, args),
        Command::Compare(a) => compare(&a, args),
        Command::Heatmap(a) => heatmap(&a, args),
        Command::Fit(a) => fit(&a, args),
        Command::Ingest(a) => ingest(&a, args),
        Command::Replay(a) => replay(&a),
    }
}

fn input(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn load_scenario(a: &ScenarioArgs) -> Result<Scenario> {
    let file = ScenarioFile::load(&a.scenario)
        .with_context(|| format!("loading {}", a.scenario.display()))?;
    let scenario = match a.scale {
        Some(s) => file.resolve_with_scale(s),
        None => file.resolve(),
    }
    .with_context(|| format!("resolving {}", a.scenario.display()))?;
    Ok(scenario)
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let p = dir.join(name);
    Ok(BufWriter::new(
        File::create(&p).with_context(|| format!("creating {}", p.display()))?,
    ))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", p.display()))
}

fn read_tensor(path: &Path, horizon: u32) -> Result<CampaignTensor> {
    let f = File::open(path).map_err(|e| input(format!("opening {}: {e}", path.display())))?;
    CampaignTensor::read_csv(f, horizon)
        .map_err(|e| input(format!("tensor {}: {e}", path.display())))
}

/// `none`, `naive`, `greedy` or a tensor CSV path.
fn parse_campaign(spec: &str, horizon: u32) -> Result<CampaignPlan> {
    Ok(match spec {
        "none" => CampaignPlan::None,
        "naive" => CampaignStrategy::Naive.plan(horizon),
        "greedy" => CampaignPlan::Greedy,
        path => CampaignPlan::Tensor(read_tensor(Path::new(path), horizon)?),
    })
}

fn parse_strategy(spec: &str, horizon: u32) -> Result<CampaignStrategy> {
    Ok(match spec.trim() {
        "none" => CampaignStrategy::None,
        "naive" => CampaignStrategy::Naive,
        "greedy" => CampaignStrategy::Greedy,
        other => match other.split_once('=') {
            Some(("naive-mc", p)) => CampaignStrategy::NaiveMc(read_tensor(Path::new(p), horizon)?),
            Some(("socio-mc", p)) => CampaignStrategy::SocioMc(read_tensor(Path::new(p), horizon)?),
            _ => {
                return Err(input(format!(
                    "unknown strategy {other:?}; expected none, naive, greedy, naive-mc=PATH or socio-mc=PATH"
                )))
            }
        },
    })
}

fn validate(a: &ScenarioArgs) -> Result<()> {
    let s = load_scenario(a)?;
    println!(
        "{}: ok; {} individuals, {} rounds, {} SMSs of budget",
        s.name,
        s.init.total_count(),
        s.horizon(),
        s.campaign.sms_budget()
    );
    Ok(())
}

fn simulate(a: &SimulateArgs, args: &[String]) -> Result<()> {
    let started = Instant::now();
    let s = load_scenario(&a.scenario)?;
    if a.replicates == 0 {
        return Err(input("--replicates must be at least 1"));
    }
    let plan = parse_campaign(&a.campaign, s.horizon())?;
    let seeds = rng::replicate_seeds(a.seed.unwrap_or(s.seed), a.replicates);
    out_dir(&a.out)?;
    let mut manifest = RunManifest::new("simulate", args, Some(&a.scenario.scenario), &a.out);
    manifest.seeds = seeds.clone();
    let opts = SimOptions {
        record_events: a.events,
        check_invariants: false,
    };
    let results = simulator::run_replicates(&s, &plan, &seeds, opts)?;
    let mut reps = Vec::new();
    for (k, r) in results.iter().enumerate() {
        r.write_rounds_csv(create(&a.out, &format!("rounds_r{k}.csv"))?)?;
        if a.events {
            r.write_events_csv(create(&a.out, &format!("events_r{k}.csv"))?)?;
        }
        reps.push(json!({
            "seed": r.seed,
            "mortality_rate": r.mortality_rate(),
            "disease_deaths": r.total_disease_deaths(),
            "sms_sent": r.ledger.sent,
            "spend": r.ledger.spent(),
        }));
    }
    let mut series = vec![0.0; s.horizon() as usize];
    for r in &results {
        for (m, x) in series.iter_mut().zip(&r.rounds) {
            if x.alive_start > 0 {
                *m += x.disease_deaths as f64 / x.alive_start as f64 / results.len() as f64;
            }
        }
    }
    calibration::write_series_csv(create(&a.out, "series.csv")?, s.t0, &series)?;
    let rates: Vec<f64> = results.iter().map(|r| r.mortality_rate()).collect();
    let mean = checkup_core::stats::mean(&rates);
    write_json(
        &a.out,
        "summary.json",
        &json!({
            "scenario": s.name,
            "campaign": a.campaign,
            "metric": s.metric,
            "mortality_rate": mean,
            "mortality_rate_sd": if rates.len() > 1 { checkup_core::stats::std_dev(&rates) } else { 0.0 },
            "replicates": reps,
        }),
    )?;
    println!("mortality rate {mean:e} over {} replicate(s)", rates.len());
    manifest.write(started)
}

fn optimize(a: &OptimizeArgs, args: &[String]) -> Result<()> {
    let started = Instant::now();
    let s = load_scenario(&a.scenario)?;
    let dims = match a.dimensions {
        DimensionsArg::StatusOnly => Dimensions::StatusOnly,
        DimensionsArg::Socio => Dimensions::Socio,
    };
    let cfg = MCSearchConfig {
        num_samples: a.samples,
        replicates_per_evaluation: a.replicates,
        time_block_length: a.block,
        sampler: Sampler::AxisProduct { shape: a.shape },
        seed: a.seed.unwrap_or(s.seed),
        fresh_seeds: a.fresh_seeds,
    };
    cfg.validate()?;
    out_dir(&a.out)?;
    let mut manifest = RunManifest::new("optimize", args, Some(&a.scenario.scenario), &a.out);
    manifest.seeds = vec![cfg.seed];
    let total = cfg.num_samples;
    let progress = move |done: usize, best: f64| eprintln!("{done}/{total} samples, best MR {best:e}");
    let outcome = optimizer::mc_optimize(&s, &cfg, dims, Some(&progress))?;
    let baseline = checkup_core::stats::mean(&simulator::replicate_rates(
        &s,
        &CampaignPlan::None,
        &cfg.evaluation_seeds(0),
    )?);
    outcome.best.write_csv(create(&a.out, "best_tensor.csv")?)?;
    outcome.write_trace_csv(create(&a.out, "trace.csv")?)?;
    write_json(
        &a.out,
        "summary.json",
        &json!({
            "scenario": s.name,
            "dimensions": dims,
            "config": cfg,
            "best_index": outcome.best_index,
            "best_mr": outcome.best_mr,
            "none_mr": baseline,
        }),
    )?;
    println!(
        "best MR {:e} (sample {}), no-campaign MR {baseline:e}",
        outcome.best_mr, outcome.best_index
    );
    manifest.write(started)
}

fn compare(a: &CompareArgs, args: &[String]) -> Result<()> {
    let started = Instant::now();
    let s = load_scenario(&a.scenario)?;
    if a.strategies.len() < 2 {
        return Err(input("compare needs at least two strategies"));
    }
    if a.replicates < 2 {
        return Err(input("compare needs at least two replicates"));
    }
    let strategies = a
        .strategies
        .iter()
        .map(|x| parse_strategy(x, s.horizon()))
        .collect::<Result<Vec<_>>>()?;
    let seeds = rng::replicate_seeds(a.seed.unwrap_or(s.seed), a.replicates);
    out_dir(&a.out)?;
    let mut manifest = RunManifest::new("compare", args, Some(&a.scenario.scenario), &a.out);
    manifest.seeds = seeds.clone();
    let report = optimizer::compare_campaigns(&s, &strategies, &seeds)?;
    report.write_summary_csv(create(&a.out, "summary.csv")?)?;
    write_json(&a.out, "report.json", &report)?;
    for (k, x) in report.summaries.iter().enumerate() {
        println!(
            "{}{:<10} {:e} ± {:e}",
            if k == report.best { "* " } else { "  " },
            x.label,
            x.mean,
            x.sd
        );
    }
    if report.wide_ci {
        println!("few replicates: confidence intervals are wide");
    }
    manifest.write(started)
}

fn heatmap(a: &HeatmapArgs, args: &[String]) -> Result<()> {
    let started = Instant::now();
    let s = load_scenario(&a.scenario)?;
    let tensor = read_tensor(&a.tensor, s.horizon())?;
    let seed = a.seed.unwrap_or(s.seed);
    let pop = build_population(&s.init, &s.clinical, &s.policy, seed)?;
    out_dir(&a.out)?;
    let mut manifest = RunManifest::new("heatmap", args, Some(&a.scenario.scenario), &a.out);
    manifest.seeds = vec![seed];
    let h = SmsHeatmap::compute(&tensor, &s.campaign, &pop.individuals, &s.policy);
    h.write_csv(Gender::Male, create(&a.out, "heatmap_male.csv")?)?;
    h.write_csv(Gender::Female, create(&a.out, "heatmap_female.csv")?)?;
    manifest.write(started)
}

fn fit(a: &FitArgs, args: &[String]) -> Result<()> {
    let started = Instant::now();
    let s = load_scenario(&a.scenario)?;
    let text = fs::read_to_string(&a.params)
        .map_err(|e| input(format!("reading {}: {e}", a.params.display())))?;
    let mut spec = FitSpec::from_json_str(&text).map_err(|e| input(e.to_string()))?;
    if let Some(v) = a.iterations {
        spec.config.max_iterations = v;
    }
    if let Some(v) = a.replicates {
        spec.config.replicates = v;
    }
    if let Some(v) = a.learning_rate {
        spec.config.learning_rate = v;
    }
    if let Some(v) = a.seed {
        spec.config.seed = v;
    }
    if a.r2_target.is_some() {
        spec.config.r2_target = a.r2_target;
    }
    spec.config.validate().map_err(|e| input(e.to_string()))?;
    let start = spec.start().map_err(|e| input(e.to_string()))?;
    let hist_file = File::open(&a.history)
        .map_err(|e| input(format!("opening {}: {e}", a.history.display())))?;
    let historical = calibration::read_series_csv(hist_file).map_err(|e| input(e.to_string()))?;
    if historical.len() != s.horizon() as usize {
        return Err(input(format!(
            "history has {} rounds but the scenario horizon is {}",
            historical.len(),
            s.horizon()
        )));
    }
    let plan = parse_campaign(&a.campaign, s.horizon())?;
    out_dir(&a.out)?;
    let mut manifest = RunManifest::new("fit", args, Some(&a.scenario.scenario), &a.out);
    manifest.seeds = spec.config.seeds();
    let progress = |r: &FitTraceRow| {
        eprintln!(
            "iteration {}: MAE {:e}, R² {:.4}",
            r.iteration, r.mae, r.r2
        )
    };
    let outcome = calibration::fit(&s, &plan, &historical, &start, &spec.config, &progress)?;
    outcome.write_trace_csv(create(&a.out, "trace.csv")?)?;
    {
        let mut w = create(&a.out, "series.csv")?;
        use std::io::Write;
        writeln!(w, "round,historical,fitted")?;
        for (i, (h, f)) in historical.iter().zip(&outcome.series).enumerate() {
            writeln!(w, "{},{h},{f}", s.t0 as usize + i)?;
        }
    }
    let params: Vec<_> = outcome
        .params
        .specs
        .iter()
        .zip(&outcome.params.values)
        .map(|(p, v)| json!({"name": p.name, "target": p.target, "value": v}))
        .collect();
    let last = outcome.trace.last().expect("trace has the starting row");
    write_json(
        &a.out,
        "fitted.json",
        &json!({
            "parameters": params,
            "stop": outcome.stop,
            "iterations": last.iteration,
            "mae": last.mae,
            "r2": last.r2,
        }),
    )?;
    let file = ScenarioFile::load(&a.scenario.scenario)?;
    let patched = outcome.params.patch(&file, &s);
    fs::write(a.out.join("scenario_fitted.json"), patched.to_json_pretty())
        .with_context(|| format!("writing {}", a.out.join("scenario_fitted.json").display()))?;
    manifest.write(started)?;
    println!(
        "{:?} after {} iteration(s): MAE {:e}, R² {:.4}",
        outcome.stop, last.iteration, last.mae, last.r2
    );
    if outcome.stop == StopReason::Diverged {
        return Err(anyhow!("fit diverged; trace written to {}", a.out.display()));
    }
    Ok(())
}

fn ingest(a: &IngestArgs, args: &[String]) -> Result<()> {
    let started = Instant::now();
    let mut file = ScenarioFile::load(&a.scenario)
        .with_context(|| format!("loading {}", a.scenario.display()))?;
    let open = |p: &Path| File::open(p).map_err(|e| input(format!("opening {}: {e}", p.display())));
    let mut report = serde_json::Map::new();
    if let Some(p) = &a.growth {
        let series = ingestion::AnnualSeries::from_csv(open(p)?).map_err(|e| input(e.to_string()))?;
        let f = ingestion::exp_smooth_forecast(&series.values, a.window_lo, a.window_hi)
            .map_err(|e| input(e.to_string()))?;
        file.growth_rate = ingestion::growth_per_round(f.forecast).map_err(|e| input(e.to_string()))?;
        report.insert("growth".into(), json!({"forecast": f, "per_round": file.growth_rate}));
    }
    if let Some(p) = &a.life {
        let rows = ingestion::read_life_csv(open(p)?).map_err(|e| input(e.to_string()))?;
        let row = match a.year {
            Some(y) => rows.iter().find(|r| r.year == y),
            None => rows.last(),
        }
        .ok_or_else(|| input(format!("{}: no usable row", p.display())))?;
        let cells = ingestion::disaggregate_life_expectancy(row.average, row.gender_gap, &row.ses_offsets)?;
        file.life_expectancy.male = cells.male.to_vec();
        file.life_expectancy.female = cells.female.to_vec();
        report.insert("life_expectancy".into(), json!({"year": row.year, "cells": cells}));
    }
    if let Some(p) = &a.sms {
        let pts = ingestion::read_sms_effects_csv(open(p)?).map_err(|e| input(e.to_string()))?;
        let c = ingestion::fit_sms_coefficients(&pts).map_err(|e| input(e.to_string()))?;
        file.campaign.c1 = c.c1;
        file.campaign.c2 = c.c2;
        report.insert("sms".into(), json!(c));
    }
    // the result must still be a valid scenario
    file.resolve().context("ingested scenario")?;
    out_dir(&a.out)?;
    let mut manifest = RunManifest::new("ingest", args, Some(&a.scenario), &a.out);
    fs::write(a.out.join("scenario.json"), file.to_json_pretty() + "\n")?;
    write_json(&a.out, "report.json", &report)?;
    manifest.write(started)
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let m = RunManifest::read(&a.manifest)?;
    if m.command == "replay" {
        return Err(input("a replay manifest cannot be replayed"));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let out = std::path::absolute(&a.out)?;
    std::env::set_current_dir(&m.cwd)
        .map_err(|e| input(format!("entering {}: {e}", m.cwd.display())))?;
    let args = m.args_with_out(&out);
    let mut argv = vec!["checkup".to_string()];
    argv.extend(args.iter().cloned());
    let cli = <Cli as clap::Parser>::try_parse_from(&argv)
        .map_err(|e| input(format!("manifest arguments: {e}")))?;
    run(cli, &args)
}
