use std::time::Instant;

use fwa_bench::scenarios::{find, fit_complexity, total_median_ms};
use fwa_bench::{BenchError, BenchPlan, BenchRecord, Mechanism, Scenario};
use fwa_core::{build_model, Tensor};
use serde::Serialize;
use thiserror::Error;

use crate::args::{BenchArgs, GlobalArgs, HeatmapArgs, ModelAction, ModelArgs};
use crate::heatmap::{self, GRID};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Run(_) => 1,
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Plan(_) | BenchError::Threads(_) => CliError::Config(e.to_string()),
            BenchError::Io(io) => CliError::Io(io),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<fwa_core::Error> for CliError {
    fn from(e: fwa_core::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Run(e.to_string()))
}

/// The plan `bench` will run, with flag overrides applied and validated.
pub fn bench_plan(args: &BenchArgs, global: &GlobalArgs) -> Result<BenchPlan, CliError> {
    let mut plan = BenchPlan::for_scenario(args.scenario.into(), args.base, args.full_scale)?.with_seed(global.seed);
    if let Some(iters) = args.iters {
        plan.iters = iters;
    }
    if let Some(warmup) = args.warmup {
        plan.warmup = warmup;
    }
    if let Some(repeats) = &args.repeats {
        if plan.scenario != Scenario::AttentionRepeat {
            return Err(CliError::Config("--repeats only applies to attention-repeat".into()));
        }
        plan.repeats = repeats.clone();
    }
    plan.validate()?;
    Ok(plan)
}

pub fn cmd_bench(args: &BenchArgs, global: &GlobalArgs) -> Result<(), CliError> {
    fwa_bench::ensure_single_threaded()?;
    let plan = bench_plan(args, global)?;
    let records = fwa_bench::run(&plan)?;
    let (csv_path, json_path) = fwa_bench::write_outputs(&global.out, plan.scenario, &records)?;
    if global.json {
        println!("{}", fwa_bench::record::to_json(&records)?);
        return Ok(());
    }
    print_records(&records);
    match plan.scenario {
        Scenario::AttentionRepeat => print_repeat_growth(&plan, &records),
        Scenario::FawaVsPool => print_pool_totals(&records),
        Scenario::Complexity => {
            for fit in fit_complexity(&plan, &records)? {
                println!(
                    "{:<10} time exponent {:.3}  score-MAC exponent {:.3}",
                    fit.mechanism.name(),
                    fit.time_exponent,
                    fit.flop_exponent
                );
            }
        }
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn print_records(records: &[BenchRecord]) {
    println!(
        "{:<10} {:<14} {:>6} {:>12} {:>12} {:>12} {:>14}",
        "mechanism", "shape", "repeat", "median ms", "p10 ms", "p90 ms", "peak bytes"
    );
    for r in records {
        println!(
            "{:<10} {:<14} {:>6} {:>12.4} {:>12.4} {:>12.4} {:>14}",
            r.mechanism.name(),
            r.shape_label(),
            r.repeat,
            r.wall_ms,
            r.wall_ms_p10,
            r.wall_ms_p90,
            r.peak_bytes
        );
    }
}

fn print_repeat_growth(plan: &BenchPlan, records: &[BenchRecord]) {
    let (Some(&first), Some(&last)) = (plan.repeats.first(), plan.repeats.last()) else { return };
    for m in fwa_bench::scenarios::REPEAT_MECHANISMS {
        if let (Some(a), Some(b)) = (find(records, m, first), find(records, m, last)) {
            println!("{:<10} repeat {first}->{last}: x{:.2}", m.name(), b.wall_ms / a.wall_ms);
        }
    }
}

fn print_pool_totals(records: &[BenchRecord]) {
    for pair in records.chunks(2) {
        if let [fawa, pool] = pair {
            println!("{:<14} pool/FAWA x{:.2}", fawa.shape_label(), pool.wall_ms / fawa.wall_ms);
        }
    }
    let fawa = total_median_ms(records, Mechanism::FawaOp);
    let pool = total_median_ms(records, Mechanism::PoolOp);
    println!("total          FAWA {fawa:.4} ms  pool {pool:.4} ms  x{:.2}", pool / fawa);
}

pub fn cmd_heatmap_demo(args: &HeatmapArgs, global: &GlobalArgs) -> Result<(), CliError> {
    if !(args.noise.is_finite() && args.noise >= 0.0) {
        return Err(CliError::Config(format!("noise must be finite and non-negative, got {}", args.noise)));
    }
    let query = args.query.unwrap_or((GRID / 2, GRID / 2));
    if query.0 >= GRID || query.1 >= GRID {
        return Err(CliError::Config(format!("query {query:?} lies outside the {GRID}x{GRID} grid")));
    }
    let map = heatmap::heart_map(args.noise, global.seed);
    let maps = heatmap::attention_heatmaps(&map, query)?;
    let sidecar = heatmap::write_heatmaps(&global.out, &maps, global.seed, args.noise, query)?;
    if global.json {
        println!("{}", to_json(&sidecar)?);
    } else {
        for img in &sidecar.images {
            println!("{:<26} max weight {:.6}  zero weights {}", img.file, img.scale.hi, img.zero_weights);
        }
        println!("wrote {} images to {}", sidecar.images.len(), global.out.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct InferReport {
    variant: fwa_core::Variant,
    input: Vec<usize>,
    output: Vec<usize>,
    min: f32,
    max: f32,
    mean: f64,
    wall_ms: f64,
}

pub fn cmd_model(args: &ModelArgs, global: &GlobalArgs) -> Result<(), CliError> {
    let size = match args.action {
        ModelAction::Summary { size } | ModelAction::Infer { size, .. } => size,
    };
    if size == 0 || size % 32 != 0 {
        return Err(CliError::Config(format!("--size {size} is not a positive multiple of 32")));
    }
    let model = build_model(args.variant, global.seed)?;
    match args.action {
        ModelAction::Summary { .. } => println!("{}", to_json(&model.summary(size)?)?),
        ModelAction::Infer { batch, .. } => {
            if batch == 0 {
                return Err(CliError::Config("--batch must be positive".into()));
            }
            let input = Tensor::randn(&[batch, 3, size, size], 1.0, global.seed);
            let start = Instant::now();
            let y = model.forward(&input)?;
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let data = y.data();
            let report = InferReport {
                variant: args.variant,
                input: input.shape().to_vec(),
                output: y.shape().to_vec(),
                min: data.iter().copied().fold(f32::INFINITY, f32::min),
                max: data.iter().copied().fold(f32::NEG_INFINITY, f32::max),
                mean: data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64,
                wall_ms,
            };
            if global.json {
                println!("{}", to_json(&report)?);
            } else {
                let shape: Vec<String> = report.output.iter().map(usize::to_string).collect();
                println!("output {}", shape.join("x"));
                println!("min {:.6}  max {:.6}  mean {:.6}", report.min, report.max, report.mean);
                println!("wall {:.1} ms", report.wall_ms);
            }
        }
    }
    Ok(())
}
