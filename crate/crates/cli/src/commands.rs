use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use lsm_core::basis::{AnalyticKind, GeneratorWeights, LevelShape};
use lsm_core::driver::{run_task, BasisSource, SolverConfig, TaskInputs, TaskResult};
use lsm_core::io::{read_lsmw, read_png, read_png_mask, write_flo, write_lsmw, write_pfm, write_png_mask, Polylines, TaskReport};
use lsm_core::solver::Damping;
use lsm_core::synthetic::{iou, mean_epe, shifted_pair, split_scribbles, translated_pair, two_color_disk, two_color_split};
use lsm_core::{verify, Error};

use crate::{OutputArgs, SolverArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

type CliResult = Result<ExitCode, CliError>;

pub fn parse_damping(s: &str) -> Result<Damping, String> {
    let (kind, value) = s.split_once(':').unwrap_or(("rel", s));
    let v: f64 = value.parse().map_err(|_| format!("not a number: {value}"))?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err("damping must be finite and >= 0".into());
    }
    match kind {
        "rel" => Ok(Damping::RelativeTrace(v)),
        "abs" => Ok(Damping::Absolute(v)),
        _ => Err(format!("unknown damping kind {kind:?}, expected rel or abs")),
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file not found: {}", path.display())))
    }
}

fn config(args: &SolverArgs) -> Result<SolverConfig, CliError> {
    let mut cfg = SolverConfig::with_levels(args.levels).map_err(|e| CliError::Usage(format!("--levels: {e}")))?;
    if let Some(k) = &args.k_schedule {
        cfg.k_schedule = k.clone();
    }
    if let Some(iters) = args.iters {
        cfg.iterations_per_level = iters;
    }
    if let Some(d) = args.damping {
        cfg.damping = d;
    }
    cfg.basis_source = match args.basis.as_str() {
        "analytic" => BasisSource::Analytic(AnalyticKind::ConstantDct),
        "patches" => BasisSource::Analytic(AnalyticKind::BilinearPatches),
        other => {
            let path = other.strip_prefix("generated:").ok_or_else(|| {
                CliError::Usage(format!(
                    "--basis must be analytic, patches or generated:<path>, got {other:?}"
                ))
            })?;
            require_file(Path::new(path))?;
            BasisSource::Generated(Arc::new(read_lsmw(path)?))
        }
    };
    cfg.validate().map_err(|e| match e {
        Error::InvalidWeights(_) => CliError::Run(e),
        other => CliError::Usage(other.to_string()),
    })?;
    Ok(cfg)
}

fn run(inputs: &TaskInputs, cfg: &SolverConfig, output: &OutputArgs) -> Result<TaskResult, CliError> {
    let start = Instant::now();
    let result = run_task(inputs, cfg)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    if let Some(path) = &output.json_report {
        std::fs::write(path, TaskReport::from_result(&result, wall_ms).to_json()).map_err(|e| Error::io(path, e))?;
    }
    let energy = result.per_level_energy().last().map_or(f64::NAN, |e| e.1);
    println!(
        "{}: {}x{} input, {} levels, final energy {energy:.6e}, {wall_ms:.1} ms",
        result.task.name(),
        result.input_width,
        result.input_height,
        result.levels.len()
    );
    Ok(result)
}

pub fn stereo(target: &Path, source: &Path, solver: &SolverArgs, output: &OutputArgs) -> CliResult {
    require_file(target)?;
    require_file(source)?;
    let cfg = config(solver)?;
    let inputs = TaskInputs::Stereo { target: read_png(target)?, source: read_png(source)? };
    let result = run(&inputs, &cfg, output)?;
    write_pfm(&output.out, &result.solution_at_input()?)?;
    Ok(ExitCode::SUCCESS)
}

pub fn flow(target: &Path, source: &Path, solver: &SolverArgs, output: &OutputArgs) -> CliResult {
    require_file(target)?;
    require_file(source)?;
    let cfg = config(solver)?;
    let inputs = TaskInputs::Flow { target: read_png(target)?, source: read_png(source)? };
    let result = run(&inputs, &cfg, output)?;
    write_flo(&output.out, &result.solution_at_input()?)?;
    Ok(ExitCode::SUCCESS)
}

pub fn iseg(image: &Path, scribbles: &Path, solver: &SolverArgs, output: &OutputArgs) -> CliResult {
    require_file(image)?;
    require_file(scribbles)?;
    let cfg = config(solver)?;
    let image = read_png(image)?;
    let text = std::fs::read_to_string(scribbles).map_err(|e| Error::io(scribbles, e))?;
    let scribbles = Polylines::from_json(&text)?.rasterize(image.width(), image.height())?;
    let result = run(&TaskInputs::InteractiveSeg { image, scribbles }, &cfg, output)?;
    write_png_mask(&output.out, &result.mask()?)?;
    Ok(ExitCode::SUCCESS)
}

pub fn vseg(prev: &Path, cur: &Path, prev_mask: &Path, solver: &SolverArgs, output: &OutputArgs) -> CliResult {
    for p in [prev, cur, prev_mask] {
        require_file(p)?;
    }
    let cfg = config(solver)?;
    let inputs = TaskInputs::VideoSeg {
        prev: read_png(prev)?,
        cur: read_png(cur)?,
        prev_mask: read_png_mask(prev_mask)?,
    };
    let result = run(&inputs, &cfg, output)?;
    write_png_mask(&output.out, &result.mask()?)?;
    Ok(ExitCode::SUCCESS)
}

pub fn verify(seed: u64) -> CliResult {
    let suites = verify::run_all(seed)?;
    println!("{:<22} {:>6} {:>11} {:>9} {:>10}  status", "suite", "cases", "max error", "tolerance", "time");
    for s in &suites {
        println!(
            "{:<22} {:>6} {:>11.3e} {:>9.0e} {:>8.1}ms  {}",
            s.name,
            s.cases,
            s.max_error,
            s.tolerance,
            s.elapsed.as_secs_f64() * 1e3,
            if s.passed() { "pass" } else { "FAIL" }
        );
    }
    let failed = suites.iter().filter(|s| !s.passed()).count();
    if failed == 0 {
        println!("all {} suites passed", suites.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{failed} of {} suites failed", suites.len());
        Ok(ExitCode::FAILURE)
    }
}

pub fn bench(seed: u64, solver: &SolverArgs) -> CliResult {
    let cfg = config(solver)?;
    let timed = |inputs: TaskInputs| -> Result<(TaskResult, f64), CliError> {
        let start = Instant::now();
        let r = run_task(&inputs, &cfg)?;
        Ok((r, start.elapsed().as_secs_f64() * 1e3))
    };
    let margin = 16;
    println!("{:<8} {:<28} {:>10} {:>10}", "task", "scene", "metric", "time");

    let (target, source) = shifted_pair(256, 192, 3.0, seed)?;
    let (r, ms) = timed(TaskInputs::Stereo { target, source })?;
    let epe = mean_epe(&r.solution_at_input()?, (3.0, 0.0), margin)?;
    println!("{:<8} {:<28} {:>10} {:>8.1}ms", "stereo", "256x192 shift 3 px", format!("EPE {epe:.3}"), ms);

    let (target, source) = translated_pair(256, 192, (2.0, -1.5), seed)?;
    let (r, ms) = timed(TaskInputs::Flow { target, source })?;
    let epe = mean_epe(&r.solution_at_input()?, (2.0, -1.5), margin)?;
    println!("{:<8} {:<28} {:>10} {:>8.1}ms", "flow", "256x192 motion (2, -1.5)", format!("EPE {epe:.3}"), ms);

    let (image, truth) = two_color_split(192, 128)?;
    let (r, ms) = timed(TaskInputs::InteractiveSeg { image, scribbles: split_scribbles(192, 128) })?;
    let score = iou(&r.mask()?, &truth)?;
    println!("{:<8} {:<28} {:>10} {:>8.1}ms", "iseg", "192x128 two-colour split", format!("IoU {score:.3}"), ms);

    let (prev, prev_mask) = two_color_disk(192, 128, 90.0, 60.0, 35.0)?;
    let (cur, truth) = two_color_disk(192, 128, 94.0, 62.0, 35.0)?;
    let (r, ms) = timed(TaskInputs::VideoSeg { prev, cur, prev_mask })?;
    let score = iou(&r.mask()?, &truth)?;
    println!("{:<8} {:<28} {:>10} {:>8.1}ms", "vseg", "192x128 disk moving (4, 2)", format!("IoU {score:.3}"), ms);
    Ok(ExitCode::SUCCESS)
}

pub fn weights(out: &Path, random: bool, seed: u64, channels: &[usize], k_schedule: &[usize]) -> CliResult {
    if channels.len() != k_schedule.len() {
        return Err(CliError::Usage(format!(
            "--channels has {} levels but --k-schedule has {}",
            channels.len(),
            k_schedule.len()
        )));
    }
    let shapes = channels
        .iter()
        .zip(k_schedule)
        .map(|(&c, &k)| LevelShape::new(c, k))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let weights = if random {
        GeneratorWeights::random(&shapes, seed)
    } else {
        GeneratorWeights::identity(&shapes)
    };
    write_lsmw(out, &weights)?;
    println!(
        "wrote {} weights for {} levels to {}",
        if random { "random" } else { "identity" },
        shapes.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}
