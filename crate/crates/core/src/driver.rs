//! Coarse-to-fine outer loop and the task entry points.

use std::sync::Arc;

use serde::Serialize;

use crate::basis::{
    analytic_basis, build_cramer_context, build_min_context, generate_basis, labeling_groups,
    normalize_solution, AnalyticKind, GeneratorWeights, LevelWeights,
};
use crate::data_terms::{
    correspondence_energy, flow_quadratic, labeling_energy, labeling_quadratic, scribble_probabilities,
    stereo_quadratic, temporal_probabilities, LabelProbabilities, QuadraticModel, Scribbles,
};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::norm2;
use crate::pyramid::{build_pyramid, build_pyramids, upsample_solution, FeaturePyramid, FieldKind, PyramidConfig};
use crate::solver::{solve_flow_subspace, solve_projected, Damping, FlowBasisPair, SolveReport, SubspaceBasis};

pub const DEFAULT_K_SCHEDULE: [usize; 4] = [2, 4, 8, 16];

/// Step halvings tried before an iteration is rejected.
pub const MAX_BACKTRACKS: usize = 4;

#[derive(Debug, Clone)]
pub enum BasisSource {
    Analytic(AnalyticKind),
    Generated(Arc<GeneratorWeights>),
}

/// Parameters of the label-probability models used by the segmentation tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelingParams {
    pub sigma: f64,
    pub top_k: usize,
    /// Temporal neighbourhood, in level pixels.
    pub window: usize,
    /// Leading feature channels compared when scoring affinities.
    pub color_channels: usize,
}

impl Default for LabelingParams {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            top_k: 5,
            window: 9,
            color_channels: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Basis dimension per level, coarse to fine.
    pub k_schedule: Vec<usize>,
    pub iterations_per_level: usize,
    pub damping: Damping,
    pub basis_source: BasisSource,
    pub pyramid: PyramidConfig,
    /// Relative step norm below which a level stops early.
    pub convergence_tol: f64,
    pub labeling: LabelingParams,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k_schedule: DEFAULT_K_SCHEDULE.to_vec(),
            iterations_per_level: 3,
            damping: Damping::default(),
            basis_source: BasisSource::Analytic(AnalyticKind::ConstantDct),
            pyramid: PyramidConfig::default(),
            convergence_tol: 1e-4,
            labeling: LabelingParams::default(),
        }
    }
}

impl SolverConfig {
    /// Default configuration restricted to the finest `n` levels.
    pub fn with_levels(n: usize) -> Result<Self> {
        let pyramid = PyramidConfig::with_levels(n)?;
        Ok(Self {
            k_schedule: DEFAULT_K_SCHEDULE[DEFAULT_K_SCHEDULE.len() - n..].to_vec(),
            pyramid,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        if self.k_schedule.len() != self.pyramid.level_count() {
            return Err(Error::invalid(format!(
                "k schedule has {} entries for {} pyramid levels",
                self.k_schedule.len(),
                self.pyramid.level_count()
            )));
        }
        if self.k_schedule.contains(&0) {
            return Err(Error::invalid("basis dimensions must be positive"));
        }
        if self.iterations_per_level == 0 {
            return Err(Error::invalid("at least one iteration per level is required"));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::invalid("convergence tolerance must be >= 0"));
        }
        if let BasisSource::Generated(w) = &self.basis_source {
            if w.levels.len() != self.k_schedule.len() {
                return Err(Error::InvalidWeights(format!(
                    "weights describe {} levels, configuration has {}",
                    w.levels.len(),
                    self.k_schedule.len()
                )));
            }
            for (i, (lw, &k)) in w.levels.iter().zip(&self.k_schedule).enumerate() {
                let s = lw.shape();
                if s.k != k || s.c != self.pyramid.channels_per_level[i] {
                    return Err(Error::InvalidWeights(format!(
                        "level {i}: weights expect c={}, K={}; configuration has c={}, K={k}",
                        s.c, s.k, self.pyramid.channels_per_level[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Iseg,
    Vseg,
    Stereo,
    Flow,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Iseg => "iseg",
            TaskKind::Vseg => "vseg",
            TaskKind::Stereo => "stereo",
            TaskKind::Flow => "flow",
        }
    }

    pub fn is_labeling(self) -> bool {
        matches!(self, TaskKind::Iseg | TaskKind::Vseg)
    }

    fn field_kind(self) -> FieldKind {
        if self.is_labeling() {
            FieldKind::Labeling
        } else {
            FieldKind::Displacement
        }
    }

    fn field_channels(self) -> usize {
        if self == TaskKind::Flow {
            2
        } else {
            1
        }
    }
}

/// Task inputs at input resolution.
#[derive(Debug, Clone)]
pub enum TaskInputs {
    InteractiveSeg { image: Grid, scribbles: Scribbles },
    /// `prev_mask` is binary (0 or 1) and the size of the frames.
    VideoSeg { prev: Grid, cur: Grid, prev_mask: Grid },
    /// Disparity `x` satisfies `source(p + x) = target(p)`.
    Stereo { target: Grid, source: Grid },
    Flow { target: Grid, source: Grid },
}

impl TaskInputs {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskInputs::InteractiveSeg { .. } => TaskKind::Iseg,
            TaskInputs::VideoSeg { .. } => TaskKind::Vseg,
            TaskInputs::Stereo { .. } => TaskKind::Stereo,
            TaskInputs::Flow { .. } => TaskKind::Flow,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationTrace {
    pub energy_before: f64,
    pub energy_after: f64,
    /// Norm of the applied step (after backtracking).
    pub step_norm: f64,
    pub damping: f64,
    pub coefficient_norm: f64,
    /// Fraction of the full step that was applied.
    pub step_scale: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelTrace {
    pub level: usize,
    pub stride: usize,
    pub k: usize,
    pub width: usize,
    pub height: usize,
    pub iterations: Vec<IterationTrace>,
}

#[derive(Debug, Clone)]
pub struct TaskResult {
    pub task: TaskKind,
    /// Solution at the finest pyramid level.
    pub solution: Grid,
    /// Stride of the finest level relative to the input.
    pub stride: usize,
    pub input_width: usize,
    pub input_height: usize,
    pub levels: Vec<LevelTrace>,
    pub reports: Vec<SolveReport>,
}

impl TaskResult {
    /// `(energy at level entry, energy at level exit)` for every level.
    pub fn per_level_energy(&self) -> Vec<(f64, f64)> {
        self.levels
            .iter()
            .filter_map(|l| {
                let first = l.iterations.first()?;
                let last = l.iterations.last()?;
                Some((first.energy_before, last.energy_after))
            })
            .collect()
    }

    /// Solution resampled to input resolution; displacements in input pixels.
    pub fn solution_at_input(&self) -> Result<Grid> {
        upsample_solution(
            &self.solution,
            self.input_width,
            self.input_height,
            self.stride as f64,
            self.task.field_kind(),
        )
    }

    /// Binary mask (1 = foreground) at input resolution, for labeling tasks.
    pub fn mask(&self) -> Result<Grid> {
        if !self.task.is_labeling() {
            return Err(Error::invalid(format!("{} produces no mask", self.task.name())));
        }
        Ok(self.solution_at_input()?.map(threshold_label))
    }
}

#[inline]
fn threshold_label(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Magnitude bound on labeling warm-start values.
pub const WARM_LABEL_LIMIT: f64 = 1.0;

pub fn run_task(inputs: &TaskInputs, cfg: &SolverConfig) -> Result<TaskResult> {
    run_task_warm(inputs, cfg, None)
}

/// Like [`run_task`], starting from `initial` (any resolution) instead of zero.
///
/// Labeling warm starts are clamped to `±WARM_LABEL_LIMIT` so a saturated
/// previous solution keeps its sign without flattening the relaxation.
pub fn run_task_warm(inputs: &TaskInputs, cfg: &SolverConfig, initial: Option<&Grid>) -> Result<TaskResult> {
    cfg.validate()?;
    match inputs {
        TaskInputs::InteractiveSeg { image, scribbles } => {
            let features = build_pyramid(image, &cfg.pyramid)?;
            run_interactive(&features, scribbles, (image.width(), image.height()), cfg, initial)
        }
        TaskInputs::VideoSeg { prev, cur, prev_mask } => {
            if !prev.same_shape(cur) {
                return Err(Error::invalid("video frames differ in shape"));
            }
            let pyrs = build_pyramids(&[prev, cur], &cfg.pyramid)?;
            run_video(&pyrs[0], &pyrs[1], prev_mask, cfg, initial)
        }
        TaskInputs::Stereo { target, source } | TaskInputs::Flow { target, source } => {
            if !target.same_shape(source) {
                return Err(Error::invalid("target and source images differ in shape"));
            }
            let pyrs = build_pyramids(&[target, source], &cfg.pyramid)?;
            let size = (target.width(), target.height());
            run_correspondence(inputs.kind(), &pyrs[0], &pyrs[1], size, cfg, initial)
        }
    }
}

/// Runs stereo in both directions: `(left as target, right as target)`.
/// No sign or range assumption is made on either disparity.
pub fn run_stereo_bidirectional(left: &Grid, right: &Grid, cfg: &SolverConfig) -> Result<(TaskResult, TaskResult)> {
    if !left.same_shape(right) {
        return Err(Error::invalid("stereo images differ in shape"));
    }
    cfg.validate()?;
    let pyrs = build_pyramids(&[left, right], &cfg.pyramid)?;
    let size = (left.width(), left.height());
    let l2r = run_correspondence(TaskKind::Stereo, &pyrs[0], &pyrs[1], size, cfg, None)?;
    let r2l = run_correspondence(TaskKind::Stereo, &pyrs[1], &pyrs[0], size, cfg, None)?;
    Ok((l2r, r2l))
}

/// Interactive segmentation on a prebuilt feature pyramid. Scribbles are in
/// input pixels.
pub fn run_interactive(
    features: &FeaturePyramid,
    scribbles: &Scribbles,
    input_size: (usize, usize),
    cfg: &SolverConfig,
    initial: Option<&Grid>,
) -> Result<TaskResult> {
    cfg.validate()?;
    features.check_against(&cfg.pyramid, input_size.0, input_size.1)?;
    scribbles.validate(input_size.0, input_size.1)?;
    let params = &cfg.labeling;
    let problems = (0..features.len())
        .map(|l| {
            let f = color_features(features.level(l), params.color_channels)?;
            let s = scribbles.at_stride(features.strides()[l]);
            let probs = scribble_probabilities(&f, &s, params.sigma, params.top_k)?;
            Ok(LevelProblem::Labeling(probs))
        })
        .collect::<Result<Vec<_>>>()?;
    coarse_to_fine(TaskKind::Iseg, features, &problems, input_size, cfg, initial)
}

/// Video segmentation: propagates a binary mask from the previous frame.
pub fn run_video(
    prev: &FeaturePyramid,
    cur: &FeaturePyramid,
    prev_mask: &Grid,
    cfg: &SolverConfig,
    initial: Option<&Grid>,
) -> Result<TaskResult> {
    cfg.validate()?;
    let (w, h) = (prev_mask.width(), prev_mask.height());
    if prev_mask.channels() != 1 {
        return Err(Error::invalid("previous mask must have one channel"));
    }
    prev.check_against(&cfg.pyramid, w, h)?;
    cur.check_against(&cfg.pyramid, w, h)?;
    let params = &cfg.labeling;
    let problems = (0..cur.len())
        .map(|l| {
            let fc = color_features(cur.level(l), params.color_channels)?;
            let fp = color_features(prev.level(l), params.color_channels)?;
            let mask = downsample_mask(prev_mask, fc.width(), fc.height(), cur.strides()[l])?;
            let probs = temporal_probabilities(&fc, &fp, &mask, params.window, params.sigma)?;
            Ok(LevelProblem::Labeling(probs))
        })
        .collect::<Result<Vec<_>>>()?;
    coarse_to_fine(TaskKind::Vseg, cur, &problems, (w, h), cfg, initial)
}

/// Stereo or flow on prebuilt target and source pyramids.
pub fn run_correspondence(
    task: TaskKind,
    target: &FeaturePyramid,
    source: &FeaturePyramid,
    input_size: (usize, usize),
    cfg: &SolverConfig,
    initial: Option<&Grid>,
) -> Result<TaskResult> {
    cfg.validate()?;
    if task.is_labeling() {
        return Err(Error::invalid("correspondence entry point given a labeling task"));
    }
    target.check_against(&cfg.pyramid, input_size.0, input_size.1)?;
    source.check_against(&cfg.pyramid, input_size.0, input_size.1)?;
    let problems: Vec<LevelProblem> = (0..target.len())
        .map(|l| LevelProblem::Correspondence {
            target: target.level(l),
            source: source.level(l),
        })
        .collect();
    coarse_to_fine(task, target, &problems, input_size, cfg, initial)
}

fn color_features(level: &Grid, count: usize) -> Result<Grid> {
    level.leading_channels(count.clamp(1, level.channels()))
}

/// Area-average of a binary mask over each `stride x stride` cell, rounded.
fn downsample_mask(mask: &Grid, lw: usize, lh: usize, stride: usize) -> Result<Grid> {
    if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::invalid("previous mask must be binary"));
    }
    let (w, h) = (mask.width(), mask.height());
    Grid::from_fn(lw, lh, 1, |x, y, _| {
        let (x0, y0) = (x * stride, y * stride);
        let (x1, y1) = ((x0 + stride).min(w), (y0 + stride).min(h));
        let mut sum = 0.0;
        for yy in y0..y1 {
            for xx in x0..x1 {
                sum += mask.get(xx, yy, 0);
            }
        }
        let area = ((x1 - x0) * (y1 - y0)) as f64;
        if sum * 2.0 >= area {
            1.0
        } else {
            0.0
        }
    })
}

enum LevelProblem<'a> {
    Labeling(LabelProbabilities),
    Correspondence { target: &'a Grid, source: &'a Grid },
}

/// Quadratic model plus whatever the basis generator needs from it.
struct Linearization {
    model: QuadraticModel,
    grouped: Option<crate::data_terms::GroupedDerivatives>,
}

impl LevelProblem<'_> {
    fn energy(&self, x: &Grid) -> Result<f64> {
        match self {
            LevelProblem::Labeling(p) => labeling_energy(x, p),
            LevelProblem::Correspondence { target, source } => correspondence_energy(source, target, x),
        }
    }

    fn linearize(&self, task: TaskKind, x: &Grid, groups: usize) -> Result<Linearization> {
        match self {
            LevelProblem::Labeling(p) => {
                let model = labeling_quadratic(x, p)?;
                let grouped = if groups > 0 {
                    Some(labeling_groups(&model, groups)?)
                } else {
                    None
                };
                Ok(Linearization { model, grouped })
            }
            LevelProblem::Correspondence { target, source } => {
                let g = groups.max(1);
                let cm = if task == TaskKind::Flow {
                    flow_quadratic(source, target, x, g)?
                } else {
                    stereo_quadratic(source, target, x, g)?
                };
                Ok(Linearization {
                    model: cm.model,
                    grouped: (groups > 0).then_some(cm.grouped),
                })
            }
        }
    }
}

enum LevelBasis {
    Scalar(SubspaceBasis),
    Flow(FlowBasisPair),
}

fn level_basis(
    task: TaskKind,
    cfg: &SolverConfig,
    level: usize,
    features: &Grid,
    lin: &Linearization,
    x: &Grid,
) -> Result<LevelBasis> {
    let (w, h) = (x.width(), x.height());
    let k = cfg.k_schedule[level];
    match &cfg.basis_source {
        BasisSource::Analytic(kind) => {
            let b = analytic_basis(w, h, k, *kind)?;
            Ok(if task == TaskKind::Flow {
                LevelBasis::Flow(FlowBasisPair::new(b.clone(), b)?)
            } else {
                LevelBasis::Scalar(b)
            })
        }
        BasisSource::Generated(weights) => {
            let lw: &LevelWeights = &weights.levels[level];
            let grouped = lin
                .grouped
                .as_ref()
                .ok_or_else(|| Error::invalid("generated basis needs grouped derivatives"))?;
            if task == TaskKind::Flow {
                let cramer = build_cramer_context(grouped)?;
                let u = normalize_solution(&x.extract_channel(0))?;
                let v = normalize_solution(&x.extract_channel(1))?;
                let bu = generate_basis(features, &cramer.u_context(u), lw, k)?;
                let bv = generate_basis(features, &cramer.v_context(v), lw, k)?;
                Ok(LevelBasis::Flow(FlowBasisPair::new(bu, bv)?))
            } else {
                let ctx = build_min_context(grouped, x)?;
                Ok(LevelBasis::Scalar(generate_basis(features, &ctx, lw, k)?))
            }
        }
    }
}

fn coarse_to_fine(
    task: TaskKind,
    features: &FeaturePyramid,
    problems: &[LevelProblem<'_>],
    input_size: (usize, usize),
    cfg: &SolverConfig,
    initial: Option<&Grid>,
) -> Result<TaskResult> {
    let strides = features.strides();
    let coarse = features.level(0);
    let mut x = match initial {
        None => Grid::zeros(coarse.width(), coarse.height(), task.field_channels())?,
        Some(init) => {
            if init.channels() != task.field_channels() {
                return Err(Error::invalid("initial field has the wrong channel count"));
            }
            let scale = coarse.width() as f64 / init.width() as f64;
            let x = upsample_solution(init, coarse.width(), coarse.height(), scale, task.field_kind())?;
            if task.is_labeling() {
                x.map(|v| v.clamp(-WARM_LABEL_LIMIT, WARM_LABEL_LIMIT))
            } else {
                x
            }
        }
    };
    let groups = match &cfg.basis_source {
        BasisSource::Analytic(_) => 0,
        BasisSource::Generated(w) => w.levels[0].shape().m,
    };

    let mut levels = Vec::with_capacity(features.len());
    let mut reports = Vec::new();
    for (l, problem) in problems.iter().enumerate() {
        let level_features = features.level(l);
        if l > 0 {
            let scale = strides[l - 1] as f64 / strides[l] as f64;
            x = upsample_solution(
                &x,
                level_features.width(),
                level_features.height(),
                scale,
                task.field_kind(),
            )?;
        }
        let level_groups = match &cfg.basis_source {
            BasisSource::Analytic(_) => groups,
            BasisSource::Generated(w) => w.levels[l].shape().m,
        };
        let mut trace = LevelTrace {
            level: l,
            stride: strides[l],
            k: cfg.k_schedule[l],
            width: level_features.width(),
            height: level_features.height(),
            iterations: Vec::new(),
        };
        for it in 0..cfg.iterations_per_level {
            let wrap = |e: Error| Error::Solver {
                level: l,
                iteration: it,
                source: Box::new(e),
            };
            let step = iterate(task, cfg, l, level_features, problem, &x, level_groups).map_err(wrap)?;
            let converged = step.trace.accepted
                && step.trace.step_norm <= cfg.convergence_tol * norm2(step.x.data()).max(1e-12);
            let accepted = step.trace.accepted;
            trace.iterations.push(step.trace);
            reports.push(step.report);
            x = step.x;
            if !accepted || converged {
                break;
            }
        }
        levels.push(trace);
    }

    Ok(TaskResult {
        task,
        solution: x,
        stride: *strides.last().expect("pyramid has at least one level"),
        input_width: input_size.0,
        input_height: input_size.1,
        levels,
        reports,
    })
}

struct Step {
    x: Grid,
    trace: IterationTrace,
    report: SolveReport,
}

fn iterate(
    task: TaskKind,
    cfg: &SolverConfig,
    level: usize,
    features: &Grid,
    problem: &LevelProblem<'_>,
    x: &Grid,
    groups: usize,
) -> Result<Step> {
    let lin = problem.linearize(task, x, groups)?;
    let energy_before = lin.model.energy;
    let basis = level_basis(task, cfg, level, features, &lin, x)?;
    let (dx, report) = match &basis {
        LevelBasis::Scalar(b) => {
            let (dx, report) = solve_projected(&lin.model, b, x.data(), cfg.damping)?;
            (Grid::from_vec(x.width(), x.height(), 1, dx)?, report)
        }
        LevelBasis::Flow(pair) => {
            let (dx, report) = solve_flow_subspace(&lin.model, pair, x, cfg.damping)?;
            (dx, report)
        }
    };

    let full_norm = norm2(dx.data());
    let mut scale = 1.0;
    for _ in 0..=MAX_BACKTRACKS {
        let candidate = add_scaled(x, &dx, scale)?;
        let energy_after = problem.energy(&candidate)?;
        if energy_after <= energy_before {
            return Ok(Step {
                x: candidate,
                trace: IterationTrace {
                    energy_before,
                    energy_after,
                    step_norm: scale * full_norm,
                    damping: report.damping_used,
                    coefficient_norm: norm2(&report.coefficients),
                    step_scale: scale,
                    accepted: true,
                },
                report,
            });
        }
        scale *= 0.5;
    }
    Ok(Step {
        x: x.clone(),
        trace: IterationTrace {
            energy_before,
            energy_after: energy_before,
            step_norm: 0.0,
            damping: report.damping_used,
            coefficient_norm: norm2(&report.coefficients),
            step_scale: 0.0,
            accepted: false,
        },
        report,
    })
}

fn add_scaled(x: &Grid, dx: &Grid, scale: f64) -> Result<Grid> {
    let data = x.data().iter().zip(dx.data()).map(|(a, b)| a + scale * b).collect();
    Grid::from_vec(x.width(), x.height(), x.channels(), data)
}
