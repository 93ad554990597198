//! Stage runner behind the command line: solves, checks, develops and writes artifacts.

use crate::config::{ConfigError, RunConfig, Stage};
use crate::develop::{
    develop_affine_sphere, develop_cmc, export_mesh, gauss_jacobian, holonomy_defect, metric_error, normalize,
    write_gauss_csv, DevelopError, DevelopedSurface, GaussMapField, HolonomyReport, Mode, NormalizedSolution, Window,
};
use crate::grid::{BoundaryData, GridDomain, ScalarField, VortexProblem};
use crate::holo::EntireFunction;
use crate::solver::{solve_complete, solve_incomplete, two_solutions, SolveError, SolveReport, StallPolicy};
use crate::verify::{
    blaschke_curvature, completeness_probe, curvature_field, diagnostics, inner_max, inner_min, negativity_check,
    ordering_check, positivity_check, subunity_check, subunity_field, write_rays_csv, InvariantReport, RayProfile,
    RayVerdict, TailFit, Witness,
};
use serde::Serialize;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

/// Relative tolerance for `|Im f|` in the affine development.
pub const REALITY_CHECK: f64 = 1e-8;
/// Tolerance for `|⟨N,N⟩ + 1|` and `|⟨N, e_a⟩|`.
pub const HYPERBOLOID_CHECK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("{0}")]
    Io(#[from] io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Precondition(_) => EXIT_CONFIG,
            RunError::Solve(e) if e.is_precondition() => EXIT_CONFIG,
            RunError::Solve(_) => EXIT_NOT_CONVERGED,
            RunError::Io(_) => EXIT_IO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Ok,
    ConfigError,
    NonConvergence,
    InvariantFailure,
    IoError,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub vortexlab: &'static str,
    pub report_schema: u32,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Solves {
    pub complete: Option<SolveReport>,
    pub incomplete: Option<SolveReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RaySummary {
    pub theta: f64,
    pub verdict: RayVerdict,
    pub final_length: f64,
    pub limit: Option<f64>,
    pub fit: TailFit,
}

impl From<&RayProfile> for RaySummary {
    fn from(r: &RayProfile) -> Self {
        Self { theta: r.theta, verdict: r.verdict, final_length: r.final_length, limit: r.limit, fit: r.fit }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Rays {
    pub complete: Vec<RaySummary>,
    pub incomplete: Vec<RaySummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsSummary {
    pub identity_residual: Option<f64>,
    pub max_h: Option<Witness>,
    pub min_eta: Option<Witness>,
    pub masked_nodes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DevelopmentSummary {
    pub mode: Mode,
    /// Half-width and node count of the developed window.
    pub half_width: f64,
    pub n: usize,
    pub normalized_residual: f64,
    pub holonomy: HolonomyReport,
    pub metric_error: f64,
    pub bounding_box: [[f64; 3]; 2],
    pub max_imag: Option<f64>,
    pub hyperboloid_defect: Option<f64>,
    pub orthogonality: Option<f64>,
    pub min_height: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTime {
    pub stage: &'static str,
    pub seconds: f64,
}

/// Wall-clock data; not covered by the determinism contract.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Timing {
    pub stages: Vec<StageTime>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: RunConfig,
    pub versions: Versions,
    pub status: Status,
    pub exit_code: i32,
    pub error: Option<String>,
    pub solves: Solves,
    pub invariants: Vec<InvariantReport>,
    pub invariants_passed: bool,
    pub rays: Rays,
    pub diagnostics: Option<DiagnosticsSummary>,
    pub development: Option<DevelopmentSummary>,
    pub artifacts: Vec<String>,
    pub timing: Timing,
}

#[derive(Debug, Serialize)]
struct InvariantsFile<'a> {
    passed: bool,
    invariants: &'a [InvariantReport],
}

struct Run<'a> {
    cfg: &'a RunConfig,
    domain: GridDomain,
    base_phi: EntireFunction,
    differential: EntireFunction,
    complete: Option<ScalarField>,
    incomplete: Option<ScalarField>,
    surface: Option<(DevelopedSurface, Option<GaussMapField>)>,
    solves: Solves,
    invariants: Vec<InvariantReport>,
    rays: Rays,
    diagnostics: Option<DiagnosticsSummary>,
    development: Option<DevelopmentSummary>,
    artifacts: Vec<String>,
}

fn write_artifact(
    dir: &Path,
    name: &str,
    artifacts: &mut Vec<String>,
    body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(dir.join(name))?);
    body(&mut out)?;
    out.flush()?;
    if !artifacts.iter().any(|a| a == name) {
        artifacts.push(name.to_string());
    }
    Ok(())
}

impl<'a> Run<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self, RunError> {
        Ok(Self {
            cfg,
            domain: cfg.domain()?,
            base_phi: cfg.base_phi()?,
            differential: cfg.differential()?,
            complete: None,
            incomplete: None,
            surface: None,
            solves: Solves::default(),
            invariants: Vec::new(),
            rays: Rays::default(),
            diagnostics: None,
            development: None,
            artifacts: Vec::new(),
        })
    }

    fn problem(&self, w: &ScalarField) -> Result<VortexProblem, RunError> {
        VortexProblem::new(self.base_phi.clone(), self.cfg.k, self.domain, BoundaryData::from_field(w))
            .map_err(|e| RunError::Solve(e.into()))
    }

    fn write_solution(&mut self, name: &str, w: &ScalarField) -> Result<(), RunError> {
        write_artifact(&self.cfg.output_dir, name, &mut self.artifacts, |out| w.write_csv(out))?;
        Ok(())
    }

    fn stage(&mut self, stage: Stage) -> Result<(), RunError> {
        let tol = &self.cfg.tolerances;
        match stage {
            Stage::SolveComplete => {
                let policy = StallPolicy::for_phi(&self.base_phi);
                let (w, rep) = solve_complete(&self.base_phi, self.cfg.k, &self.domain, tol, policy)?;
                self.write_solution("w_complete.csv", &w)?;
                self.complete = Some(w);
                self.solves.complete = Some(rep);
            }
            Stage::SolveIncomplete => {
                let (w, rep) = solve_incomplete(&self.base_phi, self.cfg.k, &self.domain, tol)?;
                self.write_solution("w_incomplete.csv", &w)?;
                self.incomplete = Some(w);
                self.solves.incomplete = Some(rep);
            }
            Stage::TwoSolutions => {
                let two = two_solutions(&self.base_phi, self.cfg.k, &self.domain, tol)?;
                self.write_solution("w_complete.csv", &two.complete)?;
                self.write_solution("w_incomplete.csv", &two.incomplete)?;
                self.complete = Some(two.complete);
                self.incomplete = Some(two.incomplete);
                self.solves.complete = Some(two.complete_report);
                self.solves.incomplete = Some(two.incomplete_report);
            }
            Stage::Verify => self.verify()?,
            Stage::Develop => self.develop()?,
            Stage::Export => self.export()?,
        }
        Ok(())
    }

    fn primary(&self) -> Option<&ScalarField> {
        self.complete.as_ref().or(self.incomplete.as_ref())
    }

    fn verify(&mut self) -> Result<(), RunError> {
        let solve_tol = self.cfg.tolerances.solve;
        let primary = self
            .primary()
            .cloned()
            .ok_or_else(|| RunError::Precondition("verify needs a preceding solve stage".into()))?;
        for (label, w) in [("complete", self.complete.clone()), ("incomplete", self.incomplete.clone())] {
            let Some(w) = w else { continue };
            let prob = self.problem(&w)?;
            let mut sub = subunity_check(&w, &prob).map_err(|e| RunError::Solve(e.into()))?;
            sub.name = format!("subunity_{label}");
            self.invariants.push(sub);
            let stencil = format!("curvature_stencil_{label}");
            self.invariants.push(InvariantReport::outcome(&stencil, curvature_field(&w, &prob, solve_tol).map(|_| ())));
            let profiles = completeness_probe(&w, &self.cfg.rays);
            let rays: Vec<RaySummary> = profiles.iter().map(RaySummary::from).collect();
            let name = if label == "complete" { "rays.csv" } else { "rays_incomplete.csv" };
            write_artifact(&self.cfg.output_dir, name, &mut self.artifacts, |out| write_rays_csv(&profiles, out))?;
            if label == "complete" {
                self.rays.complete = rays;
            } else {
                self.rays.incomplete = rays;
            }
        }
        let other = if self.complete.is_some() { self.incomplete.clone() } else { None };
        let prob = self.problem(&primary)?;
        let max_h = inner_max(&subunity_field(&primary, &prob).map_err(|e| RunError::Solve(e.into()))?);
        let summary = match diagnostics(&primary, &prob, other.as_ref(), solve_tol) {
            Ok(diag) => {
                self.invariants.push(InvariantReport::outcome::<String>("sigma_identity", Ok(())));
                DiagnosticsSummary {
                    identity_residual: Some(diag.identity_residual),
                    max_h,
                    min_eta: diag.eta.as_ref().and_then(inner_min),
                    masked_nodes: diag.sigma_valid.iter().filter(|v| !**v).count(),
                }
            }
            Err(e) => {
                self.invariants.push(InvariantReport::outcome("sigma_identity", Err(e)));
                DiagnosticsSummary { identity_residual: None, max_h, min_eta: None, masked_nodes: 0 }
            }
        };
        self.diagnostics = Some(summary);
        if let (Some(w1), Some(w2)) = (&self.complete, &self.incomplete) {
            self.invariants.push(ordering_check(w1, w2).map_err(|e| RunError::Solve(e.into()))?);
        }
        let sign_applies = self.differential.is_polynomial() && !self.differential.is_constant();
        if let (Some(w), true) = (self.complete.clone(), sign_applies) {
            match self.cfg.mode {
                Mode::WangK3 => {
                    let sol = self.normalized(&w)?;
                    let kh = blaschke_curvature(&sol.w, &sol.differential);
                    self.invariants.push(negativity_check("blaschke_curvature_negative", &kh));
                }
                Mode::HarmonicK2 => {
                    let sol = self.normalized(&w)?;
                    self.invariants.push(positivity_check("gauss_jacobian_positive", &gauss_jacobian(&sol)));
                }
                Mode::Eq1 => {}
            }
        }
        Ok(())
    }

    fn normalized(&self, w: &ScalarField) -> Result<NormalizedSolution, RunError> {
        let prob = self.problem(w)?;
        normalize(w, &prob, self.cfg.mode).map_err(|e| RunError::Precondition(e.to_string()))
    }

    fn develop(&mut self) -> Result<(), RunError> {
        if self.cfg.mode == Mode::Eq1 {
            return Err(RunError::Precondition("develop needs mode WANG_K3 or HARMONIC_K2".into()));
        }
        let w = self
            .primary()
            .cloned()
            .ok_or_else(|| RunError::Precondition("develop needs a preceding solve stage".into()))?;
        let sol = self.normalized(&w)?;
        let holonomy = holonomy_defect(&sol, Window::Inner).map_err(develop_precondition)?;
        let window = sol.restrict_inner().map_err(develop_precondition)?;
        let developed = match self.cfg.mode {
            Mode::WangK3 => develop_affine_sphere(&window).map(|s| (s, None)),
            _ => develop_cmc(&window).map(|(s, g)| (s, Some(g))),
        };
        let (surface, gauss) = match developed {
            Ok(v) => v,
            Err(DevelopError::Precondition(m)) => return Err(RunError::Precondition(m)),
            Err(e) => {
                self.invariants.push(InvariantReport::outcome("development", Err(e)));
                return Ok(());
            }
        };
        let metric = metric_error(&surface, &window).map_err(develop_precondition)?;
        let (lo, hi) = surface.bounding_box();
        let mut summary = DevelopmentSummary {
            mode: self.cfg.mode,
            half_width: window.domain().half_width(),
            n: window.domain().n(),
            normalized_residual: window.residual_norm(),
            holonomy,
            metric_error: metric,
            bounding_box: [lo, hi],
            max_imag: None,
            hyperboloid_defect: None,
            orthogonality: None,
            min_height: None,
        };
        match &gauss {
            None => {
                summary.max_imag = Some(surface.max_imag);
                self.invariants.push(InvariantReport::tolerant("reality", None, -surface.max_imag, REALITY_CHECK));
            }
            Some(g) => {
                let defect = g.hyperboloid_defect();
                summary.hyperboloid_defect = Some(defect);
                summary.orthogonality = Some(g.orthogonality);
                summary.min_height = Some(g.min_height());
                self.invariants.push(InvariantReport::tolerant("hyperboloid", None, -defect, HYPERBOLOID_CHECK));
                self.invariants.push(InvariantReport::tolerant(
                    "normal_orthogonality",
                    None,
                    -g.orthogonality,
                    HYPERBOLOID_CHECK,
                ));
                self.invariants.push(InvariantReport::tolerant("future_pointing", None, g.min_height() - 1.0, 1e-12));
            }
        }
        self.development = Some(summary);
        self.surface = Some((surface, gauss));
        Ok(())
    }

    fn export(&mut self) -> Result<(), RunError> {
        let Some((surface, gauss)) = self.surface.take() else {
            return Err(RunError::Precondition("export needs a preceding successful develop stage".into()));
        };
        write_artifact(&self.cfg.output_dir, "surface.obj", &mut self.artifacts, |out| export_mesh(&surface, out))?;
        if let Some(g) = &gauss {
            write_artifact(&self.cfg.output_dir, "gauss.csv", &mut self.artifacts, |out| write_gauss_csv(g, out))?;
        }
        self.surface = Some((surface, gauss));
        Ok(())
    }
}

fn develop_precondition(e: DevelopError) -> RunError {
    RunError::Precondition(e.to_string())
}

/// Outcome of [`run`]: the exit status and the report that was written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub report: Report,
}

/// Execute the configured stages in order and write `invariants.json` and `report.json`.
/// Returns `Err` only when nothing could be written (for example an unusable output directory).
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let started = Instant::now();
    let mut run = Run::new(cfg)?;
    let mut timing = Timing::default();
    let mut failure: Option<RunError> = None;
    for &stage in &cfg.pipeline {
        let t = Instant::now();
        let result = run.stage(stage);
        timing.stages.push(StageTime { stage: stage.name(), seconds: t.elapsed().as_secs_f64() });
        if let Err(e) = result {
            failure = Some(e);
            break;
        }
    }
    let invariants_passed = run.invariants.iter().all(|r| r.passed);
    let file = InvariantsFile { passed: invariants_passed, invariants: &run.invariants };
    write_artifact(&cfg.output_dir, "invariants.json", &mut run.artifacts, |out| {
        serde_json::to_writer_pretty(&mut *out, &file)?;
        writeln!(out)
    })?;
    let (status, exit_code) = match &failure {
        Some(e) => {
            let code = e.exit_code();
            let status = match code {
                EXIT_CONFIG => Status::ConfigError,
                EXIT_NOT_CONVERGED => Status::NonConvergence,
                _ => Status::IoError,
            };
            (status, code)
        }
        None if !invariants_passed => (Status::InvariantFailure, EXIT_INVARIANT),
        None => (Status::Ok, EXIT_OK),
    };
    run.artifacts.push("report.json".into());
    timing.total_seconds = started.elapsed().as_secs_f64();
    let report = Report {
        config: cfg.clone(),
        versions: Versions { vortexlab: env!("CARGO_PKG_VERSION"), report_schema: 1 },
        status,
        exit_code,
        error: failure.map(|e| e.to_string()),
        solves: run.solves,
        invariants: run.invariants,
        invariants_passed,
        rays: run.rays,
        diagnostics: run.diagnostics,
        development: run.development,
        artifacts: run.artifacts,
        timing,
    };
    let mut out = BufWriter::new(File::create(cfg.output_dir.join("report.json"))?);
    serde_json::to_writer_pretty(&mut out, &report).map_err(io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(RunOutcome { exit_code, report })
}

/// The solution a config designates for comparison: the complete branch when the pipeline
/// computes one, otherwise the incomplete branch.
pub fn primary_solution(cfg: &RunConfig) -> Result<(ScalarField, &'static str), RunError> {
    cfg.validate()?;
    let phi = cfg.base_phi()?;
    let d = cfg.domain()?;
    let tol = &cfg.tolerances;
    for stage in &cfg.pipeline {
        match stage {
            Stage::SolveComplete | Stage::TwoSolutions => {
                let (w, _) = solve_complete(&phi, cfg.k, &d, tol, StallPolicy::for_phi(&phi))?;
                return Ok((w, "complete"));
            }
            Stage::SolveIncomplete => {
                let (w, _) = solve_incomplete(&phi, cfg.k, &d, tol)?;
                return Ok((w, "incomplete"));
            }
            _ => {}
        }
    }
    Err(RunError::Precondition("config has no solve stage".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub max_difference: f64,
    pub witness: Option<[f64; 2]>,
    pub shared_nodes: usize,
    /// Half-width of the compared window: the inner half-square of the smaller domain.
    pub window_half_width: f64,
    pub branches: [&'static str; 2],
}

/// Max difference of two fields over the nodes they share inside the inner half-square of the
/// smaller domain.
pub fn compare_fields(a: &ScalarField, b: &ScalarField) -> Result<Comparison, RunError> {
    let (small, large) = if a.domain().half_width() <= b.domain().half_width() { (a, b) } else { (b, a) };
    let ds = *small.domain();
    let dl = *large.domain();
    let (lo, hi) = ds.inner_range();
    let slack = 1e-9 * ds.h().max(dl.h());
    let mut worst = 0.0_f64;
    let mut witness = None;
    let mut shared = 0;
    for j in lo..=hi {
        for i in lo..=hi {
            let (x, y) = ds.node(i, j);
            let locate = |c: f64| {
                let t = ((c + dl.half_width()) / dl.h()).round();
                (t >= 0.0 && (t as usize) < dl.n() && (dl.coord(t as usize) - c).abs() <= slack).then_some(t as usize)
            };
            if let (Some(il), Some(jl)) = (locate(x), locate(y)) {
                shared += 1;
                let diff = (small.at(i, j) - large.at(il, jl)).abs();
                if diff > worst || witness.is_none() {
                    worst = diff;
                    witness = Some([x, y]);
                }
            }
        }
    }
    if shared == 0 {
        return Err(RunError::Precondition("the two grids share no nodes in the compared window".into()));
    }
    let window_half_width = ds.coord(hi);
    Ok(Comparison { max_difference: worst, witness, shared_nodes: shared, window_half_width, branches: ["", ""] })
}

/// Boundary-insensitivity check between two configs with the same `φ`, `k` and mode.
pub fn compare(a: &RunConfig, b: &RunConfig) -> Result<Comparison, RunError> {
    if a.base_phi()? != b.base_phi()? || a.k != b.k || a.mode != b.mode {
        return Err(RunError::Precondition("configs differ in phi, k or mode".into()));
    }
    let (wa, ba) = primary_solution(a)?;
    let (wb, bb) = primary_solution(b)?;
    let mut cmp = compare_fields(&wa, &wb)?;
    cmp.branches = [ba, bb];
    Ok(cmp)
}
