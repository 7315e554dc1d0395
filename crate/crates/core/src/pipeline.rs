//! End-to-end runs: configuration, per-group fitting and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{combine, load_snapshots, DomainConfig, Source, SnapshotSet};
use crate::density::DensityField;
use crate::error::{Error, ErrorClass, Result};
use crate::exec;
use crate::kde::{density_from_snapshots, FrameInfo};
use crate::mat2::Mat2;
use crate::nondim::{characteristic_scales, pi_groups, PiGroups, ScaleSet};
use crate::regression::{default_lambdas, delta_aic, fit_model, Solver, SparseModel};
use crate::stats::{
    covariance_rate, covariance_rate_estimate, displacement_estimate, displacement_table, DiffusionEstimate,
    DisplacementRow, TimeWeighting,
};
use crate::weakform::{assemble, LibrarySpec, TestFunctionSpec, Term};

pub const FIT_FILE: &str = "fit.json";

/// How snapshot sources are pooled into fitting groups.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Grouping {
    /// Everything in one group.
    Combined,
    /// One group per plot, replicates pooled.
    Plot,
    /// One group per (plot, replicate) run.
    Replicate,
    /// Plots pooled by a named entry of `plot_attributes` (e.g. plant, virus).
    Attribute(String),
}

impl From<String> for Grouping {
    fn from(s: String) -> Self {
        match s.as_str() {
            "combined" => Grouping::Combined,
            "plot" => Grouping::Plot,
            "replicate" => Grouping::Replicate,
            _ => Grouping::Attribute(s),
        }
    }
}

impl From<Grouping> for String {
    fn from(g: Grouping) -> Self {
        match g {
            Grouping::Combined => "combined".into(),
            Grouping::Plot => "plot".into(),
            Grouping::Replicate => "replicate".into(),
            Grouping::Attribute(a) => a,
        }
    }
}

/// Level of the model hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    /// Potential, optional interaction, anisotropic diffusion.
    Full,
    /// `u_t = ∇·(D∇u)`.
    Anisotropic,
    /// `u_t = D_eff Δu`.
    Effective,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Full => "full",
            ModelFamily::Anisotropic => "anisotropic",
            ModelFamily::Effective => "effective",
        }
    }

    /// Library for this family. The family decides which term groups are
    /// present; `base` only supplies basis parameters.
    pub fn library(self, base: &LibrarySpec, interaction: bool) -> LibrarySpec {
        match self {
            ModelFamily::Full => LibrarySpec {
                include_potential: true,
                include_interaction: interaction,
                include_diffusion: true,
                effective_diffusion: false,
                ..*base
            },
            ModelFamily::Anisotropic => LibrarySpec {
                include_potential: false,
                include_interaction: false,
                include_diffusion: true,
                effective_diffusion: false,
                ..*base
            },
            ModelFamily::Effective => LibrarySpec {
                include_potential: false,
                include_interaction: false,
                include_diffusion: true,
                effective_diffusion: true,
                ..*base
            },
        }
    }
}

fn default_inputs() -> Vec<PathBuf> {
    Vec::new()
}

fn default_output() -> PathBuf {
    PathBuf::from("fpweak-out")
}

fn default_groups() -> Vec<Grouping> {
    vec![Grouping::Combined]
}

fn default_families() -> Vec<ModelFamily> {
    vec![ModelFamily::Full, ModelFamily::Anisotropic, ModelFamily::Effective]
}

fn default_solver() -> Solver {
    Solver::Mstls
}

fn default_true() -> bool {
    true
}

fn default_bootstrap() -> usize {
    1000
}

/// Declarative description of a fitting run (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Snapshot CSV files; relative paths resolve against the config file.
    #[serde(default = "default_inputs")]
    pub inputs: Vec<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_groups")]
    pub groups: Vec<Grouping>,
    /// `plot_id → attribute → label`, used by attribute groupings.
    #[serde(default)]
    pub plot_attributes: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default = "default_families")]
    pub families: Vec<ModelFamily>,
    /// Solver for the full family. The diffusive families are already
    /// sparse and always use least squares.
    #[serde(default = "default_solver")]
    pub solver: Solver,
    /// Thresholds for the λ sweep; the 50-point default when absent.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    /// Learn interaction kernels in the full family for groups made of a
    /// single run.
    #[serde(default = "default_true")]
    pub interaction: bool,
    #[serde(default)]
    pub domain: DomainConfig,
    #[serde(default)]
    pub test_functions: TestFunctionSpec,
    #[serde(default)]
    pub library: LibrarySpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// Time scale for the Π-groups, hr; defaults to the observation span.
    #[serde(default)]
    pub t_c: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: default_inputs(),
            output: default_output(),
            groups: default_groups(),
            plot_attributes: BTreeMap::new(),
            families: default_families(),
            solver: default_solver(),
            lambdas: None,
            interaction: true,
            domain: DomainConfig::default(),
            test_functions: TestFunctionSpec::default(),
            library: LibrarySpec::default(),
            seed: 0,
            bootstrap: default_bootstrap(),
            t_c: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file and resolve relative paths against its directory.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.inputs.iter_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.library.validate()?;
        if self.families.is_empty() {
            return Err(Error::Invalid("no model families requested".into()));
        }
        if self.bootstrap == 0 {
            return Err(Error::Invalid("bootstrap must be >= 1".into()));
        }
        if let Some(l) = &self.lambdas {
            if l.is_empty() || l.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
                return Err(Error::Invalid("lambdas must be a non-empty list in (0, 1)".into()));
            }
        }
        if let Some(t) = self.t_c {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Invalid(format!("t_c must be positive, got {t}")));
            }
        }
        for g in &self.groups {
            if let Grouping::Attribute(a) = g {
                if !self.plot_attributes.values().any(|m| m.contains_key(a)) {
                    return Err(Error::Invalid(format!(
                        "grouping `{a}` is not a known grouping or plot attribute"
                    )));
                }
            }
        }
        let grid = self.domain.grid(0.0, 1.0)?;
        self.test_functions.validate(&grid)?;
        Ok(())
    }

    fn lambda_grid(&self) -> Vec<f64> {
        self.lambdas.clone().unwrap_or_else(default_lambdas)
    }
}

/// A named subset of sources.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub id: String,
    pub sources: Vec<Source>,
}

/// Expand groupings into concrete source subsets, in a stable order.
pub fn resolve_groups(cfg: &RunConfig, sources: &[Source]) -> Result<Vec<GroupSpec>> {
    let mut out = Vec::new();
    for g in &cfg.groups {
        let mut buckets: BTreeMap<String, Vec<Source>> = BTreeMap::new();
        for s in sources {
            let key = match g {
                Grouping::Combined => "combined".to_owned(),
                Grouping::Plot => format!("plot={}", s.plot_id),
                Grouping::Replicate => format!("run={}/{}", s.plot_id, s.replicate_id),
                Grouping::Attribute(a) => {
                    let label = cfg
                        .plot_attributes
                        .get(&s.plot_id)
                        .and_then(|m| m.get(a))
                        .ok_or_else(|| Error::Invalid(format!("plot `{}` has no `{a}` attribute", s.plot_id)))?;
                    format!("{a}={label}")
                }
            };
            buckets.entry(key).or_default().push(s.clone());
        }
        for (id, mut sources) in buckets {
            sources.sort();
            if out.iter().any(|o: &GroupSpec| o.id == id) {
                continue;
            }
            out.push(GroupSpec { id, sources });
        }
    }
    Ok(out)
}

/// One ΔAIC entry: `AIC(this) − AIC(reference)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicComparison {
    pub reference: String,
    pub delta_aic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFit {
    pub family: ModelFamily,
    /// Whether the interaction columns were part of the library.
    pub interaction: bool,
    pub model: SparseModel,
    /// Least-squares companion of a sparse fit.
    pub ols: Option<SparseModel>,
    pub comparisons: Vec<AicComparison>,
    pub scales: Option<ScaleSet>,
    pub pi: Option<PiGroups>,
    pub notes: Vec<String>,
}

impl FamilyFit {
    fn label(&self, solver: Solver) -> String {
        format!("{}/{}", self.family.name(), solver_name(solver))
    }
}

fn solver_name(s: Solver) -> &'static str {
    match s {
        Solver::Mstls => "wsindy",
        Solver::Ols => "ols",
    }
}

/// Model-free diffusion estimates for a group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSummary {
    pub covariance_rate: DiffusionEstimate,
    pub displacement: DiffusionEstimate,
    pub displacement_curve: Vec<DisplacementRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub frames: Vec<FrameInfo>,
    pub families: Vec<FamilyFit>,
    pub empirical: EmpiricalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFailure {
    pub stage: String,
    pub class: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GroupOutcome {
    Fitted(Box<GroupFit>),
    Failed(GroupFailure),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub id: String,
    pub sources: Vec<Source>,
    pub times: Vec<f64>,
    pub counts: Vec<usize>,
    pub outcome: GroupOutcome,
}

/// Everything `fit` produces; serialized to `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub config: RunConfig,
    pub groups: Vec<GroupReport>,
}

impl FitDocument {
    /// First failure, if any group failed.
    pub fn first_failure(&self) -> Option<(&str, &GroupFailure)> {
        self.groups.iter().find_map(|g| match &g.outcome {
            GroupOutcome::Failed(f) => Some((g.id.as_str(), f)),
            _ => None,
        })
    }

    pub fn save<P: AsRef<Path>>(&self, dir: P) -> Result<PathBuf> {
        fs::create_dir_all(dir.as_ref())?;
        let path = dir.as_ref().join(FIT_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn load<P: AsRef<Path>>(dir: P) -> Result<Self> {
        let path = dir.as_ref().join(FIT_FILE);
        if !path.is_file() {
            return Err(Error::MissingArtifact(path));
        }
        Ok(serde_json::from_str(&fs::read_to_string(&path)?)?)
    }
}

fn class_name(c: ErrorClass) -> &'static str {
    match c {
        ErrorClass::Validation => "validation",
        ErrorClass::Numerical => "numerical",
        ErrorClass::Io => "io",
    }
}

impl GroupFailure {
    /// Exit-status class recorded for this failure.
    pub fn class(&self) -> ErrorClass {
        match self.class.as_str() {
            "validation" => ErrorClass::Validation,
            "numerical" => ErrorClass::Numerical,
            _ => ErrorClass::Io,
        }
    }
}

/// Load and combine all configured inputs.
pub fn load_inputs(cfg: &RunConfig) -> Result<SnapshotSet> {
    if cfg.inputs.is_empty() {
        return Err(Error::Invalid("no input files configured".into()));
    }
    let sets = cfg
        .inputs
        .iter()
        .map(|p| load_snapshots(p, &cfg.domain))
        .collect::<Result<Vec<_>>>()?;
    if sets.len() == 1 {
        Ok(sets.into_iter().next().expect("one set"))
    } else {
        combine(&sets)
    }
}

/// Diffusion matrix implied by a fitted model, if it has diffusion terms.
pub fn diffusion_matrix(model: &SparseModel) -> Option<Mat2> {
    if let Some(d) = model.weight(Term::EffectiveDiffusion) {
        return Some(Mat2::scaled(d));
    }
    let dx = model.weight(Term::DiffusionXx)?;
    let dxy = model.weight(Term::DiffusionXy).unwrap_or(0.0);
    let dy = model.weight(Term::DiffusionYy)?;
    Some(Mat2::symmetric(dx, dxy, dy))
}

fn nondimensionalize(
    model: &SparseModel,
    density: &DensityField,
    lib: &LibrarySpec,
    t_c: Option<f64>,
    notes: &mut Vec<String>,
) -> Result<(Option<ScaleSet>, Option<PiGroups>)> {
    let scales = characteristic_scales(model, density, lib, t_c)?;
    let Some(d) = diffusion_matrix(model).filter(|d| d.is_spd()) else {
        notes.push("diffusion matrix is not positive definite; Π-groups omitted".into());
        return Ok((Some(scales), None));
    };
    let centred = scales.diffusion_centric(d)?;
    let pi = pi_groups(&centred, d)?;
    Ok((Some(centred), Some(pi)))
}

fn fit_family(
    cfg: &RunConfig,
    family: ModelFamily,
    density: &DensityField,
    single_run: bool,
    particles: usize,
    group: &str,
) -> Result<FamilyFit> {
    let interaction = family == ModelFamily::Full && cfg.interaction && single_run;
    let lib = family.library(&cfg.library, interaction);
    let sys = assemble(density, &lib, &cfg.test_functions).map_err(|e| e.in_stage("assemble", group))?;
    let lambdas = cfg.lambda_grid();
    let solver = if family == ModelFamily::Full { cfg.solver } else { Solver::Ols };
    let model = fit_model(&sys, solver, &lambdas, particles).map_err(|e| e.in_stage("regression", group))?;
    let ols = if solver == Solver::Mstls {
        match fit_model(&sys, Solver::Ols, &lambdas, particles) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("{group}: least-squares companion failed: {e}");
                None
            }
        }
    } else {
        None
    };
    drop(sys);
    let mut notes = Vec::new();
    if model.zero_model {
        notes.push("every term was thresholded away".into());
    }
    let (scales, pi) =
        nondimensionalize(&model, density, &lib, cfg.t_c, &mut notes).map_err(|e| e.in_stage("nondim", group))?;
    Ok(FamilyFit {
        family,
        interaction,
        model,
        ols,
        comparisons: Vec::new(),
        scales,
        pi,
        notes,
    })
}

/// Fill in ΔAIC: full sparse vs its least-squares companion, anisotropic
/// vs full, effective vs anisotropic.
fn compare_families(fits: &mut [FamilyFit]) {
    let find = |fits: &[FamilyFit], f: ModelFamily| fits.iter().position(|x| x.family == f);
    let d = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => Some(delta_aic(a, b)),
        _ => None,
    };
    if let Some(i) = find(fits, ModelFamily::Full) {
        let ff = &fits[i];
        if let Some(o) = &ff.ols {
            let c = AicComparison {
                reference: ff.label(Solver::Ols),
                delta_aic: d(ff.model.aic, o.aic),
            };
            fits[i].comparisons.push(c);
        }
    }
    for (this, reference) in [
        (ModelFamily::Anisotropic, ModelFamily::Full),
        (ModelFamily::Effective, ModelFamily::Anisotropic),
    ] {
        let (Some(i), Some(r)) = (find(fits, this), find(fits, reference)) else {
            continue;
        };
        let mut refs = vec![(fits[r].label(fits[r].model.solver), fits[r].model.aic)];
        if let Some(o) = &fits[r].ols {
            refs.push((fits[r].label(Solver::Ols), o.aic));
        }
        let aic = fits[i].model.aic;
        for (reference, raic) in refs {
            fits[i].comparisons.push(AicComparison {
                reference,
                delta_aic: d(aic, raic),
            });
        }
    }
}

fn empirical(set: &SnapshotSet, cfg: &RunConfig) -> Result<EmpiricalSummary> {
    Ok(EmpiricalSummary {
        covariance_rate: covariance_rate_estimate(set, cfg.bootstrap, cfg.seed)?,
        displacement: displacement_estimate(set, cfg.bootstrap, cfg.seed)?,
        displacement_curve: displacement_table(set, cfg.bootstrap, cfg.seed)?,
    })
}

fn fit_group(cfg: &RunConfig, set: &SnapshotSet, group: &str) -> Result<GroupFit> {
    let (density, frames) = density_from_snapshots(set).map_err(|e| e.in_stage("kde", group))?;
    let single_run = set.sources().len() == 1;
    let particles = set.total_count();
    let mut families = Vec::with_capacity(cfg.families.len());
    let mut requested = cfg.families.clone();
    requested.sort();
    requested.dedup();
    for family in requested {
        log::info!("{group}: fitting the {} model", family.name());
        families.push(fit_family(cfg, family, &density, single_run, particles, group)?);
    }
    compare_families(&mut families);
    let empirical = empirical(set, cfg).map_err(|e| e.in_stage("stats", group))?;
    Ok(GroupFit {
        frames,
        families,
        empirical,
    })
}

fn failure(e: &Error) -> GroupFailure {
    let (stage, message) = match e {
        Error::Stage { stage, source, .. } => (stage.to_string(), source.to_string()),
        other => ("select".to_string(), other.to_string()),
    };
    GroupFailure {
        stage,
        class: class_name(e.class()).into(),
        message,
    }
}

/// Fit every group of an already loaded data set. Group failures are
/// recorded in the document; other groups are unaffected.
pub fn fit_snapshots(cfg: &RunConfig, set: &SnapshotSet) -> Result<FitDocument> {
    cfg.validate()?;
    let specs = resolve_groups(cfg, set.sources())?;
    let groups = exec::map_slice(&specs, |spec| {
        let subset = set.filter_sources(|s| spec.sources.contains(s));
        let (times, counts, outcome) = match subset {
            Err(e) => (Vec::new(), Vec::new(), GroupOutcome::Failed(failure(&e.in_stage("select", &spec.id)))),
            Ok(sub) => {
                let outcome = match fit_group(cfg, &sub, &spec.id) {
                    Ok(fit) => GroupOutcome::Fitted(Box::new(fit)),
                    Err(e) => {
                        log::error!("{e}");
                        GroupOutcome::Failed(failure(&e))
                    }
                };
                (sub.times(), sub.counts(), outcome)
            }
        };
        GroupReport {
            id: spec.id.clone(),
            sources: spec.sources.clone(),
            times,
            counts,
            outcome,
        }
    });
    Ok(FitDocument {
        config: cfg.clone(),
        groups,
    })
}

/// Load the inputs, fit every group and write `fit.json` to the output
/// directory.
pub fn run_fit(cfg: &RunConfig) -> Result<FitDocument> {
    cfg.validate()?;
    let set = load_inputs(cfg)?;
    let doc = fit_snapshots(cfg, &set)?;
    doc.save(&cfg.output)?;
    Ok(doc)
}

/// Output of the `stats` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    pub particles: usize,
    pub times: Vec<f64>,
    pub counts: Vec<usize>,
    /// `(t, D̂_t)` per frame.
    pub per_time: Vec<(f64, Mat2)>,
    pub covariance_rate: DiffusionEstimate,
    pub displacement: DiffusionEstimate,
    pub displacement_curve: Vec<DisplacementRow>,
}

pub fn run_stats(set: &SnapshotSet, replicates: usize, seed: u64) -> Result<StatsDocument> {
    Ok(StatsDocument {
        particles: set.total_count(),
        times: set.times(),
        counts: set.counts(),
        per_time: covariance_rate(set, TimeWeighting::Uniform)?.per_time,
        covariance_rate: covariance_rate_estimate(set, replicates, seed)?,
        displacement: displacement_estimate(set, replicates, seed)?,
        displacement_curve: displacement_table(set, replicates, seed)?,
    })
}

// ---------------------------------------------------------------- report

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6e}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Model curve `√(c (D ± 2σ̂) t)`; negative lower bounds are clamped.
fn model_radius(factor: f64, d: f64, t: f64) -> f64 {
    (factor * d.max(0.0) * t).sqrt()
}

fn two_sigma(model: &SparseModel, term: Term) -> f64 {
    2.0 * model.std_error(term).unwrap_or(0.0)
}

fn models_table(doc: &FitDocument) -> Table {
    let mut t = Table::new(&[
        "group", "family", "solver", "term", "units", "weight", "std_error", "two_sigma", "selected",
    ]);
    for g in &doc.groups {
        let GroupOutcome::Fitted(fit) = &g.outcome else { continue };
        for f in &fit.families {
            for m in std::iter::once(&f.model).chain(f.ols.as_ref()) {
                for (j, term) in m.terms.iter().enumerate() {
                    t.push(vec![
                        g.id.clone(),
                        f.family.name().into(),
                        solver_name(m.solver).into(),
                        term.label(),
                        term.units().into(),
                        num(m.weights[j]),
                        num(m.std_errors[j]),
                        num(2.0 * m.std_errors[j]),
                        m.support.contains(&j).to_string(),
                    ]);
                }
            }
        }
    }
    t
}

fn summary_table(doc: &FitDocument) -> Table {
    let mut t = Table::new(&[
        "group",
        "family",
        "solver",
        "terms",
        "support",
        "lambda",
        "r_squared",
        "aic",
        "rows",
        "particles",
        "u_c",
        "v_c",
        "k_c",
        "t_c",
    ]);
    for g in &doc.groups {
        let GroupOutcome::Fitted(fit) = &g.outcome else { continue };
        for f in &fit.families {
            for m in std::iter::once(&f.model).chain(f.ols.as_ref()) {
                let s = f.scales.as_ref();
                t.push(vec![
                    g.id.clone(),
                    f.family.name().into(),
                    solver_name(m.solver).into(),
                    m.terms.len().to_string(),
                    m.support.len().to_string(),
                    opt(m.lambda),
                    opt(m.r_squared),
                    opt(m.aic),
                    m.rows.to_string(),
                    m.particles.to_string(),
                    opt(s.map(|s| s.u_c)),
                    opt(s.map(|s| s.v_c)),
                    opt(s.map(|s| s.k_c)),
                    opt(s.map(|s| s.t_c)),
                ]);
            }
        }
    }
    t
}

fn aic_table(doc: &FitDocument) -> Table {
    let mut t = Table::new(&["group", "model", "reference", "delta_aic"]);
    for g in &doc.groups {
        let GroupOutcome::Fitted(fit) = &g.outcome else { continue };
        for f in &fit.families {
            for c in &f.comparisons {
                t.push(vec![
                    g.id.clone(),
                    f.label(f.model.solver),
                    c.reference.clone(),
                    opt(c.delta_aic),
                ]);
            }
        }
    }
    t
}

fn nondim_table(doc: &FitDocument) -> Table {
    let mut t = Table::new(&[
        "group",
        "family",
        "pi_v_xx",
        "pi_v_xy",
        "pi_v_yy",
        "pi_k_xx",
        "pi_k_xy",
        "pi_k_yy",
        "pi_d_xx",
        "pi_d_xy",
        "pi_d_yy",
        "pi_v_norm",
        "pi_k_norm",
        "pi_d_norm",
        "isotropic_pi_v",
        "isotropic_pi_k",
    ]);
    for g in &doc.groups {
        let GroupOutcome::Fitted(fit) = &g.outcome else { continue };
        for f in &fit.families {
            let Some(p) = &f.pi else { continue };
            let m = |a: &Mat2| [num(a.get(0, 0)), num(a.get(0, 1)), num(a.get(1, 1))];
            let mut row = vec![g.id.clone(), f.family.name().into()];
            row.extend(m(&p.pi_v));
            row.extend(m(&p.pi_k));
            row.extend(m(&p.pi_d));
            row.extend([
                num(p.pi_v_norm),
                num(p.pi_k_norm),
                num(p.pi_d_norm),
                num(p.isotropic_pi_v),
                num(p.isotropic_pi_k),
            ]);
            t.push(row);
        }
    }
    t
}

fn empirical_table(doc: &FitDocument) -> Table {
    let mut t = Table::new(&[
        "group", "method", "d_x", "d_xy", "d_y", "d_eff", "two_sigma", "ci_low", "ci_high",
    ]);
    for g in &doc.groups {
        let GroupOutcome::Fitted(fit) = &g.outcome else { continue };
        for (name, e) in [
            ("covariance_rate", &fit.empirical.covariance_rate),
            ("displacement_fit", &fit.empirical.displacement),
        ] {
            t.push(vec![
                g.id.clone(),
                name.into(),
                num(e.d_x),
                num(e.d_xy),
                num(e.d_y),
                num(e.d_eff),
                num(e.two_sigma),
                num(e.interval.0),
                num(e.interval.1),
            ]);
        }
    }
    t
}

fn displacement_data_table(doc: &FitDocument) -> Table {
    let mut t = Table::new(&["group", "time_hr", "count", "mean_radial_cm", "ci_low_cm", "ci_high_cm"]);
    for g in &doc.groups {
        let GroupOutcome::Fitted(fit) = &g.outcome else { continue };
        for r in &fit.empirical.displacement_curve {
            t.push(vec![
                g.id.clone(),
                num(r.time_hr),
                r.count.to_string(),
                num(r.mean_radial_cm),
                num(r.ci_low_cm),
                num(r.ci_high_cm),
            ]);
        }
    }
    t
}

/// `(curve name, D_eff, 2σ̂)` for every estimate of a group.
fn effective_estimates(fit: &GroupFit) -> Vec<(String, f64, f64)> {
    let mut out = Vec::new();
    for f in &fit.families {
        if f.family != ModelFamily::Effective {
            continue;
        }
        if let Some(d) = f.model.weight(Term::EffectiveDiffusion) {
            out.push(("weak_form_effective".to_owned(), d, two_sigma(&f.model, Term::EffectiveDiffusion)));
        }
    }
    out.push((
        "covariance_rate".into(),
        fit.empirical.covariance_rate.d_eff,
        fit.empirical.covariance_rate.two_sigma,
    ));
    out.push((
        "displacement_fit".into(),
        fit.empirical.displacement.d_eff,
        fit.empirical.displacement.two_sigma,
    ));
    out
}

const CURVE_POINTS: usize = 101;

fn displacement_curve_table(doc: &FitDocument) -> Table {
    let mut t = Table::new(&["group", "curve", "time_hr", "rho_cm", "rho_low_cm", "rho_high_cm"]);
    let pi = std::f64::consts::PI;
    for g in &doc.groups {
        let GroupOutcome::Fitted(fit) = &g.outcome else { continue };
        let (Some(&t0), Some(&t1)) = (g.times.first(), g.times.last()) else { continue };
        for (name, d, s2) in effective_estimates(fit) {
            for k in 0..CURVE_POINTS {
                let time = t0 + (t1 - t0) * k as f64 / (CURVE_POINTS - 1) as f64;
                t.push(vec![
                    g.id.clone(),
                    name.clone(),
                    num(time),
                    num(model_radius(pi, d, time)),
                    num(model_radius(pi, d - s2, time)),
                    num(model_radius(pi, d + s2, time)),
                ]);
            }
        }
    }
    t
}

fn failures_table(doc: &FitDocument) -> Table {
    let mut t = Table::new(&["group", "stage", "class", "message"]);
    for g in &doc.groups {
        if let GroupOutcome::Failed(f) = &g.outcome {
            t.push(vec![g.id.clone(), f.stage.clone(), f.class.clone(), f.message.clone()]);
        }
    }
    t
}

fn pm(m: &SparseModel, term: Term) -> String {
    match (m.weight(term), m.std_error(term)) {
        (Some(w), Some(s)) => format!("{w:.3} ± {:.3}", 2.0 * s),
        _ => "n/a".into(),
    }
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map(|v| format!("{v:.prec$}")).unwrap_or_else(|| "n/a".into())
}

fn render_text(doc: &FitDocument) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Weak-form model fits");
    let _ = writeln!(s, "====================");
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "grid {}x{}x{}, support m = {:?}, degrees p = {:?}, {} group(s)",
        doc.config.domain.grid_nx,
        doc.config.domain.grid_ny,
        doc.config.domain.grid_nt,
        doc.config.test_functions.support,
        doc.config.test_functions.resolved_degrees(),
        doc.groups.len()
    );
    let _ = writeln!(s, "Weights are in cm and hr units; uncertainties are 2σ̂.");
    if doc.groups.is_empty() {
        let _ = writeln!(s, "\nNo groups were fitted.");
        return s;
    }
    for g in &doc.groups {
        let _ = writeln!(s);
        let _ = writeln!(s, "## {}", g.id);
        let sources: Vec<String> = g.sources.iter().map(|x| format!("{}/{}", x.plot_id, x.replicate_id)).collect();
        let _ = writeln!(s, "runs: {}", sources.join(", "));
        let _ = writeln!(s, "counts per snapshot: {:?}", g.counts);
        let fit = match &g.outcome {
            GroupOutcome::Failed(f) => {
                let _ = writeln!(s, "FAILED in {} ({}): {}", f.stage, f.class, f.message);
                continue;
            }
            GroupOutcome::Fitted(fit) => fit,
        };
        for f in &fit.families {
            let _ = writeln!(s);
            let models: Vec<&SparseModel> = std::iter::once(&f.model).chain(f.ols.as_ref()).collect();
            for m in &models {
                let _ = writeln!(
                    s,
                    "{} model ({}): {} of {} terms, R² = {}, AIC = {}{}",
                    f.family.name(),
                    solver_name(m.solver),
                    m.support.len(),
                    m.terms.len(),
                    fmt_opt(m.r_squared, 3),
                    fmt_opt(m.aic, 2),
                    m.lambda.map(|l| format!(", λ = {l:.3e}")).unwrap_or_default()
                );
                match f.family {
                    ModelFamily::Effective => {
                        let _ = writeln!(s, "  D_eff = {}", pm(m, Term::EffectiveDiffusion));
                    }
                    _ => {
                        let _ = writeln!(
                            s,
                            "  [D_x, D_xy, D_y] = [{}, {}, {}]",
                            pm(m, Term::DiffusionXx),
                            pm(m, Term::DiffusionXy),
                            pm(m, Term::DiffusionYy)
                        );
                    }
                }
                let others: Vec<String> = m
                    .support
                    .iter()
                    .filter(|&&j| !m.terms[j].is_diffusion())
                    .map(|&j| format!("{} = {:.3}", m.terms[j].label(), m.weights[j]))
                    .collect();
                if !others.is_empty() {
                    let _ = writeln!(s, "  other terms: {}", others.join(", "));
                }
            }
            if let Some(sc) = &f.scales {
                let _ = writeln!(
                    s,
                    "  V_c = {:.3}, K_c = {:.3}, U_c = {:.3e}, t_c = {:.1}{}",
                    sc.v_c,
                    sc.k_c,
                    sc.u_c,
                    sc.t_c,
                    if f.interaction { " (interaction learned)" } else { "" }
                );
            }
            if let Some(p) = &f.pi {
                let _ = writeln!(
                    s,
                    "  |Π_V| = {:.3}, |Π_K| = {:.3}, |Π_D| = {:.3}",
                    p.pi_v_norm, p.pi_k_norm, p.pi_d_norm
                );
            }
            for c in &f.comparisons {
                let _ = writeln!(s, "  ΔAIC vs {} = {}", c.reference, fmt_opt(c.delta_aic, 2));
            }
            for n in &f.notes {
                let _ = writeln!(s, "  note: {n}");
            }
        }
        let _ = writeln!(s);
        for (name, e) in [
            ("covariance rate", &fit.empirical.covariance_rate),
            ("displacement fit", &fit.empirical.displacement),
        ] {
            let _ = writeln!(
                s,
                "empirical {name}: D_eff = {:.3} ± {:.3} (95% CI {:.3} to {:.3}); [D_x, D_xy, D_y] = [{:.3}, {:.3}, {:.3}]",
                e.d_eff, e.two_sigma, e.interval.0, e.interval.1, e.d_x, e.d_xy, e.d_y
            );
        }
    }
    s
}

/// Render tables and plot data for a fit directory. Writes into `to`
/// (defaults to `from`) and returns the written paths, sorted.
pub fn run_report(from: &Path, to: Option<&Path>) -> Result<Vec<PathBuf>> {
    let doc = FitDocument::load(from)?;
    let dir = to.unwrap_or(from);
    fs::create_dir_all(dir)?;
    let tables = [
        ("models.csv", models_table(&doc)),
        ("summary.csv", summary_table(&doc)),
        ("delta_aic.csv", aic_table(&doc)),
        ("nondim.csv", nondim_table(&doc)),
        ("empirical.csv", empirical_table(&doc)),
        ("displacement_data.csv", displacement_data_table(&doc)),
        ("displacement_curves.csv", displacement_curve_table(&doc)),
        ("failures.csv", failures_table(&doc)),
    ];
    let mut written = Vec::new();
    for (name, table) in tables {
        let path = dir.join(name);
        table.write_csv(&path)?;
        written.push(path);
    }
    let path = dir.join("report.txt");
    fs::write(&path, render_text(&doc))?;
    written.push(path);
    written.sort();
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_round_trips_through_strings() {
        for g in ["combined", "plot", "replicate", "plant"] {
            let parsed = Grouping::from(g.to_owned());
            assert_eq!(String::from(parsed), g);
        }
        assert_eq!(Grouping::from("virus".to_owned()), Grouping::Attribute("virus".into()));
    }

    #[test]
    fn families_constrain_the_library() {
        let base = LibrarySpec::default();
        assert_eq!(ModelFamily::Effective.library(&base, true).terms().len(), 1);
        assert_eq!(ModelFamily::Anisotropic.library(&base, true).terms().len(), 3);
        assert_eq!(ModelFamily::Full.library(&base, false).terms().len(), 84);
        assert_eq!(ModelFamily::Full.library(&base, true).terms().len(), 89);
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg = RunConfig::from_toml("inputs = [\"a.csv\"]\n").unwrap();
        assert_eq!(cfg.groups, vec![Grouping::Combined]);
        assert_eq!(cfg.bootstrap, 1000);
        assert_eq!(cfg.test_functions.support, [10, 10, 6]);
        let err = RunConfig::from_toml("inputs = []\nbogus = 1\n").unwrap_err();
        assert_eq!(err.class(), ErrorClass::Validation);
        let err = RunConfig::from_toml("groups = [\"plant\"]\n").unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }

    #[test]
    fn groups_resolve_in_stable_order() {
        let src = |p: &str, r: &str| Source {
            plot_id: p.into(),
            replicate_id: r.into(),
        };
        let sources = vec![src("b", "1"), src("a", "2"), src("a", "1")];
        let mut cfg = RunConfig {
            groups: vec![Grouping::Combined, Grouping::Plot, Grouping::Replicate, Grouping::Attribute("plant".into())],
            ..Default::default()
        };
        for (p, v) in [("a", "x"), ("b", "x")] {
            cfg.plot_attributes.entry(p.into()).or_default().insert("plant".into(), v.into());
        }
        let ids: Vec<String> = resolve_groups(&cfg, &sources).unwrap().into_iter().map(|g| g.id).collect();
        assert_eq!(ids, ["combined", "plot=a", "plot=b", "run=a/1", "run=a/2", "run=b/1", "plant=x"]);
    }
}
