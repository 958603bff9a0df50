//! Pipeline configuration, stage execution and artifact persistence.
//!
//! Every stage reads its inputs from the output directory and writes one
//! artifact, so any stage can be rerun alone once its upstream artifacts exist.
//! JSON artifacts are wrapped in a versioned envelope; floats are written as
//! shortest round-trip decimals.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analyze::{analyze, analyze_rows, AnalysisConfig, Representation};
use crate::data::{DataSlice, Dataset, ExternalKnowledge, Schema};
use crate::error::{Error, Result};
use crate::extract::{
    budget_count, check_covering, pu_extract, select_attributes, ExtractionResult, PuParams,
};
use crate::extrapolate::{extrapolate, ExtrapolatedRepresentation};
use crate::metrics::{
    avg_mutual_info, cond_entropy, discretize, extrapolation_accuracy, independence_psi,
    is_kappa_independent, is_reconstructable, phi, privacy_entropy, recon_error, xi, DistanceKind,
    MetricReport, PsiKind, DEFAULT_BINS, DEFAULT_GRID,
};
use crate::model::{assign_subsets, fit_model, DataModel, ModelOptions};
use crate::request::{validate_request, CheckedRequest, Request};
use crate::seed::stage_seed;
use crate::synth::{project, synthesize, SynthesisReport, SynthesisSpec, ValidityPolicy};

pub const FORMAT: &str = "detangle";
pub const FORMAT_VERSION: u32 = 1;

pub const EXTRACTION_FILE: &str = "extraction.json";
pub const MODEL_FILE: &str = "model.json";
pub const REPRESENTATION_FILE: &str = "representation.json";
pub const EXTRAPOLATED_FILE: &str = "extrapolated.json";
pub const SYNTHETIC_FILE: &str = "synthetic.csv";
pub const SYNTHESIS_REPORT_FILE: &str = "synthesis.json";
pub const METRICS_FILE: &str = "metrics.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Extract,
    Model,
    Analyze,
    Extrapolate,
    Synth,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Extract,
        Stage::Model,
        Stage::Analyze,
        Stage::Extrapolate,
        Stage::Synth,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Model => "model",
            Stage::Analyze => "analyze",
            Stage::Extrapolate => "extrapolate",
            Stage::Synth => "synth",
            Stage::Evaluate => "evaluate",
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageToggles {
    #[serde(default = "yes")]
    pub extrapolate: bool,
    #[serde(default = "yes")]
    pub synth: bool,
    #[serde(default = "yes")]
    pub evaluate: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            extrapolate: true,
            synth: true,
            evaluate: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub options: ModelOptions,
    /// Categorical attribute whose categories define the subsets `V_t`.
    #[serde(default)]
    pub grouping: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default = "default_n_out")]
    pub n_out: usize,
    #[serde(default)]
    pub policy: ValidityPolicy,
    #[serde(default)]
    pub project: bool,
}

fn default_n_out() -> usize {
    1000
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_out: default_n_out(),
            policy: ValidityPolicy::Clamp,
            project: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub bins: usize,
    pub grid: usize,
    pub kappa: f64,
    pub epsilon_recon: f64,
    pub epsilon_extrapolate: f64,
    pub lambda_ind: f64,
    pub distance: DistanceKind,
    /// CSV sample drawn under the extrapolation condition, for accuracy checks.
    pub reference: Option<PathBuf>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            bins: DEFAULT_BINS,
            grid: DEFAULT_GRID,
            kappa: 0.1,
            epsilon_recon: 0.1,
            epsilon_extrapolate: 0.1,
            lambda_ind: 1.0,
            distance: DistanceKind::Tv,
            reference: None,
        }
    }
}

/// The pipeline configuration document. Relative paths are resolved against
/// the directory of the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub data: PathBuf,
    pub schema: PathBuf,
    pub request: PathBuf,
    #[serde(default)]
    pub knowledge: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub extract: PuParams,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data);
        resolve(&mut cfg.schema);
        resolve(&mut cfg.request);
        resolve(&mut cfg.out);
        if let Some(k) = cfg.knowledge.as_mut() {
            resolve(k);
        }
        if let Some(r) = cfg.evaluate.reference.as_mut() {
            resolve(r);
        }
        Ok(cfg)
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Serializes `body` inside the versioned envelope.
pub fn to_artifact<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    let doc = json!({
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "kind": kind,
        "body": body,
    });
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

/// Parses an artifact, checking the envelope's format, version and kind.
pub fn from_artifact<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let mut doc: serde_json::Value = serde_json::from_str(text)?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Error::Artifact("artifact is not a JSON object".into()))?;
    if obj.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
        return Err(Error::Artifact("missing or foreign format tag".into()));
    }
    match obj.get("version").and_then(|v| v.as_u64()) {
        None => return Err(Error::Artifact("missing version tag".into())),
        Some(v) if v != u64::from(FORMAT_VERSION) => {
            return Err(Error::Artifact(format!(
                "artifact version {v} is not supported (expected {FORMAT_VERSION})"
            )))
        }
        Some(_) => {}
    }
    let found = obj.get("kind").and_then(|v| v.as_str()).unwrap_or("");
    if found != kind {
        return Err(Error::Artifact(format!(
            "expected a {kind} artifact, found {found:?}"
        )));
    }
    let body = obj
        .remove("body")
        .ok_or_else(|| Error::Artifact("artifact has no body".into()))?;
    Ok(serde_json::from_value(body)?)
}

pub fn save_artifact<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, to_artifact(kind, body)?).map_err(|e| Error::io(path, e))
}

pub fn load_artifact<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_artifact(kind, &text)
}

/// Inputs shared by every stage.
struct Inputs {
    data: Dataset,
    request: CheckedRequest,
    knowledge: ExternalKnowledge,
}

fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    let schema = Schema::from_json_file(&cfg.schema)?;
    let data = Dataset::load_csv(&cfg.data, &schema)?;
    let request = validate_request(&Request::from_json_file(&cfg.request)?, &schema)?;
    let knowledge = match &cfg.knowledge {
        Some(p) => ExternalKnowledge::from_json_file(p)?,
        None => ExternalKnowledge::default(),
    };
    knowledge.validate(&schema)?;
    Ok(Inputs {
        data,
        request,
        knowledge,
    })
}

fn extracted_slice(inputs: &Inputs, ex: &ExtractionResult) -> Result<DataSlice> {
    inputs.data.slice(&ex.rows, &ex.cols)
}

fn extrapolation_enabled(cfg: &PipelineConfig, inputs: &Inputs) -> bool {
    cfg.stages.extrapolate && inputs.request.extrapolation.is_some()
}

fn run_extract(cfg: &PipelineConfig, inputs: &Inputs) -> Result<()> {
    let req = &inputs.request;
    let mut targets = req.select.clone();
    if let Some(u) = req.utility {
        if !targets.contains(&u) {
            targets.push(u);
        }
    }
    let cols = select_attributes(&inputs.data, &targets, req.alpha_c)?;
    let result = pu_extract(
        &inputs.data,
        &req.condition,
        &req.select,
        req.alpha_r,
        req.alpha_c,
        &cols,
        &cfg.extract,
        stage_seed(cfg.seed, Stage::Extract.name()),
    )?;
    log::info!(
        "extracted {} of {} rows and {} of {} attributes",
        result.n_extracted(),
        inputs.data.n(),
        result.m_extracted(),
        inputs.data.m()
    );
    save_artifact(&cfg.artifact(EXTRACTION_FILE), "extraction", &result)
}

fn run_model(cfg: &PipelineConfig, inputs: &Inputs) -> Result<()> {
    let ex: ExtractionResult = load_artifact(&cfg.artifact(EXTRACTION_FILE), "extraction")?;
    let slice = extracted_slice(inputs, &ex)?;
    let model = fit_model(
        &slice,
        inputs.request.beta,
        &cfg.model.options,
        &inputs.knowledge,
    )?;
    let model = assign_subsets(&model, &slice, cfg.model.grouping.as_deref())?;
    log::info!(
        "model has {} latents over encoded width {}",
        model.dim(),
        model.encoded_width()
    );
    save_artifact(&cfg.artifact(MODEL_FILE), "model", &model)
}

fn run_analyze(cfg: &PipelineConfig, inputs: &Inputs) -> Result<()> {
    let ex: ExtractionResult = load_artifact(&cfg.artifact(EXTRACTION_FILE), "extraction")?;
    let model: DataModel = load_artifact(&cfg.artifact(MODEL_FILE), "model")?;
    let slice = extracted_slice(inputs, &ex)?;
    let rep = analyze(
        &model,
        &slice,
        &cfg.analysis,
        stage_seed(cfg.seed, Stage::Analyze.name()),
    )?;
    save_artifact(&cfg.artifact(REPRESENTATION_FILE), "representation", &rep)
}

fn run_extrapolate(cfg: &PipelineConfig, inputs: &Inputs) -> Result<()> {
    let Some(p) = &inputs.request.extrapolation else {
        log::info!("request has no extrapolation query; skipping");
        return Ok(());
    };
    let ex: ExtractionResult = load_artifact(&cfg.artifact(EXTRACTION_FILE), "extraction")?;
    let model: DataModel = load_artifact(&cfg.artifact(MODEL_FILE), "model")?;
    let rep: Representation = load_artifact(&cfg.artifact(REPRESENTATION_FILE), "representation")?;
    let slice = extracted_slice(inputs, &ex)?;
    let out = extrapolate(&model, &rep, &slice, p)?;
    log::info!("extrapolation level {:?}", out.level);
    save_artifact(&cfg.artifact(EXTRAPOLATED_FILE), "extrapolated", &out)
}

fn run_synth(cfg: &PipelineConfig, inputs: &Inputs) -> Result<()> {
    let model: DataModel = load_artifact(&cfg.artifact(MODEL_FILE), "model")?;
    let spec = SynthesisSpec {
        n_out: cfg.synth.n_out,
        mixing: None,
        policy: cfg.synth.policy,
        project: cfg.synth.project,
        seed: stage_seed(cfg.seed, Stage::Synth.name()),
    };
    let (rep, ext) = if extrapolation_enabled(cfg, inputs) {
        let ext: ExtrapolatedRepresentation =
            load_artifact(&cfg.artifact(EXTRAPOLATED_FILE), "extrapolated")?;
        (ext.representation.clone(), Some(ext))
    } else {
        (
            load_artifact(&cfg.artifact(REPRESENTATION_FILE), "representation")?,
            None,
        )
    };
    let mut out = synthesize(&model, &rep, &spec)?;
    if let (Some(ext), Some(p)) = (&ext, &inputs.request.extrapolation) {
        if spec.project {
            out.data = project(&model, &out.data, &p.select)?;
        }
        out.report.level = Some(ext.level);
        out.report.ess = Some(ext.ess.clone());
        out.report.warnings = ext.warnings.clone();
    }
    out.data.save_csv(cfg.artifact(SYNTHETIC_FILE))?;
    save_artifact(
        &cfg.artifact(SYNTHESIS_REPORT_FILE),
        "synthesis",
        &out.report,
    )
}

/// Utility values per extracted row: the designated attribute, or the joint
/// cell of the target attributes.
fn utility_values(inputs: &Inputs, ex: &ExtractionResult, bins: usize) -> Vec<f64> {
    let rows = &ex.rows;
    let col = |j: usize| -> Vec<f64> {
        rows.iter()
            .map(|&i| inputs.data.record(i)[j].as_f64())
            .collect()
    };
    match inputs.request.utility {
        Some(u) => col(u),
        None => {
            let binned: Vec<Vec<usize>> = inputs
                .request
                .select
                .iter()
                .map(|&j| discretize(&col(j), bins))
                .collect();
            let mut cells: Vec<Vec<usize>> = (0..rows.len())
                .map(|i| binned.iter().map(|b| b[i]).collect())
                .collect();
            let mut keys = cells.clone();
            keys.sort();
            keys.dedup();
            cells
                .iter_mut()
                .map(|c| keys.binary_search(c).unwrap_or(0) as f64)
                .collect()
        }
    }
}

fn bool_metric(report: &mut MetricReport, name: &str, ok: bool) {
    report.push_check(name, f64::from(u8::from(ok)), "bool", 1.0, ok);
}

/// Computes the metric report from the persisted artifacts.
pub fn evaluate_artifacts(cfg: &PipelineConfig) -> Result<MetricReport> {
    let inputs = load_inputs(cfg)?;
    evaluate_with(cfg, &inputs)
}

fn evaluate_with(cfg: &PipelineConfig, inputs: &Inputs) -> Result<MetricReport> {
    let ev = &cfg.evaluate;
    let req = &inputs.request;
    let ex: ExtractionResult = load_artifact(&cfg.artifact(EXTRACTION_FILE), "extraction")?;
    let model: DataModel = load_artifact(&cfg.artifact(MODEL_FILE), "model")?;
    let slice = extracted_slice(inputs, &ex)?;
    let latents = model.encode_data(&slice.data)?;

    let mut r = MetricReport::default();
    r.push("rows_extracted", ex.n_extracted() as f64, "count");
    r.push("attributes_extracted", ex.m_extracted() as f64, "count");
    bool_metric(&mut r, "tau_covering", check_covering(&ex, ex.tau));
    bool_metric(
        &mut r,
        "row_budget",
        ex.n_extracted() <= budget_count(req.alpha_r, inputs.data.n()),
    );
    bool_metric(
        &mut r,
        "column_budget",
        ex.m_extracted() <= budget_count(req.alpha_c, inputs.data.m()),
    );
    bool_metric(&mut r, "beta_compact", model.dim() <= req.beta);
    r.push("latent_dim", model.dim() as f64, "count");

    let err = recon_error(&model, &slice.data)?;
    r.push_check(
        "recon_mse",
        err,
        "mse",
        ev.epsilon_recon,
        is_reconstructable(err, ev.epsilon_recon),
    );
    let psi_cov = independence_psi(&latents, PsiKind::Cov, ev.bins)?;
    r.push_check(
        "psi_cov",
        psi_cov,
        "ratio",
        ev.kappa,
        is_kappa_independent(psi_cov, ev.kappa),
    );
    let psi_mi = independence_psi(&latents, PsiKind::Mi, ev.bins)?;
    r.push("psi_mi", psi_mi, "nats");

    let z = utility_values(inputs, &ex, ev.bins);
    let h_uti = cond_entropy(&z, &latents, ev.bins)?;
    let h_pri = privacy_entropy(&latents, ev.bins)?;
    r.push("h_utility_given_latents", h_uti, "nats");
    r.push("h_record_given_latents", h_pri, "nats");
    r.push("phi", phi(h_uti, h_pri, req.lambda), "nats");

    let columns: Vec<Vec<f64>> = (0..slice.data.m()).map(|j| slice.data.column(j)).collect();
    let mut h_data = 0.0;
    for c in &columns {
        h_data += cond_entropy(c, &latents, ev.bins)?;
    }
    h_data /= columns.len() as f64;
    r.push("h_data_given_latents", h_data, "nats");
    r.push("xi", xi(h_data, psi_cov, ev.lambda_ind), "nats");
    let targets: Vec<Vec<f64>> = req
        .select
        .iter()
        .filter_map(|j| slice.cols.iter().position(|c| c == j))
        .map(|k| columns[k].clone())
        .collect();
    r.push(
        "avg_mutual_info",
        avg_mutual_info(&latents, &targets, ev.bins)?,
        "nats",
    );

    if extrapolation_enabled(cfg, inputs) {
        let ext: ExtrapolatedRepresentation =
            load_artifact(&cfg.artifact(EXTRAPOLATED_FILE), "extrapolated")?;
        r.push(
            "extrapolation_level",
            f64::from(u8::from(ext.level)),
            "level",
        );
        let min_ess = ext.ess.iter().copied().fold(f64::INFINITY, f64::min);
        r.push("min_effective_sample_size", min_ess, "count");
        if let Some(path) = &ev.reference {
            let reference = Dataset::load_csv(path, inputs.data.schema())?;
            let all: Vec<usize> = (0..reference.n()).collect();
            let reference = reference.slice(&all, &model.cols)?.data;
            let truth = analyze_rows(
                &model,
                &reference,
                &cfg.analysis,
                stage_seed(cfg.seed, Stage::Analyze.name()),
            )?;
            let d = extrapolation_accuracy(&ext, &truth, ev.distance, ev.grid)?;
            r.push_check(
                "extrapolation_distance",
                d,
                "distance",
                ev.epsilon_extrapolate,
                d < ev.epsilon_extrapolate,
            );
        }
    }

    if cfg.stages.synth {
        let synth_schema = if cfg.synth.project && extrapolation_enabled(cfg, inputs) {
            let select = &req
                .extrapolation
                .as_ref()
                .map(|p| p.select.clone())
                .unwrap_or_default();
            let local: Vec<usize> = model
                .cols
                .iter()
                .enumerate()
                .filter(|(_, j)| select.contains(j))
                .map(|(k, _)| k)
                .collect();
            model.schema.project(&local)?
        } else {
            model.schema.clone()
        };
        // Loading re-validates every cell against the schema.
        let synthetic = Dataset::load_csv(cfg.artifact(SYNTHETIC_FILE), &synth_schema);
        bool_metric(&mut r, "synthetic_valid", synthetic.is_ok());
        if let Ok(s) = synthetic {
            r.push("synthetic_rows", s.n() as f64, "count");
        }
        let rep: SynthesisReport =
            load_artifact(&cfg.artifact(SYNTHESIS_REPORT_FILE), "synthesis")?;
        r.push("synthetic_clamped_rows", rep.clamped as f64, "count");
    }
    Ok(r)
}

fn run_evaluate(cfg: &PipelineConfig, inputs: &Inputs) -> Result<()> {
    let report = evaluate_with(cfg, inputs)?;
    let path = cfg.artifact(METRICS_FILE);
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    fs::write(&path, report.to_text()).map_err(|e| Error::io(&path, e))
}

/// Runs one stage, tagging any failure with the stage name.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<()> {
    let tag = |e: Error| Error::Stage {
        stage: stage.name(),
        source: Box::new(e),
    };
    let inputs = load_inputs(cfg).map_err(tag)?;
    run_loaded(cfg, &inputs, stage).map_err(tag)
}

fn run_loaded(cfg: &PipelineConfig, inputs: &Inputs, stage: Stage) -> Result<()> {
    log::info!("stage {}", stage.name());
    match stage {
        Stage::Extract => run_extract(cfg, inputs),
        Stage::Model => run_model(cfg, inputs),
        Stage::Analyze => run_analyze(cfg, inputs),
        Stage::Extrapolate => run_extrapolate(cfg, inputs),
        Stage::Synth => run_synth(cfg, inputs),
        Stage::Evaluate => run_evaluate(cfg, inputs),
    }
}

/// Runs every enabled stage in order. Artifacts of completed stages are kept on failure.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<()> {
    let inputs = load_inputs(cfg).map_err(|e| Error::Stage {
        stage: "setup",
        source: Box::new(e),
    })?;
    for stage in Stage::ALL {
        let enabled = match stage {
            Stage::Extrapolate => extrapolation_enabled(cfg, &inputs),
            Stage::Synth => cfg.stages.synth,
            Stage::Evaluate => cfg.stages.evaluate,
            _ => true,
        };
        if enabled {
            run_loaded(cfg, &inputs, stage).map_err(|e| Error::Stage {
                stage: stage.name(),
                source: Box::new(e),
            })?;
        }
    }
    Ok(())
}
