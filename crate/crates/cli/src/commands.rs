use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use nutrigraph::data::{
    load_dataset_with_dim, parse_dataset, save_dataset, SubjectRecord, EMBED_DIM,
};
use nutrigraph::gat::GatModel;
use nutrigraph::kb::{DistanceMetric, KnowledgeBase};
use nutrigraph::metrics::{decision_curve, default_dca_grid, DecisionPoint};
use nutrigraph::predict::predict;
use nutrigraph::synthetic::{generate_synthetic_cohort, SyntheticConfig};
use nutrigraph::train::{
    alpha_density, evaluate_subjects, prepare_subjects, run_ablation, train, AblationAxis,
    AlphaDensity, EvalReport, TrainConfig, TrainSummary,
};
use serde::Serialize;

use crate::args::{self, AblateAxis, Cli, Command, Format, SweepAxis, Toggle, TrainShared};
use crate::output;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn is_usage(&self) -> bool {
        matches!(self, CliError::Usage(_))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<nutrigraph::Error> for CliError {
    fn from(e: nutrigraph::Error) -> Self {
        match e {
            nutrigraph::Error::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn with_path<T>(path: &Path, r: std::result::Result<T, nutrigraph::Error>) -> Result<T> {
    r.map_err(|e| match CliError::from(e) {
        CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
    })
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(&text)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Embedding length of the first record in a dataset file.
fn sniff_embed_dim(path: &Path) -> Result<usize> {
    let file =
        fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SubjectRecord = serde_json::from_str(&line).map_err(|e| {
            CliError::Data(format!(
                "{}: malformed record at line 1: {e}",
                path.display()
            ))
        })?;
        return Ok(rec.embed_dim());
    }
    Ok(EMBED_DIM)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::BuildKb(a) => build_kb(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => run_predict(a),
        Command::Ablate(a) => {
            let axis = match a.axis {
                AblateAxis::Pose => AblationAxis::Pose,
                AblateAxis::Architecture => AblationAxis::Architecture,
                AblateAxis::Metric => AblationAxis::Metric,
            };
            table_command(&a.shared, axis, a.values.as_deref(), a.out.as_deref())
        }
        Command::Sweep(a) => {
            let axis = match a.axis {
                SweepAxis::K => AblationAxis::K,
                SweepAxis::TauClass => AblationAxis::TauClass,
                SweepAxis::Gamma => AblationAxis::Gamma,
                SweepAxis::TauReg => AblationAxis::TauReg,
            };
            table_command(&a.shared, axis, a.values.as_deref(), a.out.as_deref())
        }
        Command::Serve(a) => serve(a),
    }
}

#[derive(Serialize)]
struct GenDataOutput {
    out: String,
    subjects: usize,
    positives: usize,
    seed: u64,
}

fn gen_data(a: args::GenData) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<SyntheticConfig>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => SyntheticConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.n {
        cfg.n_subjects = v;
    }
    if let Some(v) = a.positive_fraction {
        cfg.positive_fraction = v;
    }
    if let Some(v) = a.shift {
        cfg.domain_shift = v;
    }
    if let Some(v) = a.prefix {
        cfg.id_prefix = v;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let records = generate_synthetic_cohort(&cfg)?;
    with_path(&a.out, save_dataset(&a.out, &records))?;
    print_json(&GenDataOutput {
        out: a.out.display().to_string(),
        subjects: records.len(),
        positives: records.iter().filter(|r| r.class_label == Some(1)).count(),
        seed: cfg.seed,
    })
}

#[derive(Serialize)]
struct BuildKbOutput {
    out: String,
    entries: usize,
    metric: DistanceMetric,
    dim: usize,
}

fn build_kb(a: args::BuildKb) -> Result<()> {
    let dim = sniff_embed_dim(&a.data)?;
    let records = with_path(&a.data, load_dataset_with_dim(&a.data, dim))?;
    let kb = KnowledgeBase::build(&records, a.metric.into())?;
    with_path(&a.out, kb.save(&a.out))?;
    print_json(&BuildKbOutput {
        out: a.out.display().to_string(),
        entries: kb.len(),
        metric: kb.metric(),
        dim: kb.dim(),
    })
}

struct Setup {
    cfg: TrainConfig,
    records: Vec<SubjectRecord>,
    kb: Option<KnowledgeBase>,
}

fn load_setup(s: &TrainShared) -> Result<Setup> {
    let mut cfg = match &s.config {
        Some(p) => {
            TrainConfig::load(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = s.seed {
        cfg.seed = seed;
    }
    if let Some(t) = s.retrieval {
        cfg.retrieval_enabled = t == Toggle::On;
    }
    cfg.validate()?;
    let records = with_path(
        &s.data,
        load_dataset_with_dim(&s.data, cfg.model.in_dim - 1),
    )?;
    let kb = match &s.kb {
        Some(p) => {
            let kb = with_path(p, KnowledgeBase::load(p))?;
            Some(match s.metric {
                Some(m) => KnowledgeBase::from_entries(kb.entries().to_vec(), m.into())?,
                None => kb,
            })
        }
        None => None,
    };
    if cfg.retrieval_enabled && kb.is_none() {
        return Err(CliError::Usage(
            "retrieval is on but no --kb was given".into(),
        ));
    }
    Ok(Setup { cfg, records, kb })
}

#[derive(Serialize)]
struct TrainOutput {
    summary: TrainSummary,
    alpha_density: Option<AlphaDensity>,
    checkpoints: Vec<String>,
}

fn run_train(a: args::Train) -> Result<()> {
    let setup = load_setup(&a.shared)?;
    let mut outcome = train(&setup.records, setup.kb.as_ref(), &setup.cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    let mut checkpoints = Vec::new();
    for (model, report) in outcome.models.iter().zip(outcome.reports.iter_mut()) {
        let name = format!("fold{}.model.json", report.fold);
        with_path(&a.out.join(&name), model.save(a.out.join(&name)))?;
        report.checkpoint = Some(name.clone());
        write_json(
            &a.out.join(format!("fold{}.report.json", report.fold)),
            report,
        )?;
        checkpoints.push(name);
    }
    let out = TrainOutput {
        summary: outcome.summary.clone(),
        alpha_density: setup
            .cfg
            .retrieval_enabled
            .then(|| alpha_density(&outcome.reports).ok())
            .flatten(),
        checkpoints,
    };
    write_json(&a.out.join("summary.json"), &out)?;
    match a.shared.format {
        Format::Json => print_json(&out),
        Format::Table => {
            let mut text = output::summary_table(&out.summary);
            if let Some(d) = out.alpha_density {
                text.push_str(&output::alpha_density_line(&d));
                text.push('\n');
            }
            emit(&text)
        }
    }
}

#[derive(Serialize)]
struct EvaluateOutput {
    threshold: f64,
    retrieval_used: bool,
    report: EvalReport,
    decision_curve: Vec<DecisionPoint>,
}

fn load_model_and_kb(model: &Path, kb: Option<&Path>) -> Result<(GatModel, Option<KnowledgeBase>)> {
    let model = with_path(model, GatModel::load(model))?;
    let kb = kb
        .map(|p| with_path(p, KnowledgeBase::load(p)))
        .transpose()?;
    Ok((model, kb))
}

fn evaluate(a: args::Evaluate) -> Result<()> {
    let (model, kb) = load_model_and_kb(&a.model, a.kb.as_deref())?;
    if model.retrieval_enabled && kb.is_none() {
        return Err(CliError::Usage(
            "the model uses retrieval; pass --kb".into(),
        ));
    }
    let records = with_path(
        &a.data,
        load_dataset_with_dim(&a.data, model.config.in_dim - 1),
    )?;
    let kb = kb.as_ref().filter(|_| model.retrieval_enabled);
    let subjects = prepare_subjects(&records, kb, &model.retrieval, model.config.age_scale, None)?;
    let (report, preds) = evaluate_subjects(&model, &subjects)?;
    let (probs, labels): (Vec<f64>, Vec<u8>) = preds
        .iter()
        .zip(&subjects)
        .filter_map(|(p, s)| s.class_label.map(|y| (p.fused_probability, y)))
        .unzip();
    let curve = if probs.is_empty() {
        Vec::new()
    } else {
        decision_curve(&probs, &labels, &default_dca_grid())?
    };
    let out = EvaluateOutput {
        threshold: model.threshold,
        retrieval_used: kb.is_some(),
        report,
        decision_curve: curve,
    };
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        write_json(&dir.join("evaluation.json"), &out)?;
        fs::write(
            dir.join("decision_curve.csv"),
            output::decision_curve_csv(&out.decision_curve),
        )?;
    }
    match a.format {
        Format::Json => print_json(&out),
        Format::Table => emit(&output::evaluation_table(&out.report, out.threshold)),
    }
}

fn run_predict(a: args::Predict) -> Result<()> {
    let (model, kb) = load_model_and_kb(&a.model, a.kb.as_deref())?;
    let file = fs::File::open(&a.subject)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.subject.display())))?;
    let records = with_path(
        &a.subject,
        parse_dataset(std::io::BufReader::new(file), model.config.in_dim - 1),
    )?;
    let [record] = records.as_slice() else {
        return Err(CliError::Data(format!(
            "{}: expected exactly one subject, found {}",
            a.subject.display(),
            records.len()
        )));
    };
    let result = predict(&model, kb.as_ref(), record)?;
    print_json(&result)
}

fn table_command(
    s: &TrainShared,
    axis: AblationAxis,
    values: Option<&[String]>,
    out: Option<&Path>,
) -> Result<()> {
    let setup = load_setup(s)?;
    let kb = setup
        .kb
        .ok_or_else(|| CliError::Usage(format!("{axis} needs --kb")))?;
    let table = run_ablation(&setup.records, &kb, &setup.cfg, axis, values)?;
    if let Some(path) = out {
        write_json(path, &table)?;
    }
    match s.format {
        Format::Json => print_json(&table),
        Format::Table => emit(&table.to_text()),
    }
}

fn serve(a: args::Serve) -> Result<()> {
    let (model, kbs) = nutrigraph_service::load_files(&a.model, &a.kb)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let state = nutrigraph_service::ServiceState::with(model, kbs, None)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let addr = SocketAddr::from(([127, 0, 0, 1], a.port));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(nutrigraph_service::serve(
        Arc::new(state),
        addr,
        a.static_dir,
    ))?;
    Ok(())
}
