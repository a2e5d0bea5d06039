//! Headless driver: one session per process, configured from a TOML file.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pipeplan_core::evaluator::{predict, EvalError, ModelArtifact};
use pipeplan_core::input::{FieldError, SessionConfig, SweepMode, TrainingInput};
use pipeplan_core::kgstore::{shared, KgStore, StoreError};
use pipeplan_core::orchestrator::{
    create_session, run_training, SessionError, SessionOutcome, SessionSetup, ARTIFACT_FILE,
};
use pipeplan_core::rl::RlConfig;
use serde::Deserialize;
use serde_json::{Map, Value};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const JOURNAL_FILE: &str = "journal.ndjson";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Invalid(_) | SessionError::DataInput(_) => CliError::Invalid(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn field_errors(errors: &[FieldError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SessionSection {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub max_outer_iterations: Option<usize>,
    pub sweep_mode: Option<SweepMode>,
    pub rl: Option<RlConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// A parsed run configuration. Top-level keys are `TrainingInput` fields;
/// `[session]` and `[output]` hold everything else.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub session: SessionConfig,
    pub out_dir: Option<PathBuf>,
}

const INPUT_KEYS: &[&str] = &[
    "modelId",
    "minimumAccuracy",
    "targetName",
    "dataInput",
    "fields",
    "folds",
    "selectionCriteria",
    "candidateModels",
    "candidatePreprocessors",
    "modelProfilingEpisode",
    "modelSearchEpisode",
];

impl RunConfig {
    /// Parses `text`; a relative `dataInput` is resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<RunConfig, CliError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        let session: SessionSection = take_section(&mut table, "session")?;
        let output: OutputSection = take_section(&mut table, "output")?;
        let known: BTreeSet<&str> = INPUT_KEYS.iter().copied().collect();
        if let Some(k) = table.keys().find(|k| !known.contains(k.as_str())) {
            return Err(CliError::Invalid(format!("config: unknown key `{k}`")));
        }
        let mut input: TrainingInput =
            toml::Value::Table(table).try_into().map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        let data = Path::new(&input.data_input);
        if data.is_relative() && !input.data_input.contains("://") {
            input.data_input = base.join(data).to_string_lossy().into_owned();
        }
        let mut config = SessionConfig::new(input);
        config.seed = session.seed.unwrap_or(config.seed);
        config.workers = session.workers.unwrap_or(config.workers);
        config.max_outer_iterations = session.max_outer_iterations.unwrap_or(config.max_outer_iterations);
        config.sweep_mode = session.sweep_mode.unwrap_or(config.sweep_mode);
        config.rl = session.rl.unwrap_or(config.rl);
        let out_dir = output.dir.map(|d| if d.is_relative() { base.join(d) } else { d });
        Ok(RunConfig { session: config, out_dir })
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

fn take_section<T: Default + for<'de> Deserialize<'de>>(table: &mut toml::Table, key: &str) -> Result<T, CliError> {
    match table.remove(key) {
        None => Ok(T::default()),
        Some(v) => v.try_into().map_err(|e| CliError::Invalid(format!("config [{key}]: {e}"))),
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunFlags {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

/// Runs one session and writes the report files, the artifact and the
/// journal into the output directory, which is created if needed.
pub fn run(config: RunConfig, flags: &RunFlags) -> Result<(SessionOutcome, PathBuf), CliError> {
    let mut session = config.session;
    session.seed = flags.seed.unwrap_or(session.seed);
    session.workers = flags.workers.unwrap_or(session.workers);
    session.validate().map_err(|e| CliError::Invalid(field_errors(&e)))?;
    let out = flags
        .out_dir
        .clone()
        .or(config.out_dir)
        .ok_or_else(|| CliError::Invalid("no output directory: pass --out or set [output] dir".into()))?;
    fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let journal = out.join(JOURNAL_FILE);
    if journal.exists() {
        fs::remove_file(&journal).map_err(|e| CliError::Runtime(format!("cannot reset journal: {e}")))?;
    }
    let _ = fs::remove_file(out.join(ARTIFACT_FILE));
    let store = shared(KgStore::open(&journal)?);
    let session_id = create_session(&store, &session, None)?;
    let mut setup = SessionSetup::new(store);
    setup.artifact_dir = Some(out.clone());
    let outcome = run_training(setup, &session_id)?;
    let write = |name: &str, text: &str| {
        fs::write(out.join(name), text).map_err(|e| CliError::Runtime(format!("cannot write {name}: {e}")))
    };
    write(REPORT_JSON, &outcome.report.to_json())?;
    write(REPORT_MD, &outcome.report.to_markdown())?;
    Ok((outcome, out))
}

/// Predicts every row of `csv_path` and writes `row,label,confidence` lines.
pub fn classify(artifact_path: &Path, csv_path: &Path, out: &mut impl Write) -> Result<usize, CliError> {
    let artifact = ModelArtifact::load(artifact_path).map_err(|e| CliError::Invalid(format!("model: {e}")))?;
    let mut reader = csv::Reader::from_path(csv_path)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", csv_path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::Invalid(format!("data: {e}")))?.clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Invalid(format!("data: {e}")))?;
        let row: Map<String, Value> = headers
            .iter()
            .zip(record.iter())
            .map(|(h, v)| {
                let v = v.trim();
                (h.to_string(), if v.is_empty() { Value::Null } else { Value::String(v.to_string()) })
            })
            .collect();
        rows.push(Value::Object(row));
    }
    let labels = predict(&artifact, &rows).map_err(|e| match e {
        EvalError::SchemaMismatch(_) => CliError::Invalid(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    })?;
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(["row", "label", "confidence"]).map_err(io)?;
    for (i, l) in labels.iter().enumerate() {
        let conf = l.confidence.map(|c| format!("{c:.6}")).unwrap_or_default();
        w.write_record([i.to_string(), l.value.clone(), conf]).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(labels.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_resolves_paths() {
        let text = r#"
            dataInput = "data/x.csv"
            targetName = "y"
            candidateModels = ["logistic_classifier"]
            [session]
            seed = 9
            sweepMode = "grid"
            [output]
            dir = "out"
        "#;
        let c = RunConfig::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(c.session.input.data_input, "/cfg/data/x.csv");
        assert_eq!(c.session.seed, 9);
        assert_eq!(c.session.sweep_mode, SweepMode::Grid);
        assert_eq!(c.session.input.folds, 10);
        assert_eq!(c.out_dir.as_deref(), Some(Path::new("/cfg/out")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("dataInput='a'\ntargetName='y'\ncandidateModel=[]", Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_INVALID);
        assert!(err.to_string().contains("candidateModel"));
        let err = RunConfig::parse("dataInput='a'\ntargetName='y'\n[session]\nseeds=1", Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_INVALID);
    }

    #[test]
    fn invalid_inputs_fail_validation() {
        let c = RunConfig::parse("dataInput='a'\ntargetName='y'\ncandidateModels=[]", Path::new(".")).unwrap();
        let err = run(c, &RunFlags { out_dir: Some(std::env::temp_dir()), ..Default::default() }).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_INVALID);
        assert!(err.to_string().contains("candidateModels"), "{err}");
    }
}
