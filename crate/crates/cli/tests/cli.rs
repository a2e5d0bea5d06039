use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pipeplan_cli::{run, RunConfig, RunFlags, JOURNAL_FILE, REPORT_JSON};
use pipeplan_core::evaluator::{predict, ModelArtifact};
use pipeplan_core::kgstore::KgStore;
use pipeplan_core::orchestrator::ARTIFACT_FILE;
use serde_json::{Map, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pipeplan"))
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn write_blobs(dir: &Path, rows: usize, offset: usize) -> PathBuf {
    let mut text = String::from("alpha,beta,colour,label\n");
    for i in offset..offset + rows {
        let pos = i % 2 == 1;
        let a = if pos { 2.0 } else { -2.0 } + (i % 7) as f64 * 0.15;
        let colour = ["red", "green", "blue"][i % 3];
        text.push_str(&format!("{a},{},{colour},{}\n", i * 13 % 17, if pos { "pos" } else { "neg" }));
    }
    let path = dir.join(format!("blobs-{offset}.csv"));
    std::fs::write(&path, text).unwrap();
    path
}

fn blob_config(dir: &Path) -> PathBuf {
    let data = write_blobs(dir, 120, 0);
    let text = format!(
        r#"dataInput = "{}"
targetName = "label"
folds = 3
modelProfilingEpisode = 2
modelSearchEpisode = 3
candidateModels = ["logistic_classifier", "gaussian_nb_classifier"]
candidatePreprocessors = ["noop", "std_scaler"]

[session]
seed = 3
workers = 2
"#,
        data.display()
    );
    let path = dir.join("blobs.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_bin(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

#[test]
fn run_writes_reports_artifact_and_journal() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run_bin(&blob_config(dir.path()), &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [REPORT_JSON, "report.md", ARTIFACT_FILE, JOURNAL_FILE] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let stdout = String::from_utf8(o.stdout).unwrap();
    let last = stdout.lines().last().unwrap();
    assert!(last.starts_with("Final model: ") && last.contains("mean CV accuracy"), "{last}");
    let store = KgStore::open(out.join(JOURNAL_FILE)).unwrap();
    assert_eq!(store.sessions().count(), 1);
}

#[test]
fn invalid_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "dataInput = [unclosed").unwrap();
    assert_eq!(run_bin(&bad, &out, &[]).status.code(), Some(2));
    assert_eq!(run_bin(&dir.path().join("absent.toml"), &out, &[]).status.code(), Some(2));
    std::fs::write(&bad, "dataInput = 'nowhere.csv'\ntargetName = 'y'").unwrap();
    let o = run_bin(&bad, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dataInput unresolved"));
    std::fs::write(&bad, "dataInput = 'x.csv'\ntargetName = 'y'\nfolds = 1").unwrap();
    assert_eq!(run_bin(&bad, &out, &[]).status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_reports_and_other_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let config = blob_config(dir.path());
    let read = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        assert!(run_bin(&config, &out, extra).status.success());
        std::fs::read(out.join(REPORT_JSON)).unwrap()
    };
    let a = read("a", &[]);
    let b = read("b", &["--workers", "1"]);
    let c = read("c", &["--seed", "4"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn classify_prints_one_prediction_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(run_bin(&blob_config(dir.path()), &out, &["-q"]).status.success());
    let rows = write_blobs(dir.path(), 10, 1000);
    let o = bin().arg("classify").arg("--model").arg(out.join(ARTIFACT_FILE)).arg("--data").arg(&rows).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "row,label,confidence");
    assert_eq!(lines.len(), 11);
    let truth: Vec<String> = std::fs::read_to_string(&rows).unwrap().lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect();
    let correct = lines[1..].iter().zip(&truth).filter(|(l, t)| l.split(',').nth(1) == Some(t.as_str())).count();
    assert!(correct >= 9, "{text}");

    let missing = bin().args(["classify", "--model", "/no/model.json", "--data"]).arg(&rows).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let wrong = dir.path().join("wrong.csv");
    std::fs::write(&wrong, "gamma,delta\n1,2\n").unwrap();
    let o = bin().arg("classify").arg("--model").arg(out.join(ARTIFACT_FILE)).arg("--data").arg(&wrong).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

/// Journal content with wall-clock fields and artifact locations removed.
fn timeless(path: &Path) -> Vec<Value> {
    let strip = ["timestampMs", "wallSeconds", "timeToLearnInSeconds", "artifactPath"];
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Map<String, Value> = serde_json::from_str(l).unwrap();
            for k in strip {
                v.remove(k);
            }
            Value::Object(v)
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cli_and_api_write_the_same_journal() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig::load(&blob_config(dir.path())).unwrap();
    let cli_out = dir.path().join("cli");
    let session = config.session.clone();
    tokio::task::spawn_blocking(move || run(config, &RunFlags { out_dir: Some(cli_out), ..Default::default() }).unwrap())
        .await
        .unwrap();

    let api_dir = dir.path().join("api");
    let app = pipeplan_api::AppState::open(pipeplan_api::ApiConfig { journal_dir: api_dir.clone(), workers: session.workers }).unwrap();
    let router = pipeplan_api::router(app);
    let body = serde_json::json!({ "input": session.input, "seed": session.seed });
    let job = call(&router, "POST", "/mutation/trainClassifier", Some(body)).await;
    let done = call(&router, "GET", &format!("/query/await/{}?timeoutMs=120000", job["jobId"].as_str().unwrap()), None).await;
    assert_eq!(done["state"], "completed");
    assert_eq!(timeless(&dir.path().join("cli").join(JOURNAL_FILE)), timeless(&api_dir.join(pipeplan_api::JOURNAL_FILE)));
}

async fn call(router: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> Value {
    use tower::ServiceExt;
    let req = axum::http::Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(axum::body::Body::empty, |b| axum::body::Body::from(b.to_string())))
        .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    serde_json::from_slice(&axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap()).unwrap()
}

/// Holding out every tenth row of Spambase, the trained artifact's accuracy on
/// the held-out rows lands within 0.05 of its cross-validated accuracy.
#[test]
fn spam_holdout_accuracy_tracks_cross_validation() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(data_dir().join("spambase.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let (mut train, mut hold) = (vec![header], vec![header]);
    for (i, l) in lines.enumerate() {
        if i % 10 == 9 { hold.push(l) } else { train.push(l) }
    }
    std::fs::write(dir.path().join("train.csv"), train.join("\n")).unwrap();
    let config = RunConfig::parse(
        r#"dataInput = "train.csv"
targetName = "is_spam"
folds = 5
modelProfilingEpisode = 3
modelSearchEpisode = 4
candidateModels = ["logistic_classifier", "gaussian_nb_classifier"]
candidatePreprocessors = ["noop", "std_scaler"]
[session]
seed = 11
"#,
        dir.path(),
    )
    .unwrap();
    let (outcome, out) = run(config, &RunFlags { out_dir: Some(dir.path().join("out")), ..Default::default() }).unwrap();
    let artifact = ModelArtifact::load(out.join(ARTIFACT_FILE)).unwrap();
    let names: Vec<&str> = header.split(',').collect();
    let rows: Vec<Value> = hold[1..]
        .iter()
        .map(|l| Value::Object(names.iter().zip(l.split(',')).map(|(k, v)| (k.to_string(), Value::String(v.into()))).collect()))
        .collect();
    let labels = predict(&artifact, &rows).unwrap();
    let correct = labels
        .iter()
        .zip(&rows)
        .filter(|(l, r)| r["is_spam"].as_str() == Some(l.value.as_str()))
        .count();
    let holdout = correct as f64 / rows.len() as f64;
    let cv = outcome.model.accuracy;
    assert!((holdout - cv).abs() <= 0.05, "holdout {holdout:.4} vs cv {cv:.4}");
}
