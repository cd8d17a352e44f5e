//! A spawned `holter serve` process plus the service-level checks shared by the
//! contract tests and the acceptance report.
#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::time::{Duration, Instant};

use holter_core::eval::{IngestReport, RatingSet};
use holter_core::report::{parse_report, Report};
use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

pub const TOKEN: &str = "test-token";
pub const PNG: &[u8] = b"\x89PNG\r\n\x1a\n\0\0\0\rIHDR fixture bytes";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().expect("fixtures dir")
}

pub fn golden_dir() -> PathBuf {
    fixtures().join("golden")
}

pub fn golden_report_bytes() -> Vec<u8> {
    std::fs::read(golden_dir().join("report.json")).expect("golden report")
}

pub fn golden_strip() -> Vec<u8> {
    std::fs::read(golden_dir().join("strip1.png")).expect("golden strip")
}

/// The golden bundle as an HTTP client sends it: each tracing keeps its file
/// name and declares the content hash of the uploaded image.
pub fn golden_bundle_bytes() -> Vec<u8> {
    let mut bundle: Value = serde_json::from_slice(&std::fs::read(golden_dir().join("bundle.json")).unwrap()).unwrap();
    let hash = format!("sha256:{}", hex::encode(Sha256::digest(golden_strip())));
    for t in bundle["tracings"].as_array_mut().unwrap() {
        t["image_hash"] = json!(hash);
    }
    serde_json::to_vec(&bundle).unwrap()
}

/// Uploads the golden strip so the server can resolve it by hash.
pub fn upload_strip(s: &Server) -> Check {
    let resp = s.post("/v1/images").body(golden_strip()).send().map_err(|e| e.to_string())?;
    ensure!(resp.status() == StatusCode::CREATED, "strip upload returned {}", resp.status());
    Ok(())
}

/// The golden config with every scripted backend slowed down, written to
/// `dir`. Its reports are byte-identical to the golden one.
pub fn slow_config(dir: &Path, latency_ms: u64) -> PathBuf {
    let golden = golden_dir();
    let mut config: Value = serde_json::from_slice(&std::fs::read(golden.join("config.json")).unwrap()).unwrap();
    for agent in config["agents"].as_array_mut().unwrap() {
        let backend = agent["backend"].as_object_mut().unwrap();
        let table = backend["table_file"].as_str().unwrap().to_string();
        backend.insert("table_file".into(), json!(golden.join(table)));
        backend.insert("latency_ms".into(), json!(latency_ms));
    }
    config["demo_bank"] = json!(golden.join(config["demo_bank"].as_str().unwrap()));
    // Images come only from uploads to the store.
    config["image_dirs"] = json!([]);
    let path = dir.join("slow.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    path
}

pub struct Server {
    child: Child,
    _stdout: BufReader<ChildStdout>,
    pub base: String,
    pub client: Client,
}

impl Server {
    /// Starts `holter serve` on an ephemeral port and waits for it to listen.
    pub fn start(store: &Path, configs: &[String], extra: &[&str], env: &[(&str, &str)]) -> Result<Server, String> {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_holter"));
        cmd.args(["serve", "--port", "0", "--workers", "2", "--auth-token", TOKEN, "--store"])
            .arg(store)
            .args(extra)
            .env_remove("HOLTER_CRASH_AFTER")
            .env_remove("HOLTER_CONFIG")
            .env("RUST_LOG", "error")
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        for c in configs {
            cmd.args(["--config", c]);
        }
        for (k, v) in env {
            cmd.env(k, v);
        }
        let mut child = cmd.spawn().map_err(|e| format!("spawn: {e}"))?;
        let mut stdout = BufReader::new(child.stdout.take().unwrap());
        let mut line = String::new();
        stdout.read_line(&mut line).map_err(|e| e.to_string())?;
        let Some(base) = line.trim().strip_prefix("listening on ") else {
            let _ = child.kill();
            return Err(format!("unexpected first line `{line}`"));
        };
        Ok(Server {
            base: base.to_string(),
            child,
            _stdout: stdout,
            client: Client::builder().timeout(Duration::from_secs(20)).build().unwrap(),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn get(&self, path: &str) -> RequestBuilder {
        self.client.get(self.url(path)).bearer_auth(TOKEN)
    }

    pub fn post(&self, path: &str) -> RequestBuilder {
        self.client.post(self.url(path)).bearer_auth(TOKEN)
    }

    pub fn submit(&self, config: &str, bundle: &[u8], key: Option<&str>) -> Result<String, String> {
        let mut req = self
            .post(&format!("/v1/jobs?config={config}"))
            .header("content-type", "application/json")
            .body(bundle.to_vec());
        if let Some(k) = key {
            req = req.header("idempotency-key", k);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        ensure!(resp.status() == StatusCode::ACCEPTED, "submit returned {}", resp.status());
        let body: Value = resp.json().map_err(|e| e.to_string())?;
        body["job_id"].as_str().map(str::to_string).ok_or_else(|| format!("no job_id in {body}"))
    }

    /// Polls a job until it is terminal, returning the final job document.
    pub fn wait(&self, job_id: &str, timeout: Duration) -> Result<Value, String> {
        let start = Instant::now();
        loop {
            let job: Value = self
                .get(&format!("/v1/jobs/{job_id}"))
                .send()
                .and_then(|r| r.json())
                .map_err(|e| e.to_string())?;
            let state = job["state"]["name"].as_str().unwrap_or_default();
            if ["Complete", "NeedsManualReview", "Failed"].contains(&state) {
                return Ok(job);
            }
            ensure!(start.elapsed() < timeout, "job {job_id} still {state} after {timeout:?}");
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    /// Waits for the process to exit on its own.
    pub fn wait_exit(&mut self, timeout: Duration) -> Result<std::process::ExitStatus, String> {
        let start = Instant::now();
        loop {
            if let Some(status) = self.child.try_wait().map_err(|e| e.to_string())? {
                return Ok(status);
            }
            ensure!(start.elapsed() < timeout, "server did not exit within {timeout:?}");
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.kill();
    }
}

// ---------------------------------------------------------------------------
// Schemas

/// Validates documents against the component schemas the server publishes.
pub struct Schemas {
    components: Value,
}

impl Schemas {
    pub fn fetch(server: &Server) -> Result<Schemas, String> {
        let resp = server.client.get(server.url("/v1/openapi.json")).send().map_err(|e| e.to_string())?;
        ensure!(resp.status() == StatusCode::OK, "openapi returned {}", resp.status());
        let doc: Value = resp.json().map_err(|e| e.to_string())?;
        ensure!(doc["openapi"].as_str().is_some_and(|v| v.starts_with("3.1")), "not an OpenAPI 3.1 document");
        Ok(Schemas {
            components: doc["components"].clone(),
        })
    }

    pub fn check(&self, name: &str, instance: &Value) -> Check {
        let schema = json!({
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "$ref": format!("#/components/schemas/{name}"),
            "components": self.components,
        });
        let validator = jsonschema::validator_for(&schema).map_err(|e| format!("schema {name}: {e}"))?;
        let errors: Vec<String> = validator
            .iter_errors(instance)
            .map(|e| format!("{e} at `{}`", e.instance_path))
            .collect();
        ensure!(errors.is_empty(), "{name} schema violations: {}", errors.join("; "));
        Ok(())
    }
}

fn json_of(resp: Response) -> Result<(StatusCode, Value), String> {
    let status = resp.status();
    let body = resp.json().map_err(|e| format!("{status}: body is not JSON: {e}"))?;
    Ok((status, body))
}

fn expect_error(schemas: &Schemas, resp: Response, status: StatusCode, code: &str) -> Result<Value, String> {
    let (got, body) = json_of(resp)?;
    ensure!(got == status, "expected {status}, got {got}: {body}");
    schemas.check("Error", &body)?;
    ensure!(body["error"] == code, "expected error `{code}`, got {body}");
    Ok(body)
}

fn first_difference(a: &[u8], b: &[u8]) -> String {
    let at = a.iter().zip(b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
    format!("first difference at byte {at}; lengths {} vs {}", a.len(), b.len())
}

// ---------------------------------------------------------------------------
// Contract

/// A running server with the golden config as `default` and a slowed copy as
/// `slow`, over a fresh store.
pub struct Fixture {
    pub server: Server,
    pub schemas: Schemas,
    _dir: tempfile::TempDir,
}

pub fn fixture(extra: &[&str]) -> Result<Fixture, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let slow = slow_config(dir.path(), 300);
    let configs = [
        format!("default={}", golden_dir().join("config.json").display()),
        format!("slow={}", slow.display()),
    ];
    let server = Server::start(&dir.path().join("store"), &configs, extra, &[])?;
    upload_strip(&server)?;
    let schemas = Schemas::fetch(&server)?;
    Ok(Fixture {
        server,
        schemas,
        _dir: dir,
    })
}

/// Submit, poll and fetch: the served report equals the golden bytes and
/// every document matches its schema. Returns the job id.
pub fn submit_poll_fetch(f: &Fixture) -> Result<String, String> {
    let s = &f.server;
    let resp = s
        .post("/v1/jobs")
        .header("content-type", "application/json")
        .body(golden_bundle_bytes())
        .send()
        .map_err(|e| e.to_string())?;
    let location = resp.headers().get("location").and_then(|v| v.to_str().ok()).map(str::to_string);
    let (status, accepted) = json_of(resp)?;
    ensure!(status == StatusCode::ACCEPTED, "submit returned {status}: {accepted}");
    f.schemas.check("JobAccepted", &accepted)?;
    let id = accepted["job_id"].as_str().unwrap().to_string();
    ensure!(location.as_deref() == Some(&format!("/v1/jobs/{id}")), "location header {location:?}");

    let job = s.wait(&id, Duration::from_secs(20))?;
    f.schemas.check("Job", &job)?;
    ensure!(job["state"]["name"] == "Complete", "job ended {}", job["state"]);
    ensure!(job["patient_id"] == "G-001", "job patient {}", job["patient_id"]);

    let resp = s.get(&format!("/v1/reports/{id}")).send().map_err(|e| e.to_string())?;
    ensure!(resp.status() == StatusCode::OK, "report returned {}", resp.status());
    let etag = resp.headers().get("etag").and_then(|v| v.to_str().ok()).map(str::to_string);
    let bytes = resp.bytes().map_err(|e| e.to_string())?.to_vec();
    let golden = golden_report_bytes();
    ensure!(bytes == golden, "served report differs from golden: {}", first_difference(&bytes, &golden));
    f.schemas.check("Report", &serde_json::from_slice(&bytes).unwrap())?;
    ensure!(etag.as_deref() == Some("\"1\""), "etag {etag:?}");

    let text = s
        .get(&format!("/v1/reports/{id}"))
        .header("accept", "text/plain")
        .send()
        .and_then(|r| r.text())
        .map_err(|e| e.to_string())?;
    ensure!(text.starts_with("END-OF-STUDY REPORT"), "text rendering starts {:?}", &text[..text.len().min(40)]);
    let html = s
        .get(&format!("/v1/reports/{id}"))
        .header("accept", "text/html")
        .send()
        .and_then(|r| r.text())
        .map_err(|e| e.to_string())?;
    ensure!(html.contains("<html"), "html rendering lacks <html");
    Ok(id)
}

/// The same idempotency key yields the same job, and only one job record.
pub fn idempotent_resubmission(f: &Fixture) -> Check {
    let s = &f.server;
    let bundle = golden_bundle_bytes();
    let a = s.submit("default", &bundle, Some("visit-42"))?;
    let b = s.submit("default", &bundle, Some("visit-42"))?;
    ensure!(a == b, "same key gave jobs {a} and {b}");
    let c = s.submit("default", &bundle, Some("visit-43"))?;
    ensure!(c != a, "different keys gave the same job");
    let d = s.submit("default", &bundle, None)?;
    ensure!(d != a && d != c, "keyless submission reused a job");
    s.wait(&a, Duration::from_secs(20))?;
    let again = s.submit("default", &bundle, Some("visit-42"))?;
    ensure!(again == a, "key resolved to {again} after completion, want {a}");
    Ok(())
}

pub fn error_responses(f: &Fixture) -> Check {
    let s = &f.server;
    let resp = s.client.post(s.url("/v1/jobs")).body(golden_bundle_bytes()).send().map_err(|e| e.to_string())?;
    expect_error(&f.schemas, resp, StatusCode::UNAUTHORIZED, "unauthorized")?;
    let resp = s.client.get(s.url("/v1/jobs/x")).bearer_auth("wrong").send().map_err(|e| e.to_string())?;
    expect_error(&f.schemas, resp, StatusCode::UNAUTHORIZED, "unauthorized")?;

    let mut bundle: Value = serde_json::from_slice(&golden_bundle_bytes()).unwrap();
    bundle["biostatistics"]["gender"] = json!("unknown");
    let resp = s.post("/v1/jobs").json(&bundle).send().map_err(|e| e.to_string())?;
    let body = expect_error(&f.schemas, resp, StatusCode::BAD_REQUEST, "schema")?;
    ensure!(
        body["pointer"] == "/biostatistics/gender",
        "schema error lacks a pointer to the field: {body}"
    );

    let resp = s.post("/v1/jobs?config=nope").body(golden_bundle_bytes()).send().map_err(|e| e.to_string())?;
    expect_error(&f.schemas, resp, StatusCode::BAD_REQUEST, "bad_request")?;

    let big = vec![b' '; 70_000];
    let resp = s.post("/v1/jobs").body(big).send().map_err(|e| e.to_string())?;
    expect_error(&f.schemas, resp, StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large")?;

    let resp = s.get("/v1/jobs/0000").send().map_err(|e| e.to_string())?;
    expect_error(&f.schemas, resp, StatusCode::NOT_FOUND, "not_found")?;
    let resp = s.get("/v1/reports/0000").send().map_err(|e| e.to_string())?;
    expect_error(&f.schemas, resp, StatusCode::NOT_FOUND, "not_found")?;

    // A job still running has no report yet.
    let id = s.submit("slow", &golden_bundle_bytes(), None)?;
    let resp = s.get(&format!("/v1/reports/{id}")).send().map_err(|e| e.to_string())?;
    let body = expect_error(&f.schemas, resp, StatusCode::CONFLICT, "not_ready")?;
    f.schemas.check("JobState", &body["state"])?;
    let job = s.wait(&id, Duration::from_secs(20))?;
    ensure!(job["state"]["name"] == "Complete", "slow job ended {}", job["state"]);
    let bytes = s.get(&format!("/v1/reports/{id}")).send().and_then(|r| r.bytes()).map_err(|e| e.to_string())?;
    ensure!(bytes.as_ref() == golden_report_bytes().as_slice(), "slow config report differs from golden");
    Ok(())
}

fn review(s: &Server, id: &str, body: Value) -> Result<Response, String> {
    s.post(&format!("/v1/reports/{id}/review")).json(&body).send().map_err(|e| e.to_string())
}

pub fn review_flow(f: &Fixture, id: &str) -> Check {
    let s = &f.server;
    let resp = s.get(&format!("/v1/reports/{id}")).send().map_err(|e| e.to_string())?;
    let rev: u64 = resp.headers()["x-revision"].to_str().unwrap().parse().unwrap();
    let report: Report = parse_report(&resp.bytes().unwrap()).map_err(|e| e.to_string())?;
    let f1 = report.findings[0].statement.clone();
    let edit = |old: &str| json!({ "target": { "section": "finding", "item_id": "F1" }, "old_text": old, "new_text": "Average Heart Rate: 70 bpm" });

    let body = json!({ "revision": rev, "reviewer_id": "dr-a", "edits": [edit(&f1)], "status": "reviewed" });
    f.schemas.check("ReviewRequest", &body)?;
    let resp = review(s, id, body)?;
    let new_rev: u64 = resp.headers().get("x-revision").and_then(|v| v.to_str().ok()).and_then(|v| v.parse().ok()).unwrap_or(0);
    let (status, updated) = json_of(resp)?;
    ensure!(status == StatusCode::OK, "review returned {status}: {updated}");
    f.schemas.check("Report", &updated)?;
    ensure!(new_rev == rev + 1, "revision {new_rev} after {rev}");
    ensure!(updated["review"]["status"] == "reviewed", "status {}", updated["review"]["status"]);
    ensure!(updated["review"]["edits"].as_array().map(Vec::len) == Some(1), "edits {}", updated["review"]["edits"]);
    ensure!(updated["findings"][0]["statement"] == "Average Heart Rate: 70 bpm", "edit not applied");
    ensure!(updated["findings"][0]["parameters"]["HR_AVG_BPM"]["value"] == json!(70.0), "parameters not re-derived: {}", updated["findings"][0]["parameters"]);

    // The old revision is stale now.
    let resp = review(s, id, json!({ "revision": rev, "reviewer_id": "dr-b", "edits": [edit(&f1)] }))?;
    let body = expect_error(&f.schemas, resp, StatusCode::CONFLICT, "revision_conflict")?;
    ensure!(body["current_revision"] == json!(new_rev), "conflict reports {}", body["current_revision"]);

    // The edit was made against text that is no longer there.
    let resp = review(s, id, json!({ "revision": new_rev, "reviewer_id": "dr-b", "edits": [edit(&f1)] }))?;
    expect_error(&f.schemas, resp, StatusCode::UNPROCESSABLE_ENTITY, "edit_rejected")?;
    let resp = review(
        s,
        id,
        json!({ "revision": new_rev, "reviewer_id": "dr-b", "edits": [{ "target": { "section": "interpretation", "item_id": "I99" }, "old_text": "x", "new_text": "y" }] }),
    )?;
    expect_error(&f.schemas, resp, StatusCode::UNPROCESSABLE_ENTITY, "edit_rejected")?;

    let resp = review(s, id, json!({ "revision": new_rev, "reviewer_id": "dr-a", "status": "signed" }))?;
    ensure!(resp.status() == StatusCode::OK, "signing returned {}", resp.status());
    let resp = review(s, id, json!({ "revision": new_rev + 1, "reviewer_id": "dr-a", "status": "reviewed" }))?;
    expect_error(&f.schemas, resp, StatusCode::BAD_REQUEST, "illegal_transition")?;
    let resp = review(s, id, json!({ "revision": new_rev + 1, "reviewer_id": "dr-a", "edits": [{ "target": { "section": "finding", "item_id": "F1" }, "old_text": "Average Heart Rate: 70 bpm", "new_text": "z" }] }))?;
    ensure!(!resp.status().is_success(), "signed report accepted an edit");
    Ok(())
}

pub const RATINGS_CSV: &str = "rater_id,patient_id,model_alias,metric,score
r1,G-001,Model A,ACC,5
r1,G-001,Model A,FFB,5
r1,G-001,Model B,ACC,3
r1,G-001,Model B,FFB,4
r2,G-001,Model A,ACC,4
r2,G-001,Model A,FFB,5
r2,G-001,Model B,ACC,2
r2,G-001,Model B,FFB,4
r1,G-001,Model A,ACC,1
";

/// Ratings ingestion and subgroup analytics agree with the library.
pub fn ratings_and_analytics(f: &Fixture) -> Check {
    let s = &f.server;
    let bad = "rater_id,patient_id,model_alias,metric,score\nr9,G-001,Model A,ACC,7\n";
    let resp = s.post("/v1/ratings").header("content-type", "text/csv").body(bad).send().map_err(|e| e.to_string())?;
    let (status, body) = json_of(resp)?;
    ensure!(status == StatusCode::BAD_REQUEST, "malformed ratings returned {status}");
    f.schemas.check("IngestReport", &body)?;

    let resp = s.post("/v1/ratings").header("content-type", "text/csv").body(RATINGS_CSV).send().map_err(|e| e.to_string())?;
    let (status, body) = json_of(resp)?;
    ensure!(status == StatusCode::OK, "ratings returned {status}: {body}");
    f.schemas.check("IngestReport", &body)?;
    let served: IngestReport = serde_json::from_value(body).map_err(|e| e.to_string())?;
    let mut set = RatingSet::new();
    let local = set.ingest_csv(RATINGS_CSV.as_bytes());
    ensure!(served == local, "service ingest {served:?} != library {local:?}");
    ensure!(served.accepted == 8 && served.rejected.len() == 1 && served.rejected[0].line == 10, "ingest {served:?}");

    // Posting the same rows again adds nothing.
    let again: IngestReport = s
        .post("/v1/ratings")
        .json(&set.ratings())
        .send()
        .and_then(|r| r.json())
        .map_err(|e| e.to_string())?;
    ensure!(again.accepted == 0 && again.rejected.len() == 8, "re-posting gave {again:?}");

    let table: Value = s
        .get("/v1/analytics/subgroups?group_by=model,metric")
        .send()
        .and_then(|r| r.json())
        .map_err(|e| e.to_string())?;
    f.schemas.check("AggregateTable", &table)?;
    let want = holter_core::eval::aggregate(
        set.ratings(),
        &[holter_core::eval::Dimension::Model, holter_core::eval::Dimension::Metric],
        &Default::default(),
        holter_core::eval::StdKind::Population,
    );
    let rows = table["rows"].as_array().ok_or("no rows")?;
    ensure!(rows.len() == want.len(), "{} rows, want {}", rows.len(), want.len());
    for (got, want) in rows.iter().zip(&want) {
        ensure!(got["display"] == json!(want.display) && got["n"] == json!(want.n), "row {got} != {want:?}");
    }
    let ffb_a = rows
        .iter()
        .find(|r| r["group"]["model"] == "Model A" && r["group"]["metric"] == "FFB")
        .ok_or("no Model A FFB row")?;
    ensure!(ffb_a["display"] == "5.0 (±0.0)", "Model A FFB shows {}", ffb_a["display"]);

    let csv = s
        .get("/v1/analytics/subgroups?group_by=model,metric&format=csv")
        .send()
        .and_then(|r| r.text())
        .map_err(|e| e.to_string())?;
    ensure!(csv.starts_with("model,metric,mean,std,n,display\n"), "csv header {csv:?}");

    let resp = s.get("/v1/analytics/subgroups?group_by=colour").send().map_err(|e| e.to_string())?;
    expect_error(&f.schemas, resp, StatusCode::BAD_REQUEST, "bad_request")?;
    Ok(())
}

/// A questionnaire over two finished jobs hides the model labels, and the
/// stored alias map lets analytics group by real model.
pub fn questionnaire(f: &Fixture, job_a: &str) -> Check {
    let s = &f.server;
    let job_b = s.submit("default", &golden_bundle_bytes(), None)?;
    s.wait(&job_b, Duration::from_secs(20))?;
    let labels = ["vendor-alpha-7b", "vendor-beta-13b"];
    let req = json!({ "seed": 11, "reports": { labels[0]: job_a, labels[1]: job_b } });
    f.schemas.check("QuestionnaireRequest", &req)?;
    let resp = s.post("/v1/questionnaires").json(&req).send().map_err(|e| e.to_string())?;
    let (status, q) = json_of(resp)?;
    ensure!(status == StatusCode::CREATED, "questionnaire returned {status}: {q}");
    f.schemas.check("Questionnaire", &q)?;
    let text = q.to_string().to_lowercase();
    for l in labels.iter().chain(["scripted-metrics", "scripted-tracings", "scripted-interpretation"].iter()) {
        ensure!(!text.contains(l), "questionnaire leaks `{l}`");
    }
    let stored: Value = s.get("/v1/questionnaires/G-001").send().and_then(|r| r.json()).map_err(|e| e.to_string())?;
    ensure!(stored == q, "stored questionnaire differs");

    let table: Value = s.get("/v1/analytics/subgroups?group_by=model").send().and_then(|r| r.json()).map_err(|e| e.to_string())?;
    let models: Vec<&str> = table["rows"].as_array().unwrap().iter().filter_map(|r| r["group"]["model"].as_str()).collect();
    ensure!(models == labels, "analytics groups {models:?}, want the real labels");
    let table: Value = s.get("/v1/analytics/subgroups?group_by=gender,age_group,class").send().and_then(|r| r.json()).map_err(|e| e.to_string())?;
    let row = &table["rows"][0];
    ensure!(
        row["group"] == json!({ "gender": "male", "age_group": "elderly", "class": "II" }),
        "subgroup row {row}"
    );
    Ok(())
}

pub fn images(f: &Fixture) -> Check {
    let s = &f.server;
    let resp = s.post("/v1/images").body(PNG.to_vec()).send().map_err(|e| e.to_string())?;
    let (status, body) = json_of(resp)?;
    ensure!(status == StatusCode::CREATED, "image upload returned {status}");
    f.schemas.check("ImageStored", &body)?;
    let hex = hex::encode(Sha256::digest(PNG));
    ensure!(body["hash"] == json!(format!("sha256:{hex}")), "hash {}", body["hash"]);
    let resp = s.get(body["url"].as_str().unwrap()).send().map_err(|e| e.to_string())?;
    ensure!(resp.headers()["content-type"] == "image/png", "content type {:?}", resp.headers()["content-type"]);
    ensure!(resp.bytes().unwrap().as_ref() == PNG, "image bytes differ");
    let resp = s.get(&format!("/v1/images/{}", "0".repeat(64))).send().map_err(|e| e.to_string())?;
    expect_error(&f.schemas, resp, StatusCode::NOT_FOUND, "not_found")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Crash injection

/// How a trial interrupts the server.
#[derive(Debug, Clone)]
pub enum Interrupt {
    /// Abort right after this point is persisted.
    CrashAfter(&'static str),
    /// Kill the process this long after submission.
    KillAfter(Duration),
}

pub const TRIAL_LATENCY_MS: u64 = 400;

pub fn trial_plan() -> Vec<Interrupt> {
    let mut plan: Vec<Interrupt> = ["RunningFindings", "RunningInterpretation", "FactChecking", "report_written"]
        .into_iter()
        .map(Interrupt::CrashAfter)
        .collect();
    // The findings agents run concurrently, then interpretation: two rounds
    // of TRIAL_LATENCY_MS keep the job running for at least 800 ms, so every
    // kill lands mid-job.
    plan.extend([30, 150, 300, 450, 550, 650].map(|ms| Interrupt::KillAfter(Duration::from_millis(ms))));
    plan
}

/// Every report file present must parse completely.
fn no_torn_reports(store: &Path) -> Check {
    let dir = store.join("reports");
    let Ok(entries) = std::fs::read_dir(&dir) else {
        return Ok(());
    };
    for e in entries {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            let raw = std::fs::read(&p).map_err(|e| e.to_string())?;
            let doc: Value = serde_json::from_slice(&raw).map_err(|e| format!("{} is torn: {e}", p.display()))?;
            let report = doc.get("document").cloned().unwrap_or(doc);
            serde_json::from_value::<Report>(report).map_err(|e| format!("{} does not hold a report: {e}", p.display()))?;
        }
    }
    Ok(())
}

/// One interrupted run followed by a restart on the same store: the job ends
/// Complete with the golden report.
pub fn crash_trial(interrupt: &Interrupt) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = dir.path().join("store");
    let slow = slow_config(dir.path(), TRIAL_LATENCY_MS);
    let configs = [format!("default={}", slow.display())];
    let key = "crash-trial";
    let bundle = golden_bundle_bytes();

    let env: Vec<(&str, &str)> = match interrupt {
        Interrupt::CrashAfter(point) => vec![("HOLTER_CRASH_AFTER", point)],
        Interrupt::KillAfter(_) => vec![],
    };
    let mut first = Server::start(&store, &configs, &[], &env)?;
    upload_strip(&first)?;
    // The crash may land before the response; the job id comes from the
    // idempotency key after the restart either way.
    let _ = first.submit("default", &bundle, Some(key));
    match interrupt {
        Interrupt::CrashAfter(point) => {
            let status = first.wait_exit(Duration::from_secs(20))?;
            ensure!(!status.success(), "server survived the crash point {point}");
        }
        Interrupt::KillAfter(d) => {
            std::thread::sleep(*d);
            first.kill();
        }
    }
    drop(first);
    no_torn_reports(&store)?;
    // The interrupt must have hit a job in flight (or one not yet recorded).
    if let Some(raw) = std::fs::read_dir(store.join("jobs")).ok().and_then(|mut d| {
        d.find_map(|e| e.ok().map(|e| e.path()).filter(|p| p.extension().is_some_and(|x| x == "json")))
    }) {
        let doc: Value = serde_json::from_slice(&std::fs::read(raw).unwrap()).map_err(|e| format!("torn job record: {e}"))?;
        let state = doc["document"]["state"]["name"].as_str().or(doc["state"]["name"].as_str()).unwrap_or("?").to_string();
        ensure!(
            !["Complete", "NeedsManualReview", "Failed"].contains(&state.as_str()),
            "the job had already finished ({state}) when interrupted"
        );
    }

    let second = Server::start(&store, &configs, &[], &[])?;
    let id = second.submit("default", &bundle, Some(key))?;
    let job = second.wait(&id, Duration::from_secs(20))?;
    ensure!(job["state"]["name"] == "Complete", "job ended {}", job["state"]);
    let resp = second.get(&format!("/v1/reports/{id}")).send().map_err(|e| e.to_string())?;
    ensure!(resp.status() == StatusCode::OK, "report returned {}", resp.status());
    let bytes = resp.bytes().map_err(|e| e.to_string())?;
    ensure!(bytes.as_ref() == golden_report_bytes().as_slice(), "report after restart differs from golden");
    no_torn_reports(&store)?;
    let jobs = std::fs::read_dir(store.join("jobs"))
        .map_err(|e| e.to_string())?
        .filter(|e| e.as_ref().is_ok_and(|e| e.path().extension().is_some_and(|x| x == "json")))
        .count();
    ensure!(jobs == 1, "{jobs} job records after the restart");
    Ok(())
}

pub fn crash_trials() -> Check {
    for (i, interrupt) in trial_plan().iter().enumerate() {
        crash_trial(interrupt).map_err(|e| format!("trial {} ({interrupt:?}): {e}", i + 1))?;
    }
    Ok(())
}

/// The whole service contract in one go.
pub fn service_contract() -> Check {
    let f = fixture(&["--max-body-bytes", "65536"])?;
    let id = submit_poll_fetch(&f)?;
    idempotent_resubmission(&f)?;
    error_responses(&f)?;
    ratings_and_analytics(&f)?;
    questionnaire(&f, &id)?;
    review_flow(&f, &id)?;
    images(&f)?;
    crash_trials()
}
