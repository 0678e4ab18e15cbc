use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use jit_anon::binning::cluster_corpus;
use jit_anon::clusterstats::{summarize_all, MIN_MODEL_CLUSTER_SIZE};
use jit_anon::paramgen::{ModelEndpointConfig, ParamGenError, ParamPolicy, Provenance};
use jit_anon::pipeline::{generate_params, PipelineError};
use jit_anon::synth::{generate_corpus, SynthConfig};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    authorization: Option<String>,
    path: String,
    body: Value,
}

type Reply = dyn Fn(&Value) -> (u16, String) + Send + Sync;

/// Serves until the test process exits; records every request.
fn serve(reply: Box<Reply>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let reply: Arc<Reply> = Arc::from(reply);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let log = Arc::clone(&log);
            let reply = Arc::clone(&reply);
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let (mut length, mut authorization) = (0usize, None);
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    let (name, value) = line.split_once(':').unwrap();
                    match name.to_ascii_lowercase().as_str() {
                        "content-length" => length = value.trim().parse().unwrap(),
                        "authorization" => authorization = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                let (status, text) = reply(&body);
                log.lock().unwrap().push(Seen { authorization, path, body });
                let response = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(response.as_bytes());
            });
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn chat(content: &str) -> String {
    json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
}

fn cluster_of(body: &Value) -> String {
    let user: Value = serde_json::from_str(body["messages"][1]["content"].as_str().unwrap()).unwrap();
    user["cluster_id"].as_str().unwrap().to_string()
}

fn params_for(cluster: &str, std: f64) -> String {
    json!({
        "cluster_id": cluster,
        "churn_mixture": { "components": [{ "weight": 1.0, "mean": 40.0, "std": std }], "min": 0, "max": 300 },
        "ratio_beta": { "alpha": 2.0, "beta": 2.0 },
        "constraints": { "non_negative": true, "la_plus_ld_equals_churn": true }
    })
    .to_string()
}

fn stats() -> std::collections::BTreeMap<jit_anon::binning::ClusterKey, jit_anon::clusterstats::ClusterStats> {
    let corpus = generate_corpus(&SynthConfig { rows: 400, ..SynthConfig::default() });
    let assignment = cluster_corpus(&corpus, 20).unwrap();
    summarize_all(&corpus, &assignment).unwrap()
}

fn endpoint(base_url: String) -> ModelEndpointConfig {
    ModelEndpointConfig { base_url, max_retries: 2, backoff_ms: 0, max_in_flight: 3, timeout_secs: 5.0, ..ModelEndpointConfig::default() }
}

#[test]
fn valid_replies_are_used_and_requests_are_deterministic() {
    let (url, seen) = serve(Box::new(|body| (200, chat(&format!("<think>a {{draft}}</think>\n{}", params_for(&cluster_of(body), 9.0))))));
    let audit = tempfile::tempdir().unwrap();
    std::env::set_var("JIT_ANON_TEST_KEY_VALID", "sekrit");
    let cfg = ModelEndpointConfig {
        api_key_env: "JIT_ANON_TEST_KEY_VALID".into(),
        audit_dir: Some(audit.path().to_path_buf()),
        ..endpoint(url)
    };
    let stats = stats();
    let out = generate_params(&stats, ParamPolicy::ModelWithFallback, Some(&cfg)).unwrap();
    assert!(out.failures.is_empty());
    for (key, s) in &stats {
        let p = &out.params[key];
        if s.count >= MIN_MODEL_CLUSTER_SIZE {
            assert_eq!(p.provenance, Provenance::Model, "{key}");
            assert_eq!(p.churn_mixture.components[0].std, 9.0);
        } else {
            assert_eq!(p.provenance, Provenance::Fallback, "{key}");
        }
    }
    let seen = seen.lock().unwrap().clone();
    let asked = stats.values().filter(|s| s.count >= MIN_MODEL_CLUSTER_SIZE).count();
    assert_eq!(seen.len(), asked);
    for s in &seen {
        assert_eq!(s.path, "/v1/chat/completions");
        assert_eq!(s.authorization.as_deref(), Some("Bearer sekrit"));
        assert_eq!(s.body["model"], "qwen3-14b");
        assert_eq!(s.body["temperature"], 0.0);
        assert_eq!(s.body["top_p"], 0.0);
        assert_eq!(s.body["messages"][0]["role"], "system");
        assert_eq!(s.body["messages"][1]["role"], "user");
    }
    let transcripts = std::fs::read_dir(audit.path()).unwrap().count();
    assert_eq!(transcripts, asked);
}

#[test]
fn prose_replies_are_retried_then_fall_back() {
    let (url, seen) = serve(Box::new(|_| (200, chat("I cannot produce parameters."))));
    let stats = stats();
    let cfg = endpoint(url);
    let out = generate_params(&stats, ParamPolicy::ModelWithFallback, Some(&cfg)).unwrap();
    let asked = stats.values().filter(|s| s.count >= MIN_MODEL_CLUSTER_SIZE).count();
    assert_eq!(out.failures.len(), asked);
    assert_eq!(out.count(Provenance::Model), 0);
    assert_eq!(seen.lock().unwrap().len(), asked * 3);
}

#[test]
fn schema_violations_are_not_retried() {
    let (url, seen) = serve(Box::new(|body| (200, chat(&params_for(&cluster_of(body), -1.0)))));
    let stats = stats();
    let out = generate_params(&stats, ParamPolicy::ModelWithFallback, Some(&endpoint(url))).unwrap();
    let asked = stats.values().filter(|s| s.count >= MIN_MODEL_CLUSTER_SIZE).count();
    assert_eq!(seen.lock().unwrap().len(), asked);
    assert_eq!(out.failures.len(), asked);
    assert!(out.failures.iter().all(|f| f.error.contains("std")));
}

#[test]
fn server_errors_exhaust_model_required() {
    let (url, _) = serve(Box::new(|_| (500, "{\"error\":\"overloaded\"}".into())));
    let err = generate_params(&stats(), ParamPolicy::ModelRequired, Some(&endpoint(url))).unwrap_err();
    assert!(matches!(err, PipelineError::Endpoint(ParamGenError::EndpointExhausted(_))));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn unreachable_endpoint() {
    let cfg = ModelEndpointConfig { max_retries: 0, ..endpoint("http://127.0.0.1:1/v1".into()) };
    let stats = stats();
    let out = generate_params(&stats, ParamPolicy::ModelWithFallback, Some(&cfg)).unwrap();
    assert_eq!(out.count(Provenance::Fallback), stats.len());
    assert!(out.failures.iter().all(|f| f.error.contains("unreachable")));
    let err = generate_params(&stats, ParamPolicy::ModelRequired, Some(&cfg)).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let err = generate_params(&stats, ParamPolicy::ModelRequired, None).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn three_models_same_stats() {
    // The reply depends on the requested model, as different models would.
    let (url, seen) = serve(Box::new(|body| {
        let std = match body["model"].as_str().unwrap() {
            "qwen3-14b" => 10.0,
            "deepseek-r1" => 20.0,
            _ => 30.0,
        };
        (200, chat(&params_for(&cluster_of(body), std)))
    }));
    let stats = stats();
    let mut stds = Vec::new();
    for model in ["qwen3-14b", "deepseek-r1", "llama-3.1-8b"] {
        let cfg = ModelEndpointConfig { model_name: model.into(), ..endpoint(url.clone()) };
        let out = generate_params(&stats, ParamPolicy::ModelWithFallback, Some(&cfg)).unwrap();
        let model_params: Vec<f64> = out
            .params
            .values()
            .filter(|p| p.provenance == Provenance::Model)
            .map(|p| p.churn_mixture.components[0].std)
            .collect();
        assert!(!model_params.is_empty());
        stds.push(model_params[0]);
        // Identical prompts for every model: only the model field differs.
        let seen = seen.lock().unwrap();
        let last: Vec<&Seen> = seen.iter().filter(|s| s.body["model"] == model).collect();
        assert_eq!(last.len(), model_params.len());
    }
    assert_eq!(stds, vec![10.0, 20.0, 30.0]);
    let seen = seen.lock().unwrap();
    let prompts = |m: &str| {
        let mut v: Vec<String> = seen.iter().filter(|s| s.body["model"] == m).map(|s| s.body["messages"].to_string()).collect();
        v.sort();
        v
    };
    assert_eq!(prompts("qwen3-14b"), prompts("deepseek-r1"));
}
