use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use simrecon::netbox::{
    self, ErrorCode, ErrorEnvelope, RemoteOracle, ServerConfig, SimilarityRequest, SimilarityResponse,
};
use simrecon::optimizer::reconstruct;
use simrecon::synthetic::{in_span_target, FaceModel, FaceModelSpec};
use simrecon::{
    fit_pca, make_cosine_oracle, EigenBasis, ImageTensor, OptimizerConfig, OracleError, QueryLedger, SimilarityOracle,
    SyntheticEmbedder, TargetId,
};

struct Recording<O> {
    inner: O,
    scores: Mutex<Vec<f64>>,
}

impl<O: SimilarityOracle> Recording<O> {
    fn new(inner: O) -> Self {
        Self {
            inner,
            scores: Mutex::new(Vec::new()),
        }
    }

    fn transcript(&self) -> Vec<f64> {
        self.scores.lock().unwrap().clone()
    }
}

impl<O: SimilarityOracle> SimilarityOracle for Recording<O> {
    fn query(&self, image: &ImageTensor, target: &TargetId) -> Result<f64, OracleError> {
        let s = self.inner.query(image, target)?;
        self.scores.lock().unwrap().push(s);
        Ok(s)
    }
    fn validate(&self, image: &ImageTensor, target: &TargetId) -> Result<(), OracleError> {
        self.inner.validate(image, target)
    }
    fn ledger(&self) -> &QueryLedger {
        self.inner.ledger()
    }
    fn targets(&self) -> Vec<TargetId> {
        self.inner.targets()
    }
}

struct Fixture {
    basis: EigenBasis,
    embedder: Arc<SyntheticEmbedder>,
    enrolled: BTreeMap<TargetId, ImageTensor>,
    target: TargetId,
}

fn fixture() -> Fixture {
    let model = FaceModel::new(FaceModelSpec::default());
    let basis = fit_pca(&model.training_set(64), 12).unwrap();
    let embedder = Arc::new(SyntheticEmbedder::new(1, 32, model.dims(), false));
    let target = TargetId::new("t0").unwrap();
    let mut enrolled = BTreeMap::new();
    enrolled.insert(target.clone(), in_span_target(&basis, 5, 0).1);
    enrolled.insert(TargetId::new("t1").unwrap(), model.heldout(1));
    Fixture {
        basis,
        embedder,
        enrolled,
        target,
    }
}

fn small_config() -> OptimizerConfig {
    OptimizerConfig {
        n_restarts: 3,
        restart_iters: 15,
        main_iters: 60,
        seed: 11,
        ..Default::default()
    }
}

fn start(f: &Fixture, budget: Option<u64>) -> (netbox::ServerHandle, Arc<Recording<simrecon::CosineOracle>>) {
    let served = Arc::new(Recording::new(
        make_cosine_oracle(f.embedder.clone(), &f.enrolled, None).unwrap(),
    ));
    let handle = netbox::serve(
        served.clone(),
        "127.0.0.1:0",
        ServerConfig {
            per_target_budget: budget,
            latency: None,
        },
    )
    .unwrap();
    (handle, served)
}

#[test]
fn loopback_run_matches_local_run_score_for_score() {
    let f = fixture();
    let config = small_config();

    let local = Recording::new(make_cosine_oracle(f.embedder.clone(), &f.enrolled, None).unwrap());
    let a = reconstruct(&f.basis, &local, &f.target, &config).unwrap();

    let (server, served) = start(&f, None);
    let remote = Recording::new(RemoteOracle::for_target(&server.addr().to_string(), &f.target, None).unwrap());
    let b = reconstruct(&f.basis, &remote, &f.target, &config).unwrap();

    let lt = local.transcript();
    assert_eq!(lt.len() as u64, config.required_queries());
    assert_eq!(lt, remote.transcript());
    assert_eq!(lt, served.transcript());
    assert_eq!(a.coords, b.coords);
    assert_eq!(a.image, b.image);
    assert_eq!(local.ledger().used(), remote.ledger().used());
    let st = server.targets().into_iter().find(|s| s.target_id == "t0").unwrap();
    assert_eq!(st.queries_used, lt.len() as u64);
}

#[test]
fn stopping_the_server_mid_run_surfaces_a_connection_error_with_partial_trace() {
    let f = fixture();
    let served = make_cosine_oracle(f.embedder.clone(), &f.enrolled, None).unwrap();
    let server = netbox::serve(
        Arc::new(served),
        "127.0.0.1:0",
        ServerConfig {
            per_target_budget: None,
            latency: Some(Duration::from_millis(2)),
        },
    )
    .unwrap();
    let remote = RemoteOracle::for_target(&server.addr().to_string(), &f.target, None).unwrap();
    let config = OptimizerConfig {
        n_restarts: 2,
        restart_iters: 50,
        main_iters: 2000,
        ..small_config()
    };
    let stopper = std::thread::spawn(move || {
        std::thread::sleep(Duration::from_millis(300));
        server.shutdown();
    });
    let err = reconstruct(&f.basis, &remote, &f.target, &config).unwrap_err();
    stopper.join().unwrap();
    assert!(err.is_connection(), "{err}");
    let partial = err.partial().expect("partial run");
    assert!(!partial.trace.records.is_empty());
    assert!(partial.trace.queries_used < config.required_queries());
    assert_eq!(partial.trace.queries_used, remote.ledger().used());
}

#[test]
fn version_mismatch_is_a_typed_handshake_error() {
    use axum::routing::get;
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let app = axum::Router::new().route(
        "/v1/health",
        get(|| async { axum::Json(serde_json::json!({"status": "ok", "version": 99})) }),
    );
    rt.spawn(async move { axum::serve(listener, app).await });
    match RemoteOracle::connect(&addr.to_string(), None) {
        Err(OracleError::VersionMismatch { client, server }) => {
            assert_eq!(client, netbox::PROTOCOL_VERSION);
            assert_eq!(server, 99);
        }
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("handshake accepted"),
    }
}

#[test]
fn request_with_wrong_version_is_rejected() {
    let f = fixture();
    let (server, _) = start(&f, Some(5));
    let mut body = serde_json::to_value(SimilarityRequest::new("t0", &f.enrolled[&f.target])).unwrap();
    body["version"] = serde_json::json!(7);
    let r = reqwest::blocking::Client::new()
        .post(format!("http://{}/v1/similarity", server.addr()))
        .json(&body)
        .send()
        .unwrap();
    assert!(!r.status().is_success());
    let env: ErrorEnvelope = r.json().unwrap();
    assert_eq!(env.error_code, ErrorCode::VersionMismatch);
    assert_eq!(server.targets()[0].queries_used, 0);
}

#[test]
fn concurrent_clients_never_overshoot_the_budget() {
    let f = fixture();
    let budget = 40;
    let (server, _) = start(&f, Some(budget));
    let addr = server.addr().to_string();
    let img = f.enrolled[&f.target].clone();
    let results: Vec<(u64, u64)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (addr, img, t) = (addr.clone(), img.clone(), f.target.clone());
                s.spawn(move || {
                    let client = RemoteOracle::connect(&addr, None).unwrap();
                    let (mut ok, mut exhausted) = (0, 0);
                    for _ in 0..10 {
                        match client.query(&img, &t) {
                            Ok(_) => ok += 1,
                            Err(e) if e.is_budget_exhausted() => exhausted += 1,
                            Err(e) => panic!("{e}"),
                        }
                    }
                    (ok, exhausted)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let ok: u64 = results.iter().map(|r| r.0).sum();
    let exhausted: u64 = results.iter().map(|r| r.1).sum();
    assert_eq!(ok, budget);
    assert_eq!(exhausted, 80 - budget);
    let st = server.targets().into_iter().find(|s| s.target_id == "t0").unwrap();
    assert_eq!(st.queries_used, budget);
    assert_eq!(st.budget_remaining, Some(0));
}

#[test]
fn exhausted_budget_leaves_the_counter_unchanged() {
    let f = fixture();
    let (server, _) = start(&f, Some(2));
    let client = RemoteOracle::connect(&server.addr().to_string(), None).unwrap();
    let img = &f.enrolled[&f.target];
    assert_eq!(client.query(img, &f.target).unwrap(), 1.0);
    client.query(img, &f.target).unwrap();
    let e = client.query(img, &f.target).unwrap_err();
    assert!(e.is_budget_exhausted());
    assert_eq!(client.ledger().used(), 2);
    assert_eq!(server.targets()[0].queries_used, 2);
}

#[test]
fn malformed_requests_do_not_consume_budget() {
    let f = fixture();
    let (server, _) = start(&f, Some(3));
    let url = format!("http://{}/v1/similarity", server.addr());
    let http = reqwest::blocking::Client::new();
    let good = serde_json::to_value(SimilarityRequest::new("t0", &f.enrolled[&f.target])).unwrap();

    let mut short = good.clone();
    let px = short["pixels"].as_str().unwrap().to_string();
    short["pixels"] = serde_json::json!(&px[..px.len() - 8]);
    let mut nan = good.clone();
    {
        use base64::Engine;
        let mut bytes = base64::engine::general_purpose::STANDARD.decode(&px).unwrap();
        bytes[..4].copy_from_slice(&f32::NAN.to_le_bytes());
        nan["pixels"] = serde_json::json!(base64::engine::general_purpose::STANDARD.encode(bytes));
    }
    let mut wrong_dims = good.clone();
    wrong_dims["width"] = serde_json::json!(8);
    wrong_dims["height"] = serde_json::json!(32);
    let mut unknown = good.clone();
    unknown["target_id"] = serde_json::json!("nobody");

    let cases: Vec<(&str, reqwest::blocking::RequestBuilder, ErrorCode)> = vec![
        ("not json", http.post(&url).body("{nope"), ErrorCode::Malformed),
        ("short payload", http.post(&url).json(&short), ErrorCode::Malformed),
        ("non-finite", http.post(&url).json(&nan), ErrorCode::Malformed),
        ("dims", http.post(&url).json(&wrong_dims), ErrorCode::Malformed),
        (
            "unknown target",
            http.post(&url).json(&unknown),
            ErrorCode::UnknownTarget,
        ),
    ];
    for (name, req, code) in cases {
        let r = req.send().unwrap();
        assert!(!r.status().is_success(), "{name}");
        let env: ErrorEnvelope = r.json().unwrap();
        assert_eq!(env.error_code, code, "{name}");
    }
    assert!(server.targets().iter().all(|s| s.queries_used == 0));

    let r: SimilarityResponse = http.post(&url).json(&good).send().unwrap().json().unwrap();
    assert_eq!(r.similarity, 1.0);
    assert_eq!(r.queries_used, 1);
    assert_eq!(r.budget_remaining, Some(2));
}
