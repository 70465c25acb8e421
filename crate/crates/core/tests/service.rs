use std::sync::Arc;
use std::thread;

use ragforge::corpus::Document;
use ragforge::embedder::{Embedder, FeatureConfig, Projection};
use ragforge::llm::{LlmClient, ScriptedProvider};
use ragforge::product_intent::ProductCatalog;
use ragforge::rag::{service, AnswerBundle, RagConfig, RagEngine, Retrieval, UNANSWERABLE};
use ragforge::vector_index::Index;
use serde_json::{json, Value};

const CATALOG: &str = include_str!("../data/catalog.json");

fn docs() -> Vec<Document> {
    vec![
        Document::helpx("acro-blank", "Create a blank PDF", "Open Acrobat and choose Tools > Create PDF > Blank Page.")
            .with_tags(["Adobe Acrobat"]),
        Document::helpx("acro-merge", "Merge PDF files", "Choose Tools > Combine Files and add the PDFs to merge.")
            .with_tags(["Adobe Acrobat"]),
        Document::helpx("ps-crop", "Crop an image", "Select the Crop tool in Photoshop and drag the handles.")
            .with_tags(["Adobe Photoshop"]),
    ]
}

fn engine(client: Arc<dyn LlmClient>) -> RagEngine {
    let embedder = Embedder::new(Projection::identity(128), FeatureConfig::with_dim(128)).unwrap();
    let index = Index::build(&docs(), &embedder).unwrap();
    let catalog = ProductCatalog::from_json_str(CATALOG).unwrap();
    RagEngine::new(index, embedder, Some(catalog), client, RagConfig::default()).unwrap()
}

/// Serves the router on an ephemeral port for the life of the process.
fn spawn(engine: RagEngine, origins: Vec<String>) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, service::router(Arc::new(engine), &origins)).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn scripted(answer: &str) -> Arc<dyn LlmClient> {
    Arc::new(ScriptedProvider::script([answer]))
}

fn status_and_body(r: Result<ureq::Response, ureq::Error>) -> (u16, Value) {
    match r {
        Ok(resp) => (resp.status(), resp.into_json().unwrap()),
        Err(ureq::Error::Status(code, resp)) => (code, resp.into_json().unwrap()),
        Err(e) => panic!("transport error: {e}"),
    }
}

#[test]
fn health_reports_index() {
    let base = spawn(engine(scripted("ok")), vec![]);
    let (code, body) = status_and_body(ureq::get(&format!("{base}/health")).call());
    assert_eq!(code, 200);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["index_size"], 3);
    assert_eq!(body["projection_version"], Projection::identity(128).version());
}

#[test]
fn ask_returns_bundle_with_filtered_context() {
    let base = spawn(engine(scripted("Choose Blank Page.")), vec![]);
    let resp = ureq::post(&format!("{base}/ask"))
        .send_json(json!({ "query": "how do I make an empty pdf in acrobat" }))
        .unwrap();
    let bundle: AnswerBundle = resp.into_json().unwrap();
    assert_eq!(bundle.answer, "Choose Blank Page.");
    assert_eq!(bundle.products.top(), Some("Adobe Acrobat"));
    assert_eq!(bundle.used_items[0].payload.item_id, "acro-blank");
    assert!(bundle.prompt.contains("helps humans use Adobe Acrobat"));
    for stage in ["intent", "embed", "search", "dedup", "prompt", "complete"] {
        assert!(bundle.timings.contains_key(stage), "missing timing {stage}");
    }
}

#[test]
fn manual_products_override_detection() {
    let base = spawn(engine(scripted("ok")), vec![]);
    let resp = ureq::post(&format!("{base}/ask"))
        .send_json(json!({ "query": "crop a pdf page", "products": ["Adobe Photoshop"] }))
        .unwrap();
    let bundle: AnswerBundle = resp.into_json().unwrap();
    assert_eq!(bundle.products.top(), Some("Adobe Photoshop"));
    assert_eq!(bundle.used_items[0].payload.item_id, "ps-crop");
}

#[test]
fn retrieve_skips_the_model() {
    let failing: Arc<dyn LlmClient> = Arc::new(ScriptedProvider::script(Vec::<String>::new()));
    let base = spawn(engine(failing), vec![]);
    let resp = ureq::post(&format!("{base}/retrieve"))
        .send_json(json!({ "query": "merge pdf files", "k": 2 }))
        .unwrap();
    let r: Retrieval = resp.into_json().unwrap();
    assert_eq!(r.items.len(), 2);
    assert_eq!(r.items[0].payload.item_id, "acro-merge");
    assert_eq!(r.items[0].rank, 1);
}

#[test]
fn bad_requests_are_400() {
    let base = spawn(engine(scripted("ok")), vec![]);
    let (code, body) = status_and_body(ureq::post(&format!("{base}/ask")).send_json(json!({ "query": "   " })));
    assert_eq!(code, 400);
    assert!(body["error"].as_str().unwrap().contains("empty"));
    let (code, _) =
        status_and_body(ureq::post(&format!("{base}/retrieve")).send_json(json!({ "query": "pdf", "k": 0 })));
    assert_eq!(code, 400);
}

#[test]
fn model_failure_is_502_with_partial_bundle() {
    let failing: Arc<dyn LlmClient> = Arc::new(ScriptedProvider::with_fixtures(Default::default()));
    let base = spawn(engine(failing), vec![]);
    let (code, body) =
        status_and_body(ureq::post(&format!("{base}/ask")).send_json(json!({ "query": "merge pdf files" })));
    assert_eq!(code, 502);
    assert!(body["error"].is_string());
    let partial: AnswerBundle = serde_json::from_value(body["partial"].clone()).unwrap();
    assert!(!partial.prompt.is_empty());
    assert!(partial.answer.is_empty());
}

#[test]
fn nothing_relevant_is_unanswerable() {
    let failing: Arc<dyn LlmClient> = Arc::new(ScriptedProvider::with_fixtures(Default::default()));
    let base = spawn(engine(failing), vec![]);
    let resp = ureq::post(&format!("{base}/ask")).send_json(json!({ "query": "zzqx wvvk" })).unwrap();
    let bundle: AnswerBundle = resp.into_json().unwrap();
    assert_eq!(bundle.answer, UNANSWERABLE);
    assert!(bundle.prompt.is_empty());
}

#[test]
fn catalog_lists_products() {
    let base = spawn(engine(scripted("ok")), vec![]);
    let (code, body) = status_and_body(ureq::get(&format!("{base}/catalog")).call());
    assert_eq!(code, 200);
    let names: Vec<&str> = body["products"].as_array().unwrap().iter().filter_map(Value::as_str).collect();
    assert!(names.contains(&"Adobe Acrobat"));
}

#[test]
fn cors_allows_configured_origin() {
    let origin = "http://localhost:5173";
    let base = spawn(engine(scripted("ok")), vec![origin.to_string()]);
    let resp = ureq::request("OPTIONS", &format!("{base}/ask"))
        .set("Origin", origin)
        .set("Access-Control-Request-Method", "POST")
        .set("Access-Control-Request-Headers", "content-type")
        .call()
        .unwrap();
    assert_eq!(resp.header("access-control-allow-origin"), Some(origin));

    let resp = ureq::get(&format!("{base}/health")).set("Origin", "http://evil.example").call().unwrap();
    assert_eq!(resp.header("access-control-allow-origin"), None);
}

#[test]
fn cors_defaults_to_any_origin() {
    let base = spawn(engine(scripted("ok")), vec![]);
    let resp = ureq::get(&format!("{base}/health")).set("Origin", "http://ui.example").call().unwrap();
    assert_eq!(resp.header("access-control-allow-origin"), Some("*"));
}
