mod common;

use std::net::SocketAddr;
use std::sync::Arc;

use ipseq::client::Client;
use ipseq::engine::Engine;
use ipseq::error::Error;
use ipseq::server::ServerHandle;
use ipseq_core::session::Truncation;
use serde_json::Value;

fn loopback() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

fn setup(online_lr: f64) -> (tempfile::TempDir, Arc<Engine>, ServerHandle, Client) {
    let dir = tempfile::tempdir().unwrap();
    common::text_task(dir.path(), "toy", &common::PAIRS, 5, online_lr);
    common::text_task(dir.path(), "another", &common::PAIRS, 6, 0.0);
    let engine = Arc::new(Engine::load_dir(dir.path()).unwrap());
    let server = ServerHandle::spawn(engine.clone(), loopback()).unwrap();
    let client = Client::new(&server.url());
    (dir, engine, server, client)
}

fn remote_code<T: std::fmt::Debug>(r: Result<T, Error>) -> String {
    match r {
        Err(Error::Remote { code, .. }) => code,
        other => panic!("expected a remote error, got {other:?}"),
    }
}

/// Sends raw bytes and returns the status and parsed body.
fn raw(server: &ServerHandle, method: &str, path: &str, body: &str) -> (u16, Value) {
    let req = ureq::request(method, &format!("{}{path}", server.url()));
    let resp = match req.send_string(body) {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("transport: {e}"),
    };
    let status = resp.status();
    (status, resp.into_json().expect("every response is JSON"))
}

#[test]
fn version_and_task_listing() {
    let (_dir, _engine, server, client) = setup(0.0);
    assert_eq!(client.version().unwrap(), 1);
    let tasks = client.tasks().unwrap();
    let ids: Vec<_> = tasks.iter().map(|t| t.id.as_str()).collect();
    assert_eq!(ids, ["another", "toy"]);
    assert_eq!(tasks[1].modality, "text");
    assert_eq!(tasks[1].name, "Task toy");
    let (status, body) = raw(&server, "GET", "/tasks", "");
    assert_eq!((status, body["ok"].as_bool()), (200, Some(true)));
}

#[test]
fn empty_tasks_dir_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Arc::new(Engine::load_dir(dir.path()).unwrap());
    let server = ServerHandle::spawn(engine, loopback()).unwrap();
    assert!(Client::new(&server.url()).tasks().unwrap().is_empty());
}

#[test]
fn sessions_are_distinct_and_ids_are_checked() {
    let (_dir, _engine, _server, client) = setup(0.0);
    let (a, preview) = client.start_session("toy", 2).unwrap();
    let (b, _) = client.start_session("toy", 2).unwrap();
    assert_ne!(a, b);
    assert_eq!(preview, "abc");
    assert_eq!(remote_code(client.start_session("nope", 0)), "unknown_task");
    assert_eq!(remote_code(client.start_session("toy", 6)), "unknown_sample");
    assert_eq!(remote_code(client.predict(999)), "unknown_session");
    assert_eq!(remote_code(client.feedback(999, "a", 1, false)), "unknown_session");
}

#[test]
fn protocol_and_state_errors() {
    let (_dir, _engine, _server, client) = setup(0.0);
    let (id, _) = client.start_session("toy", 0).unwrap();
    assert_eq!(remote_code(client.feedback(id, "a", 1, false)), "bad_state");
    assert_eq!(remote_code(client.validate(id, false, None)), "bad_state");
    let first = client.predict(id).unwrap();
    assert_eq!(remote_code(client.predict(id)), "bad_state");

    let h = client.feedback(id, "b a", 3, true).unwrap();
    assert!(h.hypothesis.starts_with("b a"), "{h:?}");
    let h = client.feedback(id, "zq", 2, true).unwrap();
    assert!(h.hypothesis.starts_with("zq") && h.spliced, "{h:?}");
    let unconstrained = client.feedback(id, "", 0, false).unwrap();
    assert_eq!(unconstrained, first);

    let report = client.validate(id, false, None).unwrap();
    assert_eq!(report.final_text, first.hypothesis);
    assert_eq!(report.effort.keystrokes, 5);
    assert_eq!(report.effort.mouse_actions, 3);
    assert_eq!(report.effort.iterations, 4);
    assert_eq!(remote_code(client.validate(id, false, None)), "bad_state");
}

#[test]
fn truncation_over_the_wire() {
    let (_dir, _engine, _server, client) = setup(0.0);
    let (id, _) = client.start_session("toy", 0).unwrap();
    let h = client.feedback_after_predict(id);
    let len = h.chars().count();
    assert!(len >= 2, "{h:?}");
    let bad = Truncation {
        chars: len,
        moved_pointer: false,
    };
    assert_eq!(remote_code(client.validate(id, false, Some(bad))), "bad_request");
    let report = client
        .validate(
            id,
            false,
            Some(Truncation {
                chars: 1,
                moved_pointer: true,
            }),
        )
        .unwrap();
    assert_eq!(report.final_text, h.chars().take(1).collect::<String>());
    assert_eq!((report.effort.keystrokes, report.effort.mouse_actions), (2 + 1, 1 + 1 + 1));
}

trait PredictText {
    fn feedback_after_predict(&self, id: u64) -> String;
}

impl PredictText for Client {
    fn feedback_after_predict(&self, id: u64) -> String {
        self.predict(id).unwrap();
        self.feedback(id, "ab", 2, true).unwrap().hypothesis
    }
}

#[test]
fn malformed_requests_get_error_objects() {
    let (_dir, _engine, server, client) = setup(0.0);
    let cases = [
        ("POST", "/session", "{not json"),
        ("POST", "/session", "[]"),
        ("POST", "/session", r#"{"task_id": 5, "sample_id": 0}"#),
        ("POST", "/session", r#"{"task_id": "toy", "sample_id": -1}"#),
        ("POST", "/feedback", r#"{"session_id": 1, "prefix": "a"}"#),
        ("POST", "/validate", ""),
        ("POST", "/predict", "\u{0}\u{1}"),
    ];
    for (method, path, body) in cases {
        let (status, v) = raw(&server, method, path, body);
        assert_eq!(status, 400, "{path} {body:?}");
        assert_eq!(v["ok"], Value::Bool(false));
        assert_eq!(v["code"], "bad_request");
        assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
    let (status, v) = raw(&server, "GET", "/predict", "");
    assert_eq!((status, v["ok"].as_bool()), (405, Some(false)));
    let (status, v) = raw(&server, "GET", "/nowhere", "");
    assert_eq!((status, v["code"].as_str()), (404, Some("not_found")));
    assert_eq!(client.version().unwrap(), 1);
}

#[test]
fn concurrent_request_on_one_session_is_busy() {
    let (_dir, engine, _server, client) = setup(0.0);
    let (id, _) = client.start_session("toy", 0).unwrap();
    let (other, _) = client.start_session("toy", 1).unwrap();
    let code = engine
        .hold_session(id, || {
            let busy = remote_code(client.predict(id));
            client.predict(other).unwrap();
            busy
        })
        .unwrap();
    assert_eq!(code, "busy");
    client.predict(id).unwrap();
}

#[test]
fn restart_forgets_sessions_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    common::text_task(dir.path(), "toy", &common::PAIRS, 5, 0.0);
    let id = {
        let server = ServerHandle::spawn(Arc::new(Engine::load_dir(dir.path()).unwrap()), loopback()).unwrap();
        let c = Client::new(&server.url());
        let (id, _) = c.start_session("toy", 0).unwrap();
        c.predict(id).unwrap();
        id
    };
    let server = ServerHandle::spawn(Arc::new(Engine::load_dir(dir.path()).unwrap()), loopback()).unwrap();
    let c = Client::new(&server.url());
    assert_eq!(remote_code(c.feedback(id + 100, "a", 1, false)), "unknown_session");
    let (fresh, _) = c.start_session("toy", 0).unwrap();
    c.predict(fresh).unwrap();
}

#[test]
fn online_learning_changes_the_model_only_with_positive_rate() {
    for (lr, should_change) in [(0.0, false), (0.5, true)] {
        let (_dir, engine, _server, client) = setup(lr);
        let before = engine.task("toy").unwrap().checkpoint().to_bytes();
        let (id, _) = client.start_session("toy", 3).unwrap();
        client.predict(id).unwrap();
        client.feedback(id, "c a b .", 7, true).unwrap();
        client.validate(id, true, None).unwrap();
        let changed = engine.task("toy").unwrap().checkpoint().to_bytes() != before;
        assert_eq!(changed, should_change, "lr {lr}");
        let untouched = engine.task("another").unwrap();
        assert_eq!(untouched.online_lr(), 0.0);
    }
}

#[test]
fn validate_without_learn_leaves_model_alone() {
    let (_dir, engine, _server, client) = setup(0.5);
    let before = engine.task("toy").unwrap().checkpoint().to_bytes();
    let (id, _) = client.start_session("toy", 1).unwrap();
    client.predict(id).unwrap();
    client.validate(id, false, None).unwrap();
    assert_eq!(engine.task("toy").unwrap().checkpoint().to_bytes(), before);
}

#[test]
fn media_is_served_for_feature_tasks() {
    let dir = tempfile::tempdir().unwrap();
    ipseq::demo::build_demo(dir.path(), ipseq::demo::DemoOptions { epochs: 1, seed: 3 }).unwrap();
    let engine = Arc::new(Engine::load_dir(dir.path()).unwrap());
    let server = ServerHandle::spawn(engine, loopback()).unwrap();
    let client = Client::new(&server.url());
    let ids: Vec<_> = client.tasks().unwrap().into_iter().map(|t| t.id).collect();
    assert_eq!(ids, ["image_caption", "nmt", "video_caption"]);

    let (_, preview) = client.start_session("image_caption", 0).unwrap();
    assert!(preview.starts_with("/media/image_caption/") && preview.ends_with(".svg"), "{preview}");
    let resp = ureq::get(&format!("{}{preview}", server.url())).call().unwrap();
    assert_eq!(resp.content_type(), "image/svg+xml");
    assert!(resp.into_string().unwrap().starts_with("<svg"));

    let (_, preview) = client.start_session("nmt", 0).unwrap();
    assert_eq!(preview, "the red house");
    let (status, v) = raw(&server, "GET", "/media/image_caption/missing.svg", "");
    assert_eq!((status, v["code"].as_str()), (404, Some("not_found")));
}
