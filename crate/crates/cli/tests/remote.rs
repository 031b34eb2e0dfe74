mod common;

use std::time::Duration;

use common::{choices, serve};
use llmreward::client::{
    Backend, ClientError, LlmClient, RemoteEndpoint, RequestDefaults, ResponseCache, RetryPolicy,
};

fn endpoint(url: &str, attempts: u32) -> RemoteEndpoint {
    let mut r = RemoteEndpoint::with_token(url, "sk-test");
    r.retry = RetryPolicy { attempts, base_delay: Duration::from_millis(1), max_delay: Duration::from_millis(5), jitter: false };
    r.timeout = Duration::from_secs(10);
    r
}

#[test]
fn a_batch_is_one_request_with_choices_matched_by_index() {
    let server = serve(|_, body| {
        let prompts = body["prompt"].as_array().unwrap();
        // Choices come back in reverse order; the index puts them right.
        let choices: Vec<_> = prompts
            .iter()
            .enumerate()
            .rev()
            .map(|(i, p)| serde_json::json!({"text": format!("echo {}", p.as_str().unwrap()), "index": i}))
            .collect();
        (200, serde_json::json!({ "choices": choices }).to_string())
    });
    let r = endpoint(&server.url, 1);
    let out = r.complete_batch("m", &["a", "b", "c"], 0.0, 16, &["\n".to_string()]).unwrap();
    assert_eq!(out, ["echo a", "echo b", "echo c"]);
    assert_eq!(server.hits(), 1);
    let seen = server.seen.lock().unwrap();
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-test"));
    assert_eq!(seen[0].body["model"], "m");
    assert_eq!(seen[0].body["max_tokens"], 16);
    assert_eq!(seen[0].body["stop"], serde_json::json!(["\n"]));
}

#[test]
fn server_errors_are_retried_until_the_budget_runs_out() {
    let server = serve(|_, _| (500, "{\"error\":\"overloaded\"}".into()));
    let err = endpoint(&server.url, 3).complete_batch("m", &["a"], 0.0, 8, &[]).unwrap_err();
    assert!(matches!(err, ClientError::Endpoint { status: 500, ref body } if body.contains("overloaded")), "{err}");
    assert_eq!(server.hits(), 3);
}

#[test]
fn transient_failures_recover() {
    let server = serve(|n, body| if n < 2 { (if n == 0 { 429 } else { 503 }, String::new()) } else { choices(body, |_| "Yes".into()) });
    let out = endpoint(&server.url, 5).complete_batch("m", &["a"], 0.0, 8, &[]).unwrap();
    assert_eq!(out, ["Yes"]);
    assert_eq!(server.hits(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = serve(|_, _| (400, "bad request".into()));
    let err = endpoint(&server.url, 5).complete_batch("m", &["a"], 0.0, 8, &[]).unwrap_err();
    assert!(matches!(err, ClientError::Endpoint { status: 400, .. }), "{err}");
    assert_eq!(server.hits(), 1);
}

#[test]
fn wrong_number_of_choices_is_a_protocol_error() {
    let server = serve(|_, _| (200, "{\"choices\":[{\"text\":\"x\"}]}".into()));
    let err = endpoint(&server.url, 5).complete_batch("m", &["a", "b"], 0.0, 8, &[]).unwrap_err();
    assert!(matches!(err, ClientError::Protocol(_)), "{err}");
    assert_eq!(server.hits(), 1);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let url = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}/v1/completions", l.local_addr().unwrap())
    };
    let err = endpoint(&url, 2).complete_batch("m", &["a"], 0.0, 8, &[]).unwrap_err();
    assert!(matches!(err, ClientError::Transport { attempts: 2, .. }), "{err}");
}

#[test]
fn cached_client_asks_the_endpoint_once() {
    let server = serve(|_, body| choices(body, |p| format!("answer to {p}")));
    let defaults = RequestDefaults { batch_size: 2, ..RequestDefaults::default() };
    let client = LlmClient::new(Backend::Remote(endpoint(&server.url, 1)), ResponseCache::in_memory(), defaults);
    let prompts: Vec<String> = (0..5).map(|i| format!("p{i}")).collect();
    let first = client.complete_prompts(&prompts).unwrap();
    assert_eq!(first.succeeded(), 5);
    assert_eq!(server.hits(), 3);
    let again = client.complete_prompts(&prompts).unwrap();
    assert_eq!(again.succeeded(), 5);
    assert_eq!(server.hits(), 3);
    assert_eq!(client.complete(&client.request("p3")).unwrap(), "answer to p3");
    assert_eq!(client.stats().backend_calls, 3);
}
