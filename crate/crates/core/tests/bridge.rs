use strawbot::bridge::{self, SimHost, StepPolicy, WireRequest, WireResponse};
use strawbot::world::{minimal_scenario, World};

const REQUESTS: &str = include_str!("golden/bridge_requests.json");
const RESPONSES: &str = include_str!("golden/bridge_responses.json");

fn host() -> SimHost {
    SimHost::with_options(
        World::from_scenario(minimal_scenario()).unwrap(),
        bridge::DEFAULT_QUEUE_CAPACITY,
        StepPolicy::PerRequest(1),
    )
}

fn requests() -> Vec<WireRequest> {
    serde_json::from_str(REQUESTS).unwrap()
}

fn golden() -> Vec<WireResponse> {
    serde_json::from_str(RESPONSES).unwrap()
}

#[test]
fn loopback_replays_golden_corpus() {
    let mut h = host();
    let got: Vec<WireResponse> = requests().iter().map(|r| h.handle(r)).collect();
    let want = golden();
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(&want).enumerate() {
        assert_eq!(g, w, "request {i}");
    }
}

#[test]
fn http_replays_golden_corpus() {
    let server = bridge::serve(host(), "127.0.0.1:0").unwrap();
    let got: Vec<WireResponse> = requests()
        .iter()
        .map(|r| bridge::http_send(server.addr(), r).unwrap())
        .collect();
    server.shutdown();
    assert_eq!(got, golden());
}

#[test]
fn golden_covers_every_status_class() {
    let statuses: std::collections::BTreeSet<u16> = golden().iter().map(|r| r.status).collect();
    for s in [200, 202, 400, 404, 405] {
        assert!(statuses.contains(&s), "missing {s}");
    }
}

#[test]
fn concurrent_http_clients_are_serialised() {
    let server = bridge::serve(
        SimHost::with_options(
            World::from_scenario(minimal_scenario()).unwrap(),
            bridge::DEFAULT_QUEUE_CAPACITY,
            StepPolicy::Manual,
        ),
        "127.0.0.1:0",
    )
    .unwrap();
    let addr = server.addr();
    let tokens: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|i| {
                s.spawn(move || {
                    let body = format!(r#"{{"vx":0.0{i},"vy":0,"omega":0}}"#);
                    let r = bridge::http_send(addr, &WireRequest::post("/api/v1/chassis", body))
                        .unwrap();
                    assert_eq!(r.status, 202);
                    r.json()["data"]["token"].as_str().unwrap().to_string()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    server.shutdown();
    let mut sorted = tokens.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 8, "tokens are unique: {tokens:?}");
    let expected: Vec<String> = (1..=8).map(|i| format!("cmd-{i:06}")).collect();
    assert_eq!(sorted, expected);
}
