//! Drives the HTTP router in-process: gateway traffic, an MD review, the
//! outbox and the virtual clock.

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use materna::registry::parse_facilities;
use materna::service::api::{router, AppState};
use materna::service::clock::{Clock, VirtualClock};
use materna::service::config::default_epoch;
use materna::service::{Service, Settings, SharedService};
use materna::sim::TABLE3_CSV;
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: &str) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.starts_with('{') {
        req = req.header("content-type", "application/json");
    }
    let resp = app.clone().oneshot(req.body(Body::from(body.to_owned())).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8_lossy(&bytes).into_owned())
}

#[tokio::main]
async fn main() {
    let clock = Arc::new(VirtualClock::new(default_epoch()));
    let service = Service::new(Settings::default(), parse_facilities(TABLE3_CSV).unwrap(), clock.now()).unwrap();
    let app = router(AppState::with_virtual_clock(SharedService::new(service), clock));

    for (method, uri, body) in [
        ("POST", "/gateway/inbound", "REG|07504432147|36.190000|44.010000|Sara|27"),
        ("POST", "/gateway/inbound", "REG|07504432147|36.190000|44.010000|Sara|27"),
        ("POST", "/reviews/07504432147", r#"{"gestational_week":10,"next_review":"2012-11-29","weight_kg":61.5,"blood_pressure":"118/76"}"#),
        ("POST", "/clock/tick", r#"{"days":24}"#),
        ("GET", "/outbox?max=10", ""),
        ("POST", "/advice", &format!(r#"{{"who":"Admin","target":"ALL","text":"{}"}}"#, "x".repeat(251))),
        ("GET", "/women/07504432147", ""),
        ("GET", "/women/07000000000", ""),
    ] {
        let (status, text) = call(&app, method, uri, body).await;
        let text = if text.len() > 160 { format!("{}...", &text[..160]) } else { text };
        println!("{method} {uri} -> {status}\n  {text}");
    }
}
