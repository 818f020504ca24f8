use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use mrtss::design::{build_design, DesignInputs, RandomizationSchedule};
use mrtss::power::power_at;
use mrtss::trends::TrendSpec;
use mrtss_service::{router, AppState, SESSION_HEADER};

struct Reply {
    status: StatusCode,
    session: Option<String>,
    set_cookie: Option<String>,
    content_type: Option<String>,
    body: String,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.body))
    }
}

async fn call(app: &Router, method: &str, uri: &str, session: Option<&str>, body: impl Into<Body>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(s) = session {
        req = req.header(SESSION_HEADER, s);
    }
    let resp = app.clone().oneshot(req.body(body.into()).unwrap()).await.unwrap();
    let header = |name: &str| resp.headers().get(name).map(|v| v.to_str().unwrap().to_string());
    let session = header(SESSION_HEADER);
    let set_cookie = header("set-cookie");
    let content_type = header("content-type");
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    Reply {
        status,
        session,
        set_cookie,
        content_type,
        body: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

fn heartsteps_design(changing_point: u32) -> Value {
    json!({
        "days": 42, "per_day": 5,
        "randomization": {"mode": "constant", "probability": 0.4},
        "availability": {"kind": "quadratic", "average": 0.5, "initial": 0.3, "changing_point": 25},
        "effect": {"kind": "quadratic", "average": 0.1, "initial": 0.0, "changing_point": changing_point}
    })
}

fn table_row_one() -> Value {
    json!({
        "days": 100, "per_day": 5,
        "randomization": {"mode": "constant", "probability": 0.5},
        "availability": {"kind": "constant", "average": 0.7},
        "effect": {"kind": "constant", "average": 0.12},
        "q": 3
    })
}

#[tokio::test]
async fn heartsteps_sample_size() {
    let app = router(AppState::default());
    let body = json!({"design": heartsteps_design(28), "alpha0": 0.05, "target_power": 0.8});
    let r = call(&app, "POST", "/v1/samplesize", None, body.to_string()).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    assert_eq!(r.content_type.as_deref(), Some("application/json"));
    let v = r.json();
    let n = v["sample_size"].as_u64().unwrap();
    assert!(n > 10);
    assert!(v["power_at_n"].as_f64().unwrap() >= 0.8);
    assert_eq!(v["design"]["days"], 42);
    assert!(v["warnings"].as_array().unwrap().is_empty());
    assert!(r.body.starts_with("{\"sample_size\":"));
    assert!(r.set_cookie.unwrap().starts_with("mrtss_session="));
}

#[tokio::test]
async fn negative_effect_rejected_with_days() {
    let app = router(AppState::default());
    let body = json!({"design": heartsteps_design(21), "target_power": 0.8});
    let r = call(&app, "POST", "/v1/samplesize", None, body.to_string()).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let v = r.json();
    assert_eq!(v["error"]["code"], "effect_negative");
    assert!(!v["error"]["details"]["issues"][0]["days"].as_array().unwrap().is_empty());

    let ok = json!({"design": heartsteps_design(22), "target_power": 0.8});
    let r = call(&app, "POST", "/v1/samplesize", None, ok.to_string()).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
}

#[tokio::test]
async fn contract_errors() {
    let app = router(AppState::default());
    let cases = [
        (
            "/v1/samplesize",
            json!({"design": heartsteps_design(28), "alpha0": 0.05, "target_power": 0.05}),
            400,
            "invalid_target",
        ),
        ("/v1/power", json!({"design": table_row_one(), "n": 4}), 400, "n_too_small"),
        ("/v1/power", json!({"design": table_row_one(), "n": 20, "alpha0": 1.5}), 400, "invalid_alpha"),
        (
            "/v1/samplesize",
            json!({"design": {"days": 10, "per_day": 2,
                "randomization": {"mode": "constant", "probability": 0.4},
                "availability": {"kind": "constant", "average": 0.7},
                "effect": {"kind": "constant", "average": 0.0}}, "target_power": 0.8}),
            422,
            "effect_too_small",
        ),
        (
            "/v1/power",
            json!({"design": {"days": 10, "per_day": 2,
                "randomization": {"mode": "uploaded", "token": "nope"},
                "availability": {"kind": "constant", "average": 0.7},
                "effect": {"kind": "constant", "average": 0.1}}, "n": 20}),
            400,
            "unknown_token",
        ),
    ];
    for (uri, body, status, code) in cases {
        let r = call(&app, "POST", uri, None, body.to_string()).await;
        assert_eq!(r.status.as_u16(), status, "{uri} {}", r.body);
        assert_eq!(r.json()["error"]["code"], code);
    }
    let r = call(&app, "POST", "/v1/power", None, "{not json").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["error"]["code"], "invalid_json");
}

#[tokio::test]
async fn power_matches_library() {
    let app = router(AppState::default());
    let r = call(&app, "POST", "/v1/power", None, json!({"design": table_row_one(), "N": 10}).to_string()).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    let got = r.json()["power"].as_f64().unwrap();
    let inputs: DesignInputs = serde_json::from_value(table_row_one()).unwrap();
    let want = power_at(&build_design(&inputs).unwrap(), 0.05, 10).unwrap();
    assert_eq!(got, want);
    assert!((got - 0.839).abs() < 0.01);

    let mut zero = table_row_one();
    zero["effect"]["average"] = json!(0.0);
    let r = call(&app, "POST", "/v1/power", None, json!({"design": zero, "n": 10}).to_string()).await;
    assert_eq!(r.json()["power"], 0.05);
}

#[tokio::test]
async fn history_records_successes_in_order() {
    let app = router(AppState::default());
    let fresh = call(&app, "GET", "/v1/history", None, Body::empty()).await;
    assert!(fresh.json()["entries"].as_array().unwrap().is_empty());
    let sid = fresh.session.unwrap();

    let a = call(
        &app,
        "POST",
        "/v1/samplesize",
        Some(&sid),
        json!({"design": heartsteps_design(28), "target_power": 0.8}).to_string(),
    )
    .await;
    assert_eq!(a.status, StatusCode::OK);
    let bad = call(&app, "POST", "/v1/power", Some(&sid), json!({"design": table_row_one(), "n": 3}).to_string()).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    let b = call(&app, "POST", "/v1/power", Some(&sid), json!({"design": table_row_one(), "n": 40}).to_string()).await;
    assert_eq!(b.status, StatusCode::OK);
    assert!(b.set_cookie.is_none());

    let h = call(&app, "GET", "/v1/history", Some(&sid), Body::empty()).await.json();
    let entries = h["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[0]["seq"], 1);
    assert_eq!(entries[0]["result"]["kind"], "sample_size");
    assert_eq!(entries[1]["result"]["kind"], "power");

    let csv = call(&app, "GET", "/v1/history/export?format=csv", Some(&sid), Body::empty()).await;
    assert!(csv.content_type.unwrap().starts_with("text/csv"));
    let lines: Vec<&str> = csv.body.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("result,result_type,"));
    assert!(lines[0].ends_with(",timestamp"));
    assert!(lines[2].starts_with(&format!("{},power,", b.json()["power"])));

    let json_export = call(&app, "GET", "/v1/history/export?format=json", Some(&sid), Body::empty()).await;
    assert_eq!(json_export.json().as_array().unwrap().len(), 2);
    let bad_format = call(&app, "GET", "/v1/history/export?format=xml", Some(&sid), Body::empty()).await;
    assert_eq!(bad_format.status, StatusCode::BAD_REQUEST);

    let other = call(&app, "GET", "/v1/history", Some("unknown-session"), Body::empty()).await;
    assert!(other.json()["entries"].as_array().unwrap().is_empty());
    assert_ne!(other.session.unwrap(), sid);
}

#[tokio::test]
async fn cookie_identifies_session() {
    let app = router(AppState::default());
    let first = call(&app, "POST", "/v1/power", None, json!({"design": table_row_one(), "n": 12}).to_string()).await;
    let cookie = first.set_cookie.unwrap();
    let pair = cookie.split(';').next().unwrap().to_string();
    let req = Request::get("/v1/history").header("cookie", pair).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["entries"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn sessions_expire() {
    let app = router(AppState::with_ttl(Duration::from_millis(20)));
    let r = call(&app, "POST", "/v1/power", None, json!({"design": table_row_one(), "n": 12}).to_string()).await;
    let sid = r.session.unwrap();
    tokio::time::sleep(Duration::from_millis(40)).await;
    let h = call(&app, "GET", "/v1/history", Some(&sid), Body::empty()).await;
    assert!(h.json()["entries"].as_array().unwrap().is_empty());
    assert_ne!(h.session.unwrap(), sid);
}

#[tokio::test]
async fn csv_upload_round_trip() {
    let app = router(AppState::default());
    let mut csv = String::from("index,probability\r\n");
    for day in 1..=12 {
        csv.push_str(&format!("{day},{}\r\n", if day % 2 == 0 { "0.3" } else { "0.5" }));
    }
    let r = call(&app, "POST", "/v1/randomization-csv?mode=day&days=12&per_day=4", None, csv).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    let v = r.json();
    assert_eq!(v["total_rows"], 12);
    assert_eq!(v["preview"].as_array().unwrap().len(), 10);
    assert_eq!(v["preview"][1]["probability"], 0.3);
    let token = v["token"].as_str().unwrap().to_string();

    let design = json!({
        "days": 12, "per_day": 4,
        "randomization": {"mode": "uploaded", "token": token},
        "availability": {"kind": "constant", "average": 0.7},
        "effect": {"kind": "linear", "average": 0.1, "initial": 0.05}
    });
    let r = call(&app, "POST", "/v1/power", None, json!({"design": design, "n": 30}).to_string()).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    let echoed = &r.json()["design"]["randomization"];
    assert_eq!(echoed["mode"], "per_day");

    let inline = DesignInputs {
        days: 12,
        per_day: 4,
        randomization: RandomizationSchedule::PerDay {
            values: (1..=12).map(|d| if d % 2 == 0 { 0.3 } else { 0.5 }).collect(),
        },
        availability: TrendSpec::Constant { average: 0.7 },
        effect: TrendSpec::Linear {
            average: 0.1,
            initial: 0.05,
        },
        q: None,
    };
    let want = power_at(&build_design(&inline).unwrap(), 0.05, 30).unwrap();
    assert_eq!(r.json()["power"].as_f64().unwrap(), want);
}

#[tokio::test]
async fn csv_upload_errors() {
    let app = router(AppState::default());
    let cases = [
        ("index,prob\n1,0.5\n", 1),
        ("index,probability\n1,0.5\n2,1.5\n", 3),
        ("index,probability\n1,0.5\n1,0.4\n", 3),
    ];
    for (text, line) in cases {
        let r = call(&app, "POST", "/v1/randomization-csv?mode=day&days=2&per_day=3", None, text).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST);
        let v = r.json();
        assert_eq!(v["error"]["code"], "csv_parse");
        assert_eq!(v["error"]["details"]["line"], line, "{text}");
    }
    let r = call(&app, "POST", "/v1/randomization-csv?mode=week&days=2&per_day=3", None, "index,probability\n").await;
    assert_eq!(r.json()["error"]["code"], "invalid_query");
    let r = call(&app, "POST", "/v1/randomization-csv", None, "index,probability\n").await;
    assert_eq!(r.json()["error"]["code"], "invalid_query");
}

#[tokio::test]
async fn trend_preview_series() {
    let app = router(AppState::default());
    let r = call(
        &app,
        "GET",
        "/v1/trend/preview?role=effect&days=42&kind=quadratic&average=0.1&initial=0&changing_point=28",
        None,
        Body::empty(),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.body);
    let v = r.json();
    assert_eq!(v["values"].as_array().unwrap().len(), 42);
    assert_eq!(v["values"][0], 0.0);
    assert_eq!(v["null_line"][41], 0.0);
    assert_eq!(v["average_line"][0], 0.1);
    assert!(v["issues"].as_array().unwrap().is_empty());

    let r = call(
        &app,
        "GET",
        "/v1/trend/preview?role=effect&days=42&kind=quadratic&average=0.1&initial=0&changing_point=21",
        None,
        Body::empty(),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["issues"][0]["code"], "effect_negative");

    for bad in [
        "/v1/trend/preview?role=effect&days=42&kind=quadratic&average=0.1&initial=0",
        "/v1/trend/preview?role=effect&days=42&kind=cubic&average=0.1",
        "/v1/trend/preview?role=effect&days=42&kind=quadratic&average=0.1&initial=0&changing_point=50",
        "/v1/trend/preview?role=mood&days=42&kind=constant&average=0.1",
    ] {
        let r = call(&app, "GET", bad, None, Body::empty()).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{bad}: {}", r.body);
    }
}

#[tokio::test]
async fn simulate_route_is_deterministic() {
    let app = router(AppState::default());
    let scenario = json!({"design": table_row_one(), "N": 10, "replications": 20, "seed": 3});
    let a = call(&app, "POST", "/v1/simulate", None, scenario.to_string()).await;
    let b = call(&app, "POST", "/v1/simulate", None, scenario.to_string()).await;
    assert_eq!(a.status, StatusCode::OK, "{}", a.body);
    assert_eq!(a.body, b.body);
    assert_eq!(a.json()["outcome"]["replications"], 20);
    let too_many = json!({"design": table_row_one(), "N": 10, "replications": 1_000_000});
    let r = call(&app, "POST", "/v1/simulate", None, too_many.to_string()).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}
