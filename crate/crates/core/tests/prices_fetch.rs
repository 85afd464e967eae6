use std::time::Duration;

use chrono::NaiveDate;
use hemsgym::domain::{utc_midnight, Seed};
use hemsgym::prices::synth::belpex_like;
use hemsgym::prices::{
    day_json, fetch_day_ahead_with, FetchOptions, PriceError, PriceSeries, StubPriceServer,
    StubReply,
};

fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 3, 4).unwrap()
}

fn quick(retries: u32) -> FetchOptions {
    FetchOptions {
        retries,
        initial_backoff: Duration::from_millis(10),
        timeout: Duration::from_secs(2),
    }
}

#[test]
fn full_day_round_trips() {
    let series = belpex_like(day(), 1, Seed(1));
    let stub = StubPriceServer::start(Some(series.clone()), vec![]).unwrap();
    let got = fetch_day_ahead_with(&stub.url(), "BE", day(), &quick(0)).unwrap();
    assert_eq!(got.len(), 24);
    assert_eq!(got, series);
    assert_eq!(stub.hits(), 1);
}

#[test]
fn short_day_is_a_validation_error_naming_the_hole() {
    let prices: Vec<f64> = (0..23).map(f64::from).collect();
    let short = PriceSeries::from_prices(utc_midnight(2024, 3, 4), &prices).unwrap();
    let stub = StubPriceServer::start(None, vec![StubReply::Json(day_json(&short))]).unwrap();
    let err = fetch_day_ahead_with(&stub.url(), "BE", day(), &quick(0)).unwrap_err();
    match err {
        PriceError::Validation { timestamp, .. } => {
            assert_eq!(timestamp.as_deref(), Some("2024-03-04T23:00:00Z"))
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn transient_failures_are_retried() {
    let series = belpex_like(day(), 1, Seed(2));
    let stub = StubPriceServer::start(
        None,
        vec![
            StubReply::Status(500),
            StubReply::Status(500),
            StubReply::Json(day_json(&series)),
        ],
    )
    .unwrap();
    let got = fetch_day_ahead_with(&stub.url(), "BE", day(), &quick(2)).unwrap();
    assert_eq!(got, series);
    assert_eq!(stub.hits(), 3);
}

#[test]
fn retries_are_bounded() {
    let stub = StubPriceServer::start(None, vec![StubReply::Status(503); 5]).unwrap();
    let err = fetch_day_ahead_with(&stub.url(), "BE", day(), &quick(1)).unwrap_err();
    assert!(matches!(err, PriceError::Transport(_)), "{err:?}");
    assert_eq!(stub.hits(), 2);
}

#[test]
fn malformed_bodies_are_schema_errors() {
    for body in [
        "{}",
        "[{\"start\":\"x\",\"price\":1}]",
        "[{\"start\":\"2024-03-04T00:00:00Z\",\"price\":1,\"extra\":0}]",
    ] {
        let stub = StubPriceServer::start(None, vec![StubReply::Json(body.into())]).unwrap();
        let err = fetch_day_ahead_with(&stub.url(), "BE", day(), &quick(0)).unwrap_err();
        assert!(matches!(err, PriceError::Schema(_)), "{body}: {err:?}");
    }
}

#[test]
fn dead_endpoint_is_a_transport_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let url = format!("http://127.0.0.1:{port}/day-ahead");
    let err = fetch_day_ahead_with(&url, "BE", day(), &quick(1)).unwrap_err();
    assert!(matches!(err, PriceError::Transport(_)), "{err:?}");
}
