use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use refcolor_core::io::encode_rgb_png;
use refcolor_core::RgbImage;
use refcolor_providers::{condition_bundle, fetch_candidates, GenerationRequest, ProviderError};

enum Reply {
    Respond(u16, Vec<u8>),
    Stall(Duration),
}

/// Serves one request, reporting the JSON body it received.
fn mock(reply: Reply) -> (String, mpsc::Receiver<serde_json::Value>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let _ = tx.send(serde_json::from_slice(&body).unwrap());
        let mut stream = stream;
        match reply {
            Reply::Respond(status, body) => {
                let head = format!("HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n", body.len());
                stream.write_all(head.as_bytes()).unwrap();
                stream.write_all(&body).unwrap();
            }
            Reply::Stall(d) => thread::sleep(d),
        }
    });
    (url, rx)
}

fn candidates_body(n: usize, w: usize, h: usize) -> Vec<u8> {
    let cands: Vec<_> = (0..n)
        .map(|i| {
            let png = encode_rgb_png(&RgbImage::filled(w, h, [i as u8 * 20, 100, 200]).unwrap()).unwrap();
            serde_json::json!({"id": format!("gen-{i}"), "png": BASE64.encode(png)})
        })
        .collect();
    serde_json::to_vec(&serde_json::json!({ "candidates": cands })).unwrap()
}

fn request() -> GenerationRequest {
    let gray = refcolor_core::GrayImage::from_fn(16, 12, |x, _| if x < 8 { 0.2 } else { 0.8 }).unwrap();
    GenerationRequest {
        caption: "a red barn".into(),
        n_canny: 4,
        n_hed: 4,
        canny_png: condition_bundle(&gray, 0.1, 0.2, 1.0).unwrap().canny_png,
        hed_png: Some(vec![7, 7]),
        seed: Some(42),
    }
}

#[test]
fn eight_candidates_arrive() {
    let (url, rx) = mock(Reply::Respond(200, candidates_body(8, 16, 12)));
    let req = request();
    let set = fetch_candidates(&url, &req, (16, 12), Duration::from_secs(10)).unwrap();
    assert_eq!(set.len(), 8);
    assert_eq!(set.ids()[0], "gen-0");
    assert_eq!(set.dims(), (16, 12));
    let sent = rx.recv().unwrap();
    assert_eq!(sent["caption"], "a red barn");
    assert_eq!(sent["n_canny"], 4);
    assert_eq!(sent["n_hed"], 4);
    assert_eq!(sent["seed"], 42);
    assert_eq!(BASE64.decode(sent["canny_png"].as_str().unwrap()).unwrap(), req.canny_png);
    assert_eq!(sent["hed_png"], "Bwc=");
}

#[test]
fn short_response_reports_both_counts() {
    let (url, _rx) = mock(Reply::Respond(200, candidates_body(6, 16, 12)));
    let err = fetch_candidates(&url, &request(), (16, 12), Duration::from_secs(10)).unwrap_err();
    assert!(matches!(err, ProviderError::CountMismatch { requested: 8, returned: 6 }));
    let text = err.to_string();
    assert!(text.contains('6') && text.contains('8'));
}

#[test]
fn non_200_is_a_protocol_error() {
    let (url, _rx) = mock(Reply::Respond(503, b"{\"detail\":\"busy\"}".to_vec()));
    let err = fetch_candidates(&url, &request(), (16, 12), Duration::from_secs(10)).unwrap_err();
    assert!(matches!(err, ProviderError::Status { status: 503, .. }));
    assert!(!err.is_transport());
}

#[test]
fn malformed_body_is_rejected() {
    let (url, _rx) = mock(Reply::Respond(200, b"<html>".to_vec()));
    let err = fetch_candidates(&url, &request(), (16, 12), Duration::from_secs(10)).unwrap_err();
    assert!(matches!(err, ProviderError::MalformedBody(_)));
}

#[test]
fn wrong_size_candidate_is_rejected() {
    let (url, _rx) = mock(Reply::Respond(200, candidates_body(8, 15, 12)));
    let err = fetch_candidates(&url, &request(), (16, 12), Duration::from_secs(10)).unwrap_err();
    assert!(matches!(err, ProviderError::DimensionMismatch { .. }));
}

#[test]
fn stalled_server_times_out() {
    let (url, _rx) = mock(Reply::Stall(Duration::from_secs(5)));
    let start = Instant::now();
    let err = fetch_candidates(&url, &request(), (16, 12), Duration::from_millis(300)).unwrap_err();
    assert!(matches!(err, ProviderError::Timeout(_)), "{err:?}");
    assert!(start.elapsed() < Duration::from_secs(4));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    // bind then drop to get a port with no listener
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = fetch_candidates(&format!("http://127.0.0.1:{port}/x"), &request(), (16, 12), Duration::from_secs(2)).unwrap_err();
    assert!(err.is_transport(), "{err:?}");
    assert!(matches!(err, ProviderError::Transport(_)));
}

#[test]
fn invalid_request_is_not_sent() {
    let mut req = request();
    req.hed_png = None;
    let err = fetch_candidates("http://127.0.0.1:9/unused", &req, (16, 12), Duration::from_secs(1)).unwrap_err();
    assert!(matches!(err, ProviderError::InvalidRequest(_)));
}
