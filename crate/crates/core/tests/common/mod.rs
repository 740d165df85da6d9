//! Shared helpers for integration tests.
#![allow(dead_code)]

pub mod grad;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use runway::raster::RasterImage;

#[derive(Clone)]
pub struct Stub {
    pub base: String,
    pub hits: Arc<Mutex<Vec<(String, Instant)>>>,
}

/// Serves PNG tiles; `status_for` picks the status from the request path.
pub fn stub(status_for: fn(&str) -> u16) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/staticmap", listener.local_addr().unwrap());
    let hits = Arc::new(Mutex::new(Vec::new()));
    let log = hits.clone();
    std::thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(mut conn) = conn else { continue };
            let mut reader = BufReader::new(conn.try_clone().unwrap());
            let mut first = String::new();
            reader.read_line(&mut first).unwrap();
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
            }
            let path = first.split_whitespace().nth(1).unwrap_or("").to_string();
            log.lock().unwrap().push((path.clone(), Instant::now()));
            let status = status_for(&path);
            let body = if path.contains("garbage") {
                b"not an image".to_vec()
            } else {
                let color = if path.contains("maptype=satellite") { [40, 90, 40] } else { [232, 232, 232] };
                RasterImage::filled(64, 64, color).to_png_bytes().unwrap()
            };
            let head = format!("HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len());
            let _ = conn.write_all(head.as_bytes());
            let _ = conn.write_all(&body);
        }
    });
    Stub { base, hits }
}

pub fn ok(_: &str) -> u16 {
    200
}
