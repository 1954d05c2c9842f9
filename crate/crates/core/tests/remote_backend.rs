//! Remote inpainting client against an in-process HTTP stand-in.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use image::{GrayImage, Luma, Rgb, RgbImage};
use morphcanvas::imaging;
use morphcanvas::protocol::SynthRequest;
use morphcanvas::synthesis::{inpaint, InpaintBackend, PromptRegistry, RemoteBackend, SynthError};

enum Reply {
    /// Paints every pixel red.
    PaintAll,
    Resized(u32),
    Garbage,
    Status(u16),
}

/// Serves one request per reply and records what it received.
fn serve(replies: Vec<Reply>) -> (String, Arc<Mutex<Vec<(String, SynthRequest)>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/inpaint", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let seen2 = seen.clone();
    thread::spawn(move || {
        for reply in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut content_type = String::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-type" => content_type = value.trim().to_owned(),
                    "content-length" => length = value.trim().parse().unwrap(),
                    _ => {}
                }
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            let request = SynthRequest::from_multipart(&content_type, &body).unwrap();
            let crop = imaging::decode_png_rgb(&request.crop_png).unwrap();
            seen2.lock().unwrap().push((request_line.trim().to_owned(), request));
            let (status, payload) = match reply {
                Reply::PaintAll => (200, imaging::encode_png_rgb(&RgbImage::from_pixel(crop.width(), crop.height(), Rgb([255, 0, 0])))),
                Reply::Resized(side) => (200, imaging::encode_png_rgb(&RgbImage::new(side, side))),
                Reply::Garbage => (200, b"definitely not a png".to_vec()),
                Reply::Status(code) => (code, b"boom".to_vec()),
            };
            let mut stream = stream;
            write!(stream, "HTTP/1.1 {status} X\r\nContent-Type: image/png\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", payload.len()).unwrap();
            stream.write_all(&payload).unwrap();
        }
    });
    (url, seen)
}

fn inputs(side: u32) -> (RgbImage, GrayImage) {
    let crop = RgbImage::from_fn(side, side, |x, y| Rgb([x as u8, y as u8, 77]));
    let mask = GrayImage::from_fn(side, side, |x, _| Luma([if x < side / 2 { 255 } else { 0 }]));
    (crop, mask)
}

#[test]
fn request_carries_four_parts_and_exterior_is_restored() {
    let (url, seen) = serve(vec![Reply::PaintAll]);
    let backend = RemoteBackend::new(url, Duration::from_secs(5));
    let (crop, mask) = inputs(64);
    let prompts = PromptRegistry::builtin();
    let out = inpaint(&backend, &crop, &mask, prompts.get(3).unwrap(), 42).unwrap();
    let seen = seen.lock().unwrap();
    let (line, request) = &seen[0];
    assert!(line.starts_with("POST /inpaint "), "{line}");
    assert_eq!(request.prompt_id, 3);
    assert_eq!(request.seed, 42);
    assert_eq!(imaging::decode_png_gray(&request.mask_png).unwrap(), mask);
    for (x, y, p) in out.enumerate_pixels() {
        if x < 32 {
            assert_eq!(p.0, [255, 0, 0]);
        } else {
            assert_eq!(p, crop.get_pixel(x, y));
        }
    }
    assert_eq!(backend.exterior_corrections(), 1);
}

#[test]
fn wrong_size_reply_is_bad_response() {
    let (url, _) = serve(vec![Reply::Resized(256)]);
    let backend = RemoteBackend::new(url, Duration::from_secs(5));
    let (crop, mask) = inputs(512);
    let err = inpaint(&backend, &crop, &mask, PromptRegistry::builtin().get(0).unwrap(), 1).unwrap_err();
    assert!(matches!(err, SynthError::BackendBadResponse(_)), "{err:?}");
}

#[test]
fn non_image_and_error_status_are_bad_responses() {
    let (url, _) = serve(vec![Reply::Garbage, Reply::Status(500)]);
    let backend = RemoteBackend::new(url, Duration::from_secs(5));
    let (crop, mask) = inputs(32);
    let prompt = PromptRegistry::builtin().get(0).unwrap().clone();
    assert!(matches!(inpaint(&backend, &crop, &mask, &prompt, 1), Err(SynthError::BackendBadResponse(_))));
    assert!(matches!(inpaint(&backend, &crop, &mask, &prompt, 1), Err(SynthError::BackendBadResponse(_))));
}

#[test]
fn closed_port_is_unreachable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = RemoteBackend::new(format!("http://127.0.0.1:{port}/inpaint"), Duration::from_secs(2));
    let (crop, mask) = inputs(32);
    let err = inpaint(&backend, &crop, &mask, PromptRegistry::builtin().get(0).unwrap(), 1).unwrap_err();
    assert!(matches!(err, SynthError::BackendUnreachable(_)), "{err:?}");
}
