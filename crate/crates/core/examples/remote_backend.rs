//! Talk to a completion server over HTTP.
//!
//! A throwaway server is started on a local port and answers the JSON
//! completion protocol from an in-memory tabular model. `RemoteLm` then
//! computes the same consistency score as the local model. Point
//! `PEX_BACKEND_ENDPOINT` at a real server to score against it instead.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use pex::backend::{
    Boundary, CompletionRequest, CompletionResponse, LmBackend, RemoteConfig, RemoteLm,
    SampleRequest, TabularLm, ENDPOINT_ENV,
};
use pex::consistency::pex_adjusted;
use pex::prompting::{Label, PromptVariant};

fn answer(lm: &TabularLm, body: &str) -> (u16, String) {
    let req: CompletionRequest = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => return (400, format!("{{\"error\":\"{e}\"}}")),
    };
    let reply = match &req.continuation {
        Some(c) => lm
            .score(&req.prompt, c, Boundary::Prefix)
            .map(|s| CompletionResponse {
                tokens: s.tokens,
                token_logprobs: s.token_logprobs,
                text: c.clone(),
                truncated: None,
            }),
        None => lm
            .sample(
                &req.prompt,
                &SampleRequest::new(req.temperature, req.seed.unwrap_or(0), req.max_tokens),
            )
            .map(|s| CompletionResponse {
                token_logprobs: vec![0.0; s.tokens.len()],
                tokens: s.tokens,
                text: s.text,
                truncated: Some(s.truncated),
            }),
    };
    match reply {
        Ok(r) => (200, serde_json::to_string(&r).unwrap()),
        Err(e) => (400, format!("{{\"error\":{:?}}}", e.to_string())),
    }
}

/// Serves one request per connection until the process exits.
fn serve(lm: TabularLm) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let (status, payload) = answer(&lm, &String::from_utf8_lossy(&body));
            let mut stream = reader.into_inner();
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    url
}

fn main() -> pex::Result<()> {
    let review = "the breakfast buffet had fresh mango and the lift was quick";
    let lm = TabularLm::builder()
        .question(
            review,
            0.65,
            vec![("it mentions the mango", 0.7), ("it gushes", 0.3)],
            vec![("it mentions the mango", 0.2), ("it gushes", 0.8)],
        )
        .build()?;

    let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| serve(lm.clone()));
    println!("endpoint {endpoint}");
    let mut config = RemoteConfig::new(&endpoint);
    config.max_in_flight = 2;
    let remote = RemoteLm::new(config)?;

    for e in ["it mentions the mango", "it gushes"] {
        let local = pex_adjusted(&lm, review, Label::Truthful, e, PromptVariant::Analysis)?;
        let wire = pex_adjusted(&remote, review, Label::Truthful, e, PromptVariant::Analysis)?;
        println!(
            "{e:<24} local {:+.4}  remote {:+.4}",
            local.value, wire.value
        );
    }
    Ok(())
}
