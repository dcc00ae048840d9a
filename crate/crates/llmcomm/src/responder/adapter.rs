//! Bridge to an out-of-process responder.
//!
//! The simulation normally answers from the in-process fact base, but a
//! deployment can plug in a real model runtime behind the same contract:
//! newline-delimited JSON over a local stream socket. One request line:
//!
//! ```json
//! {"id":7,"owner":"carol","sender":"alice","topic":"lunch","body":"free at noon?"}
//! ```
//!
//! and one response line:
//!
//! ```json
//! {"id":7,"answerable":true,"body":"Noon works for me."}
//! ```
//!
//! Any failure — connect error, timeout, malformed line, wrong id — degrades
//! to "unanswerable" so a broken external responder can never stall or
//! mis-route a message. Returned bodies get the disclosure line appended if
//! the external process did not already add it.

use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixStream;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ids::UserId;
use crate::protocol::{apply_disclosure, has_disclosure, Message};

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    id: u64,
    owner: &'a str,
    sender: &'a str,
    topic: &'a str,
    body: &'a str,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    id: u64,
    answerable: bool,
    #[serde(default)]
    body: String,
}

/// Outcome of one external query.
#[derive(Debug, Clone, PartialEq)]
pub enum ExternalReply {
    /// The external responder answered; body carries the disclosure line.
    Answer(String),
    /// No usable answer; the caller should route as unanswerable.
    Unanswerable(UnanswerableReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnanswerableReason {
    /// The responder said so.
    Declined,
    /// No response within the deadline.
    Timeout,
    /// Connection failed or dropped.
    Io,
    /// Response line was not valid JSON or had the wrong shape.
    Malformed,
    /// Response id did not match the request id.
    IdMismatch,
    /// Responder claimed answerable but returned an empty body.
    EmptyBody,
}

/// Client for one external responder process.
pub struct ExternalResponder {
    reader: BufReader<UnixStream>,
    owner: UserId,
}

impl ExternalResponder {
    /// Connects to the responder socket; `timeout` bounds each read.
    pub fn connect(
        socket_path: &Path,
        owner: UserId,
        timeout: Duration,
    ) -> std::io::Result<Self> {
        let stream = UnixStream::connect(socket_path)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        Ok(ExternalResponder { reader: BufReader::new(stream), owner })
    }

    /// Sends one message and waits for the paired response line.
    pub fn query(&mut self, msg: &Message) -> ExternalReply {
        let req = WireRequest {
            id: msg.id,
            owner: self.owner.as_str(),
            sender: msg.sender.as_str(),
            topic: &msg.topic,
            body: &msg.body,
        };
        let mut line = serde_json::to_string(&req).expect("requests always serialize");
        line.push('\n');
        if self.reader.get_mut().write_all(line.as_bytes()).is_err() {
            return ExternalReply::Unanswerable(UnanswerableReason::Io);
        }

        let mut resp_line = String::new();
        match self.reader.read_line(&mut resp_line) {
            Ok(0) => return ExternalReply::Unanswerable(UnanswerableReason::Io),
            Ok(_) => {}
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                return ExternalReply::Unanswerable(UnanswerableReason::Timeout)
            }
            Err(_) => return ExternalReply::Unanswerable(UnanswerableReason::Io),
        }

        let resp: WireResponse = match serde_json::from_str(resp_line.trim_end()) {
            Ok(r) => r,
            Err(_) => return ExternalReply::Unanswerable(UnanswerableReason::Malformed),
        };
        if resp.id != msg.id {
            return ExternalReply::Unanswerable(UnanswerableReason::IdMismatch);
        }
        if !resp.answerable {
            return ExternalReply::Unanswerable(UnanswerableReason::Declined);
        }
        if resp.body.is_empty() {
            return ExternalReply::Unanswerable(UnanswerableReason::EmptyBody);
        }
        let body = if has_disclosure(&resp.body) {
            resp.body
        } else {
            apply_disclosure(&resp.body).expect("non-empty body")
        };
        ExternalReply::Answer(body)
    }
}
