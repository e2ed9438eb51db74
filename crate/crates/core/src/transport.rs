//! Blocking JSON-over-HTTP client shared by the provider adapters.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    url: String,
}

impl JsonClient {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, url: url.into() }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// POSTs `body`; non-2xx statuses and connection failures are transport
    /// errors, undecodable bodies are parse errors carrying the raw payload.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| Error::Transport(format!("{}: {e}", self.url)))?;
        let status = resp.status();
        let raw = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport(format!("{}: reading body: {e}", self.url)))?;
        if !status.is_success() {
            return Err(Error::Transport(format!("{} answered {status}: {raw}", self.url)));
        }
        serde_json::from_str(&raw).map_err(|e| Error::Parse {
            message: format!("{}: {e}", self.url),
            raw,
        })
    }
}
