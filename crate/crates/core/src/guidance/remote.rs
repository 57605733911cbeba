use std::io;
use std::thread;
use std::time::Duration;

use super::wire::{HealthStatus, WireRequest, WireResponse, GUIDE_PATH, HEALTH_PATH};
use super::{GuidanceError, GuidanceRequest, GuidanceResponse, GuidanceSource};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL such as `http://127.0.0.1:8000`.
    pub base_url: String,
    pub timeout: Duration,
    /// Extra attempts after a transient failure.
    pub retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
            backoff: Duration::from_millis(250),
        }
    }
}

/// Blocking HTTP client for a guidance service.
pub struct RemoteGuidance {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteGuidance {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn with_retries<T>(&self, mut attempt: impl FnMut() -> Result<T, GuidanceError>) -> Result<T, GuidanceError> {
        let mut delay = self.config.backoff;
        let mut tries = 0;
        loop {
            match attempt() {
                Err(e) if e.is_transient() && tries < self.config.retries => {
                    log::warn!("guidance attempt {} failed: {e}; retrying in {delay:?}", tries + 1);
                    thread::sleep(delay);
                    delay *= 2;
                    tries += 1;
                }
                other => return other,
            }
        }
    }
}

fn classify(err: ureq::Error) -> GuidanceError {
    match err {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            let msg = format!("HTTP {code}: {}", body.chars().take(200).collect::<String>());
            if (400..500).contains(&code) {
                GuidanceError::ProtocolError(msg)
            } else {
                GuidanceError::ServiceUnavailable(msg)
            }
        }
        ureq::Error::Transport(t) => {
            let timed_out = std::error::Error::source(&t)
                .and_then(|s| s.downcast_ref::<io::Error>())
                .is_some_and(|e| matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock));
            if timed_out {
                GuidanceError::Timeout(t.to_string())
            } else {
                GuidanceError::ServiceUnavailable(t.to_string())
            }
        }
    }
}

fn read_body(resp: ureq::Response) -> Result<String, GuidanceError> {
    resp.into_string().map_err(|e| {
        if matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) {
            GuidanceError::Timeout(e.to_string())
        } else {
            GuidanceError::ServiceUnavailable(e.to_string())
        }
    })
}

impl GuidanceSource for RemoteGuidance {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        request.validate()?;
        let body = serde_json::to_string(&WireRequest::from_request(request))
            .map_err(|e| GuidanceError::InvalidRequest(e.to_string()))?;
        let url = format!("{}{}", self.config.base_url, GUIDE_PATH);
        let text = self.with_retries(|| {
            let resp = self
                .agent
                .post(&url)
                .set("Content-Type", "application/json")
                .send_string(&body)
                .map_err(classify)?;
            read_body(resp)
        })?;
        let wire: WireResponse =
            serde_json::from_str(&text).map_err(|e| GuidanceError::ProtocolError(format!("response schema: {e}")))?;
        wire.into_response(request.image.width, request.image.height)
    }

    fn health(&self) -> Result<(), GuidanceError> {
        let url = format!("{}{}", self.config.base_url, HEALTH_PATH);
        let text = self.with_retries(|| read_body(self.agent.get(&url).call().map_err(classify)?))?;
        let status: HealthStatus =
            serde_json::from_str(&text).map_err(|e| GuidanceError::ProtocolError(format!("health schema: {e}")))?;
        if status.status == "ok" {
            Ok(())
        } else {
            Err(GuidanceError::ServiceUnavailable(format!("status {:?}", status.status)))
        }
    }
}
