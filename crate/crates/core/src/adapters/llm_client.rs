use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AdapterError, DecodingParams, LlmClient};

/// Retry schedule for remote completions: exponential backoff starting at
/// `initial_backoff_ms`, capped at `max_backoff_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 500,
            multiplier: 2.0,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            initial_backoff_ms: 0,
            ..RetryPolicy::default()
        }
    }

    fn delay(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(retry as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }
}

/// Calls `client.complete`, retrying retryable errors. Returns the completion
/// and the number of retries it took.
pub fn complete_with_retry(
    client: &dyn LlmClient,
    prompt: &str,
    decoding: &DecodingParams,
    policy: &RetryPolicy,
) -> Result<(String, u32), AdapterError> {
    let attempts = policy.max_attempts.max(1);
    let mut retry = 0;
    loop {
        match client.complete(prompt, decoding) {
            Ok(text) => return Ok((text, retry)),
            Err(e) if e.is_retryable() && retry + 1 < attempts => {
                log::debug!("{}: attempt {} failed: {e}", client.backend_id(), retry + 1);
                std::thread::sleep(policy.delay(retry));
                retry += 1;
            }
            Err(e) if e.is_retryable() => {
                return Err(AdapterError::RetriesExhausted {
                    attempts,
                    last: Box::new(e),
                })
            }
            Err(e) => return Err(e),
        }
    }
}

/// Returns the prompt verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoClient;

impl LlmClient for EchoClient {
    fn backend_id(&self) -> &str {
        "echo"
    }

    fn complete(&self, prompt: &str, _decoding: &DecodingParams) -> Result<String, AdapterError> {
        Ok(prompt.to_string())
    }
}

/// Answers with the sentence after the prompt's final `Input:` label,
/// formatted as `Output: <sentence>`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CopyInputClient;

impl LlmClient for CopyInputClient {
    fn backend_id(&self) -> &str {
        "tiny-random"
    }

    fn complete(&self, prompt: &str, _decoding: &DecodingParams) -> Result<String, AdapterError> {
        let input = prompt
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("Input:"))
            .map(str::trim)
            .unwrap_or("");
        Ok(format!("Output: {input}"))
    }
}

/// OpenAI-compatible chat-completions client.
#[cfg(feature = "http")]
pub struct HttpChatClient {
    id: String,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    policy: RetryPolicy,
    parallelism: usize,
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl HttpChatClient {
    pub fn new(
        id: &str,
        endpoint: &str,
        model: &str,
        api_key: Option<String>,
        policy: RetryPolicy,
        parallelism: usize,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatClient {
            id: id.to_string(),
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            policy,
            parallelism,
            agent,
        }
    }

    pub fn request_body(&self, prompt: &str, decoding: &DecodingParams) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_length,
            "n": 1,
        })
    }
}

#[cfg(feature = "http")]
impl LlmClient for HttpChatClient {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str, decoding: &DecodingParams) -> Result<String, AdapterError> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req
            .send_json(self.request_body(prompt, decoding))
            .map_err(|e| AdapterError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| AdapterError::Transport(format!("status {status}: {e}")))?;
        match status {
            200..=299 => body
                .pointer("/choices/0/message/content")
                .or_else(|| body.pointer("/choices/0/text"))
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| AdapterError::Backend(format!("unexpected response shape: {body}"))),
            429 => Err(AdapterError::Quota(body.to_string())),
            500..=599 => Err(AdapterError::Transport(format!("status {status}: {body}"))),
            _ => Err(AdapterError::Backend(format!("status {status}: {body}"))),
        }
    }

    fn parallelism(&self) -> usize {
        self.parallelism
    }

    fn retry_policy(&self) -> RetryPolicy {
        self.policy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        quota: bool,
    }

    impl LlmClient for Flaky {
        fn backend_id(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _p: &str, _d: &DecodingParams) -> Result<String, AdapterError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                if self.quota {
                    Err(AdapterError::Quota("slow down".into()))
                } else {
                    Err(AdapterError::Transport("reset".into()))
                }
            } else {
                Ok("done".into())
            }
        }
    }

    #[test]
    fn retries_until_success() {
        let c = Flaky { failures: 1, calls: AtomicU32::new(0), quota: true };
        let (text, retries) =
            complete_with_retry(&c, "p", &DecodingParams::default(), &RetryPolicy::no_backoff(3))
                .unwrap();
        assert_eq!((text.as_str(), retries), ("done", 1));
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let c = Flaky { failures: 10, calls: AtomicU32::new(0), quota: false };
        let e = complete_with_retry(&c, "p", &DecodingParams::default(), &RetryPolicy::no_backoff(3))
            .unwrap_err();
        assert!(matches!(e, AdapterError::RetriesExhausted { attempts: 3, .. }));
        assert_eq!(c.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(1), Duration::from_millis(1000));
        assert_eq!(p.delay(10), Duration::from_millis(8000));
    }

    #[test]
    fn copy_client_answers_with_last_input() {
        let out = CopyInputClient
            .complete("Input: a\nOutput: b\nInput: hello there\nOutput:", &DecodingParams::default())
            .unwrap();
        assert_eq!(out, "Output: hello there");
    }
}
