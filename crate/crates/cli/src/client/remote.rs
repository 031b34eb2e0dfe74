//! HTTP completion endpoint.
//!
//! Request body: `{"model", "prompt": [..], "temperature", "max_tokens", "stop"?}`.
//! Response body: `{"choices": [{"text", "index"?}, ..]}` with one choice per
//! prompt. This matches the classic hosted completion APIs and most local
//! servers that imitate them.

use std::thread;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ClientError;

/// Environment variable holding the bearer token.
pub const API_KEY_VAR: &str = "LLM_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Scale each delay by a uniform factor in [0.5, 1.5).
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 5, base_delay: Duration::from_secs(1), max_delay: Duration::from_secs(60), jitter: true }
    }
}

impl RetryPolicy {
    /// Pause before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32.checked_shl(retry).unwrap_or(u32::MAX));
        let d = exp.min(self.max_delay);
        if self.jitter {
            d.mul_f64(rand::rng().random_range(0.5..1.5))
        } else {
            d
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEndpoint {
    pub url: String,
    token: Option<String>,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a [&'a str],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct WireChoice {
    text: String,
    index: Option<usize>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

fn missing_token() -> ClientError {
    ClientError::Config(format!("{API_KEY_VAR} is not set; the remote backend needs a token"))
}

enum Attempt {
    Done(Vec<String>),
    Transient(ClientError),
    Fatal(ClientError),
}

impl RemoteEndpoint {
    /// Reads the token from [`API_KEY_VAR`].
    pub fn from_env(url: impl Into<String>) -> Result<Self, ClientError> {
        let r = Self::with_token(url, std::env::var(API_KEY_VAR).unwrap_or_default());
        if r.has_token() {
            Ok(r)
        } else {
            Err(missing_token())
        }
    }

    pub fn with_token(url: impl Into<String>, token: impl Into<String>) -> Self {
        let token = Some(token.into()).filter(|t: &String| !t.trim().is_empty());
        Self { url: url.into(), token, retry: RetryPolicy::default(), timeout: Duration::from_secs(120) }
    }

    pub fn has_token(&self) -> bool {
        self.token.is_some()
    }

    fn attempt(
        &self,
        agent: &ureq::Agent,
        body: &WireRequest<'_>,
        n: usize,
    ) -> Attempt {
        let token = self.token.as_deref().unwrap_or_default();
        let sent = agent.post(&self.url).header("Authorization", &format!("Bearer {token}")).send_json(body);
        let mut resp = match sent {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(ClientError::Transport { attempts: 0, message: e.to_string() }),
        };
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            let err = ClientError::Endpoint { status, body: text.chars().take(500).collect() };
            return if status == 408 || status == 429 || status >= 500 { Attempt::Transient(err) } else { Attempt::Fatal(err) };
        }
        let parsed: WireResponse = match resp.body_mut().read_json() {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(ClientError::Protocol(format!("unreadable response body: {e}"))),
        };
        if parsed.choices.len() != n {
            return Attempt::Fatal(ClientError::Protocol(format!(
                "asked for {n} completions, got {}",
                parsed.choices.len()
            )));
        }
        let mut out = vec![None; n];
        for (pos, c) in parsed.choices.into_iter().enumerate() {
            let i = c.index.unwrap_or(pos);
            match out.get_mut(i) {
                Some(slot @ None) => *slot = Some(c.text),
                _ => return Attempt::Fatal(ClientError::Protocol(format!("bad or repeated choice index {i}"))),
            }
        }
        Attempt::Done(out.into_iter().map(|t| t.expect("every index filled")).collect())
    }

    /// One completion per prompt, in order, from a single HTTP request
    /// (retried as a whole).
    pub fn complete_batch(
        &self,
        model: &str,
        prompts: &[&str],
        temperature: f64,
        max_tokens: u32,
        stop: &[String],
    ) -> Result<Vec<String>, ClientError> {
        if self.token.is_none() {
            return Err(missing_token());
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let body = WireRequest { model, prompt: prompts, temperature, max_tokens, stop };
        let attempts = self.retry.attempts.max(1);
        let mut last = None;
        for i in 0..attempts {
            if i > 0 {
                thread::sleep(self.retry.delay(i - 1));
            }
            match self.attempt(&agent, &body, prompts.len()) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(e) => last = Some(e),
            }
        }
        Err(match last.expect("at least one attempt") {
            ClientError::Transport { message, .. } => ClientError::Transport { attempts, message },
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_up_to_the_cap() {
        let p = RetryPolicy { jitter: false, max_delay: Duration::from_secs(5), ..RetryPolicy::default() };
        let d: Vec<u64> = (0..5).map(|i| p.delay(i).as_secs()).collect();
        assert_eq!(d, [1, 2, 4, 5, 5]);
        assert_eq!(p.delay(40), Duration::from_secs(5));
    }

    #[test]
    fn jitter_stays_within_half_to_one_and_a_half() {
        let p = RetryPolicy::default();
        for i in 0..4 {
            for _ in 0..50 {
                let d = p.delay(i).as_secs_f64();
                let nominal = f64::from(1u32 << i);
                assert!((0.5 * nominal..1.5 * nominal).contains(&d), "{d}");
            }
        }
    }
}
