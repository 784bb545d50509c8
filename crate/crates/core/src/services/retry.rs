use std::time::Duration;

use super::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl RetryPolicy {
    pub fn no_retry() -> Self {
        Self {
            max_retries: 0,
            backoff_base: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (0-based): `base * 2^retry`.
    pub fn backoff(&self, retry: u32) -> Duration {
        self.backoff_base.saturating_mul(1u32 << retry.min(16))
    }
}

/// Outcome class of one failed attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum CallFailure {
    /// Connection errors, timeouts, 5xx and 429 responses.
    Transient(String),
    /// Malformed requests and other 4xx responses; never retried.
    Permanent(String),
}

pub fn call_with_retry<T>(
    policy: &RetryPolicy,
    op: impl FnMut() -> Result<T, CallFailure>,
) -> Result<T, ServiceError> {
    call_with_retry_using(policy, std::thread::sleep, op)
}

/// As [`call_with_retry`] with an injectable sleep.
pub fn call_with_retry_using<T>(
    policy: &RetryPolicy,
    mut sleep: impl FnMut(Duration),
    mut op: impl FnMut() -> Result<T, CallFailure>,
) -> Result<T, ServiceError> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match op() {
            Ok(v) => return Ok(v),
            Err(CallFailure::Permanent(cause)) => return Err(ServiceError::Rejected(cause)),
            Err(CallFailure::Transient(cause)) => {
                if attempts > policy.max_retries {
                    return Err(ServiceError::Exhausted {
                        attempts,
                        last: cause,
                    });
                }
                tracing::debug!(attempts, %cause, "transient service failure, retrying");
                sleep(policy.backoff(attempts - 1));
            }
        }
    }
}
