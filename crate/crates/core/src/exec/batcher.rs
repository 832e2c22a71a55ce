use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPolicy {
    pub flush_interval: Duration,
    pub multiple: usize,
    pub cap: usize,
}

/// How many pending vectors to flush now, if any.
///
/// Full batches of `cap` go first; otherwise the largest multiple of
/// `multiple` is flushed; once the oldest pending vector has waited
/// `flush_interval`, everything up to `cap` goes.
pub fn flush_size(pending: usize, oldest_age: Duration, policy: &BatchPolicy) -> Option<usize> {
    if pending == 0 {
        return None;
    }
    if pending >= policy.cap {
        return Some(policy.cap);
    }
    if pending >= policy.multiple {
        return Some(pending / policy.multiple * policy.multiple);
    }
    (oldest_age >= policy.flush_interval).then_some(pending)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: BatchPolicy = BatchPolicy { flush_interval: Duration::from_millis(10), multiple: 128, cap: 1024 };

    #[test]
    fn multiple_rule() {
        assert_eq!(flush_size(127, Duration::ZERO, &P), None);
        assert_eq!(flush_size(128, Duration::ZERO, &P), Some(128));
        assert_eq!(flush_size(300, Duration::ZERO, &P), Some(256));
    }

    #[test]
    fn interval_rule() {
        assert_eq!(flush_size(5, Duration::from_millis(9), &P), None);
        assert_eq!(flush_size(5, Duration::from_millis(10), &P), Some(5));
        assert_eq!(flush_size(0, Duration::from_secs(5), &P), None);
    }

    #[test]
    fn cap_rule() {
        assert_eq!(flush_size(3000, Duration::ZERO, &P), Some(1024));
        assert_eq!(flush_size(1024, Duration::ZERO, &P), Some(1024));
        let mut left = 3000;
        let mut sizes = vec![];
        while let Some(n) = flush_size(left, Duration::from_secs(1), &P) {
            sizes.push(n);
            left -= n;
        }
        assert_eq!(sizes, vec![1024, 1024, 896, 56]);
    }
}
