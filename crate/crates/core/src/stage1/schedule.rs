//! Learning-rate schedule: linear warmup, then cosine decay or constant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Cosine => "cosine",
            Schedule::Constant => "constant",
        })
    }
}

impl FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Schedule::Cosine),
            "constant" => Ok(Schedule::Constant),
            other => Err(format!("unknown schedule `{other}` (cosine|constant)")),
        }
    }
}

/// Learning rate for a 1-based `epoch`. Warmup ramps linearly to `base` at
/// epoch `warmup`; cosine then reaches 0 at epoch `epochs`.
pub fn learning_rate(
    schedule: Schedule,
    base: f64,
    epoch: usize,
    warmup: usize,
    epochs: usize,
) -> f64 {
    if epoch <= warmup {
        return base * epoch as f64 / warmup as f64;
    }
    match schedule {
        Schedule::Constant => base,
        Schedule::Cosine => {
            let span = epochs.saturating_sub(warmup).max(1) as f64;
            let t = ((epoch - warmup) as f64 / span).min(1.0);
            0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_cosine() {
        let lrs: Vec<f64> = (1..=100)
            .map(|e| learning_rate(Schedule::Cosine, 1e-3, e, 5, 100))
            .collect();
        for e in 1..5 {
            assert!(
                lrs[e] > lrs[e - 1],
                "warmup not increasing at epoch {}",
                e + 1
            );
        }
        assert!((lrs[4] - 1e-3).abs() < 1e-18);
        for e in 5..100 {
            assert!(lrs[e] <= lrs[e - 1]);
        }
        assert!(lrs[99].abs() < 1e-18);
        assert!(lrs.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn constant_after_warmup() {
        assert_eq!(learning_rate(Schedule::Constant, 0.1, 50, 5, 100), 0.1);
        assert!((learning_rate(Schedule::Constant, 0.1, 1, 5, 100) - 0.02).abs() < 1e-15);
    }
}
