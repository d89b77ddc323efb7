//! Seeded synthetic key streams.
//!
//! Every generator draws from a ChaCha8 stream seeded with the spec's seed, so a
//! `(distribution, seed, n)` triple always produces the same keys on every
//! platform. Continuous samplers are floored and saturated into `i64`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DatagenError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam {
        field: &'static str,
        reason: &'static str,
    },
}

/// Shape of a generated key stream and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeyDistribution {
    /// Uniform over `[lo, hi)`.
    Uniform {
        lo: i64,
        hi: i64,
    },
    Normal {
        mean: f64,
        std_dev: f64,
    },
    /// Log-normal: `exp(N(mu, sigma))`. Long right tail.
    RightSkewed {
        mu: f64,
        sigma: f64,
    },
    Exponential {
        rate: f64,
    },
    /// `ceil(fraction * n)` keys drawn from `distinct` fixed keys, the rest
    /// uniform over `[lo, hi)`, shuffled together.
    Duplicated {
        fraction: f64,
        distinct: usize,
        lo: i64,
        hi: i64,
    },
}

/// Discriminant of [`KeyDistribution`], handy for CLI flags and sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    Uniform,
    Normal,
    RightSkewed,
    Exponential,
    Duplicated,
}

impl DistKind {
    pub const ALL: [DistKind; 5] = [
        DistKind::Uniform,
        DistKind::Normal,
        DistKind::RightSkewed,
        DistKind::Exponential,
        DistKind::Duplicated,
    ];

    /// The four shapes used for the load-balance tables.
    pub const SHAPES: [DistKind; 4] = [
        DistKind::Uniform,
        DistKind::Normal,
        DistKind::RightSkewed,
        DistKind::Exponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistKind::Uniform => "uniform",
            DistKind::Normal => "normal",
            DistKind::RightSkewed => "right_skewed",
            DistKind::Exponential => "exponential",
            DistKind::Duplicated => "duplicated",
        }
    }

    /// Default parameters for this shape.
    pub fn defaults(self) -> KeyDistribution {
        const SPAN: i64 = 1 << 32;
        match self {
            DistKind::Uniform => KeyDistribution::Uniform { lo: 0, hi: SPAN },
            DistKind::Normal => KeyDistribution::Normal {
                mean: 2f64.powi(31),
                std_dev: 2f64.powi(28),
            },
            DistKind::RightSkewed => KeyDistribution::RightSkewed {
                mu: 2f64.powi(26).ln(),
                sigma: 1.0,
            },
            DistKind::Exponential => KeyDistribution::Exponential {
                rate: 2f64.powi(-28),
            },
            DistKind::Duplicated => KeyDistribution::Duplicated {
                fraction: 0.5,
                distinct: 1000,
                lo: 0,
                hi: SPAN,
            },
        }
    }
}

impl std::str::FromStr for DistKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "uniform" => Ok(DistKind::Uniform),
            "normal" => Ok(DistKind::Normal),
            "right_skewed" | "rightskewed" | "skewed" | "lognormal" => Ok(DistKind::RightSkewed),
            "exponential" | "exp" => Ok(DistKind::Exponential),
            "duplicated" | "dup" => Ok(DistKind::Duplicated),
            other => Err(format!("unknown distribution `{other}`")),
        }
    }
}

impl KeyDistribution {
    pub fn kind(&self) -> DistKind {
        match self {
            KeyDistribution::Uniform { .. } => DistKind::Uniform,
            KeyDistribution::Normal { .. } => DistKind::Normal,
            KeyDistribution::RightSkewed { .. } => DistKind::RightSkewed,
            KeyDistribution::Exponential { .. } => DistKind::Exponential,
            KeyDistribution::Duplicated { .. } => DistKind::Duplicated,
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        use DatagenError::InvalidParam;
        match *self {
            KeyDistribution::Uniform { lo, hi } => {
                if lo >= hi {
                    return Err(InvalidParam {
                        field: "hi",
                        reason: "must be greater than lo",
                    });
                }
            }
            KeyDistribution::Normal { mean, std_dev } => {
                if !mean.is_finite() {
                    return Err(InvalidParam {
                        field: "mean",
                        reason: "must be finite",
                    });
                }
                if !(std_dev.is_finite() && std_dev > 0.0) {
                    return Err(InvalidParam {
                        field: "std_dev",
                        reason: "must be finite and > 0",
                    });
                }
            }
            KeyDistribution::RightSkewed { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(InvalidParam {
                        field: "mu",
                        reason: "must be finite",
                    });
                }
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(InvalidParam {
                        field: "sigma",
                        reason: "must be finite and > 0",
                    });
                }
            }
            KeyDistribution::Exponential { rate } => {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(InvalidParam {
                        field: "rate",
                        reason: "must be finite and > 0",
                    });
                }
            }
            KeyDistribution::Duplicated {
                fraction,
                distinct,
                lo,
                hi,
            } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(InvalidParam {
                        field: "fraction",
                        reason: "must lie in [0, 1]",
                    });
                }
                if distinct == 0 {
                    return Err(InvalidParam {
                        field: "distinct",
                        reason: "must be at least 1",
                    });
                }
                if lo >= hi {
                    return Err(InvalidParam {
                        field: "hi",
                        reason: "must be greater than lo",
                    });
                }
            }
        }
        Ok(())
    }
}

/// A distribution plus the seed that fixes its stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub distribution: KeyDistribution,
    pub seed: u64,
}

impl DistributionSpec {
    pub fn new(distribution: KeyDistribution, seed: u64) -> Self {
        Self { distribution, seed }
    }

    pub fn with_defaults(kind: DistKind, seed: u64) -> Self {
        Self::new(kind.defaults(), seed)
    }
}

#[inline]
fn to_key(x: f64) -> i64 {
    // `as` saturates at the i64 bounds and maps NaN to 0.
    x.floor() as i64
}

fn sample_n<D: Distribution<f64>>(dist: D, rng: &mut ChaCha8Rng, n: usize) -> Vec<i64> {
    (0..n).map(|_| to_key(dist.sample(rng))).collect()
}

/// Generates `n` keys. Deterministic in `(spec, n)`.
pub fn generate(spec: &DistributionSpec, n: usize) -> Result<Vec<i64>, DatagenError> {
    spec.distribution.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let keys = match spec.distribution {
        KeyDistribution::Uniform { lo, hi } => (0..n).map(|_| rng.random_range(lo..hi)).collect(),
        KeyDistribution::Normal { mean, std_dev } => {
            let dist = Normal::new(mean, std_dev).expect("validated");
            sample_n(dist, &mut rng, n)
        }
        KeyDistribution::RightSkewed { mu, sigma } => {
            let dist = LogNormal::new(mu, sigma).expect("validated");
            sample_n(dist, &mut rng, n)
        }
        KeyDistribution::Exponential { rate } => {
            let dist = Exp::new(rate).expect("validated");
            sample_n(dist, &mut rng, n)
        }
        KeyDistribution::Duplicated {
            fraction,
            distinct,
            lo,
            hi,
        } => {
            let pool: Vec<i64> = (0..distinct).map(|_| rng.random_range(lo..hi)).collect();
            let dup_count = ((fraction * n as f64).ceil() as usize).min(n);
            let mut keys = Vec::with_capacity(n);
            keys.extend((0..dup_count).map(|_| pool[rng.random_range(0..distinct)]));
            keys.extend((dup_count..n).map(|_| rng.random_range(lo..hi)));
            keys.shuffle(&mut rng);
            keys
        }
    };
    Ok(keys)
}

/// Splits `keys` into `parts` contiguous shares whose sizes differ by at most one.
pub fn split_even<T: Clone>(keys: &[T], parts: usize) -> Vec<Vec<T>> {
    let parts = parts.max(1);
    (0..parts)
        .map(|i| keys[i * keys.len() / parts..(i + 1) * keys.len() / parts].to_vec())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn median(mut v: Vec<i64>) -> i64 {
        v.sort_unstable();
        v[v.len() / 2]
    }

    fn mean(v: &[i64]) -> f64 {
        v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn zero_length() {
        let spec = DistributionSpec::new(KeyDistribution::Uniform { lo: 0, hi: 100 }, 7);
        assert!(generate(&spec, 0).unwrap().is_empty());
    }

    #[test]
    fn degenerate_duplicates() {
        let spec = DistributionSpec::new(
            KeyDistribution::Duplicated {
                fraction: 1.0,
                distinct: 1,
                lo: 0,
                hi: 10,
            },
            3,
        );
        let keys = generate(&spec, 5).unwrap();
        assert_eq!(keys.len(), 5);
        assert!(keys.iter().all(|&k| k == keys[0]));
    }

    #[test]
    fn exponential_mean_matches_rate() {
        let rate = 2f64.powi(-20);
        let spec = DistributionSpec::new(KeyDistribution::Exponential { rate }, 11);
        let keys = generate(&spec, 1_000_000).unwrap();
        let expected = 1.0 / rate;
        let got = mean(&keys);
        assert!(
            ((got - expected) / expected).abs() < 0.01,
            "mean {got} vs {expected}"
        );
    }

    #[test]
    fn deterministic_per_seed() {
        for kind in DistKind::ALL {
            let spec = DistributionSpec::with_defaults(kind, 99);
            assert_eq!(
                generate(&spec, 5000).unwrap(),
                generate(&spec, 5000).unwrap()
            );
            let other = DistributionSpec::with_defaults(kind, 100);
            assert_ne!(
                generate(&spec, 5000).unwrap(),
                generate(&other, 5000).unwrap()
            );
        }
    }

    #[test]
    fn skewed_shapes_have_mean_above_median() {
        for kind in [DistKind::RightSkewed, DistKind::Exponential] {
            let keys = generate(&DistributionSpec::with_defaults(kind, 5), 20_000).unwrap();
            assert!((median(keys.clone()) as f64) < mean(&keys), "{kind:?}");
        }
    }

    #[test]
    fn duplicated_draws_at_least_fraction_from_pool() {
        let spec = DistributionSpec::new(
            KeyDistribution::Duplicated {
                fraction: 0.3,
                distinct: 4,
                lo: 0,
                hi: 1 << 40,
            },
            1,
        );
        let n = 10_001;
        let keys = generate(&spec, n).unwrap();
        // Wide uniform range: pool keys are the only ones repeated this often.
        let mut counts = std::collections::HashMap::new();
        for &k in &keys {
            *counts.entry(k).or_insert(0usize) += 1;
        }
        let pooled: usize = counts.values().filter(|&&c| c > 100).sum();
        assert!(pooled >= (0.3 * n as f64).ceil() as usize);
    }

    #[test]
    fn full_duplication_respects_distinct_count() {
        let spec = DistributionSpec::new(
            KeyDistribution::Duplicated {
                fraction: 1.0,
                distinct: 7,
                lo: -50,
                hi: 50,
            },
            2,
        );
        let keys = generate(&spec, 10_000).unwrap();
        assert!(keys.iter().collect::<HashSet<_>>().len() <= 7);
        assert!(keys.iter().all(|k| (-50..50).contains(k)));
    }

    #[test]
    fn uniform_stays_in_range() {
        let spec = DistributionSpec::new(KeyDistribution::Uniform { lo: -3, hi: 4 }, 0);
        assert!(generate(&spec, 1000)
            .unwrap()
            .iter()
            .all(|k| (-3..4).contains(k)));
    }

    #[test]
    fn rejects_bad_params_by_field() {
        let cases = [
            (
                KeyDistribution::Normal {
                    mean: 0.0,
                    std_dev: 0.0,
                },
                "std_dev",
            ),
            (KeyDistribution::Exponential { rate: -1.0 }, "rate"),
            (
                KeyDistribution::RightSkewed {
                    mu: 1.0,
                    sigma: f64::NAN,
                },
                "sigma",
            ),
            (KeyDistribution::Uniform { lo: 5, hi: 5 }, "hi"),
            (
                KeyDistribution::Duplicated {
                    fraction: 1.5,
                    distinct: 1,
                    lo: 0,
                    hi: 1,
                },
                "fraction",
            ),
            (
                KeyDistribution::Duplicated {
                    fraction: 0.5,
                    distinct: 0,
                    lo: 0,
                    hi: 1,
                },
                "distinct",
            ),
        ];
        for (dist, field) in cases {
            match generate(&DistributionSpec::new(dist, 0), 10) {
                Err(DatagenError::InvalidParam { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected error on {field}, got {other:?}"),
            }
        }
    }

    #[test]
    fn split_even_sizes() {
        let keys: Vec<i64> = (0..10).collect();
        let parts = split_even(&keys, 3);
        assert_eq!(
            parts.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![3, 3, 4]
        );
        assert_eq!(parts.concat(), keys);
    }
}
