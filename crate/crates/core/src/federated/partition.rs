//! Client data partitioners.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{FedError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum PartitionMode {
    Iid,
    /// Per-label Dirichlet proportions; smaller `alpha` is more skewed.
    NonIid {
        alpha: f64,
    },
}

impl PartitionMode {
    pub fn tag(&self) -> &'static str {
        match self {
            PartitionMode::Iid => "IID",
            PartitionMode::NonIid { .. } => "Non-IID",
        }
    }
}

/// Splits sample positions `0..labels.len()` across `clients`.
///
/// Every client receives at least one sample.
pub fn partition<L: Ord + Copy>(
    labels: &[L],
    clients: usize,
    mode: PartitionMode,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if clients == 0 {
        return Err(FedError::Config("at least one client required".into()));
    }
    if labels.len() < clients {
        return Err(FedError::Config(format!(
            "{} samples cannot cover {clients} clients",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = vec![Vec::new(); clients];
    match mode {
        PartitionMode::Iid => {
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            idx.shuffle(&mut rng);
            for (i, s) in idx.into_iter().enumerate() {
                parts[i % clients].push(s);
            }
        }
        PartitionMode::NonIid { alpha } => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(FedError::Config(format!(
                    "dirichlet alpha must be positive, got {alpha}"
                )));
            }
            let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
            let mut by_label: BTreeMap<L, Vec<usize>> = BTreeMap::new();
            for (i, l) in labels.iter().enumerate() {
                by_label.entry(*l).or_default().push(i);
            }
            for idx in by_label.values_mut() {
                idx.shuffle(&mut rng);
                let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = draws.iter().sum();
                let n = idx.len();
                let mut start = 0;
                let mut acc = 0.0;
                for (c, d) in draws.iter().enumerate() {
                    acc += d;
                    let end = if c + 1 == clients {
                        n
                    } else if total > 0.0 {
                        ((acc / total) * n as f64).floor() as usize
                    } else {
                        (c + 1) * n / clients
                    };
                    let end = end.clamp(start, n);
                    parts[c].extend_from_slice(&idx[start..end]);
                    start = end;
                }
            }
            // top up empty clients from the largest one
            while let Some(empty) = parts.iter().position(Vec::is_empty) {
                let donor = (0..clients)
                    .max_by_key(|&c| (parts[c].len(), std::cmp::Reverse(c)))
                    .unwrap();
                let s = parts[donor].pop().expect("donor has samples");
                parts[empty].push(s);
            }
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<u32> {
        (0..600).map(|i| (i % 3) as u32).collect()
    }

    fn histograms(labels: &[u32], parts: &[Vec<usize>]) -> Vec<[usize; 3]> {
        parts
            .iter()
            .map(|p| {
                let mut h = [0; 3];
                for &i in p {
                    h[labels[i] as usize] += 1;
                }
                h
            })
            .collect()
    }

    #[test]
    fn every_sample_assigned_once() {
        let l = labels();
        for mode in [PartitionMode::Iid, PartitionMode::NonIid { alpha: 0.5 }] {
            let parts = partition(&l, 7, mode, 1).unwrap();
            let mut all: Vec<usize> = parts.concat();
            all.sort_unstable();
            assert_eq!(all, (0..l.len()).collect::<Vec<_>>());
            assert!(parts.iter().all(|p| !p.is_empty()));
        }
    }

    #[test]
    fn skewed_partition_differs_from_iid() {
        let l = labels();
        let iid = histograms(&l, &partition(&l, 5, PartitionMode::Iid, 3).unwrap());
        let non = histograms(&l, &partition(&l, 5, PartitionMode::NonIid { alpha: 0.5 }, 3).unwrap());
        let spread = |h: &[[usize; 3]]| {
            h.iter()
                .map(|c| *c.iter().max().unwrap() as f64 - *c.iter().min().unwrap() as f64)
                .sum::<f64>()
        };
        assert!(spread(&non) > 2.0 * spread(&iid), "{iid:?} {non:?}");
    }

    #[test]
    fn huge_alpha_approaches_iid() {
        let l = labels();
        let non = histograms(&l, &partition(&l, 4, PartitionMode::NonIid { alpha: 1e6 }, 9).unwrap());
        for h in non {
            for c in h {
                assert!((c as i64 - 50).abs() <= 3, "{c}");
            }
        }
    }

    #[test]
    fn tiny_alpha_still_covers_clients() {
        let l: Vec<u32> = vec![0; 12];
        let parts = partition(&l, 12, PartitionMode::NonIid { alpha: 1e-3 }, 0).unwrap();
        assert!(parts.iter().all(|p| p.len() == 1));
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(partition(&[0u32; 3], 4, PartitionMode::Iid, 0).is_err());
        assert!(partition(&[0u32; 3], 0, PartitionMode::Iid, 0).is_err());
    }
}
