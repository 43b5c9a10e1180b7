use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, FlowFeatureVector, Label, Result};

/// Smallest per-class sample count accepted by [`make_scenarios`].
pub const MIN_CLASS_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub const DEFAULT: SplitFractions = SplitFractions {
        train: 0.6,
        val: 0.2,
        test: 0.2,
    };

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(*p >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::BadFractions(parts));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes: val and test by floor, remainder to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = (self.val * n as f64).floor() as usize;
        let test = (self.test * n as f64).floor() as usize;
        (n - val - test, val, test)
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub zero_day_class: u32,
    pub n_day_classes: BTreeSet<u32>,
    pub benign_fractions: SplitFractions,
    pub attack_fractions: SplitFractions,
}

/// One 0-day holdout scenario. Splits are index lists into the flow slice
/// the scenario was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub ad_train: Vec<usize>,
    pub ad_val: Vec<usize>,
    pub ac_train: Vec<usize>,
    pub ac_val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Scenario {
    /// True when no N-day class is left to train the classifier on.
    pub fn ac_skipped(&self) -> bool {
        self.spec.n_day_classes.is_empty()
    }

    pub fn select(flows: &[FlowFeatureVector], idx: &[usize]) -> Vec<FlowFeatureVector> {
        idx.iter().map(|&i| flows[i].clone()).collect()
    }

    /// Every index used for training or validation.
    pub fn training_manifest(&self) -> impl Iterator<Item = usize> + '_ {
        self.ad_train
            .iter()
            .chain(&self.ad_val)
            .chain(&self.ac_train)
            .chain(&self.ac_val)
            .copied()
    }
}

fn shuffled(mut idx: Vec<usize>, seed: u64, stream: &str, class: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, stream, class));
    idx.shuffle(&mut rng);
    idx
}

fn split3(idx: &[usize], f: &SplitFractions) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (tr, va, _) = f.sizes(idx.len());
    (idx[..tr].to_vec(), idx[tr..tr + va].to_vec(), idx[tr + va..].to_vec())
}

/// One scenario per attack class, each holding that class out as the 0-day.
///
/// Splits are stratified per class after a seeded shuffle; the benign split
/// is identical across scenarios.
pub fn make_scenarios(
    flows: &[FlowFeatureVector],
    benign_fractions: SplitFractions,
    attack_fractions: SplitFractions,
    seed: u64,
) -> Result<Vec<Scenario>> {
    benign_fractions.validate()?;
    attack_fractions.validate()?;
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, f) in flows.iter().enumerate() {
        by_class.entry(f.label).or_default().push(i);
    }
    let benign = by_class.remove(&Label::Benign).ok_or(DataError::NoBenign)?;
    by_class.remove(&Label::Unlabeled);
    if by_class.is_empty() {
        return Err(DataError::NoAttacks);
    }
    for (label, idx) in by_class.iter().chain(std::iter::once((&Label::Benign, &benign))) {
        if idx.len() < MIN_CLASS_SIZE {
            return Err(DataError::ClassTooSmall {
                class: format!("{label:?}"),
                count: idx.len(),
                min: MIN_CLASS_SIZE,
            });
        }
    }
    let (b_train, b_val, b_test) = split3(&shuffled(benign, seed, "benign", 0), &benign_fractions);
    let classes: Vec<u32> = by_class.keys().filter_map(|l| l.attack_id()).collect();
    let attack_splits: BTreeMap<u32, (Vec<usize>, Vec<usize>, Vec<usize>)> = by_class
        .iter()
        .filter_map(|(l, idx)| l.attack_id().map(|c| (c, idx)))
        .map(|(c, idx)| {
            (
                c,
                split3(&shuffled(idx.clone(), seed, "attack", c as u64), &attack_fractions),
            )
        })
        .collect();

    Ok(classes
        .iter()
        .map(|&zero_day| {
            let mut ac_train = Vec::new();
            let mut ac_val = Vec::new();
            let mut test = b_test.clone();
            for (&c, (tr, va, te)) in &attack_splits {
                if c == zero_day {
                    test.extend(&by_class[&Label::Attack(c)]);
                } else {
                    ac_train.extend(tr);
                    ac_val.extend(va);
                    test.extend(te);
                }
            }
            Scenario {
                spec: ScenarioSpec {
                    zero_day_class: zero_day,
                    n_day_classes: classes.iter().copied().filter(|&c| c != zero_day).collect(),
                    benign_fractions,
                    attack_fractions,
                },
                ad_train: b_train.clone(),
                ad_val: b_val.clone(),
                ac_train,
                ac_val,
                test,
            }
        })
        .collect())
}
