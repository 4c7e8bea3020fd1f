use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::FrameExample;
use crate::corpus::Gender;
use crate::encoders::nn::mix;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldPolicy {
    /// Disjoint speakers for train, val and test (6/2/2 with 10 speakers).
    #[default]
    Default,
    /// Eight training speakers; the two held-out speakers' utterances are
    /// halved into val and test, so val and test share speakers.
    PaperLiteral,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub policy: FoldPolicy,
    pub folds: Vec<Fold>,
}

/// Speaker-independent, gender-balanced cross-validation folds.
///
/// Speakers of each gender are shuffled by `seed`. Fold `i` tests on the
/// `i`-th male and female speaker; under the default policy the next pair
/// (cyclically) validates and the rest train.
pub fn make_folds(speakers: &[(String, Gender)], k: usize, seed: u64, policy: FoldPolicy) -> Result<FoldPlan> {
    let mut by_gender: BTreeMap<Gender, Vec<String>> = BTreeMap::new();
    for (id, g) in speakers {
        by_gender.entry(*g).or_default().push(id.clone());
    }
    let mut male = by_gender.remove(&Gender::M).unwrap_or_default();
    let mut female = by_gender.remove(&Gender::F).unwrap_or_default();
    male.sort();
    male.dedup();
    female.sort();
    female.dedup();
    let needed = match policy {
        FoldPolicy::Default => 2,
        FoldPolicy::PaperLiteral => 1,
    };
    if male.len() < needed || female.len() < needed || k == 0 {
        return Err(Error::InsufficientSpeakers { needed, male: male.len(), female: female.len() });
    }
    male.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 1)));
    female.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 2)));

    let folds = (0..k)
        .map(|i| {
            let test = vec![male[i % male.len()].clone(), female[i % female.len()].clone()];
            let val = match policy {
                FoldPolicy::Default => vec![male[(i + 1) % male.len()].clone(), female[(i + 1) % female.len()].clone()],
                FoldPolicy::PaperLiteral => test.clone(),
            };
            let mut train: Vec<String> =
                male.iter().chain(&female).filter(|s| !test.contains(s) && !val.contains(s)).cloned().collect();
            train.sort();
            Fold { train, val, test }
        })
        .collect();
    Ok(FoldPlan { policy, folds })
}

/// Example indices for each split role.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assign examples to train/val/test. Under the paper-literal policy the
/// held-out speakers' utterances are sorted by id; the first half (rounded
/// up) validates and the rest tests.
pub fn split_examples(examples: &[FrameExample], fold: &Fold, policy: FoldPolicy) -> SplitIndices {
    let mut val_utts = std::collections::BTreeSet::new();
    if policy == FoldPolicy::PaperLiteral {
        for spk in &fold.test {
            let mut utts: Vec<&str> = examples.iter().filter(|e| &e.speaker_id == spk).map(|e| e.utterance_id.as_str()).collect();
            utts.sort();
            utts.dedup();
            let half = utts.len().div_ceil(2);
            val_utts.extend(utts[..half].iter().map(|s| s.to_string()));
        }
    }
    let mut out = SplitIndices::default();
    for (i, e) in examples.iter().enumerate() {
        let s = &e.speaker_id;
        if fold.train.contains(s) {
            out.train.push(i);
        } else if policy == FoldPolicy::PaperLiteral && fold.test.contains(s) {
            if val_utts.contains(&e.utterance_id) {
                out.val.push(i);
            } else {
                out.test.push(i);
            }
        } else if fold.test.contains(s) {
            out.test.push(i);
        } else if fold.val.contains(s) {
            out.val.push(i);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roster() -> Vec<(String, Gender)> {
        (0..10).map(|i| (format!("S{i:02}"), if i % 2 == 0 { Gender::M } else { Gender::F })).collect()
    }

    #[test]
    fn default_policy_shapes() {
        let plan = make_folds(&roster(), 5, 7, FoldPolicy::Default).unwrap();
        assert_eq!(plan.folds.len(), 5);
        let mut tested = Vec::new();
        for f in &plan.folds {
            assert_eq!((f.train.len(), f.val.len(), f.test.len()), (6, 2, 2));
            tested.extend(f.test.clone());
        }
        tested.sort();
        tested.dedup();
        assert_eq!(tested.len(), 10);
        assert_eq!(plan, make_folds(&roster(), 5, 7, FoldPolicy::Default).unwrap());
    }

    #[test]
    fn held_out_pair_shapes() {
        let plan = make_folds(&roster(), 5, 7, FoldPolicy::PaperLiteral).unwrap();
        for f in &plan.folds {
            assert_eq!((f.train.len(), f.test.len()), (8, 2));
            assert_eq!(f.val, f.test);
        }
    }

    #[test]
    fn too_few_speakers() {
        let r = vec![("a".to_string(), Gender::M), ("b".to_string(), Gender::F), ("c".to_string(), Gender::F)];
        assert!(matches!(make_folds(&r, 5, 0, FoldPolicy::Default), Err(Error::InsufficientSpeakers { male: 1, .. })));
        assert!(make_folds(&r, 5, 0, FoldPolicy::PaperLiteral).is_ok());
    }

    fn ex(spk: &str, utt: &str) -> FrameExample {
        FrameExample {
            utterance_id: utt.into(),
            speaker_id: spk.into(),
            frame_index: 0,
            frame: vec![],
            audio_window: None,
            labels: [Some(0); 3],
        }
    }

    #[test]
    fn held_out_utterances_are_halved() {
        let fold = Fold { train: vec!["T".into()], val: vec!["H".into()], test: vec!["H".into()] };
        let data = vec![ex("T", "t1"), ex("H", "h3"), ex("H", "h1"), ex("H", "h2"), ex("H", "h1")];
        let s = split_examples(&data, &fold, FoldPolicy::PaperLiteral);
        assert_eq!(s.train, vec![0]);
        assert_eq!(s.val, vec![2, 3, 4]);
        assert_eq!(s.test, vec![1]);
    }
}
