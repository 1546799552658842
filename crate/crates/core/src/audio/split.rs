//! Speaker-disjoint train/validation/test splits.

use std::collections::BTreeSet;

use crate::data::Spectrogram;
use crate::rng::Rng;

use super::{AudioClip, AudioError};

/// Anything carrying a speaker tag can be split speaker-disjointly.
pub trait HasSpeaker {
    fn speaker(&self) -> &str;
}

impl HasSpeaker for AudioClip {
    fn speaker(&self) -> &str {
        &self.speaker_id
    }
}

impl HasSpeaker for Spectrogram {
    fn speaker(&self) -> &str {
        &self.speaker_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

/// Speaker-disjoint dataset split; every speaker's items live in exactly one
/// of the three parts.
#[derive(Debug, Clone)]
pub struct DatasetSplit<T = Spectrogram> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Partition items by speaker: unique speakers are shuffled by `seed`, the
/// validation and test speaker counts are cumulative-floor rounded, and the
/// remainder goes to train. All of a speaker's items land in one split.
pub fn split_by_speaker<T: HasSpeaker + Clone>(
    items: &[T],
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit<T>, AudioError> {
    let speakers: BTreeSet<&str> = items.iter().map(|c| c.speaker()).collect();
    if speakers.len() < 3 {
        return Err(AudioError::TooFewSpeakers {
            needed: 3,
            found: speakers.len(),
        });
    }
    let mut speakers: Vec<&str> = speakers.into_iter().collect();
    let mut rng = Rng::seed_from(seed);
    rng.shuffle(&mut speakers);

    let total = speakers.len();
    let n_val = (total as f64 * ratios.validation).floor() as usize;
    let cumulative = (total as f64 * (ratios.validation + ratios.test)).floor() as usize;
    let n_test = cumulative - n_val;
    // Everything past the two floor-rounded boundaries is training data.
    let val_set: BTreeSet<&str> = speakers[..n_val].iter().copied().collect();
    let test_set: BTreeSet<&str> = speakers[n_val..n_val + n_test].iter().copied().collect();

    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for item in items {
        if val_set.contains(item.speaker()) {
            split.validation.push(item.clone());
        } else if test_set.contains(item.speaker()) {
            split.test.push(item.clone());
        } else {
            split.train.push(item.clone());
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[derive(Clone, Debug)]
    struct Tagged(String);

    impl HasSpeaker for Tagged {
        fn speaker(&self) -> &str {
            &self.0
        }
    }

    fn speakers_of(items: &[Tagged]) -> BTreeSet<String> {
        items.iter().map(|t| t.0.clone()).collect()
    }

    #[test]
    fn ten_speakers_split_eight_one_one() {
        let items: Vec<Tagged> = (0..10).map(|i| Tagged(format!("spk{i}"))).collect();
        let split = split_by_speaker(&items, SplitRatios::default(), 0).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.validation.len(), 1);
        assert_eq!(split.test.len(), 1);
    }

    #[test]
    fn too_few_speakers_is_an_error() {
        let items: Vec<Tagged> = vec![Tagged("a".into()), Tagged("b".into()), Tagged("a".into())];
        assert!(matches!(
            split_by_speaker(&items, SplitRatios::default(), 0),
            Err(AudioError::TooFewSpeakers { found: 2, .. })
        ));
    }

    #[test]
    fn same_seed_same_assignment() {
        let items: Vec<Tagged> = (0..23).map(|i| Tagged(format!("v{i}"))).collect();
        let a = split_by_speaker(&items, SplitRatios::default(), 9).unwrap();
        let b = split_by_speaker(&items, SplitRatios::default(), 9).unwrap();
        assert_eq!(speakers_of(&a.train), speakers_of(&b.train));
        assert_eq!(speakers_of(&a.validation), speakers_of(&b.validation));
        assert_eq!(speakers_of(&a.test), speakers_of(&b.test));
    }

    proptest! {
        /// Disjointness and near-target sizing over random speaker
        /// populations: zero speaker overlap, each split within one speaker
        /// of its 80/10/10 target.
        #[test]
        fn split_is_disjoint_and_near_ratio(
            n_speakers in 3usize..60,
            clips_per in 1usize..5,
            seed in any::<u64>(),
        ) {
            let items: Vec<Tagged> = (0..n_speakers)
                .flat_map(|s| (0..clips_per).map(move |_| Tagged(format!("spk{s}"))))
                .collect();
            let split = split_by_speaker(&items, SplitRatios::default(), seed).unwrap();

            let tr = speakers_of(&split.train);
            let va = speakers_of(&split.validation);
            let te = speakers_of(&split.test);
            prop_assert!(tr.is_disjoint(&va));
            prop_assert!(tr.is_disjoint(&te));
            prop_assert!(va.is_disjoint(&te));
            prop_assert_eq!(tr.len() + va.len() + te.len(), n_speakers);

            let n = n_speakers as f64;
            prop_assert!((tr.len() as f64 - 0.8 * n).abs() <= 1.0);
            prop_assert!((va.len() as f64 - 0.1 * n).abs() <= 1.0);
            prop_assert!((te.len() as f64 - 0.1 * n).abs() <= 1.0);

            // Item counts are conserved.
            prop_assert_eq!(
                split.train.len() + split.validation.len() + split.test.len(),
                items.len()
            );
        }
    }
}
