//! Trial-wise 8-fold and leave-one-subject-out split plans.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{Epoch, EpochSet, Paradigm, SubjectId, TrialId};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EightFold,
    Loso,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::EightFold => "8-fold",
            Scheme::Loso => "loso",
        })
    }
}

/// The unit a plan assigns to folds: a trial (within its subject and
/// paradigm) for 8-fold, a subject for LOSO.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SplitKey {
    Trial { subject: SubjectId, paradigm: Paradigm, trial: TrialId },
    Subject(SubjectId),
}

impl SplitKey {
    pub fn of(scheme: Scheme, e: &Epoch) -> Self {
        match scheme {
            Scheme::EightFold => SplitKey::Trial { subject: e.subject_id, paradigm: e.paradigm, trial: e.trial_id },
            Scheme::Loso => SplitKey::Subject(e.subject_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub test: BTreeSet<SplitKey>,
    pub train: BTreeSet<SplitKey>,
    pub validation: BTreeSet<SplitKey>,
}

/// The three portions of a set under one fold.
#[derive(Debug, Clone, Default)]
pub struct Portions {
    pub train: EpochSet,
    pub validation: EpochSet,
    pub test: EpochSet,
}

impl Fold {
    /// Splits `set` by the fold's keys; epochs whose key is in no portion are
    /// dropped.
    pub fn partition(&self, scheme: Scheme, set: &EpochSet) -> Portions {
        let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for e in set.iter() {
            let k = SplitKey::of(scheme, e);
            if self.test.contains(&k) {
                test.push(e.clone());
            } else if self.validation.contains(&k) {
                validation.push(e.clone());
            } else if self.train.contains(&k) {
                train.push(e.clone());
            }
        }
        Portions {
            train: EpochSet::new(train).with_attrs(set.attrs.clone()),
            validation: EpochSet::new(validation).with_attrs(set.attrs.clone()),
            test: EpochSet::new(test).with_attrs(set.attrs.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: Scheme,
    pub folds: Vec<Fold>,
}

pub const N_FOLDS: usize = 8;

/// Validation share of the units left after removing the test fold (4:1).
fn n_validation(remaining: usize) -> usize {
    ((remaining as f64 / 5.0).round() as usize).clamp(1, remaining.saturating_sub(1).max(1))
}

/// Deals the trials of each (subject, paradigm) group, shuffled, round-robin
/// into 8 folds; the other 7 folds' trials of each group are split 4:1 into
/// training and validation.
pub fn make_8fold_plan(original: &EpochSet, rng: &RngStream) -> Result<SplitPlan> {
    let mut groups: BTreeMap<(SubjectId, Paradigm), BTreeSet<TrialId>> = BTreeMap::new();
    for e in original.iter() {
        groups.entry((e.subject_id, e.paradigm)).or_default().insert(e.trial_id);
    }
    if groups.is_empty() {
        return Err(Error::NotEnoughTrials("no trials in the set".into()));
    }
    let mut folds: Vec<Fold> = (0..N_FOLDS)
        .map(|index| Fold { index, test: BTreeSet::new(), train: BTreeSet::new(), validation: BTreeSet::new() })
        .collect();
    for ((subject, paradigm), trials) in &groups {
        if trials.len() < N_FOLDS {
            return Err(Error::NotEnoughTrials(format!(
                "subject {subject}, {paradigm}: {} trials for {N_FOLDS} folds",
                trials.len()
            )));
        }
        let key = |trial| SplitKey::Trial { subject: *subject, paradigm: *paradigm, trial };
        let mut order: Vec<TrialId> = trials.iter().copied().collect();
        rng.child(format!("deal/subject={subject}/paradigm={paradigm}")).shuffle(&mut order);
        for (i, &t) in order.iter().enumerate() {
            folds[i % N_FOLDS].test.insert(key(t));
        }
        for fold in folds.iter_mut() {
            let mut rest: Vec<TrialId> =
                order.iter().copied().filter(|&t| !fold.test.contains(&key(t))).collect();
            rng.child(format!("fold={}/subject={subject}/paradigm={paradigm}", fold.index)).shuffle(&mut rest);
            let n_val = n_validation(rest.len());
            fold.validation.extend(rest[..n_val].iter().map(|&t| key(t)));
            fold.train.extend(rest[n_val..].iter().map(|&t| key(t)));
        }
    }
    Ok(SplitPlan { scheme: Scheme::EightFold, folds })
}

/// One fold per subject: that subject is the test set; of the rest, the
/// next `round(n/5)` subjects (cyclically) validate and the others train.
pub fn make_loso_plan(subjects: &BTreeSet<SubjectId>) -> Result<SplitPlan> {
    if subjects.len() < 3 {
        return Err(Error::NotEnoughTrials(format!("{} subjects; LOSO needs at least 3", subjects.len())));
    }
    let list: Vec<SubjectId> = subjects.iter().copied().collect();
    let n = list.len();
    let n_val = n_validation(n - 1);
    let folds = (0..n)
        .map(|i| {
            let others: Vec<SubjectId> = (1..n).map(|k| list[(i + k) % n]).collect();
            Fold {
                index: i,
                test: [SplitKey::Subject(list[i])].into(),
                validation: others[..n_val].iter().map(|&s| SplitKey::Subject(s)).collect(),
                train: others[n_val..].iter().map(|&s| SplitKey::Subject(s)).collect(),
            }
        })
        .collect();
    Ok(SplitPlan { scheme: Scheme::Loso, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::epoch;
    use crate::data::Label;

    fn trials_set(subjects: &[SubjectId], trials: u32) -> EpochSet {
        let mut v = Vec::new();
        for &s in subjects {
            for p in Paradigm::ALL {
                for t in 0..trials {
                    for label in [Label::Attended, Label::Unattended] {
                        let mut e = epoch(s, label, 0.0);
                        e.paradigm = p;
                        e.trial_id = t;
                        v.push(e);
                    }
                }
            }
        }
        EpochSet::new(v)
    }

    #[test]
    fn eighty_trials_give_folds_of_ten() {
        let set = trials_set(&[1], 80);
        let plan = make_8fold_plan(&set, &RngStream::derive(1, "split").unwrap()).unwrap();
        for f in &plan.folds {
            let p1 = f.test.iter().filter(|k| matches!(k, SplitKey::Trial { paradigm: Paradigm::P1, .. })).count();
            assert_eq!(p1, 10);
        }
    }

    #[test]
    fn every_trial_in_exactly_one_fold_and_portions_disjoint() {
        let set = trials_set(&[1, 2, 3], 13);
        let plan = make_8fold_plan(&set, &RngStream::derive(2, "split").unwrap()).unwrap();
        let all: BTreeSet<SplitKey> = set.iter().map(|e| SplitKey::of(Scheme::EightFold, e)).collect();
        let mut seen = BTreeSet::new();
        for f in &plan.folds {
            for k in &f.test {
                assert!(seen.insert(*k), "{k:?} in two folds");
            }
            assert!(f.test.is_disjoint(&f.train) && f.test.is_disjoint(&f.validation));
            assert!(f.train.is_disjoint(&f.validation));
            let union: BTreeSet<_> = f.test.iter().chain(&f.train).chain(&f.validation).copied().collect();
            assert_eq!(union, all);
        }
        assert_eq!(seen, all);
    }

    #[test]
    fn train_validation_ratio_is_four_to_one() {
        let set = trials_set(&[1], 40);
        let plan = make_8fold_plan(&set, &RngStream::derive(3, "split").unwrap()).unwrap();
        // 35 remaining trials per group → 7 validation, 28 training.
        for f in &plan.folds {
            assert_eq!(f.validation.len(), 3 * 7);
            assert_eq!(f.train.len(), 3 * 28);
        }
    }

    #[test]
    fn too_few_trials_rejected() {
        let set = trials_set(&[1], 7);
        assert!(matches!(
            make_8fold_plan(&set, &RngStream::derive(4, "split").unwrap()),
            Err(Error::NotEnoughTrials(_))
        ));
    }

    #[test]
    fn plan_is_deterministic() {
        let set = trials_set(&[1, 2], 16);
        let a = make_8fold_plan(&set, &RngStream::derive(5, "split").unwrap()).unwrap();
        let b = make_8fold_plan(&set, &RngStream::derive(5, "split").unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loso_24_subjects() {
        let subjects: BTreeSet<SubjectId> = (1..=24).collect();
        let plan = make_loso_plan(&subjects).unwrap();
        assert_eq!(plan.folds.len(), 24);
        let mut tested = BTreeSet::new();
        for f in &plan.folds {
            assert_eq!(f.test.len(), 1);
            assert_eq!((f.train.len(), f.validation.len()), (18, 5));
            assert!(f.test.is_disjoint(&f.train) && f.test.is_disjoint(&f.validation));
            assert!(f.train.is_disjoint(&f.validation));
            tested.extend(f.test.iter().copied());
        }
        assert_eq!(tested, subjects.iter().map(|&s| SplitKey::Subject(s)).collect());
        assert!(make_loso_plan(&[1, 2].into()).is_err());
    }

    #[test]
    fn partition_routes_epochs() {
        let set = trials_set(&[1, 2, 3], 8);
        let plan = make_loso_plan(&set.subjects()).unwrap();
        let parts = plan.folds[0].partition(Scheme::Loso, &set);
        assert_eq!(parts.test.subjects(), [1].into());
        assert_eq!(parts.validation.subjects(), [2].into());
        assert_eq!(parts.train.subjects(), [3].into());
        assert_eq!(parts.train.len() + parts.validation.len() + parts.test.len(), set.len());
    }
}
