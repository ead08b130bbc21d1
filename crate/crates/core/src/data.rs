//! Labeled EEG epochs and ordered epoch collections.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Scalp electrodes per epoch.
pub const N_CHANNELS: usize = 32;
/// Sampling rate after preprocessing.
pub const FS_HZ: f32 = 256.0;
/// Sampling rate of raw recordings.
pub const RAW_FS_HZ: f32 = 1000.0;
/// Nominal epoch start relative to the word middle.
pub const T_MIN_S: f32 = -0.2;
/// Nominal epoch end relative to the word middle.
pub const T_MAX_S: f32 = 1.0;
/// Samples before the onset: `-round(T_MIN_S * FS_HZ)`.
pub const PRE_ONSET_SAMPLES: usize = 51;
/// Samples per epoch on the half-open grid `[-51, 256)`.
pub const N_SAMPLES: usize = 307;

pub type SubjectId = u16;
pub type TrialId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Paradigm {
    P1,
    P2,
    P3,
}

impl Paradigm {
    pub const ALL: [Paradigm; 3] = [Paradigm::P1, Paradigm::P2, Paradigm::P3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.index() + 1)
    }
}

impl std::str::FromStr for Paradigm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "P1" | "p1" | "1" => Ok(Paradigm::P1),
            "P2" | "p2" | "2" => Ok(Paradigm::P2),
            "P3" | "p3" | "3" => Ok(Paradigm::P3),
            _ => Err(format!("unknown paradigm {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Attended,
    Unattended,
}

impl Label {
    /// Binary target used by the classifier: attended = 1.
    pub fn target(self) -> f32 {
        match self {
            Label::Attended => 1.0,
            Label::Unattended => 0.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Label::Attended => 1,
            Label::Unattended => 0,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Label::Attended),
            0 => Some(Label::Unattended),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Attended => f.write_str("attended"),
            Label::Unattended => f.write_str("unattended"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Origin {
    Experimental,
    UpsampledAvg,
    Simulated0dB,
    Simulated3dB,
    Simulated6dB,
}

impl Origin {
    pub const ALL: [Origin; 5] = [
        Origin::Experimental,
        Origin::UpsampledAvg,
        Origin::Simulated0dB,
        Origin::Simulated3dB,
        Origin::Simulated6dB,
    ];

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    /// Simulation origin for an amplitude gain in dB.
    pub fn simulated(gain_db: f32) -> Option<Self> {
        match gain_db {
            g if g == 0.0 => Some(Origin::Simulated0dB),
            g if g == 3.0 => Some(Origin::Simulated3dB),
            g if g == 6.0 => Some(Origin::Simulated6dB),
            _ => None,
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Origin::Experimental => "experimental",
            Origin::UpsampledAvg => "upsampled",
            Origin::Simulated0dB => "sim0dB",
            Origin::Simulated3dB => "sim3dB",
            Origin::Simulated6dB => "sim6dB",
        };
        f.write_str(s)
    }
}

/// Stable epoch identifier.
///
/// Layout (MSB first): derived flag (1) | origin (4) | label (1) | paradigm (2) |
/// subject (16) | counter (40).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpochId(pub u64);

impl EpochId {
    const COUNTER_BITS: u32 = 40;

    pub fn experimental(subject: SubjectId, paradigm: Paradigm, counter: u64) -> Self {
        Self::compose(false, Origin::Experimental, Label::Unattended, subject, paradigm, counter)
    }

    pub fn derived(
        origin: Origin,
        label: Label,
        subject: SubjectId,
        paradigm: Paradigm,
        counter: u64,
    ) -> Self {
        Self::compose(true, origin, label, subject, paradigm, counter)
    }

    fn compose(
        derived: bool,
        origin: Origin,
        label: Label,
        subject: SubjectId,
        paradigm: Paradigm,
        counter: u64,
    ) -> Self {
        debug_assert!(counter < (1 << Self::COUNTER_BITS));
        let mut v = (derived as u64) << 63;
        v |= (origin.code() as u64) << 59;
        v |= (label.code() as u64) << 58;
        v |= (paradigm.index() as u64) << 56;
        v |= (subject as u64) << Self::COUNTER_BITS;
        v |= counter & ((1 << Self::COUNTER_BITS) - 1);
        EpochId(v)
    }

    pub fn is_derived(self) -> bool {
        self.0 >> 63 == 1
    }
}

/// One labeled EEG segment, channels × samples, row-major, microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub id: EpochId,
    pub subject_id: SubjectId,
    pub paradigm: Paradigm,
    pub trial_id: TrialId,
    pub label: Label,
    pub origin: Origin,
    pub fs_hz: f32,
    pub t_min_s: f32,
    pub channels: usize,
    pub samples: usize,
    pub data: Vec<f32>,
    /// Experimental epochs this one was computed from; empty for experimental epochs.
    pub sources: Vec<EpochId>,
}

/// Maximum number of source ids a derived epoch may carry.
pub const MAX_SOURCES: usize = 3;

impl Epoch {
    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    /// Experimental epochs this epoch depends on (itself when experimental).
    pub fn lineage(&self) -> Vec<EpochId> {
        if self.origin == Origin::Experimental {
            vec![self.id]
        } else {
            self.sources.clone()
        }
    }

    /// Largest peak-to-peak excursion over channels.
    pub fn peak_to_peak(&self) -> f32 {
        (0..self.channels)
            .map(|c| {
                let ch = self.channel(c);
                let (lo, hi) = ch
                    .iter()
                    .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                hi - lo
            })
            .fold(0.0, f32::max)
    }
}

/// Outcome of [`validate_epoch`]; empty violation list means ok.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Validation {
    pub violations: Vec<String>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, name: &str) -> bool {
        self.violations.iter().any(|v| v == name)
    }
}

pub fn validate_epoch(e: &Epoch) -> Validation {
    let mut violations = Vec::new();
    if e.channels != N_CHANNELS {
        violations.push("channel count".to_string());
    }
    if e.samples != N_SAMPLES {
        violations.push("sample count".to_string());
    }
    if e.data.len() != e.channels * e.samples {
        violations.push("data length".to_string());
    }
    if e.fs_hz != FS_HZ {
        violations.push("sampling rate".to_string());
    }
    if e.t_min_s != T_MIN_S {
        violations.push("epoch start".to_string());
    }
    if !(1..=24).contains(&e.subject_id) {
        violations.push("subject id".to_string());
    }
    if e.data.iter().any(|v| !v.is_finite()) {
        violations.push("finite data".to_string());
    }
    if e.sources.len() > MAX_SOURCES {
        violations.push("source count".to_string());
    }
    if (e.origin == Origin::Experimental) != e.sources.is_empty() {
        violations.push("provenance".to_string());
    }
    Validation { violations }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ManifestKey {
    pub subject: SubjectId,
    pub paradigm: Paradigm,
    pub label: Label,
    pub origin: Origin,
}

pub type Manifest = BTreeMap<ManifestKey, usize>;

pub fn manifest_of(epochs: &[Epoch]) -> Manifest {
    let mut m = Manifest::new();
    for e in epochs {
        let key = ManifestKey {
            subject: e.subject_id,
            paradigm: e.paradigm,
            label: e.label,
            origin: e.origin,
        };
        *m.entry(key).or_insert(0) += 1;
    }
    m
}

/// Ordered epochs plus their per-(subject, paradigm, label, origin) counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochSet {
    epochs: Vec<Epoch>,
    manifest: Manifest,
    /// Free-form string attributes carried in the file header (generation parameters, stage tags).
    pub attrs: BTreeMap<String, String>,
}

impl EpochSet {
    pub fn new(epochs: Vec<Epoch>) -> Self {
        let manifest = manifest_of(&epochs);
        Self {
            epochs,
            manifest,
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_attrs(mut self, attrs: BTreeMap<String, String>) -> Self {
        self.attrs = attrs;
        self
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn into_epochs(self) -> Vec<Epoch> {
        self.epochs
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Epoch> {
        self.epochs.iter()
    }

    /// Concatenates sets in the given order; attributes of the first set win.
    pub fn concat(sets: impl IntoIterator<Item = EpochSet>) -> Self {
        let mut epochs = Vec::new();
        let mut attrs = None;
        for s in sets {
            if attrs.is_none() {
                attrs = Some(s.attrs.clone());
            }
            epochs.extend(s.epochs);
        }
        EpochSet::new(epochs).with_attrs(attrs.unwrap_or_default())
    }

    pub fn filter(&self, mut keep: impl FnMut(&Epoch) -> bool) -> Self {
        EpochSet::new(self.epochs.iter().filter(|e| keep(e)).cloned().collect())
            .with_attrs(self.attrs.clone())
    }

    pub fn subjects(&self) -> BTreeSet<SubjectId> {
        self.epochs.iter().map(|e| e.subject_id).collect()
    }

    pub fn trials(&self) -> BTreeSet<TrialId> {
        self.epochs.iter().map(|e| e.trial_id).collect()
    }

    /// Union of experimental ids every epoch in the set depends on.
    pub fn lineage(&self) -> BTreeSet<EpochId> {
        self.epochs.iter().flat_map(|e| e.lineage()).collect()
    }
}

impl<'a> IntoIterator for &'a EpochSet {
    type Item = &'a Epoch;
    type IntoIter = std::slice::Iter<'a, Epoch>;

    fn into_iter(self) -> Self::IntoIter {
        self.epochs.iter()
    }
}

/// Per-subject and pooled counts by (paradigm, label, origin).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CountTable {
    pub per_subject: BTreeMap<ManifestKey, usize>,
    pub totals: BTreeMap<(Paradigm, Label, Origin), usize>,
}

impl CountTable {
    /// Total over subjects and origins.
    pub fn total(&self, paradigm: Paradigm, label: Label) -> usize {
        self.totals
            .iter()
            .filter(|((p, l, _), _)| *p == paradigm && *l == label)
            .map(|(_, n)| n)
            .sum()
    }

    pub fn total_origin(&self, paradigm: Paradigm, label: Label, origin: Origin) -> usize {
        self.totals.get(&(paradigm, label, origin)).copied().unwrap_or(0)
    }

    pub fn subject(&self, subject: SubjectId, paradigm: Paradigm, label: Label) -> usize {
        self.per_subject
            .iter()
            .filter(|(k, _)| k.subject == subject && k.paradigm == paradigm && k.label == label)
            .map(|(_, n)| n)
            .sum()
    }

    pub fn add(&mut self, other: &CountTable) {
        for (k, n) in &other.per_subject {
            *self.per_subject.entry(*k).or_insert(0) += n;
        }
        for (k, n) in &other.totals {
            *self.totals.entry(*k).or_insert(0) += n;
        }
    }
}

/// Counts from the set's manifest, optionally restricted to a paradigm and label.
pub fn class_counts(set: &EpochSet, paradigm: Option<Paradigm>, label: Option<Label>) -> CountTable {
    counts_from_manifest(set.manifest(), paradigm, label)
}

pub fn counts_from_manifest(
    manifest: &Manifest,
    paradigm: Option<Paradigm>,
    label: Option<Label>,
) -> CountTable {
    let mut table = CountTable::default();
    for (k, &n) in manifest {
        if paradigm.is_some_and(|p| p != k.paradigm) || label.is_some_and(|l| l != k.label) {
            continue;
        }
        table.per_subject.insert(*k, n);
        *table.totals.entry((k.paradigm, k.label, k.origin)).or_insert(0) += n;
    }
    table
}
