//! ERP-aware augmentation: upsampling by averaging random same-class epochs,
//! and simulation of attended epochs by adding a varied subject template to
//! unattended epochs at 0, 3 and 6 dB.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{
    Epoch, EpochId, EpochSet, Label, Origin, Paradigm, SubjectId, PRE_ONSET_SAMPLES,
};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Largest number of epochs averaged into one upsampled epoch.
    pub k_max: usize,
    /// Upsampled-set size per class, as a multiple of the unattended count.
    pub upsample_factor: usize,
    /// Unattended pool size for each simulated set, as a multiple of the unattended count.
    pub simulation_factor: usize,
    pub gains_db: Vec<f32>,
    /// Width of the template segment around its peak that gets varied.
    pub segment_width_s: f64,
    pub width_range_s: (f64, f64),
    /// Standard deviation of the uniform latency jitter.
    pub latency_jitter_sd_s: f64,
    /// Search window for the template peak, relative to onset.
    pub peak_window_s: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            k_max: 3,
            upsample_factor: 2,
            simulation_factor: 4,
            gains_db: vec![0.0, 3.0, 6.0],
            segment_width_s: 0.45,
            width_range_s: (0.3, 0.6),
            latency_jitter_sd_s: 0.01,
            peak_window_s: (0.2, 0.8),
        }
    }
}

fn average_into(sources: &[&Epoch]) -> Vec<f32> {
    let n = sources[0].data.len();
    let mut acc = vec![0.0f64; n];
    for e in sources {
        acc.iter_mut().zip(&e.data).for_each(|(a, &v)| *a += v as f64);
    }
    let inv = 1.0 / sources.len() as f64;
    acc.iter().map(|&a| (a * inv) as f32).collect()
}

fn check_group(epochs: &[&Epoch]) -> Result<()> {
    let Some(first) = epochs.first() else {
        return Ok(());
    };
    if epochs.iter().any(|e| {
        e.subject_id != first.subject_id
            || e.paradigm != first.paradigm
            || e.data.len() != first.data.len()
    }) {
        return Err(Error::invalid("epochs must share subject, paradigm and shape"));
    }
    Ok(())
}

fn union_lineage(sources: &[&Epoch]) -> Vec<EpochId> {
    let ids: BTreeSet<EpochId> = sources.iter().flat_map(|e| e.lineage()).collect();
    ids.into_iter().collect()
}

/// `target_count` new epochs, each the mean of `k ~ U{1..k_max}` distinct
/// epochs drawn from `class`. Ids are `derived(origin, label, ..)` with
/// counters `counter_base..`.
pub fn upsample_by_averaging(
    class: &[&Epoch],
    k_max: usize,
    target_count: usize,
    origin: Origin,
    counter_base: u64,
    rng: &mut RngStream,
) -> Result<Vec<Epoch>> {
    if k_max == 0 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    if class.len() < k_max {
        return Err(Error::ClassTooSmall {
            have: class.len(),
            need: k_max,
        });
    }
    check_group(class)?;
    let label = class[0].label;
    if class.iter().any(|e| e.label != label) {
        return Err(Error::invalid("epochs must share a class"));
    }
    let mut out = Vec::with_capacity(target_count);
    for i in 0..target_count {
        let k = rng.int_inclusive(1, k_max);
        let picked: Vec<&Epoch> = rng.choice(class.len(), k)?.into_iter().map(|j| class[j]).collect();
        let first = picked[0];
        out.push(Epoch {
            id: EpochId::derived(origin, label, first.subject_id, first.paradigm, counter_base + i as u64),
            origin,
            data: average_into(&picked),
            sources: union_lineage(&picked),
            ..first.clone_meta()
        });
    }
    Ok(out)
}

impl Epoch {
    /// Copy of everything but the payload and provenance.
    fn clone_meta(&self) -> Epoch {
        Epoch {
            data: Vec::new(),
            sources: Vec::new(),
            ..*self
        }
    }
}

/// Subject's average attended response with its peak latency.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpTemplate {
    pub subject_id: SubjectId,
    pub paradigm: Paradigm,
    pub channels: usize,
    pub samples: usize,
    pub fs_hz: f64,
    pub waveform: Vec<f32>,
    pub peak_latency_s: f64,
    /// Experimental epochs averaged into the template.
    pub sources: Vec<EpochId>,
}

/// Per-sample standard deviation across channels.
pub fn global_field_power(data: &[f32], channels: usize, samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|t| {
            let mean = (0..channels).map(|c| data[c * samples + t] as f64).sum::<f64>() / channels as f64;
            let var = (0..channels)
                .map(|c| (data[c * samples + t] as f64 - mean).powi(2))
                .sum::<f64>()
                / channels as f64;
            var.sqrt()
        })
        .collect()
}

pub fn estimate_template(attended: &[&Epoch], cfg: &AugmentConfig) -> Result<ErpTemplate> {
    let Some(first) = attended.first() else {
        return Err(Error::invalid("template needs at least one attended epoch"));
    };
    check_group(attended)?;
    let waveform = average_into(attended);
    let fs = first.fs_hz as f64;
    let onset = PRE_ONSET_SAMPLES as f64;
    let lo = (onset + cfg.peak_window_s.0 * fs).round() as usize;
    let hi = ((onset + cfg.peak_window_s.1 * fs).round() as usize).min(first.samples - 1);
    let gfp = global_field_power(&waveform, first.channels, first.samples);
    let (peak, best) = (lo..=hi).fold((lo, f64::NEG_INFINITY), |b, t| if gfp[t] > b.1 { (t, gfp[t]) } else { b });
    if !(best > 1e-9) {
        return Err(Error::DegenerateTemplate {
            subject: first.subject_id,
            paradigm: first.paradigm,
        });
    }
    Ok(ErpTemplate {
        subject_id: first.subject_id,
        paradigm: first.paradigm,
        channels: first.channels,
        samples: first.samples,
        fs_hz: fs,
        waveform,
        peak_latency_s: (peak as f64 - onset) / fs,
        sources: union_lineage(attended),
    })
}

/// Random width and latency shift for one simulated epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variation {
    pub width_s: f64,
    pub shift_s: f64,
}

pub fn draw_variation(cfg: &AugmentConfig, rng: &mut RngStream) -> Variation {
    let width_s = rng.uniform_in(cfg.width_range_s.0, cfg.width_range_s.1);
    let half = 3f64.sqrt() * cfg.latency_jitter_sd_s;
    let shift_s = rng.uniform_in(-half, half);
    Variation { width_s, shift_s }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariedErp {
    pub waveform: Vec<f32>,
    /// The stretched, shifted segment ran past the epoch and was cut.
    pub clipped: bool,
}

/// Cuts the `segment_width_s` segment centred on the template peak, stretches it
/// to `v.width_s` by linear interpolation, recentres it at `peak + v.shift_s`,
/// and zeros everything else.
pub fn apply_variation(t: &ErpTemplate, v: &Variation, segment_width_s: f64) -> Result<VariedErp> {
    if !(v.width_s > 0.0 && segment_width_s > 0.0) {
        return Err(Error::invalid("segment widths must be positive"));
    }
    let fs = t.fs_hz;
    let onset = PRE_ONSET_SAMPLES as f64;
    let peak = onset + t.peak_latency_s * fs;
    let centre = peak + v.shift_s * fs;
    let half_out = v.width_s * fs / 2.0;
    let ratio = segment_width_s / v.width_s;
    let last = (t.samples - 1) as f64;
    let clipped = centre - half_out < 0.0 || centre + half_out > last;
    let seg_lo = (peak - segment_width_s * fs / 2.0).max(0.0);
    let seg_hi = (peak + segment_width_s * fs / 2.0).min(last);
    let mut waveform = vec![0.0f32; t.waveform.len()];
    for j in 0..t.samples {
        let d = j as f64 - centre;
        if d.abs() > half_out {
            continue;
        }
        let src = peak + d * ratio;
        if src < seg_lo || src > seg_hi {
            continue;
        }
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(t.samples - 1);
        let frac = (src - i0 as f64) as f32;
        for c in 0..t.channels {
            let row = &t.waveform[c * t.samples..(c + 1) * t.samples];
            waveform[c * t.samples + j] = row[i0] + frac * (row[i1] - row[i0]);
        }
    }
    Ok(VariedErp { waveform, clipped })
}

pub fn vary_erp(t: &ErpTemplate, cfg: &AugmentConfig, rng: &mut RngStream) -> Result<VariedErp> {
    apply_variation(t, &draw_variation(cfg, rng), cfg.segment_width_s)
}

pub fn gain_factor(gain_db: f32) -> f32 {
    10f32.powf(gain_db / 20.0)
}

/// `unattended + 10^(gain/20) · waveform`, relabelled attended.
pub fn simulate_attended(unattended: &Epoch, waveform: &[f32], gain_db: f32, id: EpochId) -> Result<Epoch> {
    if waveform.len() != unattended.data.len() {
        return Err(Error::shape(format!(
            "waveform length {} vs epoch length {}",
            waveform.len(),
            unattended.data.len()
        )));
    }
    let origin = Origin::simulated(gain_db)
        .ok_or_else(|| Error::invalid(format!("unsupported simulation gain {gain_db} dB")))?;
    let g = gain_factor(gain_db);
    Ok(Epoch {
        id,
        label: Label::Attended,
        origin,
        data: unattended.data.iter().zip(waveform).map(|(&u, &w)| u + g * w).collect(),
        sources: unattended.lineage(),
        ..unattended.clone_meta()
    })
}

/// One augmented set for one subject and paradigm.
///
/// `UpsampledAvg`: both classes upsampled to `upsample_factor · |unattended|`.
/// Simulated: unattended upsampled to `simulation_factor · |unattended|`, a random
/// half turned attended with a freshly varied template each.
pub fn augment_group(
    attended: &[&Epoch],
    unattended: &[&Epoch],
    template: Option<&ErpTemplate>,
    origin: Origin,
    cfg: &AugmentConfig,
    counter_base: u64,
    rng: &RngStream,
) -> Result<Vec<Epoch>> {
    let n_u = unattended.len();
    match origin {
        Origin::Experimental => Err(Error::invalid("experimental is not an augmented set")),
        Origin::UpsampledAvg => {
            let target = cfg.upsample_factor * n_u;
            let mut out = upsample_by_averaging(attended, cfg.k_max, target, origin, counter_base, &mut rng.child("attended"))?;
            out.extend(upsample_by_averaging(unattended, cfg.k_max, target, origin, counter_base, &mut rng.child("unattended"))?);
            Ok(out)
        }
        sim => {
            let template = template.ok_or_else(|| Error::invalid("simulation needs a template"))?;
            let gain_db = match sim {
                Origin::Simulated0dB => 0.0,
                Origin::Simulated3dB => 3.0,
                _ => 6.0,
            };
            let pool_size = cfg.simulation_factor * n_u;
            let pool = upsample_by_averaging(unattended, cfg.k_max, pool_size, sim, counter_base, &mut rng.child("pool"))?;
            let mut pick = rng.child("half");
            let chosen: BTreeSet<usize> = pick.choice(pool_size, pool_size / 2)?.into_iter().collect();
            let mut vary = rng.child("vary");
            let mut out = Vec::with_capacity(pool_size);
            let mut counter = counter_base;
            for (i, e) in pool.into_iter().enumerate() {
                if chosen.contains(&i) {
                    let varied = vary_erp(template, cfg, &mut vary)?;
                    let id = EpochId::derived(sim, Label::Attended, e.subject_id, e.paradigm, counter);
                    counter += 1;
                    out.push(simulate_attended(&e, &varied.waveform, gain_db, id)?);
                } else {
                    out.push(e);
                }
            }
            Ok(out)
        }
    }
}

pub fn augmented_origins(cfg: &AugmentConfig) -> Result<Vec<Origin>> {
    let mut v = vec![Origin::UpsampledAvg];
    for &g in &cfg.gains_db {
        v.push(Origin::simulated(g).ok_or_else(|| Error::invalid(format!("unsupported gain {g} dB")))?);
    }
    Ok(v)
}

/// Experimental epochs of `set` grouped by (subject, paradigm), attended first.
pub fn group_by_subject<'a>(
    set: &'a EpochSet,
) -> BTreeMap<(SubjectId, Paradigm), (Vec<&'a Epoch>, Vec<&'a Epoch>)> {
    let mut groups: BTreeMap<_, (Vec<&Epoch>, Vec<&Epoch>)> = BTreeMap::new();
    for e in set.iter().filter(|e| e.origin == Origin::Experimental) {
        let g = groups.entry((e.subject_id, e.paradigm)).or_default();
        match e.label {
            Label::Attended => g.0.push(e),
            Label::Unattended => g.1.push(e),
        }
    }
    groups
}

#[derive(Debug, Clone, Default)]
pub struct AugmentedCorpus {
    pub upsampled: EpochSet,
    pub sim0: EpochSet,
    pub sim3: EpochSet,
    pub sim6: EpochSet,
    pub templates: BTreeMap<(SubjectId, Paradigm), ErpTemplate>,
    /// Groups whose template was degenerate; they have no simulated epochs.
    pub skipped: Vec<(SubjectId, Paradigm)>,
}

impl AugmentedCorpus {
    pub fn sets(&self) -> [(Origin, &EpochSet); 4] {
        [
            (Origin::UpsampledAvg, &self.upsampled),
            (Origin::Simulated0dB, &self.sim0),
            (Origin::Simulated3dB, &self.sim3),
            (Origin::Simulated6dB, &self.sim6),
        ]
    }

    fn set_mut(&mut self, origin: Origin) -> &mut EpochSet {
        match origin {
            Origin::UpsampledAvg => &mut self.upsampled,
            Origin::Simulated0dB => &mut self.sim0,
            Origin::Simulated3dB => &mut self.sim3,
            _ => &mut self.sim6,
        }
    }

    /// All four sets in one, in set order.
    pub fn all(&self) -> EpochSet {
        EpochSet::concat(self.sets().into_iter().map(|(_, s)| s.clone()))
    }

    pub fn len(&self) -> usize {
        self.sets().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct GroupOutput {
    key: (SubjectId, Paradigm),
    template: Option<ErpTemplate>,
    sets: Vec<(Origin, Vec<Epoch>)>,
}

/// Augments every (subject, paradigm) group of the experimental epochs in
/// `original`. Groups run independently on `rng.child("subject=S/paradigm=P")`
/// and are merged in (subject, paradigm) order. `counter_base` offsets derived
/// ids so separately augmented portions (train, validation) never collide.
pub fn build_augmented_corpus(
    original: &EpochSet,
    cfg: &AugmentConfig,
    counter_base: u64,
    rng: &RngStream,
) -> Result<AugmentedCorpus> {
    let origins = augmented_origins(cfg)?;
    let groups: Vec<_> = group_by_subject(original).into_iter().collect();
    let outputs = par::map(&groups, |(key, (att, unatt))| -> Result<GroupOutput> {
        if att.is_empty() || unatt.is_empty() {
            return Err(Error::SingleClass);
        }
        let group_rng = rng.child(format!("subject={}/paradigm={}", key.0, key.1));
        let template = match estimate_template(att, cfg) {
            Ok(t) => Some(t),
            Err(Error::DegenerateTemplate { .. }) => None,
            Err(e) => return Err(e),
        };
        let mut sets = Vec::new();
        for &origin in &origins {
            if origin != Origin::UpsampledAvg && template.is_none() {
                continue;
            }
            let epochs = augment_group(att, unatt, template.as_ref(), origin, cfg, counter_base, &group_rng.child(origin.to_string()))?;
            sets.push((origin, epochs));
        }
        Ok(GroupOutput { key: *key, template, sets })
    });
    let mut parts: BTreeMap<Origin, Vec<Epoch>> = BTreeMap::new();
    let mut corpus = AugmentedCorpus::default();
    for out in outputs {
        let out = out?;
        match out.template {
            Some(t) => {
                corpus.templates.insert(out.key, t);
            }
            None => corpus.skipped.push(out.key),
        }
        for (origin, epochs) in out.sets {
            parts.entry(origin).or_default().extend(epochs);
        }
    }
    for (origin, epochs) in parts {
        *corpus.set_mut(origin) = EpochSet::new(epochs);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::epoch;
    use crate::data::{N_CHANNELS, N_SAMPLES};
    use crate::synth::{gen_erp_waveform, ErpShape};

    fn rng(path: &str) -> RngStream {
        RngStream::derive(42, path).unwrap()
    }

    #[test]
    fn single_epoch_duplicates() {
        let e = epoch(1, Label::Attended, 1.5);
        let out = upsample_by_averaging(&[&e], 1, 3, Origin::UpsampledAvg, 0, &mut rng("u")).unwrap();
        assert_eq!(out.len(), 3);
        for o in &out {
            assert_eq!(o.data, e.data);
            assert_eq!(o.sources, vec![e.id]);
            assert_eq!(o.origin, Origin::UpsampledAvg);
        }
        let ids: BTreeSet<_> = out.iter().map(|o| o.id).collect();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn averaging_two_constants() {
        let mut a = epoch(1, Label::Unattended, 2.0);
        let mut b = epoch(1, Label::Unattended, 4.0);
        a.id = EpochId::experimental(1, Paradigm::P1, 0);
        b.id = EpochId::experimental(1, Paradigm::P1, 1);
        let out = upsample_by_averaging(&[&a, &b], 2, 200, Origin::UpsampledAvg, 0, &mut rng("k")).unwrap();
        let pairs: Vec<_> = out.iter().filter(|o| o.sources.len() == 2).collect();
        assert!(!pairs.is_empty());
        assert!(pairs.iter().all(|o| o.data.iter().all(|&v| v == 3.0)));
    }

    #[test]
    fn class_smaller_than_k_max_is_error() {
        let e = epoch(1, Label::Attended, 1.0);
        let r = upsample_by_averaging(&[&e, &e], 3, 5, Origin::UpsampledAvg, 0, &mut rng("x"));
        assert!(matches!(r, Err(Error::ClassTooSmall { have: 2, need: 3 })));
    }

    #[test]
    fn k_is_uniform_over_one_to_three() {
        let es: Vec<Epoch> = (0..10)
            .map(|i| {
                let mut e = epoch(2, Label::Unattended, i as f32);
                e.id = EpochId::experimental(2, Paradigm::P1, i);
                e
            })
            .collect();
        let refs: Vec<&Epoch> = es.iter().collect();
        let out = upsample_by_averaging(&refs, 3, 3000, Origin::UpsampledAvg, 0, &mut rng("k3")).unwrap();
        let mut hist = [0usize; 4];
        for o in &out {
            hist[o.sources.len()] += 1;
        }
        for k in 1..=3 {
            assert!((900..=1100).contains(&hist[k]), "{hist:?}");
        }
    }

    fn template_from(shape: &ErpShape) -> ErpTemplate {
        let wave = gen_erp_waveform(shape, 256.0, N_SAMPLES, PRE_ONSET_SAMPLES).unwrap();
        let mut e = epoch(1, Label::Attended, 0.0);
        e.data = wave;
        estimate_template(&[&e], &AugmentConfig::default()).unwrap()
    }

    fn unit_topo() -> Vec<f32> {
        let v = 1.0 / (N_CHANNELS as f32).sqrt();
        (0..N_CHANNELS).map(|c| if c % 2 == 0 { v } else { -v }).collect()
    }

    #[test]
    fn single_epoch_template_is_that_epoch() {
        let shape = ErpShape { latency_s: 0.4, width_s: 0.3, amplitude_uv: 10.0, topography: unit_topo() };
        let t = template_from(&shape);
        assert_eq!(t.waveform, gen_erp_waveform(&shape, 256.0, N_SAMPLES, PRE_ONSET_SAMPLES).unwrap());
        assert!((t.peak_latency_s - 0.4).abs() <= 1.0 / 256.0);
    }

    #[test]
    fn cancelling_epochs_are_degenerate() {
        let a = epoch(3, Label::Attended, 1.0);
        let mut b = epoch(3, Label::Attended, -1.0);
        b.data.iter_mut().enumerate().for_each(|(i, v)| *v = -a.data[i]);
        assert!(matches!(
            estimate_template(&[&a, &b], &AugmentConfig::default()),
            Err(Error::DegenerateTemplate { subject: 3, .. })
        ));
        assert!(estimate_template(&[], &AugmentConfig::default()).is_err());
    }

    #[test]
    fn identity_variation_reproduces_segment() {
        let shape = ErpShape { latency_s: 0.45, width_s: 0.3, amplitude_uv: 5.0, topography: unit_topo() };
        let t = template_from(&shape);
        let v = apply_variation(&t, &Variation { width_s: 0.45, shift_s: 0.0 }, 0.45).unwrap();
        assert!(!v.clipped);
        // The 0.45 s segment fully contains the 0.3 s half-sine.
        for (a, b) in v.waveform.iter().zip(&t.waveform) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    fn support(wave: &[f32]) -> usize {
        let ch = &wave[..N_SAMPLES];
        let nz: Vec<usize> = (0..N_SAMPLES).filter(|&i| ch[i].abs() > 1e-6).collect();
        nz.last().unwrap() - nz.first().unwrap() + 1
    }

    #[test]
    fn doubling_width_doubles_support() {
        let shape = ErpShape { latency_s: 0.45, width_s: 0.3, amplitude_uv: 5.0, topography: unit_topo() };
        let t = template_from(&shape);
        let before = support(&t.waveform);
        let v = apply_variation(&t, &Variation { width_s: 0.6, shift_s: 0.0 }, 0.3).unwrap();
        let after = support(&v.waveform);
        assert!(after.abs_diff(2 * before) <= 2, "{before} -> {after}");
    }

    #[test]
    fn shift_moves_peak() {
        let shape = ErpShape { latency_s: 0.45, width_s: 0.3, amplitude_uv: 5.0, topography: unit_topo() };
        let t = template_from(&shape);
        let v = apply_variation(&t, &Variation { width_s: 0.45, shift_s: 0.0390625 }, 0.45).unwrap();
        let argmax = |w: &[f32]| (0..N_SAMPLES).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        assert_eq!(argmax(&v.waveform), argmax(&t.waveform) + 10);
    }

    #[test]
    fn late_wide_variation_is_clipped() {
        let shape = ErpShape { latency_s: 0.7, width_s: 0.3, amplitude_uv: 5.0, topography: unit_topo() };
        let t = template_from(&shape);
        let v = apply_variation(&t, &Variation { width_s: 0.6, shift_s: 0.017 }, 0.45).unwrap();
        assert!(v.clipped);
    }

    #[test]
    fn latency_jitter_has_ten_ms_sd() {
        let cfg = AugmentConfig::default();
        let mut r = rng("jitter");
        let d: Vec<f64> = (0..10_000).map(|_| draw_variation(&cfg, &mut r).shift_s).collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((0.009..=0.011).contains(&sd), "sd {sd}");
        let w: Vec<f64> = (0..1000).map(|_| draw_variation(&cfg, &mut r).width_s).collect();
        assert!(w.iter().all(|&x| (0.3..0.6).contains(&x)));
    }

    #[test]
    fn gain_factors() {
        assert_eq!(gain_factor(0.0), 1.0);
        assert!((gain_factor(3.0) - 1.4125).abs() < 1e-3);
        assert!((gain_factor(6.0) - 1.9953).abs() < 1e-3);
    }

    #[test]
    fn simulate_is_linear_and_flips_label() {
        let mut u = epoch(1, Label::Unattended, 0.0);
        u.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f32 * 0.37).sin());
        let w: Vec<f32> = (0..u.data.len()).map(|i| (i as f32 * 0.11).cos()).collect();
        let id = EpochId::derived(Origin::Simulated3dB, Label::Attended, 1, Paradigm::P1, 0);
        let s = simulate_attended(&u, &w, 3.0, id).unwrap();
        let g = gain_factor(3.0);
        for i in 0..u.data.len() {
            assert_eq!(s.data[i], u.data[i] + g * w[i]);
        }
        assert_eq!(s.label, Label::Attended);
        assert_eq!(s.origin, Origin::Simulated3dB);
        assert_eq!(s.sources, vec![u.id]);

        let zero = vec![0.0; u.data.len()];
        let z = simulate_attended(&u, &zero, 0.0, id).unwrap();
        assert_eq!(z.data, u.data);
        assert_eq!(z.label, Label::Attended);
        assert!(simulate_attended(&u, &zero[1..], 0.0, id).is_err());
        assert!(simulate_attended(&u, &zero, 2.0, id).is_err());
    }

    fn small_group(subject: SubjectId, n_a: usize, n_u: usize) -> EpochSet {
        let shape = ErpShape { latency_s: 0.45, width_s: 0.4, amplitude_uv: 3.0, topography: unit_topo() };
        let wave = gen_erp_waveform(&shape, 256.0, N_SAMPLES, PRE_ONSET_SAMPLES).unwrap();
        let mut r = rng("group");
        let epochs = (0..n_a + n_u)
            .map(|i| {
                let label = if i < n_a { Label::Attended } else { Label::Unattended };
                let mut e = epoch(subject, label, 0.0);
                e.id = EpochId::experimental(subject, Paradigm::P1, i as u64);
                e.data.iter_mut().enumerate().for_each(|(j, v)| {
                    *v = r.normal() as f32 + if label == Label::Attended { wave[j] } else { 0.0 };
                });
                e
            })
            .collect();
        EpochSet::new(epochs)
    }

    #[test]
    fn corpus_counts_and_balance() {
        let set = EpochSet::concat([small_group(1, 6, 26), small_group(2, 5, 20)]);
        let corpus = build_augmented_corpus(&set, &AugmentConfig::default(), 0, &rng("corpus")).unwrap();
        assert!(corpus.skipped.is_empty());
        for (origin, s) in corpus.sets() {
            let t = crate::data::class_counts(s, None, None);
            assert_eq!(t.subject(1, Paradigm::P1, Label::Attended), 52, "{origin}");
            assert_eq!(t.subject(1, Paradigm::P1, Label::Unattended), 52, "{origin}");
            assert_eq!(t.subject(2, Paradigm::P1, Label::Attended), 40, "{origin}");
            assert!(s.iter().all(|e| e.origin == origin));
            assert!(s.iter().all(|e| crate::data::validate_epoch(e).is_ok()));
            let ids: BTreeSet<_> = s.iter().map(|e| e.id).collect();
            assert_eq!(ids.len(), s.len());
        }
        assert_eq!(corpus.len(), 4 * (104 + 80));
    }

    #[test]
    fn corpus_is_deterministic() {
        let set = small_group(4, 5, 12);
        let a = build_augmented_corpus(&set, &AugmentConfig::default(), 0, &rng("d")).unwrap();
        let b = build_augmented_corpus(&set, &AugmentConfig::default(), 0, &rng("d")).unwrap();
        assert_eq!(a.all(), b.all());
    }

    #[test]
    fn simulated_sources_stay_in_portion() {
        let set = small_group(5, 6, 14);
        let corpus = build_augmented_corpus(&set, &AugmentConfig::default(), 0, &rng("p")).unwrap();
        let own: BTreeSet<_> = set.iter().map(|e| e.id).collect();
        assert!(corpus.all().lineage().is_subset(&own));
        let t = &corpus.templates[&(5, Paradigm::P1)];
        assert_eq!(t.sources.len(), 6);
    }
}
