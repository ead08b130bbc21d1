//! Surrogate EEG: spatially mixed 1/f^α background with planted half-sine ERPs
//! on attended words, at the per-subject epoch counts of the real corpus.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data::{
    Epoch, EpochId, EpochSet, Label, Origin, Paradigm, SubjectId, TrialId, FS_HZ, N_CHANNELS,
    N_SAMPLES, PRE_ONSET_SAMPLES, RAW_FS_HZ, T_MIN_S,
};
use crate::dsp::{ContinuousRecording, Event};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::RngStream;

/// Electrodes sit on a 4 × 8 grid; only relative distances matter.
const GRID_COLS: usize = 8;

fn grid_pos(c: usize) -> (f64, f64) {
    ((c % GRID_COLS) as f64, (c / GRID_COLS) as f64)
}

/// Half-cycle sinusoidal ERP with a spatial pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErpShape {
    /// Peak latency relative to word onset.
    pub latency_s: f64,
    pub width_s: f64,
    pub amplitude_uv: f64,
    /// Unit-norm channel weights.
    pub topography: Vec<f32>,
}

impl ErpShape {
    pub fn start_s(&self) -> f64 {
        self.latency_s - self.width_s / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_s > 0.0) {
            return Err(Error::invalid("ERP width must be positive"));
        }
        let norm = self.topography.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-4 {
            return Err(Error::invalid(format!("topography norm {norm}, expected 1")));
        }
        if self.latency_s + self.width_s / 2.0 > 1.0 + 1e-9 {
            return Err(Error::WaveformOutOfBounds(format!(
                "latency {} + width/2 {} exceeds 1 s",
                self.latency_s,
                self.width_s / 2.0
            )));
        }
        Ok(())
    }
}

/// Channels × `samples` waveform; sample `i` sits at `(i - pre_onset) / fs`.
pub fn gen_erp_waveform(shape: &ErpShape, fs: f64, samples: usize, pre_onset: usize) -> Result<Vec<f32>> {
    shape.validate()?;
    let start = shape.start_s();
    let end = start + shape.width_s;
    let t_first = -(pre_onset as f64) / fs;
    let t_end = (samples as f64 - pre_onset as f64) / fs;
    if start < t_first - 1e-9 || end > t_end + 1e-9 {
        return Err(Error::WaveformOutOfBounds(format!(
            "ERP support [{start:.3}, {end:.3}) s outside epoch [{t_first:.3}, {t_end:.3}) s"
        )));
    }
    let envelope: Vec<f64> = (0..samples)
        .map(|i| {
            let t = (i as f64 - pre_onset as f64) / fs;
            if t >= start && t < end {
                shape.amplitude_uv * (std::f64::consts::PI * (t - start) / shape.width_s).sin()
            } else {
                0.0
            }
        })
        .collect();
    let mut out = Vec::with_capacity(shape.topography.len() * samples);
    for &w in &shape.topography {
        out.extend(envelope.iter().map(|&e| (w as f64 * e) as f32));
    }
    Ok(out)
}

/// Background EEG model: independent 1/f^α sources, spatially mixed, scaled per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub alpha: f64,
    pub rms_uv: Vec<f32>,
    /// Row-major channels × channels; rows are normalized to unit norm on use.
    pub mixing: Vec<f32>,
    /// Power is flat below this frequency so the lowest bins do not dominate.
    pub knee_hz: f64,
    /// Spectrum is zero above this frequency when set.
    pub highcut_hz: Option<f64>,
}

impl NoiseModel {
    /// Pink background with nearest-neighbour spatial smearing.
    pub fn eeg(channels: usize, rms_uv: f32, alpha: f64, spatial_sigma: f64) -> Self {
        let mut mixing = vec![0.0f32; channels * channels];
        for i in 0..channels {
            let (xi, yi) = grid_pos(i);
            for j in 0..channels {
                let (xj, yj) = grid_pos(j);
                let d2 = (xi - xj).powi(2) + (yi - yj).powi(2);
                mixing[i * channels + j] = (-d2 / (2.0 * spatial_sigma * spatial_sigma)).exp() as f32;
            }
        }
        Self {
            alpha,
            rms_uv: vec![rms_uv; channels],
            mixing,
            knee_hz: 1.0,
            highcut_hz: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.rms_uv.len()
    }

    /// Quadratic mean of the per-channel rms.
    pub fn broadband_rms(&self) -> f64 {
        (self.rms_uv.iter().map(|&r| (r as f64).powi(2)).sum::<f64>() / self.rms_uv.len() as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if c == 0 || self.mixing.len() != c * c {
            return Err(Error::shape("mixing matrix must be channels × channels"));
        }
        if self.rms_uv.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::invalid("noise rms must be positive"));
        }
        let m = DMatrix::from_row_slice(c, c, &self.mixing.iter().map(|&v| v as f64).collect::<Vec<_>>());
        if m.rank(1e-10) < c {
            return Err(Error::invalid("mixing matrix is rank deficient"));
        }
        Ok(())
    }

    fn spectral_gain(&self, f: f64) -> f64 {
        if f <= 0.0 || self.highcut_hz.is_some_and(|h| f > h) {
            return 0.0;
        }
        f.max(self.knee_hz).powf(-self.alpha / 2.0)
    }
}

/// Channel-major `channels × n` background EEG at `fs` Hz.
pub fn gen_noise(model: &NoiseModel, rng: &mut RngStream, n: usize, fs: f64) -> Result<Vec<f32>> {
    model.validate()?;
    let c = model.channels();
    if n == 0 {
        return Ok(Vec::new());
    }
    let n_fft = n.next_power_of_two().max(2);
    let gains: Vec<f64> = (0..n_fft)
        .map(|k| model.spectral_gain(k.min(n_fft - k) as f64 * fs / n_fft as f64))
        .collect();
    let norm = gains.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("noise spectrum is empty"));
    }
    let ifft = FftPlanner::new().plan_fft_inverse(n_fft);
    // Real and imaginary parts of one inverse transform are independent sources.
    let mut sources: Vec<Vec<f64>> = Vec::with_capacity(c + 1);
    while sources.len() < c {
        let mut buf: Vec<Complex64> = gains
            .iter()
            .map(|&g| Complex64::new(g * rng.normal(), g * rng.normal()))
            .collect();
        ifft.process(&mut buf);
        sources.push(buf[..n].iter().map(|z| z.re / norm).collect());
        sources.push(buf[..n].iter().map(|z| z.im / norm).collect());
    }
    sources.truncate(c);
    let mut out = vec![0.0f32; c * n];
    par::chunks_mut(&mut out, n, |ch, row| {
        let mix = &model.mixing[ch * c..(ch + 1) * c];
        let row_norm = mix.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        let scale = model.rms_uv[ch] as f64 / row_norm;
        let mut acc = vec![0.0f64; n];
        for (w, s) in mix.iter().zip(&sources) {
            let w = *w as f64 * scale;
            acc.iter_mut().zip(s).for_each(|(a, v)| *a += w * v);
        }
        row.iter_mut().zip(&acc).for_each(|(o, a)| *o = *a as f32);
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub alpha: f64,
    pub rms_uv: f32,
    pub spatial_sigma: f64,
    pub knee_hz: f64,
    pub highcut_hz: Option<f64>,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            rms_uv: 10.0,
            spatial_sigma: 1.0,
            knee_hz: 1.0,
            highcut_hz: Some(40.0),
        }
    }
}

impl NoiseParams {
    pub fn model(&self, channels: usize) -> NoiseModel {
        NoiseModel {
            knee_hz: self.knee_hz,
            highcut_hz: self.highcut_hz,
            ..NoiseModel::eeg(channels, self.rms_uv, self.alpha, self.spatial_sigma)
        }
    }
}

/// Generation parameters; recorded verbatim in emitted file headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Per-subject (attended, unattended) counts, indexed by paradigm.
    pub counts: [(usize, usize); 3],
    /// Attended epochs lost to rejection across a 24-subject cohort, by paradigm;
    /// scaled by `n_subjects / 24` and spread over random subjects.
    pub attended_rejections: [usize; 3],
    /// Epoch-level ERP amplitude SNR in dB (20·log10), by paradigm.
    pub snr_db: [f64; 3],
    pub trials_per_subject: usize,
    pub latency_range_s: (f64, f64),
    pub width_range_s: (f64, f64),
    pub noise: NoiseParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 24,
            counts: [(60, 260), (74, 400), (109, 1172)],
            attended_rejections: [0, 0, 5],
            snr_db: [0.0, 0.0, 0.0],
            trials_per_subject: 16,
            latency_range_s: (0.35, 0.55),
            width_range_s: (0.3, 0.6),
            noise: NoiseParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubjectPlan {
    pub subject: SubjectId,
    pub paradigm: Paradigm,
    pub attended: usize,
    pub unattended: usize,
}

/// Per-subject counts after planting the rejection deficit.
pub fn plan_counts(cfg: &SynthConfig, master_seed: u64) -> Result<Vec<SubjectPlan>> {
    if cfg.n_subjects == 0 || cfg.n_subjects > 24 {
        return Err(Error::invalid(format!("subject count {} outside 1..=24", cfg.n_subjects)));
    }
    let mut plans = Vec::new();
    for p in Paradigm::ALL {
        let (a, u) = cfg.counts[p.index()];
        let deficit = cfg.attended_rejections[p.index()] * cfg.n_subjects / 24;
        let mut rng = RngStream::derive(master_seed, &format!("synth/rejections/{p}"))?;
        let losers = rng.choice(cfg.n_subjects, deficit)?;
        for s in 0..cfg.n_subjects {
            let lost = losers.contains(&s) as usize;
            plans.push(SubjectPlan {
                subject: (s + 1) as SubjectId,
                paradigm: p,
                attended: a.saturating_sub(lost),
                unattended: u,
            });
        }
    }
    plans.sort_by_key(|p| (p.subject, p.paradigm));
    Ok(plans)
}

/// Smooth positive scalp pattern centred at a random grid location.
pub fn random_topography(rng: &mut RngStream, channels: usize) -> Vec<f32> {
    let cx = rng.uniform_in(1.0, GRID_COLS as f64 - 2.0);
    let rows = channels.div_ceil(GRID_COLS) as f64;
    let cy = rng.uniform_in(0.5, (rows - 1.5).max(0.5));
    let sigma = rng.uniform_in(1.5, 3.0);
    let w: Vec<f64> = (0..channels)
        .map(|c| {
            let (x, y) = grid_pos(c);
            (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter().map(|v| (v / norm) as f32).collect()
}

/// Amplitude giving the requested SNR: ERP rms over channels and its support
/// (`A / sqrt(2C)` for a unit-norm topography) over broadband noise rms.
pub fn amplitude_for_snr(snr_db: f64, noise_rms: f64, channels: usize) -> Result<f64> {
    if snr_db == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("infeasible SNR {snr_db} dB")));
    }
    Ok(noise_rms * 10f64.powf(snr_db / 20.0) * (2.0 * channels as f64).sqrt())
}

/// Subject-specific latency, width and topography; amplitude is set per paradigm.
pub fn draw_subject_shape(cfg: &SynthConfig, rng: &mut RngStream) -> ErpShape {
    let latency_s = rng.uniform_in(cfg.latency_range_s.0, cfg.latency_range_s.1);
    let width_s = rng.uniform_in(cfg.width_range_s.0, cfg.width_range_s.1);
    ErpShape {
        latency_s,
        width_s,
        amplitude_uv: 0.0,
        topography: random_topography(rng, N_CHANNELS),
    }
}

fn trial_id(subject: SubjectId, paradigm: Paradigm, block: usize) -> TrialId {
    ((subject as u32) << 16) | ((paradigm.index() as u32) << 8) | block as u32
}

/// Event order with attended positions drawn at random, grouped into trial blocks.
fn event_schedule(
    plan: &SubjectPlan,
    trials: usize,
    rng: &mut RngStream,
) -> Result<Vec<(Label, TrialId)>> {
    let n = plan.attended + plan.unattended;
    let block_of = |i: usize| i * trials / n;
    // Attended events are spread evenly over the trial blocks (the remainder
    // going to random blocks), at random positions within each block.
    let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); trials];
    (0..n).for_each(|i| blocks[block_of(i)].push(i));
    let extra: BTreeSet<usize> = rng.choice(trials, plan.attended % trials)?.into_iter().collect();
    let mut attended = BTreeSet::new();
    for (b, members) in blocks.iter().enumerate() {
        let k = (plan.attended / trials + extra.contains(&b) as usize).min(members.len());
        attended.extend(rng.choice(members.len(), k)?.into_iter().map(|j| members[j]));
    }
    let missing = plan.attended - attended.len();
    if missing > 0 {
        let free: Vec<usize> = (0..n).filter(|i| !attended.contains(i)).collect();
        attended.extend(rng.choice(free.len(), missing)?.into_iter().map(|j| free[j]));
    }
    Ok((0..n)
        .map(|i| {
            let label = if attended.contains(&i) { Label::Attended } else { Label::Unattended };
            (label, trial_id(plan.subject, plan.paradigm, block_of(i)))
        })
        .collect())
}

/// Epoch set for one subject and paradigm, plus the planted ERP.
pub fn synth_subject(
    plan: &SubjectPlan,
    snr_db: f64,
    cfg: &SynthConfig,
    master_seed: u64,
) -> Result<(EpochSet, ErpShape)> {
    if plan.attended == 0 || plan.unattended == 0 {
        return Err(Error::invalid("synthesis needs both classes"));
    }
    let subject_rng = RngStream::derive(master_seed, &format!("synth/subject={}", plan.subject))?;
    let model = cfg.noise.model(N_CHANNELS);
    let mut shape = draw_subject_shape(cfg, &mut subject_rng.child("shape"));
    shape.amplitude_uv = amplitude_for_snr(snr_db, model.broadband_rms(), N_CHANNELS)?;
    let erp = gen_erp_waveform(&shape, FS_HZ as f64, N_SAMPLES, PRE_ONSET_SAMPLES)?;

    let mut rng = subject_rng.child(format!("paradigm={}", plan.paradigm));
    let schedule = event_schedule(plan, cfg.trials_per_subject, &mut rng.child("schedule"))?;
    let n = schedule.len() * N_SAMPLES;
    let noise = gen_noise(&model, &mut rng, n, FS_HZ as f64)?;

    let epochs = schedule
        .iter()
        .enumerate()
        .map(|(i, &(label, trial))| {
            let mut data = Vec::with_capacity(N_CHANNELS * N_SAMPLES);
            for c in 0..N_CHANNELS {
                let src = &noise[c * n + i * N_SAMPLES..c * n + (i + 1) * N_SAMPLES];
                if label == Label::Attended {
                    let wave = &erp[c * N_SAMPLES..(c + 1) * N_SAMPLES];
                    data.extend(src.iter().zip(wave).map(|(a, b)| a + b));
                } else {
                    data.extend_from_slice(src);
                }
            }
            Epoch {
                id: EpochId::experimental(plan.subject, plan.paradigm, i as u64),
                subject_id: plan.subject,
                paradigm: plan.paradigm,
                trial_id: trial,
                label,
                origin: Origin::Experimental,
                fs_hz: FS_HZ,
                t_min_s: T_MIN_S,
                channels: N_CHANNELS,
                samples: N_SAMPLES,
                data,
                sources: Vec::new(),
            }
        })
        .collect();
    Ok((EpochSet::new(epochs), shape))
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub epochs: EpochSet,
    /// Planted ERP per (subject, paradigm).
    pub shapes: BTreeMap<(SubjectId, Paradigm), ErpShape>,
}

pub fn generation_attrs(cfg: &SynthConfig, master_seed: u64) -> BTreeMap<String, String> {
    let mut attrs = BTreeMap::new();
    attrs.insert("generator".to_string(), "synth".to_string());
    attrs.insert("master_seed".to_string(), master_seed.to_string());
    attrs.insert(
        "synth_config".to_string(),
        serde_json::to_string(cfg).expect("config serializes"),
    );
    attrs
}

/// Whole surrogate cohort, subjects generated independently and merged in
/// (subject, paradigm) order.
pub fn synth_dataset(cfg: &SynthConfig, master_seed: u64) -> Result<SynthDataset> {
    let plans = plan_counts(cfg, master_seed)?;
    let parts = par::map(&plans, |p| synth_subject(p, cfg.snr_db[p.paradigm.index()], cfg, master_seed));
    let mut sets = Vec::with_capacity(parts.len());
    let mut shapes = BTreeMap::new();
    for (plan, part) in plans.iter().zip(parts) {
        let (set, shape) = part?;
        sets.push(set);
        shapes.insert((plan.subject, plan.paradigm), shape);
    }
    let epochs = EpochSet::concat(sets).with_attrs(generation_attrs(cfg, master_seed));
    Ok(SynthDataset { epochs, shapes })
}

/// Continuous 1000 Hz recording with the same event structure as
/// [`synth_subject`]; inter-onset intervals are uniform in [0.9, 1.3] s and the
/// recording has 3 s of lead-in and lead-out.
pub fn synth_recording(
    plan: &SubjectPlan,
    snr_db: f64,
    cfg: &SynthConfig,
    master_seed: u64,
) -> Result<(ContinuousRecording, ErpShape)> {
    let fs = RAW_FS_HZ as f64;
    let subject_rng = RngStream::derive(master_seed, &format!("synth/subject={}", plan.subject))?;
    let model = NoiseModel {
        highcut_hz: None,
        ..cfg.noise.model(N_CHANNELS)
    };
    let mut shape = draw_subject_shape(cfg, &mut subject_rng.child("shape"));
    shape.amplitude_uv = amplitude_for_snr(snr_db, model.broadband_rms(), N_CHANNELS)?;
    let pre = (0.2 * fs) as usize;
    let len = (1.2 * fs) as usize;
    let erp = gen_erp_waveform(&shape, fs, len, pre)?;

    let mut rng = subject_rng.child(format!("recording/paradigm={}", plan.paradigm));
    let schedule = event_schedule(plan, cfg.trials_per_subject, &mut rng.child("schedule"))?;
    let lead = (3.0 * fs) as usize;
    let mut onsets = Vec::with_capacity(schedule.len());
    let mut t = lead;
    for _ in &schedule {
        onsets.push(t);
        t += (rng.uniform_in(0.9, 1.3) * fs) as usize;
    }
    let n = t + lead;
    let mut data = gen_noise(&model, &mut rng, n, fs)?;
    let mut events = Vec::with_capacity(schedule.len());
    for (&onset, &(label, trial_id)) in onsets.iter().zip(&schedule) {
        if label == Label::Attended {
            for c in 0..N_CHANNELS {
                let dst = &mut data[c * n + onset - pre..c * n + onset - pre + len];
                dst.iter_mut().zip(&erp[c * len..(c + 1) * len]).for_each(|(d, e)| *d += e);
            }
        }
        events.push(Event {
            sample: onset,
            label,
            trial_id,
        });
    }
    let rec = ContinuousRecording {
        subject_id: plan.subject,
        paradigm: plan.paradigm,
        fs_hz: RAW_FS_HZ,
        channels: N_CHANNELS,
        data,
        events,
    };
    Ok((rec, shape))
}
