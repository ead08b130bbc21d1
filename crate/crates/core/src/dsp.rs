//! Preprocessing chain for continuous recordings: zero-phase band-pass,
//! rational resampling, epoching, and peak-to-peak rejection.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::data::{Epoch, EpochId, EpochSet, Label, Origin, Paradigm, SubjectId, TrialId};
use crate::error::{Error, Result};
use crate::par;

/// Linear-phase FIR filter with its design metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    pub taps: Vec<f64>,
    /// Lower band edge; `None` for a low-pass design.
    pub lo_hz: Option<f64>,
    pub hi_hz: f64,
    pub fs_hz: f64,
}

impl FirFilter {
    pub fn n_taps(&self) -> usize {
        self.taps.len()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.taps.len();
        (0..n / 2).all(|i| self.taps[i] == self.taps[n - 1 - i])
    }

    /// Magnitude of the frequency response at `freq_hz`.
    pub fn gain(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.fs_hz;
        let (re, im) = self
            .taps
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (n, &h)| {
                let a = w * n as f64;
                (re + h * a.cos(), im - h * a.sin())
            });
        re.hypot(im)
    }

    pub fn gain_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.gain(freq_hz).max(1e-300).log10()
    }
}

fn hamming(n: usize, len: usize) -> f64 {
    if len == 1 {
        return 1.0;
    }
    0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()
}

/// Hamming-windowed sinc low-pass, normalized to unit DC gain.
/// `cutoff` is in cycles per sample.
fn windowed_sinc(cutoff: f64, n_taps: usize) -> Vec<f64> {
    let mid = (n_taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..n_taps)
        .map(|n| {
            let m = n as f64 - mid;
            let s = if m == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * m).sin() / (PI * m)
            };
            s * hamming(n, n_taps)
        })
        .collect();
    // Mirror the first half so the taps are exactly symmetric despite rounding.
    for i in 0..n_taps / 2 {
        h[n_taps - 1 - i] = h[i];
    }
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

pub fn design_lowpass(cutoff_hz: f64, fs_hz: f64, n_taps: usize) -> Result<FirFilter> {
    if n_taps % 2 == 0 {
        return Err(Error::invalid(format!("tap count must be odd, got {n_taps}")));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0) {
        return Err(Error::invalid(format!(
            "cutoff {cutoff_hz} Hz outside (0, {}) Hz",
            fs_hz / 2.0
        )));
    }
    Ok(FirFilter {
        taps: windowed_sinc(cutoff_hz / fs_hz, n_taps),
        lo_hz: None,
        hi_hz: cutoff_hz,
        fs_hz,
    })
}

/// Windowed-sinc band-pass: difference of two unit-DC low-passes, so the DC
/// gain is zero up to rounding.
pub fn design_bandpass(lo_hz: f64, hi_hz: f64, fs_hz: f64, n_taps: usize) -> Result<FirFilter> {
    if n_taps % 2 == 0 {
        return Err(Error::invalid(format!("tap count must be odd, got {n_taps}")));
    }
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs_hz / 2.0) {
        return Err(Error::invalid(format!(
            "band edges must satisfy 0 < lo < hi < fs/2, got lo={lo_hz} hi={hi_hz} fs={fs_hz}"
        )));
    }
    let hi = windowed_sinc(hi_hz / fs_hz, n_taps);
    let lo = windowed_sinc(lo_hz / fs_hz, n_taps);
    Ok(FirFilter {
        taps: hi.iter().zip(&lo).map(|(a, b)| a - b).collect(),
        lo_hz: Some(lo_hz),
        hi_hz,
        fs_hz,
    })
}

/// Forward-backward application of a symmetric FIR.
///
/// Running a filter forward and then backward equals one centered convolution
/// with its autocorrelation `h ⋆ h`, which is what is computed here (via FFT).
struct ZeroPhase {
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    kernel_spectrum: Vec<Complex64>,
    kernel_half: usize,
    pad: usize,
    n_fft: usize,
}

impl ZeroPhase {
    fn new(f: &FirFilter, signal_len: usize) -> Result<Self> {
        let l = f.taps.len();
        if signal_len <= 3 * l {
            return Err(Error::SignalTooShort {
                needed: 3 * l,
                got: signal_len,
            });
        }
        let kernel: Vec<f64> = (0..2 * l - 1)
            .map(|k| {
                // (h ⋆ h)[k - (l - 1)]
                let lag = k as isize - (l as isize - 1);
                (0..l as isize)
                    .filter_map(|i| {
                        let j = i + lag;
                        (0..l as isize).contains(&j).then(|| f.taps[i as usize] * f.taps[j as usize])
                    })
                    .sum()
            })
            .collect();
        let pad = l - 1;
        let n_fft = (signal_len + 2 * pad + kernel.len() - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n_fft);
        let ifft = planner.plan_fft_inverse(n_fft);
        let mut kernel_spectrum = vec![Complex64::new(0.0, 0.0); n_fft];
        for (d, &k) in kernel_spectrum.iter_mut().zip(&kernel) {
            d.re = k;
        }
        fft.process(&mut kernel_spectrum);
        Ok(Self {
            fft,
            ifft,
            kernel_spectrum,
            kernel_half: l - 1,
            pad,
            n_fft,
        })
    }

    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let n = x.len();
        let pad = self.pad;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        // Odd reflection about each end point.
        let x0 = x[0] as f64;
        let xn = x[n - 1] as f64;
        for i in 0..pad {
            buf[i].re = 2.0 * x0 - x[pad - i] as f64;
        }
        for (i, &v) in x.iter().enumerate() {
            buf[pad + i].re = v as f64;
        }
        for i in 0..pad {
            buf[pad + n + i].re = 2.0 * xn - x[n - 2 - i] as f64;
        }
        self.fft.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel_spectrum) {
            *b *= k;
        }
        self.ifft.process(&mut buf);
        let scale = 1.0 / self.n_fft as f64;
        (0..n)
            .map(|i| (buf[pad + i + self.kernel_half].re * scale) as f32)
            .collect()
    }
}

/// Zero-phase filtering of one signal.
pub fn filtfilt(x: &[f32], f: &FirFilter) -> Result<Vec<f32>> {
    filtfilt_channels(x, 1, f)
}

/// Zero-phase filtering of a channel-major `channels × n` matrix.
pub fn filtfilt_channels(data: &[f32], channels: usize, f: &FirFilter) -> Result<Vec<f32>> {
    if channels == 0 || data.len() % channels != 0 {
        return Err(Error::shape(format!("{} samples not divisible into {channels} channels", data.len())));
    }
    let n = data.len() / channels;
    let zp = ZeroPhase::new(f, n)?;
    Ok(par::map_range(channels, |c| zp.apply(&data[c * n..(c + 1) * n])).concat())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Polyphase rational resampler: upsample by `up`, low-pass at the lower of
/// the two Nyquist rates, downsample by `down`.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    taps: Vec<f64>,
    half: usize,
}

impl Resampler {
    pub fn new(up: usize, down: usize) -> Result<Self> {
        if up == 0 || down == 0 {
            return Err(Error::invalid("resampling factors must be positive"));
        }
        let g = gcd(up, down);
        let (up, down) = (up / g, down / g);
        let m = up.max(down);
        let half = 10 * m;
        let n_taps = 2 * half + 1;
        let mut taps = windowed_sinc(0.5 / m as f64, n_taps);
        taps.iter_mut().for_each(|t| *t *= up as f64);
        Ok(Self { up, down, taps, half })
    }

    pub fn output_len(&self, n: usize) -> usize {
        n * self.up / self.down
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        let n = x.len() as isize;
        let (up, down) = (self.up as isize, self.down as isize);
        let last = self.taps.len() as isize - 1;
        (0..self.output_len(x.len()))
            .map(|m| {
                let p = m as isize * down + self.half as isize;
                // taps index p - j*up must lie in [0, last].
                let j_lo = ((p - last) + up - 1).div_euclid(up).max(0);
                let j_hi = p.div_euclid(up).min(n - 1);
                let mut acc = 0.0;
                for j in j_lo..=j_hi {
                    acc += x[j as usize] as f64 * self.taps[(p - j * up) as usize];
                }
                acc as f32
            })
            .collect()
    }

    pub fn apply_channels(&self, data: &[f32], channels: usize) -> Vec<f32> {
        let n = data.len() / channels;
        par::map_range(channels, |c| self.apply(&data[c * n..(c + 1) * n])).concat()
    }
}

/// 1000 Hz to 256 Hz (up 32, down 125).
pub fn resample_1000_to_256(x: &[f32]) -> Result<Vec<f32>> {
    if x.is_empty() {
        return Err(Error::invalid("cannot resample an empty signal"));
    }
    Ok(Resampler::new(32, 125)?.apply(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Sample index of the word middle.
    pub sample: usize,
    pub label: Label,
    pub trial_id: TrialId,
}

/// Multichannel continuous EEG with word events, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRecording {
    pub subject_id: SubjectId,
    pub paradigm: Paradigm,
    pub fs_hz: f32,
    pub channels: usize,
    pub data: Vec<f32>,
    pub events: Vec<Event>,
}

impl ContinuousRecording {
    pub fn n_samples(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.data.len() / self.channels
        }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.n_samples();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.data.len() % self.channels != 0 {
            return Err(Error::shape("recording data is not channels × samples"));
        }
        let n = self.n_samples();
        for w in self.events.windows(2) {
            if w[1].sample <= w[0].sample {
                return Err(Error::invalid("event samples must be strictly increasing"));
            }
        }
        if let Some(e) = self.events.last() {
            if e.sample >= n {
                return Err(Error::invalid(format!("event at {} beyond {n} samples", e.sample)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpochWindow {
    pub t_min_s: f32,
    pub t_max_s: f32,
    /// Subtract the per-channel pre-onset mean.
    pub baseline: bool,
}

impl Default for EpochWindow {
    fn default() -> Self {
        Self {
            t_min_s: crate::data::T_MIN_S,
            t_max_s: crate::data::T_MAX_S,
            baseline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epoching {
    pub epochs: EpochSet,
    /// Indices into the recording's event list that were too close to an edge.
    pub skipped: Vec<usize>,
}

/// Cuts `[onset + round(t_min·fs), onset + round(t_max·fs))` around every event.
pub fn extract_epochs(rec: &ContinuousRecording, window: &EpochWindow) -> Result<Epoching> {
    rec.validate()?;
    let fs = rec.fs_hz as f64;
    let start_off = (window.t_min_s as f64 * fs).round() as isize;
    let end_off = (window.t_max_s as f64 * fs).round() as isize;
    if end_off <= start_off {
        return Err(Error::invalid("epoch window is empty"));
    }
    let len = (end_off - start_off) as usize;
    let n = rec.n_samples() as isize;
    let pre = (-start_off).max(0) as usize;
    let mut epochs = Vec::new();
    let mut skipped = Vec::new();
    for (idx, ev) in rec.events.iter().enumerate() {
        let start = ev.sample as isize + start_off;
        let end = ev.sample as isize + end_off;
        if start < 0 || end > n {
            skipped.push(idx);
            continue;
        }
        let mut data = Vec::with_capacity(rec.channels * len);
        for c in 0..rec.channels {
            let seg = &rec.channel(c)[start as usize..end as usize];
            if window.baseline && pre > 0 {
                let mean = seg[..pre].iter().map(|&v| v as f64).sum::<f64>() / pre as f64;
                data.extend(seg.iter().map(|&v| (v as f64 - mean) as f32));
            } else {
                data.extend_from_slice(seg);
            }
        }
        epochs.push(Epoch {
            id: EpochId::experimental(rec.subject_id, rec.paradigm, idx as u64),
            subject_id: rec.subject_id,
            paradigm: rec.paradigm,
            trial_id: ev.trial_id,
            label: ev.label,
            origin: Origin::Experimental,
            fs_hz: rec.fs_hz,
            t_min_s: window.t_min_s,
            channels: rec.channels,
            samples: len,
            data,
            sources: Vec::new(),
        });
    }
    Ok(Epoching {
        epochs: EpochSet::new(epochs),
        skipped,
    })
}

/// Drops epochs whose largest per-channel peak-to-peak exceeds `threshold_uv`.
pub fn peak_to_peak_reject(set: &EpochSet, threshold_uv: f32) -> (EpochSet, usize) {
    let kept = set.filter(|e| e.peak_to_peak() <= threshold_uv);
    let rejected = set.len() - kept.len();
    (kept, rejected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocConfig {
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub n_taps: usize,
    pub reject_uv: f32,
    pub window: EpochWindow,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self {
            band_lo_hz: 0.5,
            band_hi_hz: 40.0,
            n_taps: 3301,
            reject_uv: 200.0,
            window: EpochWindow::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub epochs: EpochSet,
    pub skipped: Vec<usize>,
    pub rejected: usize,
}

/// Band-pass at the raw rate, resample to 256 Hz, epoch, reject.
///
/// Filtering happens before resampling so the band edge is applied at the
/// higher rate and nothing above 128 Hz can alias.
pub fn preprocess(rec: &ContinuousRecording, cfg: &PreprocConfig) -> Result<Preprocessed> {
    rec.validate()?;
    if rec.fs_hz != crate::data::RAW_FS_HZ {
        return Err(Error::invalid(format!("expected a 1000 Hz recording, got {} Hz", rec.fs_hz)));
    }
    let bp = design_bandpass(cfg.band_lo_hz, cfg.band_hi_hz, rec.fs_hz as f64, cfg.n_taps)?;
    let filtered = filtfilt_channels(&rec.data, rec.channels, &bp)?;
    let rs = Resampler::new(32, 125)?;
    let data = rs.apply_channels(&filtered, rec.channels);
    let n_out = data.len() / rec.channels;
    let events = rec
        .events
        .iter()
        .map(|e| Event {
            sample: ((e.sample as u64 * 32 + 62) / 125) as usize,
            ..*e
        })
        .filter(|e| e.sample < n_out)
        .collect();
    let down = ContinuousRecording {
        subject_id: rec.subject_id,
        paradigm: rec.paradigm,
        fs_hz: crate::data::FS_HZ,
        channels: rec.channels,
        data,
        events,
    };
    let Epoching { epochs, skipped } = extract_epochs(&down, &cfg.window)?;
    let (epochs, rejected) = peak_to_peak_reject(&epochs, cfg.reject_uv);
    Ok(Preprocessed {
        epochs,
        skipped,
        rejected,
    })
}
