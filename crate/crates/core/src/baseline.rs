//! Envelope-reconstruction baseline: a ridge-regularized backward model maps
//! lagged EEG to the attended speech envelope; a window is assigned to the
//! stream whose envelope correlates best with the reconstruction.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Paradigm, SubjectId, TrialId, N_CHANNELS};
use crate::dsp::{design_lowpass, filtfilt, Resampler};
use crate::error::{Error, Result};
use crate::io::{ensure_eof, read_exact_or, read_preamble, write_preamble};
use crate::par;
use crate::rng::RngStream;
use crate::synth::{gen_noise, random_topography, NoiseModel, NoiseParams};

pub const DECODER_MAGIC: [u8; 4] = *b"EALD";
pub const ENVELOPE_FS_HZ: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Number of lags (0 .. lags−1 samples at 64 Hz; 17 spans 0–250 ms).
    pub lags: usize,
    pub window_s: f64,
    /// Ridge grid, as multiples of the mean diagonal of the autocovariance.
    pub lambdas: Vec<f64>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            lags: 17,
            window_s: 1.2,
            lambdas: (-4..=2).map(|e| 10f64.powi(e)).collect(),
        }
    }
}

impl BaselineConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_s * ENVELOPE_FS_HZ as f64).round() as usize
    }
}

/// Envelope of an audio-like signal at 64 Hz: rectify, 8 Hz zero-phase
/// low-pass, resample.
pub fn extract_envelope(signal: &[f32], fs_in: usize) -> Result<Vec<f32>> {
    if fs_in < 128 {
        return Err(Error::invalid(format!("envelope extraction needs fs ≥ 128 Hz, got {fs_in}")));
    }
    let taps = 2 * (fs_in / 4) + 1;
    let lp = design_lowpass(8.0, fs_in as f64, taps)?;
    let rect: Vec<f32> = signal.iter().map(|v| v.abs()).collect();
    let smooth = filtfilt(&rect, &lp)?;
    if fs_in == ENVELOPE_FS_HZ {
        return Ok(smooth);
    }
    Ok(Resampler::new(ENVELOPE_FS_HZ, fs_in)?.apply(&smooth))
}

/// One analysis window. `eeg` is `channels × (T + lags − 1)`: the decoder
/// reads up to `lags − 1` samples past the envelope window.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePair {
    pub subject_id: SubjectId,
    pub trial_id: TrialId,
    pub attended_env: Vec<f32>,
    pub unattended_env: Vec<f32>,
    pub channels: usize,
    pub eeg: Vec<f32>,
}

impl EnvelopePair {
    pub fn window_len(&self) -> usize {
        self.attended_env.len()
    }

    fn eeg_len(&self) -> usize {
        self.eeg.len() / self.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoder {
    pub channels: usize,
    pub lags: usize,
    /// Row-major channels × lags.
    pub weights: Vec<f64>,
    pub lambda: f64,
}

fn zscore(x: &[f32]) -> Vec<f64> {
    let n = x.len() as f64;
    let m = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let sd = (x.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|&v| (v as f64 - m) / sd).collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

fn check_pair(p: &EnvelopePair, lags: usize) -> Result<()> {
    let t = p.window_len();
    if p.unattended_env.len() != t || p.channels == 0 || p.eeg.len() % p.channels != 0 || p.eeg_len() < t + lags - 1 {
        return Err(Error::shape(format!(
            "window needs {} EEG samples per channel for {t} envelope samples and {lags} lags",
            t + lags - 1
        )));
    }
    Ok(())
}

/// Lagged design matrix of one window: row t, column c·L + τ = eeg[c, t+τ].
fn design(p: &EnvelopePair, lags: usize) -> DMatrix<f64> {
    let (t, c_n, len) = (p.window_len(), p.channels, p.eeg_len());
    DMatrix::from_fn(t, c_n * lags, |row, col| {
        let (c, tau) = (col / lags, col % lags);
        p.eeg[c * len + row + tau] as f64
    })
}

/// Autocovariance `R = ΣΦᵀΦ` and cross-covariance `r = ΣΦᵀ e` over windows
/// (envelopes z-scored per window).
fn covariances(pairs: &[&EnvelopePair], lags: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let first = pairs.first().ok_or_else(|| Error::invalid("no training windows"))?;
    let dim = first.channels * lags;
    for p in pairs {
        check_pair(p, lags)?;
        if p.channels != first.channels {
            return Err(Error::shape("windows differ in channel count"));
        }
    }
    let chunk = 64;
    let parts = par::map_range(pairs.len().div_ceil(chunk), |i| {
        let group = &pairs[i * chunk..((i + 1) * chunk).min(pairs.len())];
        let rows: usize = group.iter().map(|p| p.window_len()).sum();
        let mut phi = DMatrix::<f64>::zeros(rows, dim);
        let mut env = DVector::<f64>::zeros(rows);
        let mut at = 0;
        for p in group {
            let t = p.window_len();
            phi.rows_mut(at, t).copy_from(&design(p, lags));
            env.rows_mut(at, t).copy_from(&DVector::from_vec(zscore(&p.attended_env)));
            at += t;
        }
        (phi.tr_mul(&phi), phi.tr_mul(&env))
    });
    let mut r_mat = DMatrix::zeros(dim, dim);
    let mut r_vec = DVector::zeros(dim);
    for (a, b) in parts {
        r_mat += a;
        r_vec += b;
    }
    Ok((r_mat, r_vec))
}

fn solve(r_mat: &DMatrix<f64>, r_vec: &DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("ridge parameter must be non-negative"));
    }
    let dim = r_mat.nrows();
    let mean_diag = r_mat.diagonal().mean();
    let mut a = r_mat.clone();
    for i in 0..dim {
        a[(i, i)] += lambda * mean_diag;
    }
    let chol = a.cholesky().ok_or_else(|| Error::Singular("ridge system is not positive definite".into()))?;
    let w = chol.solve(r_vec);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite decoder weights".into()));
    }
    Ok(w.iter().copied().collect())
}

/// Ridge solution of `(R + λ·mean(diag R)·I) w = r`.
pub fn train_decoder(pairs: &[&EnvelopePair], lags: usize, lambda: f64) -> Result<LinearDecoder> {
    let (r_mat, r_vec) = covariances(pairs, lags)?;
    let samples: usize = pairs.iter().map(|p| p.window_len()).sum();
    if samples < r_mat.nrows() {
        return Err(Error::invalid(format!(
            "{samples} training samples for {} decoder weights",
            r_mat.nrows()
        )));
    }
    Ok(LinearDecoder { channels: pairs[0].channels, lags, weights: solve(&r_mat, &r_vec, lambda)?, lambda })
}

impl LinearDecoder {
    /// `ê(t) = Σ_{c,τ} w[c,τ]·eeg[c, t+τ]` over the window.
    pub fn reconstruct(&self, p: &EnvelopePair) -> Result<Vec<f64>> {
        check_pair(p, self.lags)?;
        if p.channels != self.channels {
            return Err(Error::shape("decoder and window channel counts differ"));
        }
        let (t, len) = (p.window_len(), p.eeg_len());
        let mut out = vec![0.0; t];
        for c in 0..self.channels {
            for tau in 0..self.lags {
                let w = self.weights[c * self.lags + tau];
                let src = &p.eeg[c * len + tau..c * len + tau + t];
                out.iter_mut().zip(src).for_each(|(o, &v)| *o += w * v as f64);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowDecision {
    /// Stream 1 was chosen.
    pub stream1: bool,
    pub corr1: f64,
    pub corr2: f64,
    /// Equal correlations; resolved toward stream 1.
    pub tie: bool,
}

/// Picks the stream whose envelope correlates best with the reconstruction.
pub fn classify_reconstruction(recon: &[f64], env1: &[f32], env2: &[f32]) -> Result<WindowDecision> {
    let e1: Vec<f64> = env1.iter().map(|&v| v as f64).collect();
    let e2: Vec<f64> = env2.iter().map(|&v| v as f64).collect();
    let c1 = pearson(recon, &e1).ok_or(Error::ZeroVariance)?;
    let c2 = pearson(recon, &e2).ok_or(Error::ZeroVariance)?;
    Ok(WindowDecision { stream1: c1 >= c2, corr1: c1, corr2: c2, tie: c1 == c2 })
}

pub fn classify_window(
    decoder: &LinearDecoder,
    p: &EnvelopePair,
    env1: &[f32],
    env2: &[f32],
) -> Result<WindowDecision> {
    let recon = decoder.reconstruct(p)?;
    if env1.len() != recon.len() || env2.len() != recon.len() {
        return Err(Error::shape("envelope length differs from the window"));
    }
    classify_reconstruction(&recon, env1, env2)
}

/// Fraction of windows assigned to the attended stream.
pub fn window_accuracy(decoder: &LinearDecoder, pairs: &[&EnvelopePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no windows to classify"));
    }
    let decisions = par::map(pairs, |p| classify_window(decoder, p, &p.attended_env, &p.unattended_env));
    let mut correct = 0usize;
    for d in decisions {
        correct += d?.stream1 as usize;
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Mean reconstruction correlation with the attended envelope.
pub fn reconstruction_score(decoder: &LinearDecoder, pairs: &[&EnvelopePair]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let recon = decoder.reconstruct(p)?;
        let env: Vec<f64> = p.attended_env.iter().map(|&v| v as f64).collect();
        total += pearson(&recon, &env).unwrap_or(0.0);
    }
    Ok(total / pairs.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSearch {
    pub lambdas: Vec<f64>,
    pub scores: Vec<f64>,
    pub best: usize,
}

/// Trains on `train` for each λ and keeps the best validation reconstruction
/// correlation (ties → smaller λ).
pub fn select_lambda(
    train: &[&EnvelopePair],
    val: &[&EnvelopePair],
    cfg: &BaselineConfig,
) -> Result<(LinearDecoder, LambdaSearch)> {
    let (r_mat, r_vec) = covariances(train, cfg.lags)?;
    let mut best: Option<(f64, LinearDecoder, usize)> = None;
    let mut scores = Vec::new();
    for (i, &lambda) in cfg.lambdas.iter().enumerate() {
        let dec = LinearDecoder {
            channels: train[0].channels,
            lags: cfg.lags,
            weights: solve(&r_mat, &r_vec, lambda)?,
            lambda,
        };
        let s = reconstruction_score(&dec, val)?;
        scores.push(s);
        if best.as_ref().is_none_or(|(b, _, _)| s > *b) {
            best = Some((s, dec, i));
        }
    }
    let (_, dec, idx) = best.ok_or_else(|| Error::invalid("empty ridge grid"))?;
    Ok((dec, LambdaSearch { lambdas: cfg.lambdas.clone(), scores, best: idx }))
}

#[derive(Debug, Serialize, Deserialize)]
struct DecoderHeader {
    channels: usize,
    lags: usize,
    lag_hz: usize,
    lambda: f64,
    blobs: Vec<(String, usize)>,
}

/// Decoder file: preamble with JSON metadata, then the channels × lags
/// weights as float32 LE.
pub fn write_decoder<W: Write>(d: &LinearDecoder, w: &mut W) -> Result<()> {
    let header = DecoderHeader {
        channels: d.channels,
        lags: d.lags,
        lag_hz: ENVELOPE_FS_HZ,
        lambda: d.lambda,
        blobs: vec![("weights".into(), d.weights.len())],
    };
    write_preamble(w, DECODER_MAGIC, &serde_json::to_vec(&header)?)?;
    let mut buf = Vec::with_capacity(d.weights.len() * 4);
    d.weights.iter().for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes()));
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_decoder<R: Read>(r: &mut R) -> Result<LinearDecoder> {
    let h: DecoderHeader = serde_json::from_slice(&read_preamble(r, DECODER_MAGIC)?)?;
    let n = h.channels * h.lags;
    if h.blobs != vec![("weights".to_string(), n)] {
        return Err(Error::Header("decoder blob list".into()));
    }
    let mut buf = vec![0u8; n * 4];
    read_exact_or(r, &mut buf, "weights")?;
    ensure_eof(r)?;
    let weights = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    Ok(LinearDecoder { channels: h.channels, lags: h.lags, weights, lambda: h.lambda })
}

pub fn save_decoder(d: &LinearDecoder, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_decoder(d, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_decoder(path: impl AsRef<Path>) -> Result<LinearDecoder> {
    read_decoder(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Surrogate envelope-driven EEG for the Paradigm-3 trials of the epoch data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeSynthConfig {
    /// Envelope-driven EEG rms over background rms, in dB.
    pub snr_db: f64,
    pub windows_per_trial: usize,
    /// Peak of the gamma-shaped temporal response.
    pub response_peak_s: f64,
    pub noise: NoiseParams,
}

impl Default for EnvelopeSynthConfig {
    fn default() -> Self {
        Self {
            snr_db: -10.0,
            windows_per_trial: 8,
            response_peak_s: 0.1,
            noise: NoiseParams { highcut_hz: Some(30.0), ..NoiseParams::default() },
        }
    }
}

/// Smooth non-negative speech-like envelope at 64 Hz.
fn synth_envelope(rng: &mut RngStream, n: usize) -> Result<Vec<f32>> {
    let lp = design_lowpass(4.0, ENVELOPE_FS_HZ as f64, 33)?;
    let pad = 3 * 33 + 1;
    let white: Vec<f32> = (0..n + 2 * pad).map(|_| rng.normal() as f32).collect();
    let smooth = filtfilt(&white, &lp)?;
    Ok(smooth[pad..pad + n].iter().map(|v| v.abs()).collect())
}

/// Windows for one subject's trials. EEG is a subject-specific lagged spatial
/// projection of the attended envelope plus background noise; `clean` is
/// `false` when `snr_db` is −∞ (pure noise).
pub fn synth_envelope_trials(
    subject: SubjectId,
    trials: &[TrialId],
    cfg: &EnvelopeSynthConfig,
    lags: usize,
    window: usize,
    master_seed: u64,
) -> Result<Vec<EnvelopePair>> {
    let root = RngStream::derive(master_seed, &format!("envelope/subject={subject}"))?;
    let topo = random_topography(&mut root.child("topography"), N_CHANNELS);
    let peak = cfg.response_peak_s * ENVELOPE_FS_HZ as f64;
    let kernel: Vec<f64> = (0..lags)
        .map(|tau| {
            let x = tau as f64 / peak;
            x * (1.0 - x).exp()
        })
        .collect();
    let model: NoiseModel = cfg.noise.model(N_CHANNELS);
    let mut out = Vec::new();
    for &trial in trials {
        let rng = root.child(format!("trial={trial}"));
        let n_env = cfg.windows_per_trial * window + lags - 1;
        let att = synth_envelope(&mut rng.child("attended"), n_env + lags - 1)?;
        let unatt = synth_envelope(&mut rng.child("unattended"), n_env + lags - 1)?;
        // drive[s] = Σ_τ k[τ]·att[s − τ], aligned so EEG index s pairs with envelope index s + lags − 1.
        let zs = zscore(&att);
        let drive: Vec<f64> = (0..n_env)
            .map(|s| (0..lags).map(|tau| kernel[tau] * zs[s + lags - 1 - tau]).sum())
            .collect();
        let noise = gen_noise(&model, &mut rng.child("noise"), n_env, ENVELOPE_FS_HZ as f64)?;
        let drive_rms = (drive.iter().map(|v| v * v).sum::<f64>() / n_env as f64).sqrt();
        let gain = if cfg.snr_db == f64::NEG_INFINITY || drive_rms == 0.0 {
            0.0
        } else {
            // Spatial pattern has unit norm: channel-mean power of the signal is drive²/C.
            model.broadband_rms() * 10f64.powf(cfg.snr_db / 20.0) * (N_CHANNELS as f64).sqrt() / drive_rms
        };
        let mut eeg = noise;
        for c in 0..N_CHANNELS {
            let w = gain * topo[c] as f64;
            eeg[c * n_env..(c + 1) * n_env]
                .iter_mut()
                .zip(&drive)
                .for_each(|(e, d)| *e += (w * d) as f32);
        }
        for k in 0..cfg.windows_per_trial {
            let s0 = k * window;
            let env_at = |e: &[f32]| e[s0 + lags - 1..s0 + lags - 1 + window].to_vec();
            let mut win = Vec::with_capacity(N_CHANNELS * (window + lags - 1));
            for c in 0..N_CHANNELS {
                win.extend_from_slice(&eeg[c * n_env + s0..c * n_env + s0 + window + lags - 1]);
            }
            out.push(EnvelopePair {
                subject_id: subject,
                trial_id: trial,
                attended_env: env_at(&att),
                unattended_env: env_at(&unatt),
                channels: N_CHANNELS,
                eeg: win,
            });
        }
    }
    Ok(out)
}

/// Envelope windows keyed by the Paradigm-3 trial ids of an epoch set.
pub fn synth_envelope_dataset(
    trials: &[(SubjectId, Paradigm, TrialId)],
    cfg: &EnvelopeSynthConfig,
    baseline: &BaselineConfig,
    master_seed: u64,
) -> Result<Vec<EnvelopePair>> {
    let mut by_subject: std::collections::BTreeMap<SubjectId, Vec<TrialId>> = Default::default();
    for &(s, p, t) in trials {
        if p == Paradigm::P3 {
            by_subject.entry(s).or_default().push(t);
        }
    }
    let groups: Vec<_> = by_subject.into_iter().collect();
    let parts = par::map(&groups, |(s, ts)| {
        synth_envelope_trials(*s, ts, cfg, baseline.lags, baseline.window_samples(), master_seed)
    });
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(snr_db: f64, trials: std::ops::Range<u32>, seed: u64) -> Vec<EnvelopePair> {
        let cfg = EnvelopeSynthConfig { snr_db, ..Default::default() };
        let ts: Vec<TrialId> = trials.collect();
        synth_envelope_trials(1, &ts, &cfg, 17, 77, seed).unwrap()
    }

    #[test]
    fn constant_tone_has_flat_envelope() {
        let fs = 1000;
        let x: Vec<f32> = (0..8000).map(|i| (2.0 * std::f32::consts::PI * 200.0 * i as f32 / fs as f32).sin()).collect();
        let e = extract_envelope(&x, fs).unwrap();
        let mid = &e[64..e.len() - 64];
        let m = mid.iter().sum::<f32>() / mid.len() as f32;
        let sd = (mid.iter().map(|v| (v - m).powi(2)).sum::<f32>() / mid.len() as f32).sqrt();
        assert!(sd / m < 0.05, "{}", sd / m);
        assert_eq!(e.len(), 512);
    }

    #[test]
    fn modulated_tone_follows_modulator() {
        let fs = 1000;
        let n = 10_000;
        let modulator: Vec<f64> = (0..n).map(|i| 1.0 + 0.8 * (2.0 * std::f64::consts::PI * 2.0 * i as f64 / fs as f64).sin()).collect();
        let x: Vec<f32> = (0..n)
            .map(|i| (modulator[i] * (2.0 * std::f64::consts::PI * 150.0 * i as f64 / fs as f64).sin()) as f32)
            .collect();
        let e = extract_envelope(&x, fs).unwrap();
        let m64: Vec<f64> = (0..e.len()).map(|k| modulator[k * fs / 64]).collect();
        let ev: Vec<f64> = e.iter().map(|&v| v as f64).collect();
        assert!(pearson(&ev[32..600], &m64[32..600]).unwrap() > 0.95);
    }

    #[test]
    fn zero_signal_zero_envelope() {
        assert!(extract_envelope(&vec![0.0; 4000], 1000).unwrap().iter().all(|&v| v == 0.0));
        assert!(extract_envelope(&vec![0.0; 100], 1000).is_err());
        assert!(extract_envelope(&vec![0.0; 4000], 100).is_err());
    }

    #[test]
    fn perfect_reconstruction_picks_attended() {
        let env: Vec<f32> = (0..77).map(|i| (i as f32 * 0.3).sin() + 1.5).collect();
        let other: Vec<f32> = (0..77).map(|i| (i as f32 * 0.77).cos() + 1.5).collect();
        let recon: Vec<f64> = env.iter().map(|&v| v as f64).collect();
        let d = classify_reconstruction(&recon, &env, &other).unwrap();
        assert!(d.stream1 && (d.corr1 - 1.0).abs() < 1e-12 && !d.tie);
        let flat = vec![1.0f32; 77];
        assert!(matches!(classify_reconstruction(&recon, &flat, &other), Err(Error::ZeroVariance)));
    }

    #[test]
    fn planted_decoder_is_recovered_at_20db() {
        let train = pairs(20.0, 0..24, 1);
        let val = pairs(20.0, 50..58, 1);
        let test = pairs(20.0, 100..110, 1);
        let tr: Vec<&EnvelopePair> = train.iter().collect();
        let te: Vec<&EnvelopePair> = test.iter().collect();
        let cfg = BaselineConfig { lambdas: (-8..=0).map(|e| 10f64.powi(e)).collect(), ..Default::default() };
        let (dec, _) = select_lambda(&tr, &val.iter().collect::<Vec<_>>(), &cfg).unwrap();
        let score = reconstruction_score(&dec, &te).unwrap();
        assert!(score >= 0.9, "{score}");
        assert!(window_accuracy(&dec, &te).unwrap() >= 0.9);
    }

    #[test]
    fn ridge_shrinks_weights() {
        let train = pairs(0.0, 0..12, 2);
        let tr: Vec<&EnvelopePair> = train.iter().collect();
        let norms: Vec<f64> = [1e-3, 1e-1, 1e1, 1e3, 1e5]
            .iter()
            .map(|&l| train_decoder(&tr, 17, l).unwrap().weights.iter().map(|w| w * w).sum::<f64>().sqrt())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0]), "{norms:?}");
        assert!(norms[4] < 1e-3 * norms[0]);
    }

    #[test]
    fn duplicated_data_same_decoder() {
        let train = pairs(0.0, 0..12, 3);
        let tr: Vec<&EnvelopePair> = train.iter().collect();
        let twice: Vec<&EnvelopePair> = train.iter().chain(&train).collect();
        let a = train_decoder(&tr, 17, 0.1).unwrap();
        let b = train_decoder(&twice, 17, 0.1).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn scaling_eeg_scales_weights_inversely() {
        let train = pairs(0.0, 0..12, 4);
        let scaled: Vec<EnvelopePair> = train
            .iter()
            .map(|p| EnvelopePair { eeg: p.eeg.iter().map(|v| v * 4.0).collect(), ..p.clone() })
            .collect();
        let a = train_decoder(&train.iter().collect::<Vec<_>>(), 17, 0.1).unwrap();
        let b = train_decoder(&scaled.iter().collect::<Vec<_>>(), 17, 0.1).unwrap();
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - 4.0 * y).abs() <= 1e-6 * (1.0 + x.abs()));
        }
        for (p, q) in train.iter().zip(&scaled) {
            let da = classify_window(&a, p, &p.attended_env, &p.unattended_env).unwrap();
            let db = classify_window(&b, q, &q.attended_env, &q.unattended_env).unwrap();
            assert_eq!(da.stream1, db.stream1);
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        let train = pairs(0.0, 0..1, 5);
        let tr: Vec<&EnvelopePair> = train.iter().take(7).collect();
        assert!(train_decoder(&tr, 17, 0.1).is_err());
    }

    #[test]
    fn best_lambda_is_interior_for_planted_data() {
        let train = pairs(-5.0, 0..8, 6);
        let val = pairs(-5.0, 50..58, 6);
        let cfg = BaselineConfig { lambdas: (-6..=6).map(|e| 10f64.powi(e)).collect(), ..Default::default() };
        let (_, search) = select_lambda(&train.iter().collect::<Vec<_>>(), &val.iter().collect::<Vec<_>>(), &cfg).unwrap();
        assert!(search.best > 0 && search.best < search.lambdas.len() - 1, "{search:?}");
    }

    #[test]
    fn decoder_file_round_trip() {
        let train = pairs(10.0, 0..12, 7);
        let d = train_decoder(&train.iter().collect::<Vec<_>>(), 17, 0.1).unwrap();
        let mut buf = Vec::new();
        write_decoder(&d, &mut buf).unwrap();
        let back = read_decoder(&mut buf.as_slice()).unwrap();
        assert_eq!(back.lags, 17);
        for (a, b) in d.weights.iter().zip(&back.weights) {
            assert_eq!(*a as f32, *b as f32);
        }
    }
}
