//! Binary file formats.
//!
//! Epoch files (`EAAD`):
//!
//! ```text
//! "EAAD" | u32 version = 1 | u64 header length | UTF-8 JSON header
//! then n_epochs fixed-size records:
//!   64-byte metadata block | channels * samples float32
//! ```
//!
//! All integers and floats are little-endian. The metadata block is
//!
//! ```text
//! 0  u64 id          8  u16 subject    10 u8 paradigm   11 u8 label
//! 12 u8 origin       13 u8 n_sources   14 u16 reserved  16 u32 trial_id
//! 20 f32 fs_hz       24 f32 t_min_s    28 u64 source[3] 52 12 bytes reserved
//! ```
//!
//! Continuous recordings (`EAAC`) share the preamble; the JSON header holds the
//! event list and the payload is channels * n_samples float32, channel-major.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    manifest_of, validate_epoch, Epoch, EpochId, EpochSet, Label, Manifest, ManifestKey, Origin,
    Paradigm, MAX_SOURCES,
};
use crate::dsp::{ContinuousRecording, Event};
use crate::error::{Error, Result};

pub const EPOCH_MAGIC: [u8; 4] = *b"EAAD";
pub const RECORDING_MAGIC: [u8; 4] = *b"EAAC";
pub const FORMAT_VERSION: u32 = 1;
const META_BYTES: usize = 64;
const SCHEMA: &str = "meta[64]: id u64, subject u16, paradigm u8, label u8, origin u8, \
n_sources u8, reserved u16, trial_id u32, fs_hz f32, t_min_s f32, sources u64[3], reserved[12]; \
payload: channels*samples f32 le, channel-major";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    subject: u16,
    paradigm: Paradigm,
    label: Label,
    origin: Origin,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct EpochHeader {
    channels: usize,
    samples: usize,
    n_epochs: usize,
    record_bytes: usize,
    schema: String,
    manifest: Vec<ManifestEntry>,
    attrs: BTreeMap<String, String>,
}

pub(crate) fn write_preamble<W: Write>(w: &mut W, magic: [u8; 4], header: &[u8]) -> Result<u64> {
    w.write_all(&magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(header)?;
    Ok(16 + header.len() as u64)
}

pub(crate) fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Truncated(what.to_string()),
        _ => Error::Io(e),
    })
}

/// Reads magic, version, and the header bytes.
pub(crate) fn read_preamble<R: Read>(r: &mut R, magic: [u8; 4]) -> Result<Vec<u8>> {
    let mut m = [0u8; 4];
    read_exact_or(r, &mut m, "magic")?;
    if m != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found: m,
        });
    }
    let mut b4 = [0u8; 4];
    read_exact_or(r, &mut b4, "version")?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let mut b8 = [0u8; 8];
    read_exact_or(r, &mut b8, "header length")?;
    let len = u64::from_le_bytes(b8);
    if len > 1 << 32 {
        return Err(Error::Header(format!("implausible header length {len}")));
    }
    let mut header = vec![0u8; len as usize];
    read_exact_or(r, &mut header, "header")?;
    Ok(header)
}

pub(crate) fn ensure_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.is_empty() {
        Ok(())
    } else {
        Err(Error::TrailingBytes(rest.len() as u64))
    }
}

pub fn write_epochset<W: Write>(set: &EpochSet, w: &mut W) -> Result<u64> {
    let (channels, samples) = match set.epochs().first() {
        Some(e) => (e.channels, e.samples),
        None => (crate::data::N_CHANNELS, crate::data::N_SAMPLES),
    };
    for e in set {
        let v = validate_epoch(e);
        if !v.is_ok() {
            return Err(Error::InvalidEpoch(v.violations));
        }
    }
    let header = EpochHeader {
        channels,
        samples,
        n_epochs: set.len(),
        record_bytes: META_BYTES + 4 * channels * samples,
        schema: SCHEMA.to_string(),
        manifest: set
            .manifest()
            .iter()
            .map(|(k, &count)| ManifestEntry {
                subject: k.subject,
                paradigm: k.paradigm,
                label: k.label,
                origin: k.origin,
                count,
            })
            .collect(),
        attrs: set.attrs.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut written = write_preamble(w, EPOCH_MAGIC, &header)?;
    let mut rec = vec![0u8; META_BYTES + 4 * channels * samples];
    for e in set {
        encode_meta(e, &mut rec[..META_BYTES]);
        for (dst, v) in rec[META_BYTES..].chunks_exact_mut(4).zip(&e.data) {
            dst.copy_from_slice(&v.to_le_bytes());
        }
        w.write_all(&rec)?;
        written += rec.len() as u64;
    }
    w.flush()?;
    Ok(written)
}

fn encode_meta(e: &Epoch, m: &mut [u8]) {
    m.fill(0);
    m[0..8].copy_from_slice(&e.id.0.to_le_bytes());
    m[8..10].copy_from_slice(&e.subject_id.to_le_bytes());
    m[10] = e.paradigm.index() as u8;
    m[11] = e.label.code();
    m[12] = e.origin.code();
    m[13] = e.sources.len() as u8;
    m[16..20].copy_from_slice(&e.trial_id.to_le_bytes());
    m[20..24].copy_from_slice(&e.fs_hz.to_le_bytes());
    m[24..28].copy_from_slice(&e.t_min_s.to_le_bytes());
    for (i, s) in e.sources.iter().enumerate() {
        m[28 + 8 * i..36 + 8 * i].copy_from_slice(&s.0.to_le_bytes());
    }
}

fn decode_meta(m: &[u8], channels: usize, samples: usize, data: Vec<f32>) -> Result<Epoch> {
    let u64_at = |o: usize| u64::from_le_bytes(m[o..o + 8].try_into().unwrap());
    let bad = |what: &str| Error::Header(format!("record has invalid {what}"));
    let n_sources = m[13] as usize;
    if n_sources > MAX_SOURCES {
        return Err(bad("source count"));
    }
    Ok(Epoch {
        id: EpochId(u64_at(0)),
        subject_id: u16::from_le_bytes([m[8], m[9]]),
        paradigm: Paradigm::from_index(m[10] as usize).ok_or_else(|| bad("paradigm"))?,
        label: Label::from_code(m[11]).ok_or_else(|| bad("label"))?,
        origin: Origin::from_code(m[12]).ok_or_else(|| bad("origin"))?,
        trial_id: u32::from_le_bytes(m[16..20].try_into().unwrap()),
        fs_hz: f32::from_le_bytes(m[20..24].try_into().unwrap()),
        t_min_s: f32::from_le_bytes(m[24..28].try_into().unwrap()),
        channels,
        samples,
        data,
        sources: (0..n_sources).map(|i| EpochId(u64_at(28 + 8 * i))).collect(),
    })
}

pub fn read_epochset<R: Read>(r: &mut R) -> Result<EpochSet> {
    let header = read_preamble(r, EPOCH_MAGIC)?;
    let header: EpochHeader =
        serde_json::from_slice(&header).map_err(|e| Error::Header(e.to_string()))?;
    let expected_record = META_BYTES + 4 * header.channels * header.samples;
    if header.record_bytes != expected_record {
        return Err(Error::Header(format!(
            "record size {} inconsistent with {}x{}",
            header.record_bytes, header.channels, header.samples
        )));
    }
    let mut rec = vec![0u8; expected_record];
    let mut epochs = Vec::with_capacity(header.n_epochs);
    for i in 0..header.n_epochs {
        read_exact_or(r, &mut rec, &format!("record {i} of {}", header.n_epochs))?;
        let data = rec[META_BYTES..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        epochs.push(decode_meta(&rec[..META_BYTES], header.channels, header.samples, data)?);
    }
    ensure_eof(r)?;
    let declared: Manifest = header
        .manifest
        .iter()
        .map(|m| {
            (
                ManifestKey {
                    subject: m.subject,
                    paradigm: m.paradigm,
                    label: m.label,
                    origin: m.origin,
                },
                m.count,
            )
        })
        .collect();
    let actual = manifest_of(&epochs);
    if declared != actual {
        let diff = declared
            .iter()
            .find(|(k, n)| actual.get(k) != Some(n))
            .map(|(k, n)| format!("{k:?}: declared {n}, found {:?}", actual.get(k)))
            .unwrap_or_else(|| "records contain keys absent from the manifest".to_string());
        return Err(Error::ManifestMismatch(diff));
    }
    Ok(EpochSet::new(epochs).with_attrs(header.attrs))
}

pub fn save_epochset(set: &EpochSet, path: impl AsRef<Path>) -> Result<u64> {
    let mut w = BufWriter::new(File::create(path)?);
    write_epochset(set, &mut w)
}

pub fn load_epochset(path: impl AsRef<Path>) -> Result<EpochSet> {
    let mut r = BufReader::new(File::open(path)?);
    read_epochset(&mut r)
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordingHeader {
    subject_id: u16,
    paradigm: Paradigm,
    fs_hz: f32,
    channels: usize,
    n_samples: usize,
    events: Vec<Event>,
    attrs: BTreeMap<String, String>,
}

pub fn write_recording<W: Write>(
    rec: &ContinuousRecording,
    attrs: &BTreeMap<String, String>,
    w: &mut W,
) -> Result<u64> {
    rec.validate()?;
    let header = RecordingHeader {
        subject_id: rec.subject_id,
        paradigm: rec.paradigm,
        fs_hz: rec.fs_hz,
        channels: rec.channels,
        n_samples: rec.n_samples(),
        events: rec.events.clone(),
        attrs: attrs.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut written = write_preamble(w, RECORDING_MAGIC, &header)?;
    let mut buf = Vec::with_capacity(4 * 4096);
    for chunk in rec.data.chunks(4096) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        written += buf.len() as u64;
    }
    w.flush()?;
    Ok(written)
}

pub fn read_recording<R: Read>(r: &mut R) -> Result<(ContinuousRecording, BTreeMap<String, String>)> {
    let header = read_preamble(r, RECORDING_MAGIC)?;
    let h: RecordingHeader =
        serde_json::from_slice(&header).map_err(|e| Error::Header(e.to_string()))?;
    let n = h.channels * h.n_samples;
    let mut bytes = vec![0u8; 4 * n];
    read_exact_or(r, &mut bytes, "recording payload")?;
    ensure_eof(r)?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let rec = ContinuousRecording {
        subject_id: h.subject_id,
        paradigm: h.paradigm,
        fs_hz: h.fs_hz,
        channels: h.channels,
        data,
        events: h.events,
    };
    rec.validate()?;
    Ok((rec, h.attrs))
}

pub fn save_recording(
    rec: &ContinuousRecording,
    attrs: &BTreeMap<String, String>,
    path: impl AsRef<Path>,
) -> Result<u64> {
    let mut w = BufWriter::new(File::create(path)?);
    write_recording(rec, attrs, &mut w)
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<(ContinuousRecording, BTreeMap<String, String>)> {
    let mut r = BufReader::new(File::open(path)?);
    read_recording(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::epoch;

    fn three_epochs() -> EpochSet {
        let mut es = vec![
            epoch(1, Label::Attended, 1.5),
            epoch(2, Label::Unattended, -3.25),
            epoch(2, Label::Attended, 0.0),
        ];
        es[1].data[7] = f32::MIN_POSITIVE;
        es[2].origin = Origin::Simulated6dB;
        es[2].sources = vec![EpochId(11), EpochId(12)];
        es[2].id = EpochId::derived(Origin::Simulated6dB, Label::Attended, 2, Paradigm::P1, 0);
        let mut attrs = BTreeMap::new();
        attrs.insert("stage".to_string(), "test".to_string());
        EpochSet::new(es).with_attrs(attrs)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let set = three_epochs();
        let mut buf = Vec::new();
        let n = write_epochset(&set, &mut buf).unwrap();
        assert_eq!(n as usize, buf.len());
        let back = read_epochset(&mut buf.as_slice()).unwrap();
        assert_eq!(back, set);
        for (a, b) in back.iter().zip(&set) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn bad_magic_detected() {
        let mut buf = Vec::new();
        write_epochset(&three_epochs(), &mut buf).unwrap();
        buf[1] = b'X';
        assert!(matches!(read_epochset(&mut buf.as_slice()), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn version_mismatch_detected() {
        let mut buf = Vec::new();
        write_epochset(&three_epochs(), &mut buf).unwrap();
        buf[4] = 2;
        assert!(matches!(
            read_epochset(&mut buf.as_slice()),
            Err(Error::VersionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn truncation_detected() {
        let mut buf = Vec::new();
        write_epochset(&three_epochs(), &mut buf).unwrap();
        buf.truncate(buf.len() - 1000);
        assert!(matches!(read_epochset(&mut buf.as_slice()), Err(Error::Truncated(_))));
    }

    #[test]
    fn manifest_mismatch_detected() {
        let mut buf = Vec::new();
        write_epochset(&three_epochs(), &mut buf).unwrap();
        // Flip the label byte of the first record.
        let header_len = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let first = 16 + header_len;
        buf[first + 11] = Label::Unattended.code();
        assert!(matches!(read_epochset(&mut buf.as_slice()), Err(Error::ManifestMismatch(_))));
    }

    #[test]
    fn invalid_epoch_refused_on_write() {
        let mut set = three_epochs().into_epochs();
        set[0].data[0] = f32::INFINITY;
        let err = write_epochset(&EpochSet::new(set), &mut Vec::new()).unwrap_err();
        assert!(matches!(err, Error::InvalidEpoch(v) if v == vec!["finite data".to_string()]));
    }

    #[test]
    fn recording_round_trip() {
        let rec = ContinuousRecording {
            subject_id: 4,
            paradigm: Paradigm::P2,
            fs_hz: 1000.0,
            channels: 2,
            data: (0..2000).map(|i| i as f32 * 0.5).collect(),
            events: vec![Event {
                sample: 300,
                label: Label::Attended,
                trial_id: 9,
            }],
        };
        let mut buf = Vec::new();
        write_recording(&rec, &BTreeMap::new(), &mut buf).unwrap();
        let (back, _) = read_recording(&mut buf.as_slice()).unwrap();
        assert_eq!(back, rec);
    }
}
