//! File formats.
//!
//! Tag files (`SQZT`, little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SQZT"
//! 4       2     version (1)
//! 6       1     channel count
//! 7       1     flags, bit 0 = truth block present
//! 8       8     duration, ps
//! 16      4+n   truth block (if flagged): u32 length, then n bytes of JSON
//! ...     9     records: u64 timestamp (ps), u8 channel
//! ```
//!
//! Records run to the end of the file in `(timestamp, channel)` order. A CSV
//! file with header `timestamp_ps,channel` is accepted in place of the binary
//! form.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::correlator::CorrelationHistogram;
use crate::error::{Error, Result};
use crate::fit::RatePoint;
use crate::sim::TruthRecord;
use crate::tags::TimeTagStream;
use crate::units::{mw_to_w, PS_PER_S};

pub const TAG_MAGIC: [u8; 4] = *b"SQZT";
pub const TAG_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 9;
const FLAG_TRUTH: u8 = 1;
const CSV_HEADER: &str = "timestamp_ps,channel";

/// Serialise `streams` (distinct channels) into the binary tag format.
pub fn encode_tags(streams: &[TimeTagStream], truth: Option<&TruthRecord>) -> Result<Vec<u8>> {
    let mut seen = [false; 256];
    for s in streams {
        if std::mem::replace(&mut seen[s.channel() as usize], true) {
            return Err(Error::invalid("streams", format!("channel {} given twice", s.channel())));
        }
    }
    let channel_count = streams.iter().map(|s| s.channel() as usize + 1).max().unwrap_or(0);
    if channel_count > u8::MAX as usize {
        return Err(Error::invalid("streams", "channel 255 cannot be stored"));
    }
    let duration = streams.iter().map(|s| s.duration_ps()).max().unwrap_or(0);
    let total: usize = streams.iter().map(|s| s.len()).sum();

    let truth_json = truth.map(serde_json::to_vec).transpose()?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 + truth_json.as_ref().map_or(0, Vec::len) + total * RECORD_LEN);
    out.extend_from_slice(&TAG_MAGIC);
    out.extend_from_slice(&TAG_VERSION.to_le_bytes());
    out.push(channel_count as u8);
    out.push(if truth_json.is_some() { FLAG_TRUTH } else { 0 });
    out.extend_from_slice(&duration.to_le_bytes());
    if let Some(json) = &truth_json {
        let len = u32::try_from(json.len()).map_err(|_| Error::invalid("truth", "record too large"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(json);
    }

    let mut records: Vec<(u64, u8)> = Vec::with_capacity(total);
    for s in streams {
        records.extend(s.timestamps().iter().map(|&t| (t, s.channel())));
    }
    records.sort_unstable();
    for (t, ch) in records {
        out.extend_from_slice(&t.to_le_bytes());
        out.push(ch);
    }
    Ok(out)
}

pub fn write_tags(streams: &[TimeTagStream], path: impl AsRef<Path>, truth: Option<&TruthRecord>) -> Result<()> {
    let bytes = encode_tags(streams, truth)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// One stream per channel `0..channel_count`, each carrying the truth block
/// if present.
pub fn decode_tags(bytes: &[u8]) -> Result<Vec<TimeTagStream>> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != TAG_MAGIC {
            return Err(Error::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(Error::TruncatedRecord(format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len())));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != TAG_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TAG_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let channel_count = bytes[6] as usize;
    let flags = bytes[7];
    let duration = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let mut pos = HEADER_LEN;
    let truth = if flags & FLAG_TRUTH != 0 {
        let len_bytes = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| Error::TruncatedRecord("truth length missing".into()))?;
        let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        pos += 4;
        let json = bytes
            .get(pos..pos + len)
            .ok_or_else(|| Error::TruncatedRecord(format!("truth block of {len} bytes cut short")))?;
        pos += len;
        Some(serde_json::from_slice::<TruthRecord>(json)?)
    } else {
        None
    };

    let body = &bytes[pos..];
    if body.len() % RECORD_LEN != 0 {
        return Err(Error::TruncatedRecord(format!(
            "{} trailing bytes after {} whole records",
            body.len() % RECORD_LEN,
            body.len() / RECORD_LEN
        )));
    }
    let mut per_channel: Vec<Vec<u64>> = vec![Vec::new(); channel_count];
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let t = u64::from_le_bytes(rec[..8].try_into().unwrap());
        let ch = rec[8];
        let list = per_channel
            .get_mut(ch as usize)
            .ok_or_else(|| Error::Format(format!("record {i} has channel {ch}, file declares {channel_count}")))?;
        if list.last().is_some_and(|&prev| prev > t) {
            return Err(Error::UnsortedChannel { channel: ch, record: i });
        }
        if t > duration {
            return Err(Error::Format(format!("record {i} at {t} ps lies beyond duration {duration} ps")));
        }
        list.push(t);
    }
    Ok(per_channel
        .into_iter()
        .enumerate()
        .map(|(ch, ts)| {
            let s = TimeTagStream::from_sorted_unchecked(ch as u8, ts, duration);
            match truth {
                Some(t) => s.with_truth(t),
                None => s,
            }
        })
        .collect())
}

fn decode_tags_csv(bytes: &[u8]) -> Result<Vec<TimeTagStream>> {
    let mut reader = csv::Reader::from_reader(bytes);
    let mut per_channel: Vec<Vec<u64>> = Vec::new();
    for (i, row) in reader.deserialize::<(u64, u8)>().enumerate() {
        let (t, ch) = row?;
        if per_channel.len() <= ch as usize {
            per_channel.resize(ch as usize + 1, Vec::new());
        }
        let list = &mut per_channel[ch as usize];
        if list.last().is_some_and(|&prev| prev > t) {
            return Err(Error::UnsortedChannel { channel: ch, record: i });
        }
        list.push(t);
    }
    let duration = per_channel.iter().filter_map(|l| l.last()).copied().max().unwrap_or(0);
    Ok(per_channel
        .into_iter()
        .enumerate()
        .map(|(ch, ts)| TimeTagStream::from_sorted_unchecked(ch as u8, ts, duration))
        .collect())
}

/// Read a binary or CSV tag file.
pub fn read_tags(path: impl AsRef<Path>) -> Result<Vec<TimeTagStream>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(CSV_HEADER.as_bytes()) {
        decode_tags_csv(&bytes)
    } else {
        decode_tags(&bytes)
    }
}

/// CSV with columns `tau_ps,counts,g2`; `g2` is empty before normalisation.
pub fn write_histogram_csv(hist: &CorrelationHistogram, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tau_ps", "counts", "g2"])?;
    for (i, &c) in hist.counts.iter().enumerate() {
        let g = hist.g2.as_ref().map(|g| g[i].to_string()).unwrap_or_default();
        w.write_record([(hist.tau(i) * PS_PER_S).to_string(), c.to_string(), g])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_histogram_csv(path: impl AsRef<Path>) -> Result<CorrelationHistogram> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut taus = Vec::new();
    let mut counts = Vec::new();
    let mut g2 = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).ok_or_else(|| Error::Format(format!("histogram row {row:?} too short")));
        taus.push(parse::<f64>(field(0)?)?);
        counts.push(parse::<u64>(field(1)?)?);
        let g = field(2).unwrap_or("");
        g2.push(if g.is_empty() { None } else { Some(parse::<f64>(g)?) });
    }
    if taus.len() < 2 {
        return Err(Error::Format("histogram needs at least two bins".into()));
    }
    let width = (taus[taus.len() - 1] - taus[0]) / (taus.len() - 1) as f64;
    if !(width > 0.0) {
        return Err(Error::Format("bin centres must increase".into()));
    }
    let g2 = if g2.iter().all(Option::is_some) {
        Some(g2.into_iter().map(Option::unwrap).collect())
    } else if g2.iter().all(Option::is_none) {
        None
    } else {
        return Err(Error::Format("g2 column partly empty".into()));
    };
    Ok(CorrelationHistogram {
        bin_width: width / PS_PER_S,
        tau_min: taus[0] / PS_PER_S,
        counts,
        singles: None,
        g2,
    })
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Format(format!("cannot parse `{s}`")))
}

/// Rate calibration data, columns `P_mW,R_meas,sigma` (rates in s^-1).
pub fn read_rate_csv(path: impl AsRef<Path>) -> Result<Vec<RatePoint>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize::<(f64, f64, f64)>() {
        let (p_mw, rate, sigma) = row?;
        out.push(RatePoint {
            pump_power: mw_to_w(p_mw),
            measured_rate: rate,
            sigma,
        });
    }
    Ok(out)
}

pub fn write_rate_csv(points: &[RatePoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["P_mW", "R_meas", "sigma"])?;
    for p in points {
        w.serialize((p.pump_power * 1e3, p.measured_rate, p.sigma))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn streams() -> Vec<TimeTagStream> {
        vec![
            TimeTagStream::new(0, vec![1, 5, 5, 900], 1000).unwrap(),
            TimeTagStream::new(1, vec![0, 5, 999], 1000).unwrap(),
        ]
    }

    #[test]
    fn header_layout() {
        let b = encode_tags(&streams(), None).unwrap();
        assert_eq!(&b[..4], b"SQZT");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(b[6], 2);
        assert_eq!(b[7], 0);
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 1000);
        assert_eq!(b.len(), 16 + 7 * 9);
        // first record is (0, ch 1)
        assert_eq!(&b[16..25], &[0, 0, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn round_trip() {
        let b = encode_tags(&streams(), None).unwrap();
        let back = decode_tags(&b).unwrap();
        assert_eq!(back, streams());
        assert_eq!(encode_tags(&back, None).unwrap(), b);
    }

    #[test]
    fn bad_files() {
        let mut b = encode_tags(&streams(), None).unwrap();
        b.push(0);
        assert!(matches!(decode_tags(&b), Err(Error::TruncatedRecord(_))));
        b.pop();
        b[4] = 2;
        assert!(matches!(decode_tags(&b), Err(Error::UnsupportedVersion(2))));
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_tags(&b), Err(Error::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn unsorted_channel_detected() {
        let mut b = encode_tags(&streams(), None).unwrap();
        // swap timestamps of the first two records of channel 0 region
        let rec = |i: usize| 16 + i * 9;
        let last = rec(6);
        b[last..last + 8].copy_from_slice(&2u64.to_le_bytes());
        b[last + 8] = 0;
        assert!(matches!(decode_tags(&b), Err(Error::UnsortedChannel { channel: 0, record: 6 })));
    }
}
