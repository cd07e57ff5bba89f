//! Minimal RIFF/WAVE reader and writer.
//!
//! Supports mono PCM16 and IEEE float32. Multi-channel files are downmixed to
//! mono by averaging. Unknown chunks are skipped, so files with LIST/fact
//! metadata load fine.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavSampleFormat {
    Pcm16,
    Float32,
}

#[derive(Debug, Clone)]
pub struct WavData {
    /// Mono samples, nominally in [-1, 1].
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub format: WavSampleFormat,
    /// Channel count of the source file before downmix.
    pub source_channels: u16,
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::WavFormat(format!("truncated file while reading {what}")))
}

fn u16le(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn u32le(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn read_wav(path: &Path) -> Result<WavData> {
    let mut r = BufReader::new(File::open(path)?);
    let mut hdr = [0u8; 12];
    read_exact_or(&mut r, &mut hdr, "RIFF header")?;
    if &hdr[0..4] != b"RIFF" || &hdr[8..12] != b"WAVE" {
        return Err(Error::WavFormat("not a RIFF/WAVE file".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format_tag, channels, rate, bits)
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut chunk_hdr = [0u8; 8];
        match r.read_exact(&mut chunk_hdr) {
            Ok(()) => {}
            Err(_) => break, // end of file
        }
        let id = &chunk_hdr[0..4];
        let size = u32le(&chunk_hdr[4..8]) as usize;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::WavFormat(format!("fmt chunk too small: {size} bytes")));
                }
                let mut body = vec![0u8; size];
                read_exact_or(&mut r, &mut body, "fmt chunk")?;
                let mut tag = u16le(&body[0..2]);
                let channels = u16le(&body[2..4]);
                let rate = u32le(&body[4..8]);
                let bits = u16le(&body[14..16]);
                // WAVE_FORMAT_EXTENSIBLE wraps the real tag in a GUID.
                if tag == 0xFFFE && size >= 40 {
                    tag = u16le(&body[24..26]);
                }
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let mut body = vec![0u8; size];
                read_exact_or(&mut r, &mut body, "data chunk")?;
                data = Some(body);
            }
            _ => {
                // Skip unknown chunk (chunks are word-aligned).
                let skip = size + (size & 1);
                let mut sink = vec![0u8; skip];
                read_exact_or(&mut r, &mut sink, "chunk body")?;
                continue;
            }
        }
        if size & 1 == 1 {
            let mut pad = [0u8; 1];
            let _ = r.read_exact(&mut pad);
        }
    }

    let (tag, channels, rate, bits) =
        fmt.ok_or_else(|| Error::WavFormat("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::WavFormat("missing data chunk".into()))?;
    if channels == 0 {
        return Err(Error::WavFormat("zero channels".into()));
    }

    let (format, bytes_per_sample) = match (tag, bits) {
        (1, 16) => (WavSampleFormat::Pcm16, 2),
        (3, 32) => (WavSampleFormat::Float32, 4),
        _ => {
            return Err(Error::WavFormat(format!(
                "unsupported encoding: format tag {tag}, {bits} bits (want PCM16 or float32)"
            )))
        }
    };

    let frame_bytes = bytes_per_sample * channels as usize;
    let n_frames = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let mut acc = 0.0;
        for c in 0..channels as usize {
            let off = f * frame_bytes + c * bytes_per_sample;
            acc += match format {
                WavSampleFormat::Pcm16 => {
                    i16::from_le_bytes([data[off], data[off + 1]]) as f64 / 32768.0
                }
                WavSampleFormat::Float32 => f32::from_le_bytes([
                    data[off],
                    data[off + 1],
                    data[off + 2],
                    data[off + 3],
                ]) as f64,
            };
        }
        samples.push(acc / channels as f64);
    }

    Ok(WavData {
        samples,
        sample_rate: rate,
        format,
        source_channels: channels,
    })
}

pub fn write_wav(
    path: &Path,
    samples: &[f64],
    sample_rate: u32,
    format: WavSampleFormat,
) -> Result<()> {
    let (tag, bits): (u16, u16) = match format {
        WavSampleFormat::Pcm16 => (1, 16),
        WavSampleFormat::Float32 => (3, 32),
    };
    let bytes_per_sample = bits as u32 / 8;
    let data_len = samples.len() as u32 * bytes_per_sample;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&tag.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&(sample_rate * bytes_per_sample).to_le_bytes())?;
    w.write_all(&(bytes_per_sample as u16).to_le_bytes())?;
    w.write_all(&bits.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    match format {
        WavSampleFormat::Pcm16 => {
            for &s in samples {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                w.write_all(&q.to_le_bytes())?;
            }
        }
        WavSampleFormat::Float32 => {
            for &s in samples {
                w.write_all(&(s as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
