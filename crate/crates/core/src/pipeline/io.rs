//! Native slice (`.mcs`) and label (`.mlb`) files.
//!
//! Both share a text header of `key value...` lines ending in `end`, followed by
//! a binary payload:
//!
//! ```text
//! CORDSEG-MCS 1            (or CORDSEG-LBL 1)
//! height 96
//! width 96
//! channels 8               (slices only)
//! spacing_mm 0.25 0.25
//! subject 3
//! scan 1
//! slice 2
//! rater 0                  (labels only, optional)
//! payload_sha256 <hex>
//! end
//! ```
//!
//! Slice payloads are little-endian `f32`, planar and channel-major
//! (`C×H×W`); label payloads are one `u8` per pixel, row-major.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::types::{LabelMap, MultiChannelSlice, SliceId};
use crate::error::{Error, Result};

pub const SLICE_MAGIC: &str = "CORDSEG-MCS";
pub const LABEL_MAGIC: &str = "CORDSEG-LBL";
pub const FORMAT_VERSION: u32 = 1;

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_header(magic: &str, fields: &[(&str, String)], payload: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic} {FORMAT_VERSION}\n");
    for (k, v) in fields {
        out.push_str(&format!("{k} {v}\n"));
    }
    out.push_str(&format!("payload_sha256 {}\nend\n", sha_hex(payload)));
    let mut bytes = out.into_bytes();
    bytes.extend_from_slice(payload);
    bytes
}

struct Header {
    fields: BTreeMap<String, String>,
    payload_start: usize,
}

fn parse_header(bytes: &[u8], magic: &str, path: &Path) -> Result<Header> {
    let fmt = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fmt("header is not terminated by 'end'".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| fmt("header is not valid UTF-8".into()))?;
        pos += end + 1;
        if line == "end" {
            break;
        }
        lines.push(line.to_string());
        if lines.len() > 64 {
            return Err(fmt("header too long".into()));
        }
    }
    let first = lines.first().ok_or_else(|| fmt("empty header".into()))?;
    let mut it = first.split_whitespace();
    if it.next() != Some(magic) {
        return Err(fmt(format!("expected magic '{magic}', found '{first}'")));
    }
    let version: u32 = it
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| fmt("missing format version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let mut fields = BTreeMap::new();
    for line in &lines[1..] {
        let (k, v) = line
            .split_once(' ')
            .ok_or_else(|| fmt(format!("malformed header line '{line}'")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    Ok(Header {
        fields,
        payload_start: pos,
    })
}

impl Header {
    fn get<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        self.fields
            .get(key)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                reason: format!("missing or invalid '{key}'"),
            })
    }

    fn spacing(&self, path: &Path) -> Result<(f64, f64)> {
        let raw: String = self.get("spacing_mm", path)?;
        let parts: Vec<f64> = raw.split_whitespace().filter_map(|p| p.parse().ok()).collect();
        match parts[..] {
            [r, c] if r > 0.0 && c > 0.0 => Ok((r, c)),
            _ => Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("invalid spacing_mm '{raw}'"),
            }),
        }
    }

    fn id(&self, path: &Path) -> Result<SliceId> {
        Ok(SliceId {
            subject: self.get("subject", path)?,
            scan: self.get("scan", path)?,
            slice: self.get("slice", path)?,
        })
    }

    fn payload<'a>(&self, bytes: &'a [u8], expected: usize, path: &Path) -> Result<&'a [u8]> {
        let payload = &bytes[self.payload_start..];
        if payload.len() != expected {
            return Err(Error::PayloadSize {
                path: path.to_path_buf(),
                expected,
                actual: payload.len(),
            });
        }
        let want: String = self.get("payload_sha256", path)?;
        let got = sha_hex(payload);
        if want != got {
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                expected: want,
                actual: got,
            });
        }
        Ok(payload)
    }
}

fn common_fields(h: usize, w: usize, spacing: (f64, f64), id: SliceId) -> Vec<(&'static str, String)> {
    vec![
        ("height", h.to_string()),
        ("width", w.to_string()),
        ("spacing_mm", format!("{} {}", spacing.0, spacing.1)),
        ("subject", id.subject.to_string()),
        ("scan", id.scan.to_string()),
        ("slice", id.slice.to_string()),
    ]
}

pub fn encode_slice(s: &MultiChannelSlice) -> Vec<u8> {
    let mut payload = Vec::with_capacity(s.pixels.len() * 4);
    for c in 0..s.channels {
        for i in 0..s.height * s.width {
            payload.extend_from_slice(&(s.pixels[i * s.channels + c] as f32).to_le_bytes());
        }
    }
    let mut fields = common_fields(s.height, s.width, s.spacing_mm, s.id);
    fields.insert(2, ("channels", s.channels.to_string()));
    write_header(SLICE_MAGIC, &fields, &payload)
}

pub fn decode_slice(bytes: &[u8], path: &Path) -> Result<MultiChannelSlice> {
    let header = parse_header(bytes, SLICE_MAGIC, path)?;
    let h: usize = header.get("height", path)?;
    let w: usize = header.get("width", path)?;
    let c: usize = header.get("channels", path)?;
    let spacing = header.spacing(path)?;
    let id = header.id(path)?;
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: "extent overflow".into(),
        })?;
    let payload = header.payload(bytes, n * 4, path)?;
    let mut pixels = vec![0.0; n];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        let (ch, i) = (k / (h * w), k % (h * w));
        pixels[i * c + ch] = v as f64;
    }
    MultiChannelSlice::new(h, w, c, pixels, spacing, id)
}

pub fn encode_labels(l: &LabelMap) -> Vec<u8> {
    let mut fields = common_fields(l.height, l.width, l.spacing_mm, l.id);
    if let Some(r) = l.rater {
        fields.push(("rater", r.to_string()));
    }
    write_header(LABEL_MAGIC, &fields, &l.labels)
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<LabelMap> {
    let header = parse_header(bytes, LABEL_MAGIC, path)?;
    let h: usize = header.get("height", path)?;
    let w: usize = header.get("width", path)?;
    let spacing = header.spacing(path)?;
    let id = header.id(path)?;
    let rater = match header.fields.get("rater") {
        Some(_) => Some(header.get("rater", path)?),
        None => None,
    };
    let payload = header.payload(bytes, h * w, path)?;
    let mut map = LabelMap::new(h, w, payload.to_vec(), spacing)?;
    map.id = id;
    map.rater = rater;
    Ok(map)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_slice(path: impl AsRef<Path>) -> Result<MultiChannelSlice> {
    let path = path.as_ref();
    decode_slice(&read(path)?, path)
}

/// Writes `slice`; pixel values are stored as `f32`.
pub fn save_slice(path: impl AsRef<Path>, slice: &MultiChannelSlice) -> Result<()> {
    write(path.as_ref(), &encode_slice(slice))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    decode_labels(&read(path)?, path)
}

pub fn save_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write(path.as_ref(), &encode_labels(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MultiChannelSlice {
        let pixels = (0..4 * 3 * 2).map(|i| (i as f32 * 0.37 - 2.0) as f64).collect();
        MultiChannelSlice::new(4, 3, 2, pixels, (0.25, 0.5), SliceId::new(3, 1, 2)).unwrap()
    }

    #[test]
    fn slice_round_trip() {
        let s = sample();
        let bytes = encode_slice(&s);
        let back = decode_slice(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode_slice(&back), bytes);
    }

    #[test]
    fn truncated_payload_names_sizes() {
        let mut bytes = encode_slice(&sample());
        bytes.truncate(bytes.len() - 5);
        match decode_slice(&bytes, Path::new("x")) {
            Err(Error::PayloadSize {
                expected, actual, ..
            }) => {
                assert_eq!(expected, 96);
                assert_eq!(actual, 91);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupted_payload_fails_integrity() {
        let mut bytes = encode_slice(&sample());
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        assert!(matches!(
            decode_slice(&bytes, Path::new("x")),
            Err(Error::Integrity { .. })
        ));
    }

    #[test]
    fn unknown_version_rejected() {
        let bytes = encode_slice(&sample());
        let text = String::from_utf8_lossy(&bytes).replacen("CORDSEG-MCS 1", "CORDSEG-MCS 7", 1);
        let mut raw = text.into_bytes();
        raw.truncate(bytes.len());
        assert!(matches!(
            decode_slice(&raw, Path::new("x")),
            Err(Error::UnsupportedVersion { version: 7, .. })
        ));
        assert!(matches!(
            decode_slice(b"garbage", Path::new("x")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn label_round_trip_keeps_rater() {
        let mut l = LabelMap::new(2, 3, vec![0, 1, 2, 2, 1, 0], (0.1, 0.2)).unwrap();
        l.id = SliceId::new(1, 2, 3);
        l.rater = Some(2);
        let back = decode_labels(&encode_labels(&l), Path::new("x")).unwrap();
        assert_eq!(back, l);
    }
}
