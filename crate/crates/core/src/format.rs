//! Binary file formats.
//!
//! * `DMAP`: `DMAP <width> <height>\n` then `width*height` little-endian `f32`
//!   depths, row-major; `NaN` marks an invalid pixel.
//! * `SVOL`: `SVOL <width> <height> <bins> <kind>\n` then `width*height*bins`
//!   little-endian `f32`, pixel-major then bin. `kind` is `logits` or
//!   `probabilities`.
//! * `PPM`: binary netpbm `P6` with maxval 255.
//! * manifest: one `rgb_path depth_path` pair per line; relative paths resolve
//!   against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::depth::{DepthMap, ScoreKind, ScoreVolume};
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Sum-to-one tolerance when loading `f32` probability volumes.
pub const STORED_PROB_SUM_TOL: f64 = 1e-5;

/// Splits `bytes` at the first newline, returning the header tokens and the
/// payload offset.
fn header_line<'a>(bytes: &'a [u8], magic: &str) -> Result<(Vec<&'a str>, usize)> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(bytes.len(), format!("missing {magic} header line")))?;
    let line = std::str::from_utf8(&bytes[..end])
        .map_err(|e| Error::parse(e.valid_up_to(), "header is not utf-8"))?;
    let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
    if tokens.first() != Some(&magic) {
        return Err(Error::parse(0, format!("expected magic '{magic}'")));
    }
    Ok((tokens, end + 1))
}

fn parse_dim(token: Option<&&str>, what: &str, offset: usize) -> Result<usize> {
    let t = token.ok_or_else(|| Error::parse(offset, format!("missing {what}")))?;
    t.parse()
        .map_err(|_| Error::parse(offset, format!("{what} '{t}' is not a nonnegative integer")))
}

fn read_f32s(bytes: &[u8], offset: usize, count: usize) -> Result<Vec<f32>> {
    let need = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(offset))
        .ok_or_else(|| Error::parse(offset, "payload size overflows"))?;
    if bytes.len() < need {
        return Err(Error::parse(
            bytes.len(),
            format!(
                "truncated payload: expected {} bytes after header, found {}",
                need - offset,
                bytes.len() - offset
            ),
        ));
    }
    if bytes.len() > need {
        return Err(Error::parse(
            need,
            format!("{} trailing bytes after payload", bytes.len() - need),
        ));
    }
    Ok(bytes[offset..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn push_f32s(out: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_dmap(map: &DepthMap) -> Vec<u8> {
    let mut out = format!("DMAP {} {}\n", map.width(), map.height()).into_bytes();
    out.reserve(map.len() * 4);
    push_f32s(
        &mut out,
        map.values()
            .iter()
            .zip(map.valid())
            .map(|(&v, &ok)| if ok { v } else { f64::NAN }),
    );
    out
}

pub fn decode_dmap(bytes: &[u8]) -> Result<DepthMap> {
    let (tokens, offset) = header_line(bytes, "DMAP")?;
    if tokens.len() != 3 {
        return Err(Error::parse(0, "DMAP header needs width and height"));
    }
    let width = parse_dim(tokens.get(1), "width", 0)?;
    let height = parse_dim(tokens.get(2), "height", 0)?;
    let raw = read_f32s(bytes, offset, width * height)?;
    for (i, v) in raw.iter().enumerate() {
        if !v.is_nan() && (v.is_infinite() || *v <= 0.0) {
            return Err(Error::parse(
                offset + 4 * i,
                format!("depth {v} is neither NaN nor positive"),
            ));
        }
    }
    let valid: Vec<bool> = raw.iter().map(|v| !v.is_nan()).collect();
    DepthMap::new(
        width,
        height,
        raw.into_iter().map(f64::from).collect(),
        valid,
    )
}

pub fn encode_svol(scores: &ScoreVolume) -> Vec<u8> {
    let mut out = format!(
        "SVOL {} {} {} {}\n",
        scores.width(),
        scores.height(),
        scores.bins(),
        scores.kind().name()
    )
    .into_bytes();
    out.reserve(scores.data().len() * 4);
    push_f32s(&mut out, scores.data().iter().copied());
    out
}

pub fn decode_svol(bytes: &[u8]) -> Result<ScoreVolume> {
    let (tokens, offset) = header_line(bytes, "SVOL")?;
    if tokens.len() != 5 {
        return Err(Error::parse(
            0,
            "SVOL header needs width, height, bins and kind",
        ));
    }
    let width = parse_dim(tokens.get(1), "width", 0)?;
    let height = parse_dim(tokens.get(2), "height", 0)?;
    let bins = parse_dim(tokens.get(3), "bins", 0)?;
    let kind: ScoreKind = tokens[4]
        .parse()
        .map_err(|_| Error::parse(0, format!("unknown score kind '{}'", tokens[4])))?;
    let raw = read_f32s(bytes, offset, width * height * bins)?;
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::parse(offset + 4 * i, "non-finite score"));
    }
    let data = raw.into_iter().map(f64::from).collect();
    ScoreVolume::with_tolerance(width, height, bins, kind, data, STORED_PROB_SUM_TOL)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::parse(0, "expected magic 'P6'"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // Whitespace and '#' comments may precede each header field.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(
                pos,
                format!("expected header field {}", k + 1),
            ));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::parse(start, "header field out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::parse(pos, "expected whitespace after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::parse(pos, format!("unsupported maxval {maxval}")));
    }
    let need = pos + width * height * 3;
    if bytes.len() < need {
        return Err(Error::parse(bytes.len(), "truncated PPM payload"));
    }
    if bytes.len() > need {
        return Err(Error::parse(need, "trailing bytes after PPM payload"));
    }
    RgbImage::new(width, height, bytes[pos..need].to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn read_dmap(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_dmap(&read(path.as_ref())?)
}

pub fn write_dmap(path: impl AsRef<Path>, map: &DepthMap) -> Result<()> {
    write(path.as_ref(), &encode_dmap(map))
}

pub fn read_svol(path: impl AsRef<Path>) -> Result<ScoreVolume> {
    decode_svol(&read(path.as_ref())?)
}

pub fn write_svol(path: impl AsRef<Path>, scores: &ScoreVolume) -> Result<()> {
    write(path.as_ref(), &encode_svol(scores))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_ppm(&read(path.as_ref())?)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    write(path.as_ref(), &encode_ppm(img))
}

pub(crate) fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    write(path.as_ref(), bytes)
}

pub(crate) fn read_bytes(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    read(path.as_ref())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub rgb: PathBuf,
    pub depth: PathBuf,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = String::from_utf8(read(path)?)
        .map_err(|e| Error::parse(e.utf8_error().valid_up_to(), "manifest is not utf-8"))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            let parts: Vec<&str> = trimmed.split_ascii_whitespace().collect();
            if parts.len() != 2 {
                return Err(Error::parse(
                    offset,
                    "manifest line needs 'rgb_path depth_path'",
                ));
            }
            entries.push(ManifestEntry {
                rgb: base.join(parts[0]),
                depth: base.join(parts[1]),
            });
        }
        offset += line.len();
    }
    Ok(entries)
}

/// Writes entries relative to the manifest's directory when possible.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let text: String = entries
        .iter()
        .map(|e| format!("{} {}\n", rel(&e.rgb), rel(&e.depth)))
        .collect();
    write(path, text.as_bytes())
}
