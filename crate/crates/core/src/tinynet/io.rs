//! `TNET` weight files.
//!
//! ```text
//! TNET 1
//! meta stem=16 blocks=1,1,1,1 channels=16,32,48,64 head_channels=64,32 head=classification bins=50 d_min=0.7 d_max=10 space=log
//! params <count>
//! <name> <d0>,<d1>,...
//! <len × f64 little-endian>
//! ...
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{Head, HeadKind, Network, NetworkSpec};
use crate::depth::{BinSpace, DepthBinning};
use crate::error::{Error, Result};
use crate::format::{read_bytes, write_bytes};

const VERSION: u32 = 1;

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn encode_tnet(net: &Network) -> Vec<u8> {
    let spec = net.spec();
    let mut meta = format!(
        "meta stem={} blocks={} channels={} head_channels={} head={}",
        spec.stem_channels,
        join(&spec.blocks),
        join(&spec.channels),
        join(&spec.head_channels),
        net.head().kind(),
    );
    match net.head() {
        Head::Classification(b) => meta.push_str(&format!(
            " bins={} d_min={} d_max={} space={}",
            b.bins(),
            b.d_min(),
            b.d_max(),
            b.space()
        )),
        Head::Regression { d_min, d_max } => {
            meta.push_str(&format!(" d_min={d_min} d_max={d_max}"))
        }
    }
    let params = net.params();
    let mut out = format!("TNET {VERSION}\n{meta}\nparams {}\n", params.len()).into_bytes();
    for p in params {
        out.extend_from_slice(format!("{} {}\n", p.name, join(&p.shape)).as_bytes());
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads lines and raw blocks while tracking the byte offset.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| {
            Error::parse(
                self.bytes.len(),
                "unexpected end of file, expected a header line",
            )
        })?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::parse(self.pos, "header line is not utf-8"))?;
        self.pos += end + 1;
        Ok(line)
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let need = count * 8;
        if self.bytes.len() - self.pos < need {
            return Err(Error::parse(
                self.bytes.len(),
                format!(
                    "truncated parameter block: need {need} bytes, found {}",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = self.bytes[self.pos..self.pos + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        self.pos += need;
        Ok(out)
    }
}

fn parse_list<const N: usize>(s: &str, key: &str, offset: usize) -> Result<[usize; N]> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(offset, format!("{key}: '{s}' is not a list of integers")))?;
    v.try_into()
        .map_err(|_| Error::parse(offset, format!("{key}: expected {N} entries, got '{s}'")))
}

pub fn decode_tnet(bytes: &[u8]) -> Result<Network> {
    let mut cur = Cursor { bytes, pos: 0 };
    let first = cur.line()?;
    match first.split_once(' ') {
        Some(("TNET", v)) if v.trim() == VERSION.to_string() => {}
        Some(("TNET", v)) => {
            return Err(Error::parse(5, format!("unsupported TNET version '{v}'")))
        }
        _ => return Err(Error::parse(0, "expected magic 'TNET'")),
    }

    let meta_at = cur.pos;
    let meta = cur.line()?;
    let mut fields = BTreeMap::new();
    let mut tokens = meta.split_ascii_whitespace();
    if tokens.next() != Some("meta") {
        return Err(Error::parse(meta_at, "expected 'meta' line"));
    }
    for t in tokens {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| Error::parse(meta_at, format!("meta field '{t}' is not key=value")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::parse(meta_at, format!("meta is missing '{k}'")))
    };
    let num = |k: &str| -> Result<f64> {
        let v = get(k)?;
        v.parse()
            .map_err(|_| Error::parse(meta_at, format!("{k}: '{v}' is not a number")))
    };
    let spec = NetworkSpec {
        stem_channels: get("stem")?
            .parse()
            .map_err(|_| Error::parse(meta_at, "stem is not an integer"))?,
        blocks: parse_list(get("blocks")?, "blocks", meta_at)?,
        channels: parse_list(get("channels")?, "channels", meta_at)?,
        head_channels: parse_list(get("head_channels")?, "head_channels", meta_at)?,
    };
    let kind: HeadKind = get("head")?
        .parse()
        .map_err(|e: Error| Error::parse(meta_at, e.to_string()))?;
    let (d_min, d_max) = (num("d_min")?, num("d_max")?);
    let head = match kind {
        HeadKind::Classification => {
            let bins = get("bins")?
                .parse()
                .map_err(|_| Error::parse(meta_at, "bins is not an integer"))?;
            let space: BinSpace = get("space")?
                .parse()
                .map_err(|e: Error| Error::parse(meta_at, e.to_string()))?;
            Head::Classification(
                DepthBinning::new(bins, d_min, d_max, space)
                    .map_err(|e| Error::parse(meta_at, e.to_string()))?,
            )
        }
        HeadKind::Regression => Head::Regression { d_min, d_max },
    };
    let mut net = Network::new(spec, head, 0).map_err(|e| Error::parse(meta_at, e.to_string()))?;

    let count_at = cur.pos;
    let count_line = cur.line()?;
    let count: usize = count_line
        .strip_prefix("params ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| Error::parse(count_at, "expected 'params <count>'"))?;
    let mut params = net.params_mut();
    if count != params.len() {
        return Err(Error::parse(
            count_at,
            format!(
                "file has {count} parameter arrays, the described network has {}",
                params.len()
            ),
        ));
    }
    for p in params.iter_mut() {
        let at = cur.pos;
        let line = cur.line()?;
        let (name, shape) = line
            .split_once(' ')
            .ok_or_else(|| Error::parse(at, "expected '<name> <shape>'"))?;
        let shape: Vec<usize> = shape
            .split(',')
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(at, format!("bad shape '{shape}'")))?;
        if name != p.name || shape != p.shape {
            return Err(Error::parse(
                at,
                format!(
                    "expected parameter {} {:?}, found {name} {shape:?}",
                    p.name, p.shape
                ),
            ));
        }
        p.value = cur.f64s(p.len())?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse(
            cur.pos,
            format!("{} trailing bytes", bytes.len() - cur.pos),
        ));
    }
    Ok(net)
}

pub fn write_tnet(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    write_bytes(path, &encode_tnet(net))
}

pub fn read_tnet(path: impl AsRef<Path>) -> Result<Network> {
    decode_tnet(&read_bytes(path)?)
}
