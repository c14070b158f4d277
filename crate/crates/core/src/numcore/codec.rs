//! Little-endian binary encoding shared by every on-disk format.
//!
//! Parameter file layout (`MSRD-MLP`, version 1):
//!
//! ```text
//! magic        8 bytes   "MSRD-MLP"
//! version      u32
//! n_layers     u32
//! per layer    u32 in_dim, u32 out_dim, u8 activation (0 = tanh, 1 = identity)
//! per layer    f64[out_dim * in_dim] weights (row-major), f64[out_dim] bias
//! ```
//!
//! Composite formats embed the same network block without the magic/version
//! prefix (see [`write_mlp_body`]).

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{Activation, AdamConfig, AdamState, AdamVec, Dense, MlpParams, Rng};
use crate::{Error, Result};

pub const MLP_MAGIC: &[u8; 8] = b"MSRD-MLP";
pub const MLP_VERSION: u32 = 1;

const MAX_DIM: u32 = 1 << 20;

pub fn write_magic<W: Write>(w: &mut W, magic: &[u8; 8], version: u32) -> Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LE>(version)?;
    Ok(())
}

/// Reads and checks a magic string and version.
pub fn read_magic<R: Read>(r: &mut R, magic: &[u8; 8], version: u32) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(eof_as_format)?;
    if &buf != magic {
        return Err(Error::Format(format!(
            "bad magic header: expected {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&buf)
        )));
    }
    let v = r.read_u32::<LE>().map_err(eof_as_format)?;
    if v != version {
        return Err(Error::Format(format!(
            "unsupported format version {v} (expected {version})"
        )));
    }
    Ok(())
}

pub fn eof_as_format(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file truncated".into())
    } else {
        Error::Io(e)
    }
}

pub fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for &x in xs {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

pub fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LE>(&mut out).map_err(eof_as_format)?;
    Ok(out)
}

pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(Error::Format(format!("string length {n} is implausible")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(eof_as_format)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("invalid utf-8: {e}")))
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    r.read_u32::<LE>().map_err(eof_as_format)
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    r.read_u64::<LE>().map_err(eof_as_format)
}

pub fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    r.read_f64::<LE>().map_err(eof_as_format)
}

pub fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    r.read_u8().map_err(eof_as_format)
}

pub fn write_mlp_body<W: Write>(w: &mut W, p: &MlpParams) -> Result<()> {
    w.write_u32::<LE>(p.layers.len() as u32)?;
    for l in &p.layers {
        w.write_u32::<LE>(l.in_dim as u32)?;
        w.write_u32::<LE>(l.out_dim as u32)?;
        w.write_u8(l.activation.tag())?;
    }
    for l in &p.layers {
        write_f64s(w, &l.weight)?;
        write_f64s(w, &l.bias)?;
    }
    Ok(())
}

pub fn read_mlp_body<R: Read>(r: &mut R) -> Result<MlpParams> {
    let n = read_u32(r)?;
    if n == 0 || n > 64 {
        return Err(Error::Format(format!("implausible layer count {n}")));
    }
    let mut shapes = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let i = read_u32(r)?;
        let o = read_u32(r)?;
        if i == 0 || o == 0 || i > MAX_DIM || o > MAX_DIM {
            return Err(Error::Format(format!("implausible layer shape {o}x{i}")));
        }
        let tag = read_u8(r)?;
        let act = Activation::from_tag(tag)
            .ok_or_else(|| Error::Format(format!("unknown activation tag {tag}")))?;
        shapes.push((i as usize, o as usize, act));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (in_dim, out_dim, activation) in shapes {
        let weight = read_f64s(r, in_dim * out_dim)?;
        let bias = read_f64s(r, out_dim)?;
        layers.push(Dense {
            in_dim,
            out_dim,
            weight,
            bias,
            activation,
        });
    }
    MlpParams::from_layers(layers).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_mlp<W: Write>(w: &mut W, p: &MlpParams) -> Result<()> {
    write_magic(w, MLP_MAGIC, MLP_VERSION)?;
    write_mlp_body(w, p)
}

pub fn read_mlp<R: Read>(r: &mut R) -> Result<MlpParams> {
    read_magic(r, MLP_MAGIC, MLP_VERSION)?;
    read_mlp_body(r)
}

pub fn save_mlp(path: &Path, p: &MlpParams) -> Result<()> {
    let mut buf = Vec::new();
    write_mlp(&mut buf, p)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<MlpParams> {
    let bytes = std::fs::read(path)?;
    read_mlp(&mut bytes.as_slice())
}

pub fn write_adam_config<W: Write>(w: &mut W, c: &AdamConfig) -> Result<()> {
    write_f64s(w, &[c.lr, c.beta1, c.beta2, c.eps])
}

pub fn read_adam_config<R: Read>(r: &mut R) -> Result<AdamConfig> {
    let v = read_f64s(r, 4)?;
    Ok(AdamConfig {
        lr: v[0],
        beta1: v[1],
        beta2: v[2],
        eps: v[3],
    })
}

pub fn write_adam<W: Write>(w: &mut W, s: &AdamState) -> Result<()> {
    write_adam_config(w, &s.config)?;
    w.write_u64::<LE>(s.step)?;
    write_mlp_body(w, &s.m)?;
    write_mlp_body(w, &s.v)
}

pub fn read_adam<R: Read>(r: &mut R) -> Result<AdamState> {
    let config = read_adam_config(r)?;
    let step = read_u64(r)?;
    let m = read_mlp_body(r)?;
    let v = read_mlp_body(r)?;
    if !m.same_shape(&v) {
        return Err(Error::Format("adam moment shapes differ".into()));
    }
    Ok(AdamState { config, m, v, step })
}

pub fn write_adam_vec<W: Write>(w: &mut W, s: &AdamVec) -> Result<()> {
    write_adam_config(w, &s.config)?;
    w.write_u64::<LE>(s.step)?;
    w.write_u32::<LE>(s.m.len() as u32)?;
    write_f64s(w, &s.m)?;
    write_f64s(w, &s.v)
}

pub fn read_adam_vec<R: Read>(r: &mut R) -> Result<AdamVec> {
    let config = read_adam_config(r)?;
    let step = read_u64(r)?;
    let n = read_u32(r)? as usize;
    if n > MAX_DIM as usize {
        return Err(Error::Format("implausible vector length".into()));
    }
    let m = read_f64s(r, n)?;
    let v = read_f64s(r, n)?;
    Ok(AdamVec { config, m, v, step })
}

/// Generator state: 32-byte seed, stream id, 128-bit word position.
pub fn write_rng<W: Write>(w: &mut W, rng: &Rng) -> Result<()> {
    w.write_all(&rng.get_seed())?;
    w.write_u64::<LE>(rng.get_stream())?;
    w.write_u128::<LE>(rng.get_word_pos())?;
    Ok(())
}

pub fn read_rng<R: Read>(r: &mut R) -> Result<Rng> {
    use rand::SeedableRng;
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed).map_err(eof_as_format)?;
    let stream = read_u64(r)?;
    let pos = r.read_u128::<LE>().map_err(eof_as_format)?;
    let mut rng = Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(pos);
    Ok(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{rng_from_seed, OutputInit};
    use rand::Rng as _;

    #[test]
    fn mlp_roundtrip_is_bitwise() {
        let mut rng = rng_from_seed(5);
        let p = MlpParams::new(&[3, 32, 32, 1], OutputInit::Scaled(0.01), &mut rng).unwrap();
        let mut a = Vec::new();
        write_mlp(&mut a, &p).unwrap();
        let q = read_mlp(&mut a.as_slice()).unwrap();
        assert_eq!(p, q);
        let mut b = Vec::new();
        write_mlp(&mut b, &q).unwrap();
        assert_eq!(a, b);
        // header + 3 layer descriptors + all params
        assert_eq!(a.len(), 8 + 4 + 4 + 3 * 9 + 8 * p.num_params());
    }

    #[test]
    fn corrupted_magic_is_format_error() {
        let mut rng = rng_from_seed(5);
        let p = MlpParams::new(&[2, 1], OutputInit::Default, &mut rng).unwrap();
        let mut a = Vec::new();
        write_mlp(&mut a, &p).unwrap();
        a[0] = b'X';
        assert!(matches!(read_mlp(&mut a.as_slice()), Err(Error::Format(_))));
        let mut t = Vec::new();
        write_mlp(&mut t, &p).unwrap();
        t.truncate(t.len() - 3);
        assert!(matches!(read_mlp(&mut t.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = rng_from_seed(77);
        for _ in 0..13 {
            rng.random::<f64>();
        }
        let mut buf = Vec::new();
        write_rng(&mut buf, &rng).unwrap();
        let mut restored = read_rng(&mut buf.as_slice()).unwrap();
        for _ in 0..50 {
            assert_eq!(rng.random::<u64>(), restored.random::<u64>());
        }
    }
}
