//! "SEMRELAY1" parameter container.
//!
//! Layout (little endian): 9-byte magic, `u32` array count, then per array
//! `u32` name length, UTF-8 name, `u32` rank, `u64` dims, `f64` values.
//! The architecture travels as the array `meta.arch`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::codec::ArchConfig;
use crate::error::{Error, Result};
use crate::model::SystemModel;

pub const MAGIC: &[u8; 9] = b"SEMRELAY1";
const ARCH_KEY: &str = "meta.arch";

fn arch_values(a: &ArchConfig) -> Vec<f64> {
    vec![
        a.image_height as f64,
        a.image_width as f64,
        a.n_images as f64,
        a.gamma_p,
        a.latent_channels as f64,
        a.lt_widths[0] as f64,
        a.lt_widths[1] as f64,
        a.lt_widths[2] as f64,
        a.jscc_hidden as f64,
        a.hyper_channels as f64,
    ]
}

fn arch_from(v: &[f64]) -> Result<ArchConfig> {
    if v.len() != 10 {
        return Err(Error::Format(format!("{ARCH_KEY} has {} entries, expected 10", v.len())));
    }
    let u = |x: f64| -> Result<usize> {
        if x >= 0.0 && x.fract() == 0.0 && x < 1e12 {
            Ok(x as usize)
        } else {
            Err(Error::Format(format!("{ARCH_KEY} holds non-integer size {x}")))
        }
    };
    let arch = ArchConfig {
        image_height: u(v[0])?,
        image_width: u(v[1])?,
        n_images: u(v[2])?,
        gamma_p: v[3],
        latent_channels: u(v[4])?,
        lt_widths: [u(v[5])?, u(v[6])?, u(v[7])?],
        jscc_hidden: u(v[8])?,
        hyper_channels: u(v[9])?,
    };
    arch.validate().map_err(|e| Error::Format(format!("stored architecture is invalid: {e}")))?;
    Ok(arch)
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_array<W: Write>(w: &mut W, name: &str, dims: &[usize], values: &[f64]) -> Result<()> {
    put_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    put_u32(w, dims.len())?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_model<W: Write>(model: &SystemModel<f64>, mut w: W) -> Result<()> {
    let mut arrays: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    let arch = arch_values(&model.arch);
    arrays.push((ARCH_KEY.to_string(), vec![arch.len()], arch));
    model.visit_params(&mut |name, dims, v| arrays.push((name.to_string(), dims.to_vec(), v.to_vec())));
    w.write_all(MAGIC)?;
    put_u32(&mut w, arrays.len())?;
    for (name, dims, values) in &arrays {
        write_array(&mut w, name, dims, values)?;
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

pub fn read_model<R: Read>(mut r: R) -> Result<SystemModel<f64>> {
    if &take::<9, _>(&mut r)? != MAGIC {
        return Err(Error::Format("not a SEMRELAY1 checkpoint".into()));
    }
    let count = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut arrays: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|e| Error::Format(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("array name is not UTF-8".into()))?;
        let rank = u32::from_le_bytes(take(&mut r)?) as usize;
        let dims = (0..rank).map(|_| Ok(u64::from_le_bytes(take(&mut r)?) as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format("array too large".into()))?;
        let values = (0..n).map(|_| Ok(f64::from_le_bytes(take(&mut r)?))).collect::<Result<Vec<_>>>()?;
        if arrays.insert(name.clone(), (dims, values)).is_some() {
            return Err(Error::Format(format!("duplicate array {name}")));
        }
    }
    let (_, arch) = arrays.remove(ARCH_KEY).ok_or_else(|| Error::Format(format!("missing {ARCH_KEY}")))?;
    let mut model = SystemModel::zeros(&arch_from(&arch)?)?;
    let mut problem = None;
    model.visit_params_mut(&mut |name, dims, dst| match arrays.remove(name) {
        Some((d, v)) if d == dims => dst.copy_from_slice(&v),
        Some((d, _)) => problem = Some(format!("{name} has dims {d:?}, expected {dims:?}")),
        None => problem = Some(format!("missing array {name}")),
    });
    if let Some(p) = problem {
        return Err(Error::Format(p));
    }
    if let Some(extra) = arrays.keys().next() {
        return Err(Error::Format(format!("unexpected array {extra}")));
    }
    Ok(model)
}

pub fn save(model: &SystemModel<f64>, path: &Path) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))
}

pub fn load(path: &Path) -> Result<SystemModel<f64>> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::init_model;

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = init_model(&ArchConfig::desk(), 3).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        assert_eq!(&buf[..9], MAGIC);
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let bits = |m: &SystemModel<f64>| m.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = init_model(&ArchConfig::tiny(), 3).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        assert!(matches!(read_model(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(bad.as_slice()), Err(Error::Format(_))));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        save(&m, &p).unwrap();
        assert_eq!(load(&p).unwrap(), m);
    }
}
