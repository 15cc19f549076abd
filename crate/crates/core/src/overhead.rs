//! Side-information counts for the shared-feature schemes.

use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Pearson-correlation sharing with hyperprior compression.
    PcHem,
    /// Element-distance sharing, which ships shared-element indices.
    EdHem,
    /// Hyperprior compression without sharing.
    Hem,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::PcHem => "PC-HEM",
            Scheme::EdHem => "ED-HEM",
            Scheme::Hem => "HEM",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "PC-HEM" | "PCHEM" => Ok(Scheme::PcHem),
            "ED-HEM" | "EDHEM" => Ok(Scheme::EdHem),
            "HEM" => Ok(Scheme::Hem),
            _ => Err(Error::Argument(format!("unknown scheme {s:?}"))),
        }
    }
}

fn shared(c: usize, gamma_p: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&gamma_p) {
        return Err(Error::Argument(format!("gamma_p = {gamma_p} must lie in [0, 1]")));
    }
    Ok((gamma_p * c as f64).floor() as usize)
}

/// Shared-index elements sent as side information.
pub fn shared_index_count(scheme: Scheme, c: usize, gamma_p: f64, h: usize, w: usize) -> Result<usize> {
    let c1 = shared(c, gamma_p)?;
    Ok(match scheme {
        Scheme::EdHem => c1 * h * w,
        Scheme::PcHem | Scheme::Hem => 0,
    })
}

/// Importance-map elements.
pub fn importance_count(scheme: Scheme, n: usize, c: usize, gamma_p: f64, h: usize, w: usize) -> Result<usize> {
    let c1 = shared(c, gamma_p)?;
    Ok(match scheme {
        Scheme::Hem => n * c * h * w,
        Scheme::PcHem | Scheme::EdHem if n == 0 => 0,
        Scheme::PcHem | Scheme::EdHem => (n * (c - c1) + c1) * h * w,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverheadReport {
    pub scheme: Scheme,
    pub n: usize,
    pub c: usize,
    pub gamma_p: f64,
    pub h: usize,
    pub w: usize,
    pub shared_index_elements: usize,
    pub importance_elements: usize,
}

pub fn report(scheme: Scheme, n: usize, c: usize, gamma_p: f64, h: usize, w: usize) -> Result<OverheadReport> {
    Ok(OverheadReport {
        scheme,
        n,
        c,
        gamma_p,
        h,
        w,
        shared_index_elements: shared_index_count(scheme, c, gamma_p, h, w)?,
        importance_elements: importance_count(scheme, n, c, gamma_p, h, w)?,
    })
}

/// Counts for every scheme over a range of channel counts.
pub fn table(n: usize, channels: &[usize], gamma_p: f64, h: usize, w: usize) -> Result<Vec<OverheadReport>> {
    let mut rows = Vec::new();
    for &c in channels {
        for s in [Scheme::PcHem, Scheme::EdHem, Scheme::Hem] {
            rows.push(report(s, n, c, gamma_p, h, w)?);
        }
    }
    Ok(rows)
}

/// Writes `scheme,N,C,gamma_p,H,W,shared_index_elements,importance_elements`.
pub fn write_csv<W: Write>(rows: &[OverheadReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scheme", "N", "C", "gamma_p", "H", "W", "shared_index_elements", "importance_elements"])?;
    for r in rows {
        out.write_record([
            r.scheme.name().to_string(),
            r.n.to_string(),
            r.c.to_string(),
            r.gamma_p.to_string(),
            r.h.to_string(),
            r.w.to_string(),
            r.shared_index_elements.to_string(),
            r.importance_elements.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_counts() {
        assert_eq!(shared_index_count(Scheme::EdHem, 60, 0.5, 64, 128).unwrap(), 245_760);
        assert_eq!(shared_index_count(Scheme::PcHem, 60, 0.5, 64, 128).unwrap(), 0);
        assert_eq!(shared_index_count(Scheme::EdHem, 0, 0.5, 64, 128).unwrap(), 0);
        assert_eq!(importance_count(Scheme::Hem, 4, 60, 0.5, 32, 64).unwrap(), 491_520);
        assert_eq!(importance_count(Scheme::PcHem, 4, 60, 0.5, 32, 64).unwrap(), 307_200);
        assert!("XYZ".parse::<Scheme>().is_err());
        assert_eq!("pc-hem".parse::<Scheme>().unwrap(), Scheme::PcHem);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = table(2, &[16, 32], 0.5, 8, 8).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }

    proptest! {
        #[test]
        fn sharing_never_costs_more(n in 1usize..6, c in 0usize..80, g in 0.0f64..1.0, h in 1usize..20, w in 1usize..20) {
            let pc = importance_count(Scheme::PcHem, n, c, g, h, w).unwrap();
            let hem = importance_count(Scheme::Hem, n, c, g, h, w).unwrap();
            prop_assert!(pc <= hem);
            let c1 = (g * c as f64).floor() as usize;
            prop_assert_eq!(pc == hem, n == 1 || c1 == 0);
            prop_assert_eq!(importance_count(Scheme::PcHem, n, c, g, 2 * h, w).unwrap(), 2 * pc);
            if n == 1 {
                prop_assert_eq!(pc, c * h * w);
            }
        }
    }
}
