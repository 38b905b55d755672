use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result, C64};

/// Magic header of the binary field format.
pub const FIELD_MAGIC: &[u8; 8] = b"QOCFLD01";

/// Complex field envelope sampled on a uniform grid, constant on each step.
///
/// Sample `k` acts on `[k·dt, (k+1)·dt)`; on disk it is tagged with the
/// interval midpoint `t_k = (k + ½)·dt`, so `dt = 2·t_0` is recoverable from
/// a single-sample file.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlField {
    dt: f64,
    samples: Vec<C64>,
}

impl ControlField {
    pub fn new(dt: f64, samples: Vec<C64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidField(format!("dt must be positive, got {dt}")));
        }
        if samples.is_empty() {
            return Err(Error::InvalidField("field has no samples".into()));
        }
        if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::InvalidField("non-finite sample".into()));
        }
        Ok(Self { dt, samples })
    }

    pub fn zeros(n_steps: usize, dt: f64) -> Result<Self> {
        Self::new(dt, vec![C64::new(0.0, 0.0); n_steps])
    }

    pub fn constant(n_steps: usize, dt: f64, eps: C64) -> Result<Self> {
        Self::new(dt, vec![eps; n_steps])
    }

    /// Samples `f(t)` at step midpoints.
    pub fn from_fn(n_steps: usize, dt: f64, f: impl Fn(f64) -> C64) -> Result<Self> {
        Self::new(dt, (0..n_steps).map(|k| f((k as f64 + 0.5) * dt)).collect())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.samples.len() as f64
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [C64] {
        &mut self.samples
    }

    pub fn time(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    /// `Σ |ε_k|² dt`.
    pub fn fluence(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * self.dt
    }

    /// `sqrt(Σ |ε_k|² dt)`.
    pub fn norm(&self) -> f64 {
        self.fluence().sqrt()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,re,im\n");
        for (k, s) in self.samples.iter().enumerate() {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", self.time(k), s.re, s.im));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let mut triplets = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            if rec.len() != 3 {
                return Err(Error::format(path, format!("expected 3 columns, got {}", rec.len())));
            }
            let mut v = [0.0; 3];
            for (slot, field) in v.iter_mut().zip(rec.iter()) {
                *slot = field
                    .trim()
                    .parse()
                    .map_err(|e| Error::format(path, format!("bad number {field:?}: {e}")))?;
            }
            triplets.push(v);
        }
        Self::from_triplets(&triplets).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 24 * self.samples.len());
        out.extend_from_slice(FIELD_MAGIC);
        for (k, s) in self.samples.iter().enumerate() {
            out.extend_from_slice(&self.time(k).to_le_bytes());
            out.extend_from_slice(&s.re.to_le_bytes());
            out.extend_from_slice(&s.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != FIELD_MAGIC {
            return Err(Error::InvalidField("missing QOCFLD01 header".into()));
        }
        let body = &bytes[8..];
        if !body.len().is_multiple_of(24) {
            return Err(Error::InvalidField(format!("truncated body ({} bytes)", body.len())));
        }
        let read = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        let triplets: Vec<[f64; 3]> = body
            .chunks_exact(24)
            .map(|c| [read(&c[0..8]), read(&c[8..16]), read(&c[16..24])])
            .collect();
        Self::from_triplets(&triplets)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Reads either format, chosen by the magic header.
    pub fn read_any(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(FIELD_MAGIC) {
            Self::from_bytes(&bytes).map_err(|e| Error::format(path, e.to_string()))
        } else {
            Self::read_csv(path)
        }
    }

    fn from_triplets(rows: &[[f64; 3]]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::InvalidField("field has no samples".into()))?;
        let dt = 2.0 * first[0];
        for (k, r) in rows.iter().enumerate() {
            let expected = (k as f64 + 0.5) * dt;
            if (r[0] - expected).abs() > 1e-9 * expected.abs().max(dt) {
                return Err(Error::InvalidField(format!("non-uniform grid at sample {k}: t={}", r[0])));
            }
        }
        Self::new(dt, rows.iter().map(|r| C64::new(r[1], r[2])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_fields() {
        assert!(ControlField::new(0.1, vec![]).is_err());
        assert!(ControlField::new(0.0, vec![C64::new(1.0, 0.0)]).is_err());
        assert!(ControlField::new(0.1, vec![C64::new(f64::NAN, 0.0)]).is_err());
        assert!(ControlField::from_bytes(b"QOCFLD02").is_err());
        assert!(ControlField::from_bytes(&[b"QOCFLD01".as_slice(), &[0u8; 5]].concat()).is_err());
    }

    #[test]
    fn binary_layout() {
        let f = ControlField::new(0.5, vec![C64::new(1.0, -2.0)]).unwrap();
        let b = f.to_bytes();
        assert_eq!(&b[..8], b"QOCFLD01");
        assert_eq!(b.len(), 32);
        assert_eq!(f64::from_le_bytes(b[8..16].try_into().unwrap()), 0.25);
        assert_eq!(f64::from_le_bytes(b[16..24].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), -2.0);
    }

    #[test]
    fn csv_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let f = ControlField::from_fn(17, 0.037, |t| C64::new(t.sin(), (3.0 * t).cos())).unwrap();
        let p = dir.path().join("f.csv");
        f.write_csv(&p).unwrap();
        assert_eq!(ControlField::read_any(&p).unwrap(), f);
        let p = dir.path().join("f.bin");
        f.write_binary(&p).unwrap();
        assert_eq!(ControlField::read_any(&p).unwrap(), f);
    }

    proptest! {
        #[test]
        fn roundtrip_both_formats(dt in 1e-4f64..10.0, vals in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40)) {
            let f = ControlField::new(dt, vals.iter().map(|&(a, b)| C64::new(a, b)).collect()).unwrap();
            let back = ControlField::from_bytes(&f.to_bytes()).unwrap();
            prop_assert_eq!(&back, &f);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("f.csv");
            f.write_csv(&p).unwrap();
            let back = ControlField::read_csv(&p).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
