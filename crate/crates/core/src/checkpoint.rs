//! Flat binary state snapshots: magic, grid descriptors, solver clock,
//! conservation ledgers, raw field values, CRC32 trailer. Everything is
//! little-endian and the value payload is the exact in-memory bit pattern,
//! so write-then-read reproduces the state bit for bit.

use std::path::Path;
use std::sync::Arc;

use crate::diagnostics::Ledgers;
use crate::error::{FragkinError, Result};
use crate::grid::{Field, SizeGrid, SpaceGrid};
use crate::integrator::RunState;

const MAGIC: &[u8; 9] = b"FRAGKINv1";

pub fn write_state(state: &RunState, path: &Path) -> Result<()> {
    let space = state.u.space();
    let sizes = state.u.sizes();
    let mut buf = Vec::with_capacity(MAGIC.len() + 64 + state.u.values().len() * 8 + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(space.dim as u32).to_le_bytes());
    buf.extend_from_slice(&space.extent.to_le_bytes());
    buf.extend_from_slice(&(space.n as u32).to_le_bytes());
    buf.extend_from_slice(&sizes.xi_min().to_le_bytes());
    buf.extend_from_slice(&sizes.xi_max().to_le_bytes());
    buf.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&state.t.to_le_bytes());
    buf.extend_from_slice(&state.step.to_le_bytes());
    buf.extend_from_slice(&state.ledgers.underflow_mass.to_le_bytes());
    buf.extend_from_slice(&state.ledgers.overflow_mass.to_le_bytes());
    buf.extend_from_slice(&state.ledgers.overflow_number.to_le_bytes());
    for v in state.u.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, &buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(FragkinError::Checkpoint(
                "checkpoint truncated: ran out of bytes mid-record".into(),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("sized")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("sized")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("sized")))
    }
}

pub fn read_state(path: &Path) -> Result<RunState> {
    let buf = std::fs::read(path)?;
    if buf.len() < MAGIC.len() + 4 {
        return Err(FragkinError::Checkpoint("checkpoint truncated: shorter than the fixed header".into()));
    }
    if &buf[..MAGIC.len()] != MAGIC {
        return Err(FragkinError::Checkpoint(
            "not a checkpoint: magic header mismatch".into(),
        ));
    }
    let (body, trailer) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("sized"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FragkinError::Checkpoint(format!(
            "checkpoint corrupt: crc {computed:08x} does not match trailer {stored:08x}"
        )));
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let dim = r.u32()? as usize;
    let extent = r.f64()?;
    let n = r.u32()? as usize;
    let xi_min = r.f64()?;
    let xi_max = r.f64()?;
    let m = r.u32()? as usize;
    let t = r.f64()?;
    let step = r.u64()?;
    let ledgers = Ledgers {
        underflow_mass: r.f64()?,
        overflow_mass: r.f64()?,
        overflow_number: r.f64()?,
    };
    let space = SpaceGrid::new(dim, extent, n)?;
    let sizes = SizeGrid::new(xi_min, xi_max, m)?;
    let count = space.cells() * sizes.len();
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(r.f64()?);
    }
    if r.pos != body.len() {
        return Err(FragkinError::Checkpoint(format!(
            "checkpoint has {} trailing bytes",
            body.len() - r.pos
        )));
    }
    let u = Field::from_values(&space, &sizes, values)?;
    Ok(RunState { t, step, u, ledgers })
}

/// Grid identity check for resuming under a configuration.
pub fn matches_grids(state: &RunState, space: &Arc<SpaceGrid>, sizes: &Arc<SizeGrid>) -> bool {
    **state.u.space() == **space && **state.u.sizes() == **sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> RunState {
        let space = SpaceGrid::new(2, 3.0, 8).unwrap();
        let sizes = SizeGrid::new(1e-2, 1e2, 12).unwrap();
        let u = Field::from_fn(&space, &sizes, |x, xi| {
            (x[0] * 7.3).sin() * (x[1] + 0.1) / (1.0 + xi)
        });
        RunState {
            t: 0.375,
            step: 42,
            u,
            ledgers: Ledgers {
                underflow_mass: 1.25e-3,
                overflow_mass: 7.5e-9,
                overflow_number: 3.0,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("fragkin-ckpt-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.ckpt");
        let s = state();
        write_state(&s, &path).unwrap();
        let back = read_state(&path).unwrap();
        assert_eq!(back.t.to_bits(), s.t.to_bits());
        assert_eq!(back.step, s.step);
        assert_eq!(back.ledgers, s.ledgers);
        assert_eq!(back.u.values().len(), s.u.values().len());
        for (a, b) in back.u.values().iter().zip(s.u.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(matches_grids(&back, s.u.space(), s.u.sizes()));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn truncation_and_corruption_are_structured_errors() {
        let dir = std::env::temp_dir().join("fragkin-ckpt-corrupt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.ckpt");
        write_state(&state(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let cut = dir.join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        let err = read_state(&cut).unwrap_err().to_string();
        assert!(err.contains("crc") || err.contains("truncated"), "{err}");

        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        let bad = dir.join("bad.ckpt");
        std::fs::write(&bad, &flipped).unwrap();
        let err = read_state(&bad).unwrap_err().to_string();
        assert!(err.contains("crc"), "{err}");

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        let nm = dir.join("nm.ckpt");
        std::fs::write(&nm, &wrong).unwrap();
        let err = read_state(&nm).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        for p in [&cut, &bad, &nm, &path] {
            std::fs::remove_file(p).ok();
        }
    }
}
