//! Checkpoint format: the magic string `VIBE1`, six little-endian u64
//! dimensions (vocab, topics, hidden, classes, time buckets, embed width),
//! then every tensor in declared order as little-endian f64. The label
//! mapping is persisted in a sidecar next to the checkpoint.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::classify::{Dims, VibeState};
use crate::error::{Result, VibeError};
use crate::train::params::{visit_mut, visit_ref};

const MAGIC: &[u8; 5] = b"VIBE1";

pub fn save_checkpoint(path: &Path, state: &VibeState) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    let d = state.dims;
    for dim in [d.vocab, d.topics, d.hidden, d.classes, d.time_buckets, d.embed] {
        out.write_all(&(dim as u64).to_le_bytes())?;
    }
    for (_, _, tensor) in visit_ref(state) {
        for &v in tensor.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<VibeState> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 5];
    reader.read_exact(&mut magic).map_err(|_| VibeError::Checkpoint("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(VibeError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut read_u64 = || -> Result<usize> {
        let mut buf = [0u8; 8];
        reader
            .read_exact(&mut buf)
            .map_err(|_| VibeError::Checkpoint("truncated dimensions".into()))?;
        Ok(u64::from_le_bytes(buf) as usize)
    };
    let dims = Dims {
        vocab: read_u64()?,
        topics: read_u64()?,
        hidden: read_u64()?,
        classes: read_u64()?,
        time_buckets: read_u64()?,
        embed: read_u64()?,
    };
    let mut state = VibeState::zeros(dims);
    for (name, _, mut tensor) in visit_mut(&mut state) {
        let slice = tensor.as_slice_mut();
        let mut buf = vec![0u8; slice.len() * 8];
        reader
            .read_exact(&mut buf)
            .map_err(|_| VibeError::Checkpoint(format!("truncated tensor {name}")))?;
        for (i, chunk) in buf.chunks_exact(8).enumerate() {
            slice[i] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(VibeError::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{init_state, TrainConfig};

    fn small_config() -> TrainConfig {
        TrainConfig {
            topics: 3,
            hidden: 4,
            embed_dim: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let state = init_state(&small_config(), 7, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.vibe");
        save_checkpoint(&path, &state).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.dims, state.dims);
        for (a, b) in visit_ref(&state).iter().zip(visit_ref(&loaded).iter()) {
            assert_eq!(a.2.as_slice(), b.2.as_slice(), "tensor {}", a.0);
        }
    }

    #[test]
    fn identical_seeds_give_byte_identical_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.vibe");
        let p2 = dir.path().join("b.vibe");
        save_checkpoint(&p1, &init_state(&small_config(), 7, 3)).unwrap();
        save_checkpoint(&p2, &init_state(&small_config(), 7, 3)).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let mut other = small_config();
        other.seed = 1;
        let p3 = dir.path().join("c.vibe");
        save_checkpoint(&p3, &init_state(&other, 7, 3)).unwrap();
        assert_ne!(std::fs::read(&p1).unwrap(), std::fs::read(&p3).unwrap());
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.vibe");
        let state = init_state(&small_config(), 7, 3);
        save_checkpoint(&path, &state).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());

        save_checkpoint(&path, &state).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
