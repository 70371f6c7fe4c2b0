//! Sample files.
//!
//! JSONL: one object per line with `ids`, `modality` (0 text, 1 visual,
//! 2 special), `weights` and `provenance`.
//!
//! Binary, little-endian throughout:
//!
//! ```text
//! header  : b"MGIC" | u32 version = 1 | u64 record count
//! record  : u32 n | u32 repetition | u16 id_len | id_len bytes image id (UTF-8)
//!           | n x u32 token ids | n x u8 modality | n x f32 weights
//! ```
//!
//! The binary form keeps only the image id and repetition of the provenance.

use std::io::{BufRead, Read, Write};

use super::{Modality, Provenance, SequenceError, TokenizedSample};

pub const BINARY_MAGIC: [u8; 4] = *b"MGIC";
pub const BINARY_VERSION: u32 = 1;

pub fn write_jsonl<W: Write>(mut w: W, samples: &[TokenizedSample]) -> Result<(), SequenceError> {
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TokenizedSample>, SequenceError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: TokenizedSample =
            serde_json::from_str(&line).map_err(|e| SequenceError::Malformed(format!("line {}: {e}", i + 1)))?;
        if s.modality.len() != s.ids.len() || s.weights.len() != s.ids.len() {
            return Err(SequenceError::Malformed(format!("line {}: vector lengths differ", i + 1)));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_binary<W: Write>(mut w: W, samples: &[TokenizedSample]) -> Result<(), SequenceError> {
    w.write_all(&BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        let n = s.ids.len();
        if s.modality.len() != n || s.weights.len() != n {
            return Err(SequenceError::Malformed("vector lengths differ".into()));
        }
        let n32 = u32::try_from(n).map_err(|_| SequenceError::Malformed("sample too long".into()))?;
        let id = s.provenance.image_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| SequenceError::Malformed("image id too long".into()))?;
        w.write_all(&n32.to_le_bytes())?;
        w.write_all(&s.provenance.repetition.to_le_bytes())?;
        w.write_all(&id_len.to_le_bytes())?;
        w.write_all(id)?;
        for &t in &s.ids {
            w.write_all(&t.to_le_bytes())?;
        }
        let tags: Vec<u8> = s.modality.iter().map(|&m| m as u8).collect();
        w.write_all(&tags)?;
        for &x in &s.weights {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], SequenceError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| SequenceError::Malformed(format!("truncated: {e}")))?;
    Ok(b)
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Vec<TokenizedSample>, SequenceError> {
    if take::<4, _>(&mut r)? != BINARY_MAGIC {
        return Err(SequenceError::Malformed("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != BINARY_VERSION {
        return Err(SequenceError::Malformed(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(take(&mut r)?);
    let mut out = Vec::new();
    for _ in 0..count {
        let n = u32::from_le_bytes(take(&mut r)?) as usize;
        let repetition = u32::from_le_bytes(take(&mut r)?);
        let id_len = u16::from_le_bytes(take(&mut r)?) as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(|e| SequenceError::Malformed(format!("truncated: {e}")))?;
        let image_id = String::from_utf8(id).map_err(|_| SequenceError::Malformed("image id not UTF-8".into()))?;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(u32::from_le_bytes(take(&mut r)?));
        }
        let mut modality = Vec::with_capacity(n);
        for _ in 0..n {
            let [m] = take::<1, _>(&mut r)?;
            modality.push(Modality::from_u8(m).ok_or_else(|| SequenceError::Malformed(format!("modality tag {m}")))?);
        }
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            weights.push(f32::from_le_bytes(take(&mut r)?));
        }
        out.push(TokenizedSample {
            ids,
            modality,
            weights,
            provenance: Provenance { image_id, repetition, ..Provenance::default() },
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(SequenceError::Malformed("trailing bytes after last record".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> TokenizedSample {
        TokenizedSample {
            ids: vec![0, 7, 2, 40_000, 3, 1],
            modality: vec![Modality::Special, Modality::Text, Modality::Special, Modality::Visual, Modality::Special, Modality::Special],
            weights: vec![0.0, 1.0, 0.1, 0.1, 0.1, 1.0],
            provenance: Provenance { image_id: "img-1".into(), repetition: 2, ..Provenance::default() },
        }
    }

    #[test]
    fn binary_layout_is_exact() {
        let mut buf = Vec::new();
        write_binary(&mut buf, &[fixture()]).unwrap();
        assert_eq!(&buf[..4], b"MGIC");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[16..20], &6u32.to_le_bytes());
        assert_eq!(&buf[20..24], &2u32.to_le_bytes());
        assert_eq!(&buf[24..26], &5u16.to_le_bytes());
        assert_eq!(&buf[26..31], b"img-1");
        assert_eq!(buf.len(), 31 + 6 * 4 + 6 + 6 * 4);
        assert_eq!(read_binary(&buf[..]).unwrap(), vec![fixture()]);
        assert!(read_binary(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn jsonl_uses_integer_modality() {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &[fixture()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"modality\":[2,0,2,1,2,2]"), "{text}");
        assert_eq!(read_jsonl(&buf[..]).unwrap(), vec![fixture()]);
    }
}
