//! Input framing shared by the multi-file targets.

/// Splits `data` into `n` parts. Each of the first `n − 1` parts is
/// prefixed by its length as a little-endian `u32`; the last part is the
/// remainder. Returns `None` when a prefix runs past the end.
pub fn split_frames(mut data: &[u8], n: usize) -> Option<Vec<&[u8]>> {
    let mut parts = Vec::with_capacity(n);
    for _ in 1..n {
        let len = u32::from_le_bytes(data.get(..4)?.try_into().ok()?) as usize;
        data = &data[4..];
        parts.push(data.get(..len)?);
        data = &data[len..];
    }
    parts.push(data);
    Some(parts)
}

/// Inverse of [`split_frames`]; used to build corpus seeds.
pub fn join_frames(parts: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, p) in parts.iter().enumerate() {
        if i + 1 < parts.len() {
            out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        }
        out.extend_from_slice(p);
    }
    out
}
