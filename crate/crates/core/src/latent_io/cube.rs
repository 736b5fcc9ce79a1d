use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::LatentIoError;

pub const MAGIC: &[u8; 6] = b"CUBE1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Image,
    Text,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    n: usize,
    d: usize,
    dtype: String,
    kind: EmbeddingKind,
    l2_normalized: bool,
}

/// Row-major `n × d` table of `f32` latent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
    kind: EmbeddingKind,
    l2_normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(
        n: usize,
        d: usize,
        values: Vec<f32>,
        kind: EmbeddingKind,
    ) -> Result<Self, LatentIoError> {
        check_shape(n, d)?;
        if values.len() != n * d {
            return Err(LatentIoError::LengthMismatch {
                what: "embedding values".into(),
                expected: n * d,
                actual: values.len(),
            });
        }
        let m = Self {
            n,
            d,
            values,
            kind,
            l2_normalized: false,
        };
        m.check_finite()?;
        Ok(m)
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], kind: EmbeddingKind) -> Result<Self, LatentIoError> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(LatentIoError::LengthMismatch {
                    what: format!("row {i}"),
                    expected: d,
                    actual: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), d, values, kind)
    }

    pub fn with_l2_normalized(mut self, flag: bool) -> Self {
        self.l2_normalized = flag;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn l2_normalized(&self) -> bool {
        self.l2_normalized
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Mutable payload access. Writers re-validate finiteness.
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.d)
    }

    /// Copies the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, LatentIoError> {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        let mut m = Self::new(indices.len(), self.d, values, self.kind)?;
        m.l2_normalized = self.l2_normalized;
        Ok(m)
    }

    fn check_finite(&self) -> Result<(), LatentIoError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(p) => Err(LatentIoError::NonFinite {
                row: p / self.d,
                col: p % self.d,
            }),
            None => Ok(()),
        }
    }
}

fn check_shape(n: usize, d: usize) -> Result<(), LatentIoError> {
    if n < 1 {
        return Err(LatentIoError::Shape("n must be at least 1".into()));
    }
    if d < 2 {
        return Err(LatentIoError::Shape("d must be at least 2".into()));
    }
    Ok(())
}

/// Writes `m` in CUBE1 format and returns the number of bytes written.
pub fn write_embeddings<W: Write>(m: &EmbeddingMatrix, mut out: W) -> Result<u64, LatentIoError> {
    check_shape(m.n, m.d)?;
    m.check_finite()?;
    let header = Header {
        n: m.n,
        d: m.d,
        dtype: "f32".into(),
        kind: m.kind,
        l2_normalized: m.l2_normalized,
    };
    let line = serde_json::to_string(&header).map_err(|e| LatentIoError::BadHeader(e.to_string()))?;
    let mut payload = Vec::with_capacity(m.values.len() * 4);
    for v in &m.values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(MAGIC)?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    out.write_all(&payload)?;
    out.flush()?;
    Ok((MAGIC.len() + line.len() + 1 + payload.len()) as u64)
}

pub fn read_embeddings<R: Read>(source: R) -> Result<EmbeddingMatrix, LatentIoError> {
    let mut reader = BufReader::new(source);
    let mut magic = [0u8; 6];
    let mut got = 0;
    while got < magic.len() {
        match reader.read(&mut magic[got..])? {
            0 => return Err(LatentIoError::UnrecognizedFormat),
            k => got += k,
        }
    }
    if &magic != MAGIC {
        return Err(LatentIoError::UnrecognizedFormat);
    }

    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.pop() != Some(b'\n') {
        return Err(LatentIoError::BadHeader("header line not terminated".into()));
    }
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| LatentIoError::BadHeader(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(LatentIoError::BadHeader(format!("unsupported dtype {:?}", header.dtype)));
    }
    check_shape(header.n, header.d)?;

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let expected = header
        .n
        .checked_mul(header.d)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| LatentIoError::BadHeader("n*d overflows".into()))?;
    if payload.len() != expected {
        return Err(LatentIoError::PayloadLengthMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(EmbeddingMatrix::new(header.n, header.d, values, header.kind)?
        .with_l2_normalized(header.l2_normalized))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smallest_matrix_layout() {
        let m = EmbeddingMatrix::from_rows(&[[0.0f32, 1.0]], EmbeddingKind::Text).unwrap();
        let mut buf = Vec::new();
        let written = write_embeddings(&m, &mut buf).unwrap();
        assert_eq!(written as usize, buf.len());
        let header = br#"{"n":1,"d":2,"dtype":"f32","kind":"text","l2_normalized":false}"#;
        assert_eq!(&buf[..6], MAGIC);
        assert_eq!(&buf[6..6 + header.len()], header);
        assert_eq!(buf[6 + header.len()], b'\n');
        let payload = &buf[7 + header.len()..];
        assert_eq!(payload.len(), 8);
        assert_eq!(payload, [0, 0, 0, 0, 0, 0, 0x80, 0x3f]);
    }

    #[test]
    fn refuses_to_write_nan() {
        let mut m = EmbeddingMatrix::from_rows(&[[0.0f32, 1.0]], EmbeddingKind::Image).unwrap();
        m.values_mut()[1] = f32::NAN;
        let err = write_embeddings(&m, Vec::new()).unwrap_err();
        assert!(matches!(err, LatentIoError::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        assert!(EmbeddingMatrix::new(0, 2, vec![], EmbeddingKind::Image).is_err());
        assert!(EmbeddingMatrix::new(1, 1, vec![1.0], EmbeddingKind::Image).is_err());
        assert!(EmbeddingMatrix::new(1, 2, vec![1.0, f32::INFINITY], EmbeddingKind::Image).is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let m = EmbeddingMatrix::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]], EmbeddingKind::Image).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&m, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        let err = read_embeddings(&buf[..]).unwrap_err();
        assert!(err.to_string().starts_with("payload length mismatch"), "{err}");
    }

    #[test]
    fn wrong_magic_is_unrecognized() {
        let err = read_embeddings(&b"NPY1\n{}\n"[..]).unwrap_err();
        assert_eq!(err.to_string(), "unrecognized format");
        let err = read_embeddings(&b"CU"[..]).unwrap_err();
        assert_eq!(err.to_string(), "unrecognized format");
    }

    #[test]
    fn nan_payload_is_rejected_on_read() {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(br#"{"n":1,"d":2,"dtype":"f32","kind":"image","l2_normalized":true}"#);
        buf.push(b'\n');
        buf.extend_from_slice(&1.0f32.to_le_bytes());
        buf.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            read_embeddings(&buf[..]),
            Err(LatentIoError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn header_flags_survive() {
        let m = EmbeddingMatrix::from_rows(&[[1.0f32, 2.0]], EmbeddingKind::Image)
            .unwrap()
            .with_l2_normalized(true);
        let mut buf = Vec::new();
        write_embeddings(&m, &mut buf).unwrap();
        let back = read_embeddings(&buf[..]).unwrap();
        assert!(back.l2_normalized());
        assert_eq!(back.kind(), EmbeddingKind::Image);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            n in 1usize..6,
            d in 2usize..7,
            seed in proptest::collection::vec(any::<u32>(), 42),
        ) {
            // arbitrary finite bit patterns, including subnormals and -0.0
            let values: Vec<f32> = (0..n * d)
                .map(|i| {
                    let v = f32::from_bits(seed[i % seed.len()].rotate_left(i as u32));
                    if v.is_finite() { v } else { -0.0 }
                })
                .collect();
            let m = EmbeddingMatrix::new(n, d, values, EmbeddingKind::Text).unwrap();
            let mut buf = Vec::new();
            write_embeddings(&m, &mut buf).unwrap();
            let back = read_embeddings(&buf[..]).unwrap();
            prop_assert_eq!(back.n(), n);
            let a: Vec<u32> = m.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
