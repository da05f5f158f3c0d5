use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Default)]
pub(super) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub(super) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub(super) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub(super) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(super) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// `u32` length followed by the bytes.
    pub(super) fn blob(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.bytes(b);
    }

    pub(super) fn tensor(&mut self, path: &str, role: u8, t: &Tensor) {
        self.blob(path.as_bytes());
        self.u8(role);
        self.u8(0);
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        self.bytes(&t.to_le_bytes());
    }

    pub(super) fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(super) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(super) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(super) fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(super) fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::format(
                section,
                format!(
                    "needs {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            )),
        }
    }

    pub(super) fn u8(&mut self, section: &str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    pub(super) fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, section)?.try_into().expect("4 bytes"),
        ))
    }

    pub(super) fn u64(&mut self, section: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, section)?.try_into().expect("8 bytes"),
        ))
    }

    pub(super) fn blob(&mut self, section: &str) -> Result<&'a [u8]> {
        let n = self.u32(section)? as usize;
        self.take(n, section)
    }

    /// One tensor record: `(path, role tag, tensor)`.
    pub(super) fn tensor(&mut self) -> Result<(String, u8, Tensor)> {
        let path = String::from_utf8(self.blob("tensor table")?.to_vec())
            .map_err(|_| Error::format("tensor table", "path is not UTF-8"))?;
        let section = format!("tensor {path}");
        let role = self.u8(&section)?;
        let dtype = self.u8(&section)?;
        if dtype != 0 {
            return Err(Error::format(&section, format!("unknown dtype {dtype}")));
        }
        let rank = self.u32(&section)? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = self.u64(&section)? as usize;
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::format(&section, "shape overflows"))?;
            shape.push(d);
        }
        let bytes = count
            .checked_mul(8)
            .ok_or_else(|| Error::format(&section, "shape overflows"))?;
        let payload = self.take(bytes, &section)?;
        Ok((path, role, tensor_from_le(shape, payload)?))
    }
}

fn tensor_from_le(shape: Vec<usize>, payload: &[u8]) -> Result<Tensor> {
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data)
}
