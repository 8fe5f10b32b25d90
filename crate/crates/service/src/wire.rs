//! Length-prefixed binary wire protocol between proxy and server.
//!
//! Frame layout: a little-endian u32 payload length, then the payload:
//! version byte, tag byte, u64 session id, and the tag-specific body.
//! Floats travel as raw little-endian 64-bit values so transformed query
//! matrices arrive bit-exact; collection lengths are 32-bit counts.
//!
//! No message variant can carry key material: the types here reference
//! only perturbed vectors, secured conditions, bounding boxes, and
//! opaque envelopes. The server-facing surface is exactly what the
//! threat model lets an adversary observe.

use std::io::{Read, Write};

use rasp_core::knn::{InnerRangeResult, KnnRequest, Termination};
use rasp_core::{BlockCounter, Mat, Mbr, PerturbedRecord, SecureRangeQuery, Side, ThetaMatrix};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u8 = 1;

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME_LEN: u32 = 256 * 1024 * 1024;

pub mod error_code {
    pub const VERSION_MISMATCH: u32 = 1;
    pub const MALFORMED: u32 = 2;
    pub const OVERSIZED_QUERY: u32 = 3;
    pub const NEED_LARGER_UPPER_BOUND: u32 = 4;
    pub const NO_DATASET: u32 = 5;
    pub const INTERNAL: u32 = 6;
}

/// One protocol message: session id plus body.
#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub session: u64,
    pub body: MessageBody,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    UploadDataset {
        records: Vec<PerturbedRecord>,
    },
    UploadAck {
        count: u64,
    },
    RangeQuery {
        query: SecureRangeQuery,
    },
    RangeResult {
        ids: Vec<u64>,
        envelopes: Vec<Vec<u8>>,
        counters: BlockCounter,
        stage1_count: u64,
    },
    KnnInit {
        request: KnnRequest,
    },
    KnnInner {
        result: InnerRangeResult,
    },
    KnnOuter {
        query: SecureRangeQuery,
    },
    KnnCandidates {
        ids: Vec<u64>,
        envelopes: Vec<Vec<u8>>,
    },
    Error {
        code: u32,
        message: String,
    },
}

impl MessageBody {
    fn tag(&self) -> u8 {
        match self {
            MessageBody::UploadDataset { .. } => 1,
            MessageBody::RangeQuery { .. } => 2,
            MessageBody::RangeResult { .. } => 3,
            MessageBody::KnnInit { .. } => 4,
            MessageBody::KnnInner { .. } => 5,
            MessageBody::KnnOuter { .. } => 6,
            MessageBody::KnnCandidates { .. } => 7,
            MessageBody::Error { .. } => 8,
            MessageBody::UploadAck { .. } => 9,
        }
    }
}

// ---------------------------------------------------------------------
// Primitive encoding
// ---------------------------------------------------------------------

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }

    pub fn string(&mut self, v: &str) {
        self.bytes(v.as_bytes());
    }

    pub fn f64_slice(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        for x in v {
            self.f64(*x);
        }
    }

    pub fn mbr(&mut self, m: &Mbr) {
        self.u32(m.dims() as u32);
        for (lo, hi) in m.bounds() {
            self.f64(*lo);
            self.f64(*hi);
        }
    }

    pub fn mat(&mut self, m: &Mat) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        for v in m.data() {
            self.f64(*v);
        }
    }

    fn theta(&mut self, t: &ThetaMatrix) {
        self.u32(t.dim as u32);
        self.u8(match t.side {
            Side::Lower => 0,
            Side::Upper => 1,
        });
        self.mat(&t.m);
    }

    fn query(&mut self, q: &SecureRangeQuery) {
        self.mbr(&q.mbr);
        self.u32(q.thetas.len() as u32);
        for t in &q.thetas {
            self.theta(t);
        }
    }

    fn record(&mut self, r: &PerturbedRecord) {
        self.u64(r.id);
        self.f64_slice(&r.y);
        self.bytes(&r.envelope);
    }

    fn knn_request(&mut self, r: &KnnRequest) {
        self.query(&r.lower);
        self.query(&r.upper);
        self.u32(r.k as u32);
        self.u32(r.delta as u32);
        self.f64(r.eps_terminate);
    }

    fn inner_result(&mut self, r: &InnerRangeResult) {
        self.u32(r.rounds as u32);
        self.u64(r.count as u64);
        self.u8(match r.termination {
            Termination::DeltaHit => 0,
            Termination::WidthExhausted => 1,
        });
        // Trace as a packed bit string.
        self.u32(r.trace.len() as u32);
        let mut byte = 0u8;
        for (i, &bit) in r.trace.iter().enumerate() {
            if bit {
                byte |= 1 << (i % 8);
            }
            if i % 8 == 7 {
                self.u8(byte);
                byte = 0;
            }
        }
        if !r.trace.is_empty() && !r.trace.len().is_multiple_of(8) {
            self.u8(byte);
        }
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Decode(format!(
                "frame truncated: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    pub fn string(&mut self) -> Result<String> {
        let b = self.bytes()?;
        String::from_utf8(b).map_err(|_| Error::Decode("invalid utf-8 in string".into()))
    }

    pub fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    pub fn mbr(&mut self) -> Result<Mbr> {
        let dims = self.u32()? as usize;
        let mut bounds = Vec::with_capacity(dims.min(1 << 16));
        for _ in 0..dims {
            bounds.push((self.f64()?, self.f64()?));
        }
        Ok(Mbr::from_bounds(bounds))
    }

    pub fn mat(&mut self) -> Result<Mat> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        if rows.saturating_mul(cols) > (1 << 24) {
            return Err(Error::Decode(format!("matrix {rows}x{cols} too large")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Ok(Mat::from_vec(rows, cols, data))
    }

    fn theta(&mut self) -> Result<ThetaMatrix> {
        let dim = self.u32()? as usize;
        let side = match self.u8()? {
            0 => Side::Lower,
            1 => Side::Upper,
            other => return Err(Error::Decode(format!("bad side byte {other}"))),
        };
        Ok(ThetaMatrix {
            dim,
            side,
            m: self.mat()?,
        })
    }

    fn query(&mut self) -> Result<SecureRangeQuery> {
        let mbr = self.mbr()?;
        let n = self.u32()? as usize;
        let mut thetas = Vec::with_capacity(n.min(1 << 12));
        for _ in 0..n {
            thetas.push(self.theta()?);
        }
        Ok(SecureRangeQuery { mbr, thetas })
    }

    fn record(&mut self) -> Result<PerturbedRecord> {
        Ok(PerturbedRecord {
            id: self.u64()?,
            y: self.f64_vec()?,
            envelope: self.bytes()?,
        })
    }

    fn knn_request(&mut self) -> Result<KnnRequest> {
        Ok(KnnRequest {
            lower: self.query()?,
            upper: self.query()?,
            k: self.u32()? as usize,
            delta: self.u32()? as usize,
            eps_terminate: self.f64()?,
        })
    }

    fn inner_result(&mut self) -> Result<InnerRangeResult> {
        let rounds = self.u32()? as usize;
        let count = self.u64()? as usize;
        let termination = match self.u8()? {
            0 => Termination::DeltaHit,
            1 => Termination::WidthExhausted,
            other => return Err(Error::Decode(format!("bad termination byte {other}"))),
        };
        let nbits = self.u32()? as usize;
        let nbytes = nbits.div_ceil(8);
        let packed = self.take(nbytes)?;
        let trace = (0..nbits).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(InnerRangeResult {
            trace,
            count,
            rounds,
            termination,
        })
    }
}

// ---------------------------------------------------------------------
// Message codec
// ---------------------------------------------------------------------

pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(PROTOCOL_VERSION);
    w.u8(msg.body.tag());
    w.u64(msg.session);
    match &msg.body {
        MessageBody::UploadDataset { records } => {
            w.u32(records.len() as u32);
            for r in records {
                w.record(r);
            }
        }
        MessageBody::UploadAck { count } => w.u64(*count),
        MessageBody::RangeQuery { query } => w.query(query),
        MessageBody::RangeResult {
            ids,
            envelopes,
            counters,
            stage1_count,
        } => {
            w.u32(ids.len() as u32);
            for id in ids {
                w.u64(*id);
            }
            w.u32(envelopes.len() as u32);
            for e in envelopes {
                w.bytes(e);
            }
            w.u64(counters.index_blocks);
            w.u64(counters.data_blocks);
            w.u64(*stage1_count);
        }
        MessageBody::KnnInit { request } => w.knn_request(request),
        MessageBody::KnnInner { result } => w.inner_result(result),
        MessageBody::KnnOuter { query } => w.query(query),
        MessageBody::KnnCandidates { ids, envelopes } => {
            w.u32(ids.len() as u32);
            for id in ids {
                w.u64(*id);
            }
            w.u32(envelopes.len() as u32);
            for e in envelopes {
                w.bytes(e);
            }
        }
        MessageBody::Error { code, message } => {
            w.u32(*code);
            w.string(message);
        }
    }
    w.into_bytes()
}

pub fn decode(payload: &[u8]) -> Result<WireMessage> {
    let mut r = Reader::new(payload);
    let version = r.u8()?;
    if version != PROTOCOL_VERSION {
        return Err(Error::VersionMismatch {
            got: version,
            want: PROTOCOL_VERSION,
        });
    }
    let tag = r.u8()?;
    let session = r.u64()?;
    let body = match tag {
        1 => {
            let n = r.u32()? as usize;
            let mut records = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                records.push(r.record()?);
            }
            MessageBody::UploadDataset { records }
        }
        2 => MessageBody::RangeQuery { query: r.query()? },
        3 => {
            let n = r.u32()? as usize;
            let mut ids = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                ids.push(r.u64()?);
            }
            let m = r.u32()? as usize;
            let mut envelopes = Vec::with_capacity(m.min(1 << 20));
            for _ in 0..m {
                envelopes.push(r.bytes()?);
            }
            MessageBody::RangeResult {
                ids,
                envelopes,
                counters: BlockCounter {
                    index_blocks: r.u64()?,
                    data_blocks: r.u64()?,
                },
                stage1_count: r.u64()?,
            }
        }
        4 => MessageBody::KnnInit {
            request: r.knn_request()?,
        },
        5 => MessageBody::KnnInner {
            result: r.inner_result()?,
        },
        6 => MessageBody::KnnOuter { query: r.query()? },
        7 => {
            let n = r.u32()? as usize;
            let mut ids = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                ids.push(r.u64()?);
            }
            let m = r.u32()? as usize;
            let mut envelopes = Vec::with_capacity(m.min(1 << 20));
            for _ in 0..m {
                envelopes.push(r.bytes()?);
            }
            MessageBody::KnnCandidates { ids, envelopes }
        }
        8 => MessageBody::Error {
            code: r.u32()?,
            message: r.string()?,
        },
        9 => MessageBody::UploadAck { count: r.u64()? },
        other => return Err(Error::Decode(format!("unknown message tag {other}"))),
    };
    if !r.done() {
        return Err(Error::Decode("trailing bytes after message body".into()));
    }
    Ok(WireMessage { session, body })
}

/// Writes one framed message.
pub fn write_frame<W: Write>(stream: &mut W, msg: &WireMessage) -> Result<()> {
    let payload = encode(msg);
    stream.write_all(&(payload.len() as u32).to_le_bytes())?;
    stream.write_all(&payload)?;
    stream.flush()?;
    Ok(())
}

/// Reads one framed message; `Ok(None)` on clean EOF at a frame boundary.
pub fn read_frame<R: Read>(stream: &mut R) -> Result<Option<WireMessage>> {
    let mut len_buf = [0u8; 4];
    match stream.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len_buf);
    if len > MAX_FRAME_LEN {
        return Err(Error::Decode(format!("frame of {len} bytes too large")));
    }
    let mut payload = vec![0u8; len as usize];
    stream.read_exact(&mut payload)?;
    decode(&payload).map(Some)
}
