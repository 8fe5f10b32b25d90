//! The trusted in-house proxy: holds the key, transforms queries, talks
//! to the untrusted server, and decrypts what comes back. Per-query
//! timing is split into pre-processing (transformation), server time
//! (wire round trips included), and post-processing (decryption and
//! final filtering).

use std::net::{TcpStream, ToSocketAddrs};
use std::time::Instant;

use rand::RngCore;
use rasp_core::knn::{
    full_domain_half_edge, initial_bounds, outer_range_from_inner, prepare_knn_request,
    replay_inner_range, select_top_k, BoundPolicy, InnerRangeResult, KnnRequest, KnnTransport,
    SquareRange, DEFAULT_EPS_TERMINATE, NORMALIZED_DOMAIN_LENGTH,
};
use rasp_core::query::transform_query;
use rasp_core::{BlockCounter, Error as CoreError, PerturbedRecord, PlainRecord, RaspKey, SecureRangeQuery};

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::filter::parse_filter;
use crate::wire::{self, error_code, MessageBody, WireMessage};

/// One client connection to the query server.
pub struct Connection {
    stream: TcpStream,
    session: u64,
}

impl Connection {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Connection {
            stream,
            session: rand::thread_rng().next_u64(),
        })
    }

    pub fn session(&self) -> u64 {
        self.session
    }

    /// One request/response exchange. Error bodies become typed errors.
    pub fn call(&mut self, body: MessageBody) -> Result<MessageBody> {
        wire::write_frame(
            &mut self.stream,
            &WireMessage {
                session: self.session,
                body,
            },
        )?;
        let reply = wire::read_frame(&mut self.stream)?
            .ok_or_else(|| Error::Protocol("server closed the connection".into()))?;
        match reply.body {
            MessageBody::Error { code, message } if code == error_code::NEED_LARGER_UPPER_BOUND => {
                // Surfaced as the typed signal the kNN retry loop expects.
                let _ = message;
                Err(Error::Core(CoreError::NeedLargerUpperBound { found: 0, k: 0 }))
            }
            MessageBody::Error { code, message } => Err(Error::Remote { code, message }),
            other => Ok(other),
        }
    }

    pub fn upload(&mut self, records: Vec<PerturbedRecord>) -> Result<u64> {
        match self.call(MessageBody::UploadDataset { records })? {
            MessageBody::UploadAck { count } => Ok(count),
            other => Err(Error::Protocol(format!(
                "expected upload ack, got {other:?}"
            ))),
        }
    }

    pub fn range_query(&mut self, query: SecureRangeQuery) -> Result<RangeReply> {
        match self.call(MessageBody::RangeQuery { query })? {
            MessageBody::RangeResult {
                ids,
                envelopes,
                counters,
                stage1_count,
            } => Ok(RangeReply {
                ids,
                envelopes,
                counters,
                stage1_count,
            }),
            other => Err(Error::Protocol(format!(
                "expected a range result, got {other:?}"
            ))),
        }
    }
}

/// kNN rounds travel over the same connection.
impl KnnTransport for Connection {
    fn inner_range_search(
        &mut self,
        req: &KnnRequest,
    ) -> rasp_core::Result<InnerRangeResult> {
        match self.call(MessageBody::KnnInit {
            request: req.clone(),
        }) {
            Ok(MessageBody::KnnInner { result }) => Ok(result),
            Ok(other) => Err(CoreError::MalformedQuery(format!(
                "expected inner-range result, got {other:?}"
            ))),
            Err(Error::Core(e)) => Err(e),
            Err(e) => Err(CoreError::MalformedQuery(e.to_string())),
        }
    }

    fn fetch_range(
        &mut self,
        q: &SecureRangeQuery,
    ) -> rasp_core::Result<Vec<(u64, Vec<u8>)>> {
        match self.call(MessageBody::KnnOuter { query: q.clone() }) {
            Ok(MessageBody::KnnCandidates { ids, envelopes }) => {
                Ok(ids.into_iter().zip(envelopes).collect())
            }
            Ok(other) => Err(CoreError::MalformedQuery(format!(
                "expected candidates, got {other:?}"
            ))),
            Err(Error::Core(e)) => Err(e),
            Err(e) => Err(CoreError::MalformedQuery(e.to_string())),
        }
    }
}

#[derive(Debug)]
pub struct RangeReply {
    pub ids: Vec<u64>,
    pub envelopes: Vec<Vec<u8>>,
    pub counters: BlockCounter,
    pub stage1_count: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct QueryTiming {
    pub prep_ms: f64,
    pub server_ms: f64,
    pub post_ms: f64,
}

#[derive(Debug)]
pub struct RangeOutput {
    pub ids: Vec<u64>,
    pub records: Vec<PlainRecord>,
    pub rows: Vec<Vec<String>>,
    pub stage1_count: u64,
    pub counters: BlockCounter,
    pub timing: QueryTiming,
}

#[derive(Debug)]
pub struct KnnOutput {
    pub ids: Vec<u64>,
    pub records: Vec<PlainRecord>,
    pub rows: Vec<Vec<String>>,
    pub candidates: usize,
    pub rounds: usize,
    pub timing: QueryTiming,
}

/// Key-holding side of the protocol.
pub struct Proxy {
    pub key: RaspKey,
    pub manifest: DatasetManifest,
}

impl Proxy {
    pub fn new(key: RaspKey, manifest: DatasetManifest) -> Self {
        Proxy { key, manifest }
    }

    /// Full range-query flow: parse, transform, send, decrypt.
    pub fn range_query(&self, conn: &mut Connection, filter: &str) -> Result<RangeOutput> {
        let t0 = Instant::now();
        let spec = parse_filter(&self.manifest, filter)?;
        let secured = transform_query(&self.key, &spec).map_err(Error::Core)?;
        let prep_ms = ms_since(t0);

        let t1 = Instant::now();
        let reply = conn.range_query(secured)?;
        let server_ms = ms_since(t1);

        let t2 = Instant::now();
        let records: Vec<PlainRecord> = reply
            .envelopes
            .iter()
            .map(|e| self.key.open_envelope(e).map_err(Error::Core))
            .collect::<Result<_>>()?;
        let rows = records.iter().map(|r| self.manifest.render_row(r)).collect();
        let post_ms = ms_since(t2);

        Ok(RangeOutput {
            ids: reply.ids,
            records,
            rows,
            stage1_count: reply.stage1_count,
            counters: reply.counters,
            timing: QueryTiming {
                prep_ms,
                server_ms,
                post_ms,
            },
        })
    }

    /// Full kNN flow over the wire, with the point given in the raw
    /// (un-normalized) domain.
    pub fn knn(
        &self,
        conn: &mut Connection,
        raw_point: &[f64],
        k: usize,
        delta: usize,
        policy: &BoundPolicy,
    ) -> Result<KnnOutput> {
        if raw_point.len() != self.manifest.dims() {
            return Err(Error::Filter(format!(
                "query point has {} coordinates, dataset has {} dimensions",
                raw_point.len(),
                self.manifest.dims()
            )));
        }
        let q: Vec<f64> = raw_point
            .iter()
            .enumerate()
            .map(|(j, &v)| self.manifest.normalize(j, v))
            .collect();
        self.knn_normalized(conn, &q, k, delta, policy)
    }

    /// Same flow with the point already in the normalized domain.
    pub fn knn_normalized(
        &self,
        conn: &mut Connection,
        q: &[f64],
        k: usize,
        delta: usize,
        policy: &BoundPolicy,
    ) -> Result<KnnOutput> {
        let mut timing = QueryTiming::default();
        let (lower, mut upper) = initial_bounds(q, policy, &self.key);
        let full_half = full_domain_half_edge(&self.key, q);
        let mut rounds = 0usize;
        loop {
            let t0 = Instant::now();
            let upper_clamped = SquareRange::new(q.to_vec(), upper.half_edge.min(full_half));
            let (req, replay) = prepare_knn_request(
                &self.key,
                &lower,
                &upper_clamped,
                k,
                delta,
                DEFAULT_EPS_TERMINATE,
            )
            .map_err(Error::Core)?;
            timing.prep_ms += ms_since(t0);

            let t1 = Instant::now();
            let inner = conn.inner_range_search(&req);
            timing.server_ms += ms_since(t1);

            match inner {
                Ok(inner) => {
                    rounds = inner.rounds;
                    let t2 = Instant::now();
                    let inner_sq = replay_inner_range(&self.key, &replay, &inner);
                    let outer = outer_range_from_inner(&inner_sq);
                    let outer_q =
                        transform_query(&self.key, &outer.to_spec()).map_err(Error::Core)?;
                    timing.prep_ms += ms_since(t2);
                    return self.fetch_and_rank(conn, q, k, outer_q, rounds, timing);
                }
                Err(CoreError::NeedLargerUpperBound { .. }) => {
                    if upper_clamped.half_edge >= full_half {
                        let t2 = Instant::now();
                        let outer = SquareRange::new(q.to_vec(), full_half);
                        let outer_q =
                            transform_query(&self.key, &outer.to_spec()).map_err(Error::Core)?;
                        timing.prep_ms += ms_since(t2);
                        return self.fetch_and_rank(conn, q, k, outer_q, rounds, timing);
                    }
                    let next = if upper.half_edge > 0.0 {
                        upper.half_edge * 2.0
                    } else {
                        0.025 * NORMALIZED_DOMAIN_LENGTH
                    };
                    upper = SquareRange::new(q.to_vec(), next.min(full_half));
                }
                Err(e) => return Err(Error::Core(e)),
            }
        }
    }

    fn fetch_and_rank(
        &self,
        conn: &mut Connection,
        q: &[f64],
        k: usize,
        outer_q: SecureRangeQuery,
        rounds: usize,
        mut timing: QueryTiming,
    ) -> Result<KnnOutput> {
        let t0 = Instant::now();
        let fetched = conn.fetch_range(&outer_q).map_err(Error::Core)?;
        timing.server_ms += ms_since(t0);

        let t1 = Instant::now();
        let candidates = fetched.len();
        let decrypted: Vec<(u64, PlainRecord)> = fetched
            .into_iter()
            .map(|(id, envelope)| {
                self.key
                    .open_envelope(&envelope)
                    .map(|r| (id, r))
                    .map_err(Error::Core)
            })
            .collect::<Result<_>>()?;
        let top = select_top_k(q, k, decrypted);
        timing.post_ms += ms_since(t1);

        let (ids, records): (Vec<u64>, Vec<PlainRecord>) = top.into_iter().unzip();
        let rows = records.iter().map(|r| self.manifest.render_row(r)).collect();
        Ok(KnnOutput {
            ids,
            records,
            rows,
            candidates,
            rounds,
            timing,
        })
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}
