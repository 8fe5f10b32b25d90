//! The untrusted query server. It holds perturbed records and their
//! index, answers secured range queries and kNN rounds, and never touches
//! key material: nothing in its constructor or wire surface can carry a
//! key.

use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;

use rasp_core::knn::k_delta_range_search;
use rasp_core::query::MAX_QUERY_DIMS;
use rasp_core::{Error as CoreError, IndexStore};

use crate::error::Result;
use crate::wire::{self, error_code, MessageBody, WireMessage};

type SharedStore = Arc<RwLock<Option<Arc<IndexStore>>>>;

pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the accept loop exits (i.e. forever, absent a
    /// shutdown); used by the CLI serve command.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop();
        }
    }
}

/// Binds and serves on a background thread. `store` may start empty and be
/// filled by an UploadDataset message; `capacity` applies to indexes the
/// server builds from uploads.
pub fn serve<A: ToSocketAddrs>(
    addr: A,
    store: Option<IndexStore>,
    capacity: usize,
) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let shared: SharedStore = Arc::new(RwLock::new(store.map(Arc::new)));
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let thread = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let _ = stream.set_nodelay(true);
            let state = shared.clone();
            std::thread::spawn(move || {
                let _ = handle_connection(stream, state, capacity);
            });
        }
    });
    Ok(ServerHandle {
        addr,
        shutdown,
        thread: Some(thread),
    })
}

fn handle_connection(mut stream: TcpStream, state: SharedStore, capacity: usize) -> Result<()> {
    loop {
        let msg = match wire::read_frame(&mut stream) {
            Ok(Some(msg)) => msg,
            Ok(None) => return Ok(()),
            Err(crate::error::Error::VersionMismatch { got, want }) => {
                let reply = WireMessage {
                    session: 0,
                    body: MessageBody::Error {
                        code: error_code::VERSION_MISMATCH,
                        message: format!("client speaks version {got}, server speaks {want}"),
                    },
                };
                wire::write_frame(&mut stream, &reply)?;
                return Ok(());
            }
            Err(crate::error::Error::Decode(m)) => {
                let reply = WireMessage {
                    session: 0,
                    body: MessageBody::Error {
                        code: error_code::MALFORMED,
                        message: m,
                    },
                };
                wire::write_frame(&mut stream, &reply)?;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let session = msg.session;
        let body = handle_message(msg.body, &state, capacity);
        wire::write_frame(&mut stream, &WireMessage { session, body })?;
    }
}

fn error_body(code: u32, message: impl Into<String>) -> MessageBody {
    MessageBody::Error {
        code,
        message: message.into(),
    }
}

fn map_core_error(e: CoreError) -> MessageBody {
    match e {
        CoreError::NeedLargerUpperBound { found, k } => error_body(
            error_code::NEED_LARGER_UPPER_BOUND,
            format!("upper bound holds {found} points, fewer than k = {k}"),
        ),
        CoreError::ThetaMismatch(m) | CoreError::MalformedQuery(m) => {
            error_body(error_code::MALFORMED, m)
        }
        CoreError::DimensionMismatch(m) => error_body(error_code::MALFORMED, m),
        CoreError::TooManyDimensions { got, max } => error_body(
            error_code::OVERSIZED_QUERY,
            format!("query spans {got} dimensions, cap is {max}"),
        ),
        other => error_body(error_code::INTERNAL, other.to_string()),
    }
}

fn current_store(state: &SharedStore) -> Option<Arc<IndexStore>> {
    state.read().expect("store lock poisoned").clone()
}

fn handle_message(body: MessageBody, state: &SharedStore, capacity: usize) -> MessageBody {
    match body {
        MessageBody::UploadDataset { records } => {
            let count = records.len() as u64;
            match IndexStore::build(records, capacity) {
                Ok(index) => {
                    *state.write().expect("store lock poisoned") = Some(Arc::new(index));
                    MessageBody::UploadAck { count }
                }
                Err(e) => map_core_error(e),
            }
        }
        MessageBody::RangeQuery { query } => {
            let Some(store) = current_store(state) else {
                return error_body(error_code::NO_DATASET, "no dataset loaded");
            };
            if query.query_dims() > MAX_QUERY_DIMS {
                return error_body(
                    error_code::OVERSIZED_QUERY,
                    format!(
                        "query spans {} dimensions, cap is {MAX_QUERY_DIMS}",
                        query.query_dims()
                    ),
                );
            }
            match store.two_stage_query(&query) {
                Ok(result) => MessageBody::RangeResult {
                    ids: result.ids,
                    envelopes: result.envelopes,
                    counters: result.counters,
                    stage1_count: result.stage1_count as u64,
                },
                Err(e) => map_core_error(e),
            }
        }
        MessageBody::KnnInit { request } => {
            let Some(store) = current_store(state) else {
                return error_body(error_code::NO_DATASET, "no dataset loaded");
            };
            match k_delta_range_search(&store, &request) {
                Ok(result) => MessageBody::KnnInner { result },
                Err(e) => map_core_error(e),
            }
        }
        MessageBody::KnnOuter { query } => {
            let Some(store) = current_store(state) else {
                return error_body(error_code::NO_DATASET, "no dataset loaded");
            };
            match store.two_stage_query(&query) {
                Ok(result) => MessageBody::KnnCandidates {
                    ids: result.ids,
                    envelopes: result.envelopes,
                },
                Err(e) => map_core_error(e),
            }
        }
        // Server-to-client tags arriving here mean a confused client.
        MessageBody::UploadAck { .. }
        | MessageBody::RangeResult { .. }
        | MessageBody::KnnInner { .. }
        | MessageBody::KnnCandidates { .. }
        | MessageBody::Error { .. } => {
            error_body(error_code::MALFORMED, "unexpected message direction")
        }
    }
}
