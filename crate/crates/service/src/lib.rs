pub mod bench;
pub mod config;
pub mod dataset;
pub mod error;
pub mod filter;
pub mod proxy;
pub mod server;
pub mod store;
pub mod wire;

pub use config::ServiceConfig;
pub use dataset::{ColumnSchema, ColumnType, DatasetManifest};
pub use error::{Error, Result};
pub use proxy::{Connection, Proxy};
pub use server::{serve, ServerHandle};
