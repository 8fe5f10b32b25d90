pub mod attack;
pub mod envelope;
pub mod error;
pub mod index;
pub mod knn;
pub mod linalg;
pub mod ope;
pub mod perturb;
pub mod query;

pub use attack::{AttackReport, DistributionSpec, IcaConfig};
pub use error::{Error, Result};
pub use index::{BlockCounter, IndexStore, QueryResult};
pub use knn::{BoundPolicy, InnerRangeResult, KnnRequest, SquareRange, Termination};
pub use linalg::{Mat, NoiseSpec};
pub use ope::{OpeDimensionKey, OpeKey};
pub use perturb::{KeyParams, PerturbedRecord, PlainRecord, RaspKey};
pub use query::{Mbr, RangeQuerySpec, SecureRangeQuery, Side, SimpleCondition, ThetaMatrix};
