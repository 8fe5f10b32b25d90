//! kNN through range queries.
//!
//! The proxy sends two secured square ranges around the query point: a
//! degenerate lower bound and an upper bound that should hold at least k
//! points. The server binary-searches between them for a square holding
//! between `k` and `k + delta` points, deriving each middle range purely by
//! averaging the secured conditions (entrywise for the Theta matrices,
//! componentwise for the bounding boxes) - no key material is involved.
//! The server returns its decision trace; the proxy replays it through the
//! OPE inverse to recover the plaintext inner square, expands it to the
//! outer square that circumscribes the inner square's enclosing sphere
//! (guaranteeing 100% recall), fetches the outer range, and keeps the top
//! k by true distance.

use crate::error::{Error, Result};
use crate::index::IndexStore;
use crate::perturb::{PlainRecord, RaspKey};
use crate::query::{transform_query, Mbr, RangeQuerySpec, SecureRangeQuery, ThetaMatrix};

/// Length convention for the normalized domain (4 sigma), used by the
/// default initial-bound policy.
pub const NORMALIZED_DOMAIN_LENGTH: f64 = 4.0;

/// Default termination width, relative to the initial bracket.
pub const DEFAULT_EPS_TERMINATE: f64 = 1e-6;

/// Hyper-cube centered at a query point.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareRange {
    pub center: Vec<f64>,
    pub half_edge: f64,
}

impl SquareRange {
    pub fn new(center: Vec<f64>, half_edge: f64) -> Self {
        assert!(half_edge >= 0.0, "half edge must be non-negative");
        SquareRange { center, half_edge }
    }

    pub fn degenerate(center: Vec<f64>) -> Self {
        SquareRange {
            center,
            half_edge: 0.0,
        }
    }

    pub fn edge(&self) -> f64 {
        2.0 * self.half_edge
    }

    pub fn to_spec(&self) -> RangeQuerySpec {
        RangeQuerySpec::from_intervals(
            self.center
                .iter()
                .map(|&c| (c - self.half_edge, c + self.half_edge))
                .collect(),
        )
        .expect("square ranges are always well-formed intervals")
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.center
            .iter()
            .zip(x)
            .all(|(c, v)| (v - c).abs() <= self.half_edge)
    }
}

/// How the proxy chooses the initial upper-bound range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundPolicy {
    /// Caller-specified edge length (the "nearest gas station in 5 miles"
    /// style of bound).
    UserBound { edge: f64 },
    /// Edge scales with the query point's distance to the distribution
    /// center: `q_j - eps*gamma <= X_j <= q_j + eps*gamma`.
    CenterDistance { epsilon: f64 },
    /// Whole trained domain.
    FullDomain,
}

impl Default for BoundPolicy {
    /// 5% of the normalized domain length.
    fn default() -> Self {
        BoundPolicy::UserBound {
            edge: 0.05 * NORMALIZED_DOMAIN_LENGTH,
        }
    }
}

/// The wire form of a kNN session opener: both secured bounds and the
/// search parameters. Carries no key material by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnRequest {
    pub lower: SecureRangeQuery,
    pub upper: SecureRangeQuery,
    pub k: usize,
    pub delta: usize,
    pub eps_terminate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The count landed inside `[k, k + delta]`.
    DeltaHit,
    /// The bracket shrank below the termination width; the reported range
    /// is the smallest visited range still holding at least k points.
    WidthExhausted,
}

/// The server's answer to a kNN opener: enough for the proxy to replay the
/// binary search, nothing more.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerRangeResult {
    /// One bit per bound update: true = upper moved down, false = lower
    /// moved up. The break round (on a delta hit) contributes no bit.
    pub trace: Vec<bool>,
    /// Points inside the final range.
    pub count: usize,
    /// Count queries issued inside the loop.
    pub rounds: usize,
    pub termination: Termination,
}

/// Entrywise average of two secured conditions on the same dimension and
/// side. With the OPE component this equals the condition for the
/// "between" bound `b` with `f(b) = (f(high) + f(low)) / 2`.
pub fn theta_midpoint(high: &ThetaMatrix, low: &ThetaMatrix) -> Result<ThetaMatrix> {
    if high.dim != low.dim || high.side != low.side {
        return Err(Error::ThetaMismatch(format!(
            "cannot average dimension {} {:?} with dimension {} {:?}",
            high.dim, high.side, low.dim, low.side
        )));
    }
    Ok(ThetaMatrix {
        dim: high.dim,
        side: high.side,
        m: high.m.add(&low.m).scale(0.5),
    })
}

/// Componentwise average of two bounding boxes; encloses the true box of
/// the between range.
pub fn mbr_midpoint(high: &Mbr, low: &Mbr) -> Mbr {
    high.midpoint(low)
}

/// Averages a whole secured query pair, condition by condition.
pub fn query_midpoint(high: &SecureRangeQuery, low: &SecureRangeQuery) -> Result<SecureRangeQuery> {
    if high.thetas.len() != low.thetas.len() {
        return Err(Error::ThetaMismatch(format!(
            "condition counts differ: {} vs {}",
            high.thetas.len(),
            low.thetas.len()
        )));
    }
    let thetas = high
        .thetas
        .iter()
        .zip(&low.thetas)
        .map(|(h, l)| theta_midpoint(h, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(SecureRangeQuery {
        mbr: mbr_midpoint(&high.mbr, &low.mbr),
        thetas,
    })
}

/// Server-side binary search for a `(k, delta)`-range. Consumes only the
/// secured request and the index; the signature admits no key.
pub fn k_delta_range_search(index: &IndexStore, req: &KnnRequest) -> Result<InnerRangeResult> {
    let (upper_count, _) = index.count_in_range(&req.upper)?;
    if upper_count < req.k {
        return Err(Error::NeedLargerUpperBound {
            found: upper_count,
            k: req.k,
        });
    }
    let mut cur_low = req.lower.clone();
    let mut cur_high = req.upper.clone();
    let mut high_count = upper_count;
    let mut t_low = 0.0f64;
    let mut t_high = 1.0f64;
    let mut trace = Vec::new();
    let mut rounds = 0usize;

    while t_high - t_low >= req.eps_terminate {
        let mid = query_midpoint(&cur_high, &cur_low)?;
        let (num, _) = index.count_in_range(&mid)?;
        rounds += 1;
        if num >= req.k && num <= req.k + req.delta {
            return Ok(InnerRangeResult {
                trace,
                count: num,
                rounds,
                termination: Termination::DeltaHit,
            });
        }
        let t_mid = 0.5 * (t_low + t_high);
        if num > req.k + req.delta {
            cur_high = mid;
            high_count = num;
            t_high = t_mid;
            trace.push(true);
        } else {
            cur_low = mid;
            t_low = t_mid;
            trace.push(false);
        }
    }
    Ok(InnerRangeResult {
        trace,
        count: high_count,
        rounds,
        termination: Termination::WidthExhausted,
    })
}

/// Proxy-side context needed to replay a server trace: the OPE images of
/// both initial bounds, per dimension.
#[derive(Debug, Clone)]
pub struct KnnReplay {
    center: Vec<f64>,
    // (at t = 0, at t = 1) per dimension, for the upper and lower bounds.
    upper_ope: Vec<(f64, f64)>,
    lower_ope: Vec<(f64, f64)>,
}

/// Builds the secured request and the replay context for one kNN session.
pub fn prepare_knn_request(
    key: &RaspKey,
    inner: &SquareRange,
    outer: &SquareRange,
    k: usize,
    delta: usize,
    eps_terminate: f64,
) -> Result<(KnnRequest, KnnReplay)> {
    if k == 0 {
        return Err(Error::MalformedQuery("k must be at least 1".into()));
    }
    if inner.center != outer.center {
        return Err(Error::MalformedQuery(
            "initial bounds must share the query point".into(),
        ));
    }
    if inner.half_edge > outer.half_edge {
        return Err(Error::MalformedQuery(
            "lower-bound range exceeds the upper-bound range".into(),
        ));
    }
    let d = key.dims();
    if inner.center.len() != d {
        return Err(Error::MalformedQuery(format!(
            "query point has {} dimensions, key expects {d}",
            inner.center.len()
        )));
    }
    let lower = transform_query(key, &inner.to_spec())?;
    let upper = transform_query(key, &outer.to_spec())?;
    let mut upper_ope = Vec::with_capacity(d);
    let mut lower_ope = Vec::with_capacity(d);
    for j in 0..d {
        let q = inner.center[j];
        upper_ope.push((
            key.ope().encrypt_query_constant(j, q + inner.half_edge),
            key.ope().encrypt_query_constant(j, q + outer.half_edge),
        ));
        lower_ope.push((
            key.ope().encrypt_query_constant(j, q - inner.half_edge),
            key.ope().encrypt_query_constant(j, q - outer.half_edge),
        ));
    }
    Ok((
        KnnRequest {
            lower,
            upper,
            k,
            delta,
            eps_terminate,
        },
        KnnReplay {
            center: inner.center.clone(),
            upper_ope,
            lower_ope,
        },
    ))
}

/// Replays the server's decision trace through the OPE inverse and returns
/// the plaintext inner square (the smallest square centered at the query
/// point that covers the counted range).
pub fn replay_inner_range(
    key: &RaspKey,
    replay: &KnnReplay,
    inner: &InnerRangeResult,
) -> SquareRange {
    let mut t_low = 0.0f64;
    let mut t_high = 1.0f64;
    for &bit in &inner.trace {
        let t_mid = 0.5 * (t_low + t_high);
        if bit {
            t_high = t_mid;
        } else {
            t_low = t_mid;
        }
    }
    let t = match inner.termination {
        Termination::DeltaHit => 0.5 * (t_low + t_high),
        Termination::WidthExhausted => t_high,
    };
    let mut half: f64 = 0.0;
    for (j, q) in replay.center.iter().enumerate() {
        let (u0, u1) = replay.upper_ope[j];
        let (l0, l1) = replay.lower_ope[j];
        let upper = key.ope().decrypt(j, u0 + t * (u1 - u0));
        let lower = key.ope().decrypt(j, l0 + t * (l1 - l0));
        half = half.max(upper - q).max(q - lower);
    }
    SquareRange {
        center: replay.center.clone(),
        half_edge: half.max(0.0),
    }
}

/// The outer square circumscribes the sphere that circumscribes the inner
/// square, so it is guaranteed to contain the k nearest neighbors.
pub fn outer_range_from_inner(inner: &SquareRange) -> SquareRange {
    let d = inner.center.len() as f64;
    SquareRange {
        center: inner.center.clone(),
        half_edge: inner.half_edge * d.sqrt(),
    }
}

/// Initial bounds per policy. The lower bound is always the degenerate
/// square at the query point.
pub fn initial_bounds(q: &[f64], policy: &BoundPolicy, key: &RaspKey) -> (SquareRange, SquareRange) {
    let lower = SquareRange::degenerate(q.to_vec());
    let half = match policy {
        BoundPolicy::UserBound { edge } => 0.5 * edge,
        BoundPolicy::CenterDistance { epsilon } => {
            let gamma = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            epsilon * gamma
        }
        BoundPolicy::FullDomain => full_domain_half_edge(key, q),
    };
    (lower, SquareRange::new(q.to_vec(), half))
}

/// Half edge beyond which every dimension's interval clamps to the whole
/// trained OPE range, i.e. the square covers the entire dataset.
pub fn full_domain_half_edge(key: &RaspKey, q: &[f64]) -> f64 {
    let mut half: f64 = 0.0;
    for (j, &qj) in q.iter().enumerate() {
        let src = key.ope().dim(j).source_boundaries();
        let lo = src[0];
        let hi = src[src.len() - 1];
        half = half.max(hi - qj).max(qj - lo);
    }
    // Nudge past the boundary so the OPE images reach both extremes.
    half * (1.0 + 1e-9) + 1e-9
}

/// Where the proxy's kNN rounds go: in-process against an index, or over
/// a connection in the service layer.
pub trait KnnTransport {
    fn inner_range_search(&mut self, req: &KnnRequest) -> Result<InnerRangeResult>;
    fn fetch_range(&mut self, q: &SecureRangeQuery) -> Result<Vec<(u64, Vec<u8>)>>;
}

impl KnnTransport for &IndexStore {
    fn inner_range_search(&mut self, req: &KnnRequest) -> Result<InnerRangeResult> {
        k_delta_range_search(self, req)
    }

    fn fetch_range(&mut self, q: &SecureRangeQuery) -> Result<Vec<(u64, Vec<u8>)>> {
        let result = self.two_stage_query(q)?;
        Ok(result.ids.into_iter().zip(result.envelopes).collect())
    }
}

/// Euclidean distance in the normalized original domain.
pub fn distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact top-k among decrypted candidates by Euclidean distance to the
/// query point; equidistant records order by ascending id.
pub fn select_top_k(
    q: &[f64],
    k: usize,
    mut decrypted: Vec<(u64, PlainRecord)>,
) -> Vec<(u64, PlainRecord)> {
    decrypted.sort_by(|(ida, a), (idb, b)| {
        distance_sq(&a.values, q)
            .total_cmp(&distance_sq(&b.values, q))
            .then(ida.cmp(idb))
    });
    decrypted.truncate(k);
    decrypted
}

/// Candidates fetched from the outer range together with the exact answer
/// drawn from them.
#[derive(Debug, Clone)]
pub struct KnnOutcome {
    pub neighbors: Vec<(u64, PlainRecord)>,
    /// Outer-range candidate count (the denominator of the precision
    /// measure).
    pub candidates: usize,
    /// Binary-search rounds the server executed.
    pub rounds: usize,
}

/// Full kNN protocol from the proxy's point of view: prepare bounds, let
/// the server find the inner range, replay, fetch outer, decrypt and keep
/// the exact top k (ties broken by ascending record id). Retries with a
/// doubled upper bound when the initial one holds fewer than k points,
/// capped at the full domain.
pub fn knn_query<T: KnnTransport>(
    key: &RaspKey,
    transport: &mut T,
    q: &[f64],
    k: usize,
    delta: usize,
    policy: &BoundPolicy,
) -> Result<KnnOutcome> {
    let (lower, mut upper) = initial_bounds(q, policy, key);
    let full_half = full_domain_half_edge(key, q);
    let mut rounds = 0usize;
    loop {
        let upper_clamped = SquareRange::new(q.to_vec(), upper.half_edge.min(full_half));
        let (req, replay) =
            prepare_knn_request(key, &lower, &upper_clamped, k, delta, DEFAULT_EPS_TERMINATE)?;
        match transport.inner_range_search(&req) {
            Ok(inner) => {
                rounds = inner.rounds;
                let inner_sq = replay_inner_range(key, &replay, &inner);
                let outer = outer_range_from_inner(&inner_sq);
                return finish_knn(key, transport, q, k, &outer, rounds);
            }
            Err(Error::NeedLargerUpperBound { .. }) => {
                if upper_clamped.half_edge >= full_half {
                    // Fewer than k records exist; fetch the whole domain
                    // and return everything there is.
                    let outer = SquareRange::new(q.to_vec(), full_half);
                    return finish_knn(key, transport, q, k, &outer, rounds);
                }
                let next = if upper.half_edge > 0.0 {
                    upper.half_edge * 2.0
                } else {
                    0.025 * NORMALIZED_DOMAIN_LENGTH
                };
                upper = SquareRange::new(q.to_vec(), next.min(full_half));
            }
            Err(e) => return Err(e),
        }
    }
}

fn finish_knn<T: KnnTransport>(
    key: &RaspKey,
    transport: &mut T,
    q: &[f64],
    k: usize,
    outer: &SquareRange,
    rounds: usize,
) -> Result<KnnOutcome> {
    let outer_q = transform_query(key, &outer.to_spec())?;
    let fetched = transport.fetch_range(&outer_q)?;
    let candidates = fetched.len();
    let decrypted: Vec<(u64, PlainRecord)> = fetched
        .into_iter()
        .map(|(id, envelope)| Ok((id, key.open_envelope(&envelope)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(KnnOutcome {
        neighbors: select_top_k(q, k, decrypted),
        candidates,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ope::{OpeDimensionKey, OpeKey};
    use crate::perturb::{normalize_dataset, perturb_dataset, KeyParams, PlainRecord};
    use crate::query::Side;
    use crate::query::{CompareOp, SimpleCondition};
    use crate::{linalg, NoiseSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn identity_ope_key(d: usize, seed: u64) -> RaspKey {
        let mut r = rng(seed);
        let a = linalg::generate_invertible_matrix(d + 2, &mut r).unwrap();
        let dims = (0..d)
            .map(|_| {
                OpeDimensionKey::from_boundaries(vec![-4.0, 4.0], vec![-4.0, 4.0], 4.0).unwrap()
            })
            .collect();
        RaspKey::from_parts(a, OpeKey::from_dims(dims, 1), NoiseSpec::default(), [9u8; 32])
            .unwrap()
    }

    fn trained_fixture(
        n: usize,
        d: usize,
        seed: u64,
    ) -> (RaspKey, Vec<Vec<f64>>, IndexStore) {
        let mut r = rng(seed);
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.gen::<f64>()).collect())
            .collect();
        let (normalized, _) = normalize_dataset(&raw).unwrap();
        let key = RaspKey::generate(
            &normalized,
            &KeyParams {
                buckets: 64,
                ..KeyParams::default()
            },
            &mut r,
        )
        .unwrap();
        let plain: Vec<PlainRecord> = normalized
            .iter()
            .map(|v| PlainRecord::new(v.clone()))
            .collect();
        let perturbed = perturb_dataset(&key, &plain, &mut r);
        let store = IndexStore::build(perturbed, 20).unwrap();
        (key, normalized, store)
    }

    fn build_upper_theta(key: &RaspKey, dim: usize, constant: f64) -> ThetaMatrix {
        let cond = SimpleCondition {
            dim,
            op: CompareOp::Le,
            constant,
        };
        let (w, q) = crate::query::build_halfspace_vectors(key, &cond).unwrap();
        crate::query::build_theta(key, &w, &q, dim, Side::Upper)
    }

    #[test]
    fn midpoint_of_identical_thetas_is_identity() {
        let key = identity_ope_key(2, 1);
        let t = build_upper_theta(&key, 0, 0.7);
        let mid = theta_midpoint(&t, &t).unwrap();
        assert!(mid.m.max_abs_diff(&t.m) < 1e-15);
    }

    #[test]
    fn theta_midpoint_equals_directly_built_between_condition() {
        // With a trained (non-trivial) OPE: the server average must equal
        // the proxy's direct transformation of b = f^-1((f(h) + f(l)) / 2).
        let (key, _, _) = trained_fixture(1000, 3, 2);
        let mut r = rng(3);
        for _ in 0..200 {
            let dim = r.gen_range(0..3);
            let h = r.gen::<f64>() * 2.0 - 0.5;
            let l = h - r.gen::<f64>().abs() - 0.1;
            let theta_h = build_upper_theta(&key, dim, h);
            let theta_l = build_upper_theta(&key, dim, l);
            let avg = theta_midpoint(&theta_h, &theta_l).unwrap();
            let f_h = key.ope().encrypt_query_constant(dim, h);
            let f_l = key.ope().encrypt_query_constant(dim, l);
            let b = key.ope().decrypt(dim, 0.5 * (f_h + f_l));
            let direct = build_upper_theta(&key, dim, b);
            assert!(
                avg.m.max_abs_diff(&direct.m) < 1e-9,
                "between-condition deviates by {}",
                avg.m.max_abs_diff(&direct.m)
            );
        }
    }

    #[test]
    fn repeated_halving_reaches_the_quarter_point() {
        let (key, _, _) = trained_fixture(1000, 2, 4);
        let h = 1.1;
        let l = -0.9;
        let theta_h = build_upper_theta(&key, 0, h);
        let theta_l = build_upper_theta(&key, 0, l);
        let mid = theta_midpoint(&theta_h, &theta_l).unwrap();
        let quarter = theta_midpoint(&mid, &theta_l).unwrap();
        let f_h = key.ope().encrypt_query_constant(0, h);
        let f_l = key.ope().encrypt_query_constant(0, l);
        let b = key.ope().decrypt(0, 0.25 * f_h + 0.75 * f_l);
        let direct = build_upper_theta(&key, 0, b);
        assert!(quarter.m.max_abs_diff(&direct.m) < 1e-9);
    }

    #[test]
    fn mismatched_sides_refuse_to_average() {
        let key = identity_ope_key(2, 5);
        let upper = build_upper_theta(&key, 0, 0.5);
        let cond = SimpleCondition {
            dim: 0,
            op: CompareOp::Ge,
            constant: -0.5,
        };
        let (w, q) = crate::query::build_halfspace_vectors(&key, &cond).unwrap();
        let lower = crate::query::build_theta(&key, &w, &q, 0, Side::Lower);
        assert!(theta_midpoint(&upper, &lower).is_err());
    }

    #[test]
    fn mbr_midpoint_identity_and_plain_averaging() {
        let a = Mbr::from_bounds(vec![(0.0, 2.0), (-1.0, 1.0)]);
        assert_eq!(mbr_midpoint(&a, &a), a);
        let b = Mbr::from_bounds(vec![(4.0, 6.0), (1.0, 3.0)]);
        let mid = mbr_midpoint(&a, &b);
        assert_eq!(mid.bounds(), &[(2.0, 4.0), (0.0, 2.0)]);
    }

    #[test]
    fn averaged_mbr_encloses_true_between_mbr() {
        let (key, _, _) = trained_fixture(1200, 2, 6);
        let mut r = rng(7);
        for _ in 0..300 {
            let q: Vec<f64> = (0..2).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect();
            let h_low = r.gen::<f64>() * 0.2;
            let h_high = h_low + r.gen::<f64>() * 0.8 + 0.05;
            let low_sq = SquareRange::new(q.clone(), h_low);
            let high_sq = SquareRange::new(q.clone(), h_high);
            let low = transform_query(&key, &low_sq.to_spec()).unwrap();
            let high = transform_query(&key, &high_sq.to_spec()).unwrap();
            let averaged = mbr_midpoint(&high.mbr, &low.mbr);
            // True between range: per-dimension OPE-space averages of the
            // bound images, mapped back and re-transformed from vertices.
            let between = RangeQuerySpec::from_intervals(
                (0..2)
                    .map(|j| {
                        let f = |x: f64| key.ope().encrypt_query_constant(j, x);
                        let lo = key
                            .ope()
                            .decrypt(j, 0.5 * (f(q[j] - h_low) + f(q[j] - h_high)));
                        let hi = key
                            .ope()
                            .decrypt(j, 0.5 * (f(q[j] + h_low) + f(q[j] + h_high)));
                        (lo, hi)
                    })
                    .collect(),
            )
            .unwrap();
            let true_mid = transform_query(&key, &between).unwrap();
            for ((alo, ahi), (tlo, thi)) in averaged.bounds().iter().zip(true_mid.mbr.bounds()) {
                assert!(
                    alo - 1e-9 <= *tlo && *thi <= ahi + 1e-9,
                    "between MBR escaped the averaged MBR"
                );
            }
        }
    }

    /// Lays out 1-D data so the halving thresholds see counts
    /// 100 -> 12 -> 5 -> 3 with k = 3, delta = 0.
    #[test]
    fn scripted_binary_search_terminates_at_delta_hit() {
        let key = identity_ope_key(1, 8);
        let mut values = vec![0.0, 0.05, -0.08]; // 3 inside |x| <= 0.1
        values.extend([0.15, -0.18]); // 2 more inside |x| <= 0.2
        for i in 0..7 {
            values.push(0.21 + 0.025 * i as f64); // 7 more inside |x| <= 0.4
        }
        for i in 0..88 {
            values.push(0.41 + 0.004 * i as f64); // rest inside |x| <= 0.8
        }
        let plain: Vec<PlainRecord> = values.iter().map(|&v| PlainRecord::new(vec![v])).collect();
        let mut r = rng(9);
        let perturbed = perturb_dataset(&key, &plain, &mut r);
        let store = IndexStore::build(perturbed, 20).unwrap();
        let lower = SquareRange::degenerate(vec![0.0]);
        let upper = SquareRange::new(vec![0.0], 0.8);
        let (req, _) = prepare_knn_request(&key, &lower, &upper, 3, 0, 1e-6).unwrap();
        let inner = k_delta_range_search(&store, &req).unwrap();
        assert_eq!(inner.count, 3);
        assert_eq!(inner.rounds, 3);
        assert_eq!(inner.trace, vec![true, true]);
        assert_eq!(inner.termination, Termination::DeltaHit);
    }

    /// Plaintext simulator of the server search, counting in OPE space.
    fn simulate_search(
        key: &RaspKey,
        data: &[Vec<f64>],
        lower: &SquareRange,
        upper: &SquareRange,
        k: usize,
        delta: usize,
        eps: f64,
    ) -> (Vec<bool>, usize, usize, Termination) {
        let d = lower.center.len();
        let enc = |j: usize, x: f64| key.ope().encrypt_query_constant(j, x);
        let images: Vec<Vec<f64>> = data
            .iter()
            .map(|row| (0..d).map(|j| key.ope().encrypt(j, row[j])).collect())
            .collect();
        let count_at = |t: f64| -> usize {
            images
                .iter()
                .filter(|img| {
                    (0..d).all(|j| {
                        let q = lower.center[j];
                        let u0 = enc(j, q + lower.half_edge);
                        let u1 = enc(j, q + upper.half_edge);
                        let l0 = enc(j, q - lower.half_edge);
                        let l1 = enc(j, q - upper.half_edge);
                        let hi = u0 + t * (u1 - u0);
                        let lo = l0 + t * (l1 - l0);
                        img[j] >= lo && img[j] <= hi
                    })
                })
                .count()
        };
        let mut t_low = 0.0f64;
        let mut t_high = 1.0f64;
        let mut high_count = count_at(1.0);
        let mut trace = Vec::new();
        let mut rounds = 0;
        while t_high - t_low >= eps {
            let t_mid = 0.5 * (t_low + t_high);
            let num = count_at(t_mid);
            rounds += 1;
            if num >= k && num <= k + delta {
                return (trace, num, rounds, Termination::DeltaHit);
            }
            if num > k + delta {
                t_high = t_mid;
                high_count = num;
                trace.push(true);
            } else {
                t_low = t_mid;
                trace.push(false);
            }
        }
        (trace, high_count, rounds, Termination::WidthExhausted)
    }

    #[test]
    fn server_search_matches_plaintext_simulation() {
        let (key, data, store) = trained_fixture(2000, 2, 10);
        let mut r = rng(11);
        for _ in 0..30 {
            let q: Vec<f64> = (0..2).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect();
            let lower = SquareRange::degenerate(q.clone());
            let upper = SquareRange::new(q.clone(), 0.4);
            let k = 1 + r.gen_range(0..5);
            let delta = r.gen_range(0..3);
            let (req, _) = prepare_knn_request(&key, &lower, &upper, k, delta, 1e-6).unwrap();
            match k_delta_range_search(&store, &req) {
                Ok(inner) => {
                    let (trace, count, rounds, term) =
                        simulate_search(&key, &data, &lower, &upper, k, delta, 1e-6);
                    assert_eq!(inner.trace, trace);
                    assert_eq!(inner.count, count);
                    assert_eq!(inner.rounds, rounds);
                    assert_eq!(inner.termination, term);
                }
                Err(Error::NeedLargerUpperBound { found, .. }) => {
                    // Legitimate when the 0.4-half square is sparse.
                    assert!(found < k);
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn collocated_point_with_k1_shrinks_without_raising() {
        let (key, mut data, _) = trained_fixture(500, 2, 12);
        data.push(vec![0.1, -0.2]);
        let plain: Vec<PlainRecord> = data.iter().map(|v| PlainRecord::new(v.clone())).collect();
        let mut r = rng(13);
        let perturbed = perturb_dataset(&key, &plain, &mut r);
        let store = IndexStore::build(perturbed, 20).unwrap();
        let q = vec![0.1, -0.2];
        let lower = SquareRange::degenerate(q.clone());
        let upper = SquareRange::new(q.clone(), 0.3);
        let (req, replay) = prepare_knn_request(&key, &lower, &upper, 1, 0, 1e-6).unwrap();
        let inner = k_delta_range_search(&store, &req).unwrap();
        assert!(inner.count >= 1);
        // The replayed square must still contain the collocated point.
        let sq = replay_inner_range(&key, &replay, &inner);
        assert!(sq.contains(&q));
    }

    #[test]
    fn rounds_shrink_or_hold_as_delta_grows() {
        let (key, _, store) = trained_fixture(3000, 2, 14);
        let q = vec![0.3, 0.3];
        let lower = SquareRange::degenerate(q.clone());
        let upper = SquareRange::new(q.clone(), 0.5);
        let mut last_rounds = usize::MAX;
        for delta in [0usize, 2, 5, 10] {
            let (req, _) = prepare_knn_request(&key, &lower, &upper, 5, delta, 1e-6).unwrap();
            let inner = k_delta_range_search(&store, &req).unwrap();
            assert!(
                inner.rounds <= last_rounds,
                "rounds grew from {last_rounds} to {} at delta {delta}",
                inner.rounds
            );
            last_rounds = inner.rounds;
        }
    }

    #[test]
    fn rounds_bounded_by_bracket_shrink_rate() {
        let (key, _, store) = trained_fixture(2000, 2, 15);
        let mut r = rng(16);
        let budget = (1.0f64 / 1e-6).log2().ceil() as usize;
        for _ in 0..20 {
            let q: Vec<f64> = (0..2).map(|_| r.gen::<f64>() - 0.5).collect();
            let (req, _) = prepare_knn_request(
                &key,
                &SquareRange::degenerate(q.clone()),
                &SquareRange::new(q, 0.6),
                3,
                0,
                1e-6,
            )
            .unwrap();
            if let Ok(inner) = k_delta_range_search(&store, &req) {
                assert!(inner.rounds <= budget, "{} rounds > {budget}", inner.rounds);
            }
        }
    }

    #[test]
    fn nested_squares_have_monotone_counts() {
        let (key, _, store) = trained_fixture(2000, 2, 17);
        let q = vec![0.0, 0.0];
        let mut last = 0usize;
        for i in 1..=10 {
            let sq = SquareRange::new(q.clone(), 0.08 * i as f64);
            let secured = transform_query(&key, &sq.to_spec()).unwrap();
            let (count, _) = store.count_in_range(&secured).unwrap();
            assert!(count >= last, "count dropped on a larger square");
            last = count;
        }
    }

    #[test]
    fn outer_range_scales_by_sqrt_d() {
        let inner2 = SquareRange::new(vec![0.0, 0.0], 1.0);
        let outer2 = outer_range_from_inner(&inner2);
        assert!((outer2.edge() - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
        let inner1 = SquareRange::new(vec![0.5], 0.7);
        let outer1 = outer_range_from_inner(&inner1);
        assert_eq!(outer1.half_edge, inner1.half_edge);
    }

    fn exact_knn(data: &[Vec<f64>], q: &[f64], k: usize) -> Vec<u64> {
        let mut order: Vec<(u64, f64)> = data
            .iter()
            .enumerate()
            .map(|(i, row)| (i as u64, distance_sq(row, q)))
            .collect();
        order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        order.truncate(k);
        order.into_iter().map(|(i, _)| i).collect()
    }

    #[test]
    fn recall_audit_outer_range_contains_exact_neighbors() {
        let (key, data, store) = trained_fixture(2000, 2, 18);
        let mut r = rng(19);
        for _ in 0..200 {
            let q: Vec<f64> = (0..2).map(|_| r.gen::<f64>() * 2.4 - 1.2).collect();
            let mut transport = &store;
            let outcome = knn_query(&key, &mut transport, &q, 5, 0, &BoundPolicy::default())
                .expect("knn must succeed");
            let expected = exact_knn(&data, &q, 5);
            let got: Vec<u64> = outcome.neighbors.iter().map(|(id, _)| *id).collect();
            assert_eq!(got, expected, "kNN result diverged from the oracle");
        }
    }

    #[test]
    fn knn_with_k_equal_n_returns_everything() {
        let (key, data, store) = trained_fixture(300, 2, 20);
        let mut transport = &store;
        let outcome = knn_query(
            &key,
            &mut transport,
            &[0.2, -0.4],
            data.len(),
            0,
            &BoundPolicy::default(),
        )
        .unwrap();
        assert_eq!(outcome.neighbors.len(), data.len());
    }

    #[test]
    fn knn_with_k_above_n_returns_all_records() {
        let (key, data, store) = trained_fixture(120, 2, 21);
        let mut transport = &store;
        let outcome = knn_query(
            &key,
            &mut transport,
            &[0.0, 0.0],
            data.len() + 50,
            0,
            &BoundPolicy::default(),
        )
        .unwrap();
        assert_eq!(outcome.neighbors.len(), data.len());
    }

    #[test]
    fn center_distance_policy_scales_with_query_norm() {
        let (key, _, _) = trained_fixture(400, 2, 22);
        let q = vec![0.6, -0.8]; // norm 1.0
        let (lower, upper) = initial_bounds(&q, &BoundPolicy::CenterDistance { epsilon: 0.5 }, &key);
        assert_eq!(lower.half_edge, 0.0);
        assert!((upper.half_edge - 0.5).abs() < 1e-12);
    }

    #[test]
    fn default_policy_is_five_percent_of_the_domain() {
        let (key, _, _) = trained_fixture(400, 2, 23);
        let (_, upper) = initial_bounds(&[0.0, 0.0], &BoundPolicy::default(), &key);
        assert!((upper.edge() - 0.05 * NORMALIZED_DOMAIN_LENGTH).abs() < 1e-12);
    }

    #[test]
    fn full_domain_policy_covers_the_trained_range() {
        let (key, data, _) = trained_fixture(400, 2, 24);
        let q = vec![0.9, 0.9];
        let (_, upper) = initial_bounds(&q, &BoundPolicy::FullDomain, &key);
        for row in &data {
            assert!(upper.contains(row), "trained point escaped the full-domain square");
        }
    }
}
