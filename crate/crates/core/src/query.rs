//! Proxy-side query transformation.
//!
//! A conjunctive range over the original dimensions becomes (a) one secured
//! quadratic condition per half-space, `Theta = -(A^-1)^T w q^T A^-1`, and
//! (b) the axis-aligned bounding box of the transformed query polyhedron,
//! found by mapping the hyper-cube vertices. For a record with extended
//! form `z = (E_ope(x), 1, v)` and perturbed form `u = A z`,
//! `u^T Theta u = (E(x_i) - E(a_i)) (v - v0)`, so records satisfying the
//! plaintext condition test `<= 0` regardless of their private noise.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::perturb::{PerturbedRecord, RaspKey};

/// Relative slack for the quadratic sign test: boundary records evaluate
/// to an exact zero in reals, so closed plaintext intervals stay closed.
/// Accumulated rounding in the quadratic form sits near 1e-14 * |u|^2;
/// the slack must stay well under |boundary margin| * (v - v0) for
/// off-boundary records, whose margin floor is 1e-7 in OPE space, or
/// small-noise records would slip through the sign test.
pub const THETA_SLACK: f64 = 1e-12;

/// Vertex enumeration is exponential in `d`; queries beyond this are
/// rejected.
pub const MAX_QUERY_DIMS: usize = 20;

/// Sentinel for "no constraint on this dimension": far outside any trained
/// range, so the OPE map clamps it to the extreme buckets.
pub const UNBOUNDED: f64 = 1e30;

/// Comparison operator of a simple condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareOp {
    Le,
    Lt,
    Ge,
    Gt,
    Eq,
}

/// One-attribute condition in the original domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimpleCondition {
    pub dim: usize,
    pub op: CompareOp,
    pub constant: f64,
}

/// Which bound of a dimension a secured condition encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

/// A conjunctive range query: one closed interval per dimension.
/// Dimensions without a condition carry the unbounded sentinel interval.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeQuerySpec {
    intervals: Vec<(f64, f64)>,
}

impl RangeQuerySpec {
    /// Full-domain query over `d` dimensions.
    pub fn full_domain(d: usize) -> Self {
        RangeQuerySpec {
            intervals: vec![(-UNBOUNDED, UNBOUNDED); d],
        }
    }

    pub fn from_intervals(intervals: Vec<(f64, f64)>) -> Result<Self> {
        for (j, (lo, hi)) in intervals.iter().enumerate() {
            // NaN bounds fail this comparison too.
            if !(lo <= hi) {
                return Err(Error::MalformedQuery(format!(
                    "dimension {j}: lower bound {lo} exceeds upper bound {hi}"
                )));
            }
        }
        Ok(RangeQuerySpec { intervals })
    }

    /// Narrows one dimension by intersecting with a simple condition.
    /// `<` and `<=` are treated alike (closed intervals with boundary
    /// slack); `=` collapses the interval to a point.
    pub fn apply(&mut self, cond: &SimpleCondition) -> Result<()> {
        if cond.dim >= self.intervals.len() {
            return Err(Error::MalformedQuery(format!(
                "condition on dimension {} but query has {}",
                cond.dim,
                self.intervals.len()
            )));
        }
        let (lo, hi) = &mut self.intervals[cond.dim];
        match cond.op {
            CompareOp::Le | CompareOp::Lt => *hi = hi.min(cond.constant),
            CompareOp::Ge | CompareOp::Gt => *lo = lo.max(cond.constant),
            CompareOp::Eq => {
                *lo = lo.max(cond.constant);
                *hi = hi.min(cond.constant);
            }
        }
        if lo > hi {
            return Err(Error::MalformedQuery(format!(
                "dimension {} conditions conflict: [{lo}, {hi}]",
                cond.dim
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.intervals.len()
    }

    pub fn interval(&self, j: usize) -> (f64, f64) {
        self.intervals[j]
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// Plaintext membership with closed bounds; the oracle the secured
    /// pipeline must reproduce.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.intervals
            .iter()
            .zip(x)
            .all(|((lo, hi), v)| *lo <= *v && *v <= *hi)
    }
}

/// Axis-aligned box over the perturbed `(d+2)`-space.
#[derive(Debug, Clone, PartialEq)]
pub struct Mbr {
    bounds: Vec<(f64, f64)>,
}

impl Mbr {
    pub fn empty(dims: usize) -> Self {
        Mbr {
            bounds: vec![(f64::INFINITY, f64::NEG_INFINITY); dims],
        }
    }

    pub fn from_bounds(bounds: Vec<(f64, f64)>) -> Self {
        Mbr { bounds }
    }

    pub fn of_point(p: &[f64]) -> Self {
        Mbr {
            bounds: p.iter().map(|&v| (v, v)).collect(),
        }
    }

    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn expand_point(&mut self, p: &[f64]) {
        for (b, &v) in self.bounds.iter_mut().zip(p) {
            b.0 = b.0.min(v);
            b.1 = b.1.max(v);
        }
    }

    pub fn expand_mbr(&mut self, other: &Mbr) {
        for (b, o) in self.bounds.iter_mut().zip(&other.bounds) {
            b.0 = b.0.min(o.0);
            b.1 = b.1.max(o.1);
        }
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        self.bounds
            .iter()
            .zip(p)
            .all(|((lo, hi), v)| *lo <= *v && *v <= *hi)
    }

    pub fn contains_mbr(&self, other: &Mbr) -> bool {
        self.bounds
            .iter()
            .zip(&other.bounds)
            .all(|((lo, hi), (olo, ohi))| lo <= olo && ohi <= hi)
    }

    pub fn intersects(&self, other: &Mbr) -> bool {
        self.bounds
            .iter()
            .zip(&other.bounds)
            .all(|((lo, hi), (olo, ohi))| lo <= ohi && olo <= hi)
    }

    /// Componentwise average of two boxes. Encloses the true bounding box
    /// of any range "between" the two inputs.
    pub fn midpoint(&self, other: &Mbr) -> Mbr {
        Mbr {
            bounds: self
                .bounds
                .iter()
                .zip(&other.bounds)
                .map(|((alo, ahi), (blo, bhi))| (0.5 * (alo + blo), 0.5 * (ahi + bhi)))
                .collect(),
        }
    }
}

/// One secured half-space condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMatrix {
    pub dim: usize,
    pub side: Side,
    pub m: Mat,
}

impl ThetaMatrix {
    /// Sign test with relative slack: true iff the perturbed record
    /// satisfies the encoded plaintext half-space (boundary inclusive).
    pub fn accepts(&self, y: &[f64]) -> bool {
        let norm_sq: f64 = y.iter().map(|v| v * v).sum();
        self.m.quadratic_form(y) <= THETA_SLACK * norm_sq
    }
}

/// What the server receives: the stage-1 bounding box and the 2d stage-2
/// quadratic conditions. No other query material ever leaves the proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct SecureRangeQuery {
    pub mbr: Mbr,
    pub thetas: Vec<ThetaMatrix>,
}

impl SecureRangeQuery {
    /// Number of original dimensions this query constrains.
    pub fn query_dims(&self) -> usize {
        self.thetas.len() / 2
    }
}

/// Builds the half-space vector pair for one simple condition, following
/// the published construction literally: for `X_i <= a`, `w` carries 1 at
/// position `i` and `-E(a)` at the homogeneous position; `q` carries `v0`
/// at the homogeneous position and `-1` at the noise position, so
/// `w^T z = E(x_i) - E(a)` and `q^T z = v0 - v`.
pub fn build_halfspace_vectors(
    key: &RaspKey,
    cond: &SimpleCondition,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = key.dims();
    if cond.dim >= d {
        return Err(Error::MalformedQuery(format!(
            "condition dimension {} out of range (d = {d})",
            cond.dim
        )));
    }
    let encrypted = key.ope().encrypt_query_constant(cond.dim, cond.constant);
    let mut w = vec![0.0; d + 2];
    match cond.op {
        CompareOp::Le | CompareOp::Lt => {
            w[cond.dim] = 1.0;
            w[d] = -encrypted;
        }
        CompareOp::Ge | CompareOp::Gt => {
            w[cond.dim] = -1.0;
            w[d] = encrypted;
        }
        CompareOp::Eq => {
            return Err(Error::UnsupportedOperator(
                "equality must be split into a degenerate interval".into(),
            ))
        }
    }
    let mut q = vec![0.0; d + 2];
    q[d] = key.noise().v0;
    q[d + 1] = -1.0;
    Ok((w, q))
}

/// Transports the half-space pair into perturbed space. The overall sign is
/// normalized so that satisfying records evaluate `u^T Theta u <= 0`:
/// `u^T Theta u = (w^T z) (v - v0)`.
pub fn build_theta(key: &RaspKey, w: &[f64], q: &[f64], dim: usize, side: Side) -> ThetaMatrix {
    let a_inv = key.matrix_inv();
    let outer = Mat::outer(w, q).scale(-1.0);
    let m = a_inv.transpose().mul(&outer).mul(a_inv);
    ThetaMatrix { dim, side, m }
}

/// Secures a full conjunctive range query: 2d quadratic conditions ordered
/// (dim 0 lower, dim 0 upper, dim 1 lower, ...) plus the bounding box of
/// the transformed hyper-cube, taken over all `2^d` vertices at both noise
/// extremes so every possible record noise is covered.
pub fn transform_query(key: &RaspKey, spec: &RangeQuerySpec) -> Result<SecureRangeQuery> {
    let d = key.dims();
    if spec.dims() != d {
        return Err(Error::MalformedQuery(format!(
            "query covers {} dimensions, key expects {d}",
            spec.dims()
        )));
    }
    if d > MAX_QUERY_DIMS {
        return Err(Error::TooManyDimensions {
            got: d,
            max: MAX_QUERY_DIMS,
        });
    }

    let mut thetas = Vec::with_capacity(2 * d);
    for j in 0..d {
        let (lo, hi) = spec.interval(j);
        let lower = SimpleCondition {
            dim: j,
            op: CompareOp::Ge,
            constant: lo,
        };
        let (w, q) = build_halfspace_vectors(key, &lower)?;
        thetas.push(build_theta(key, &w, &q, j, Side::Lower));
        let upper = SimpleCondition {
            dim: j,
            op: CompareOp::Le,
            constant: hi,
        };
        let (w, q) = build_halfspace_vectors(key, &upper)?;
        thetas.push(build_theta(key, &w, &q, j, Side::Upper));
    }

    // OPE images of the interval endpoints; the query hyper-cube vertices
    // in OPE space are every lo/hi combination.
    let lo_e: Vec<f64> = (0..d)
        .map(|j| key.ope().encrypt_query_constant(j, spec.interval(j).0))
        .collect();
    let hi_e: Vec<f64> = (0..d)
        .map(|j| key.ope().encrypt_query_constant(j, spec.interval(j).1))
        .collect();
    let noise = key.noise();
    let mut mbr = Mbr::empty(d + 2);
    let mut vertex = vec![0.0; d];
    for mask in 0u64..(1u64 << d) {
        for j in 0..d {
            vertex[j] = if mask >> j & 1 == 1 { hi_e[j] } else { lo_e[j] };
        }
        for v in [noise.v0, noise.v1] {
            mbr.expand_point(&key.project_extended(&vertex, v));
        }
    }

    Ok(SecureRangeQuery { mbr, thetas })
}

/// Stage-1 predicate: is the perturbed vector inside the query box?
pub fn mbr_union_check(q: &SecureRangeQuery, rec: &PerturbedRecord) -> bool {
    q.mbr.contains_point(&rec.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ope::{OpeDimensionKey, OpeKey};
    use crate::perturb::{perturb, KeyParams, PlainRecord};
    use crate::{linalg, NoiseSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// d-dimensional key with identity OPE on [-4, 4]: encrypted values
    /// equal plaintext values, which makes expectations hand-checkable.
    fn identity_ope_key(d: usize, seed: u64) -> RaspKey {
        let mut r = rng(seed);
        let a = linalg::generate_invertible_matrix(d + 2, &mut r).unwrap();
        let dims = (0..d)
            .map(|_| {
                OpeDimensionKey::from_boundaries(vec![-4.0, 4.0], vec![-4.0, 4.0], 4.0).unwrap()
            })
            .collect();
        RaspKey::from_parts(a, OpeKey::from_dims(dims, 1), NoiseSpec::default(), [3u8; 32])
            .unwrap()
    }

    fn trained_key(d: usize, seed: u64) -> (RaspKey, Vec<Vec<f64>>) {
        let mut r = rng(seed);
        let raw: Vec<Vec<f64>> = (0..1500)
            .map(|_| (0..d).map(|_| r.gen::<f64>()).collect())
            .collect();
        let (normalized, _) = crate::perturb::normalize_dataset(&raw).unwrap();
        let key = RaspKey::generate(
            &normalized,
            &KeyParams {
                buckets: 64,
                ..KeyParams::default()
            },
            &mut r,
        )
        .unwrap();
        (key, normalized)
    }

    #[test]
    fn halfspace_vectors_match_direct_construction() {
        let key = identity_ope_key(2, 1);
        let cond = SimpleCondition {
            dim: 0,
            op: CompareOp::Le,
            constant: 0.3,
        };
        let (w, q) = build_halfspace_vectors(&key, &cond).unwrap();
        let expected_w = [1.0, 0.0, -0.3, 0.0];
        for (got, want) in w.iter().zip(expected_w) {
            assert!((got - want).abs() < 1e-12, "w = {w:?}");
        }
        assert_eq!(q, vec![0.0, 0.0, 4.0, -1.0]);
    }

    #[test]
    fn ge_condition_flips_the_sign_pair() {
        let key = identity_ope_key(2, 1);
        let cond = SimpleCondition {
            dim: 0,
            op: CompareOp::Ge,
            constant: 0.3,
        };
        let (w, _) = build_halfspace_vectors(&key, &cond).unwrap();
        let expected_w = [-1.0, 0.0, 0.3, 0.0];
        for (got, want) in w.iter().zip(expected_w) {
            assert!((got - want).abs() < 1e-12, "w = {w:?}");
        }
    }

    #[test]
    fn boundary_record_evaluates_to_zero_through_w() {
        let key = identity_ope_key(2, 2);
        let cond = SimpleCondition {
            dim: 0,
            op: CompareOp::Le,
            constant: 0.3,
        };
        let (w, _) = build_halfspace_vectors(&key, &cond).unwrap();
        let z = [0.3, -1.2, 1.0, 5.5]; // E(x0) = 0.3 exactly
        let dot: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn theta_sign_matches_plaintext_oracle() {
        let (key, data) = trained_key(3, 10);
        let constant = 0.2;
        let cond = SimpleCondition {
            dim: 1,
            op: CompareOp::Le,
            constant,
        };
        let (w, q) = build_halfspace_vectors(&key, &cond).unwrap();
        let theta = build_theta(&key, &w, &q, 1, Side::Upper);
        let mut r = rng(11);
        let mut checked = 0;
        for vals in data.iter().take(1000) {
            let p = perturb(&key, 0, &PlainRecord::new(vals.clone()), &mut r);
            let val = theta.m.quadratic_form(&p.y);
            let e_x = key.ope().encrypt(1, vals[1]);
            let e_a = key.ope().encrypt_query_constant(1, constant);
            if (e_x - e_a).abs() < 1e-7 {
                continue; // boundary band, checked separately
            }
            if vals[1] < constant {
                assert!(val < 0.0, "satisfying record scored {val}");
            } else {
                assert!(val > 0.0, "violating record scored {val}");
            }
            checked += 1;
        }
        assert!(checked > 900);
    }

    #[test]
    fn exact_boundary_record_scores_within_slack() {
        let key = identity_ope_key(1, 3);
        let constant = 0.25;
        let cond = SimpleCondition {
            dim: 0,
            op: CompareOp::Le,
            constant,
        };
        let (w, q) = build_halfspace_vectors(&key, &cond).unwrap();
        let theta = build_theta(&key, &w, &q, 0, Side::Upper);
        let mut r = rng(4);
        let p = perturb(&key, 0, &PlainRecord::new(vec![constant]), &mut r);
        let norm_sq: f64 = p.y.iter().map(|v| v * v).sum();
        assert!(theta.m.quadratic_form(&p.y).abs() <= 1e-9 * norm_sq);
        assert!(theta.accepts(&p.y));
    }

    #[test]
    fn transform_emits_two_thetas_per_dimension_and_vertex_hull_mbr() {
        let (key, _) = trained_key(2, 20);
        let spec = RangeQuerySpec::from_intervals(vec![(-0.5, 0.5), (-1.0, 0.2)]).unwrap();
        let sq = transform_query(&key, &spec).unwrap();
        assert_eq!(sq.thetas.len(), 4);
        assert_eq!(sq.mbr.dims(), 4);
        // The box must enclose the image of every query vertex at both
        // noise extremes; spot-check all 8.
        for mask in 0..4u32 {
            let vertex = [
                key.ope().encrypt_query_constant(
                    0,
                    if mask & 1 == 1 { 0.5 } else { -0.5 },
                ),
                key.ope().encrypt_query_constant(
                    1,
                    if mask & 2 == 2 { 0.2 } else { -1.0 },
                ),
            ];
            for v in [key.noise().v0, key.noise().v1] {
                let img = key.project_extended(&vertex, v);
                assert!(sq.mbr.contains_point(&img));
            }
        }
    }

    #[test]
    fn full_domain_query_encloses_every_record() {
        let (key, data) = trained_key(3, 30);
        let sq = transform_query(&key, &RangeQuerySpec::full_domain(3)).unwrap();
        let mut r = rng(31);
        for vals in data.iter().take(1000) {
            let p = perturb(&key, 0, &PlainRecord::new(vals.clone()), &mut r);
            assert!(mbr_union_check(&sq, &p), "record escaped the full-domain MBR");
        }
    }

    #[test]
    fn degenerate_interval_behaves_as_equality() {
        let (key, mut data) = trained_key(2, 40);
        // Plant duplicates of a target value so equality has matches.
        let target = data[0].clone();
        data.push(target.clone());
        data.push(target.clone());
        let mut spec = RangeQuerySpec::full_domain(2);
        spec.apply(&SimpleCondition {
            dim: 0,
            op: CompareOp::Eq,
            constant: target[0],
        })
        .unwrap();
        let sq = transform_query(&key, &spec).unwrap();
        let mut r = rng(41);
        for vals in &data {
            let p = perturb(&key, 0, &PlainRecord::new(vals.clone()), &mut r);
            let secured =
                mbr_union_check(&sq, &p) && sq.thetas.iter().all(|t| t.accepts(&p.y));
            let plain = vals[0] == target[0];
            assert_eq!(secured, plain, "equality mismatch at {vals:?}");
        }
    }

    #[test]
    fn mbr_check_is_closed_and_sound() {
        let (key, data) = trained_key(2, 50);
        let spec = RangeQuerySpec::from_intervals(vec![(-0.8, 0.3), (-0.4, 0.9)]).unwrap();
        let sq = transform_query(&key, &spec).unwrap();

        // A synthetic record exactly on an MBR corner is inside.
        let corner: Vec<f64> = sq.mbr.bounds().iter().map(|b| b.0).collect();
        let fake = PerturbedRecord {
            id: 0,
            y: corner.clone(),
            envelope: Vec::new(),
        };
        assert!(mbr_union_check(&sq, &fake));

        // Nudging one coordinate outside by 1e-6 is not.
        let mut outside = corner;
        outside[0] -= 1e-6;
        let fake = PerturbedRecord {
            id: 0,
            y: outside,
            envelope: Vec::new(),
        };
        assert!(!mbr_union_check(&sq, &fake));

        // Soundness: outside the MBR implies outside the plaintext range.
        let mut r = rng(51);
        for vals in data.iter().take(1000) {
            let p = perturb(&key, 0, &PlainRecord::new(vals.clone()), &mut r);
            if !mbr_union_check(&sq, &p) {
                assert!(!spec.contains(vals), "stage 1 dropped a real match");
            }
        }
    }

    #[test]
    fn two_stage_predicate_equals_plaintext_membership() {
        let (key, data) = trained_key(3, 60);
        let mut r = rng(61);
        for trial in 0..20 {
            let mut bounds = Vec::new();
            for _ in 0..3 {
                let a = r.gen::<f64>() * 3.0 - 1.5;
                let b = r.gen::<f64>() * 3.0 - 1.5;
                bounds.push((a.min(b), a.max(b)));
            }
            let spec = RangeQuerySpec::from_intervals(bounds).unwrap();
            let sq = transform_query(&key, &spec).unwrap();
            for vals in data.iter().take(300) {
                // Skip records inside the epsilon boundary band.
                let near_boundary = (0..3).any(|j| {
                    let e_x = key.ope().encrypt(j, vals[j]);
                    let (lo, hi) = spec.interval(j);
                    (e_x - key.ope().encrypt_query_constant(j, lo)).abs() < 1e-7
                        || (e_x - key.ope().encrypt_query_constant(j, hi)).abs() < 1e-7
                });
                if near_boundary {
                    continue;
                }
                let p = perturb(&key, 0, &PlainRecord::new(vals.clone()), &mut r);
                let secured =
                    mbr_union_check(&sq, &p) && sq.thetas.iter().all(|t| t.accepts(&p.y));
                assert_eq!(
                    secured,
                    spec.contains(vals),
                    "trial {trial}: secured and plaintext verdicts diverge"
                );
            }
        }
    }

    #[test]
    fn emitted_thetas_are_rank_one() {
        let (key, _) = trained_key(2, 70);
        let spec = RangeQuerySpec::from_intervals(vec![(-0.5, 0.5), (-0.5, 0.5)]).unwrap();
        let sq = transform_query(&key, &spec).unwrap();
        for theta in &sq.thetas {
            // Rank 1: every 2x2 minor vanishes.
            let m = &theta.m;
            let n = m.rows();
            let scale = m.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for r0 in 0..n {
                for r1 in (r0 + 1)..n {
                    for c0 in 0..n {
                        for c1 in (c0 + 1)..n {
                            let minor = m.get(r0, c0) * m.get(r1, c1)
                                - m.get(r0, c1) * m.get(r1, c0);
                            assert!(
                                minor.abs() <= 1e-9 * scale * scale,
                                "2x2 minor {minor} too large for a rank-1 matrix"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn transformation_is_deterministic() {
        let (key, _) = trained_key(2, 80);
        let spec = RangeQuerySpec::from_intervals(vec![(-0.3, 0.4), (-0.9, 0.1)]).unwrap();
        let a = transform_query(&key, &spec).unwrap();
        let b = transform_query(&key, &spec).unwrap();
        assert_eq!(a, b, "same query and key must transform identically");
    }

    #[test]
    fn oversized_dimensionality_rejected() {
        let dims = (0..21)
            .map(|_| {
                OpeDimensionKey::from_boundaries(vec![-4.0, 4.0], vec![-4.0, 4.0], 4.0).unwrap()
            })
            .collect();
        let mut r = rng(90);
        let a = linalg::generate_invertible_matrix(23, &mut r).unwrap();
        let key =
            RaspKey::from_parts(a, OpeKey::from_dims(dims, 1), NoiseSpec::default(), [0u8; 32])
                .unwrap();
        let err = transform_query(&key, &RangeQuerySpec::full_domain(21)).unwrap_err();
        assert!(matches!(err, Error::TooManyDimensions { got: 21, max: 20 }));
    }

    #[test]
    fn inverted_interval_rejected() {
        assert!(RangeQuerySpec::from_intervals(vec![(1.0, -1.0)]).is_err());
    }
}
