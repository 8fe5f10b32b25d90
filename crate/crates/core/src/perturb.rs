//! The full random-space perturbation: per-dimension OPE, extension with a
//! homogeneous 1 and a fresh bounded noise coordinate, then multiplication
//! by the secret invertible matrix. `F(x, K) = A (E_ope(x)^T, 1, v)^T`.

use rand::Rng;

use crate::envelope::{ChaChaEnvelope, EnvelopeCipher, ENVELOPE_KEY_LEN};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, NoiseSpec};
use crate::ope::OpeKey;

/// A record in the proxy's (trusted) world: normalized searchable values
/// plus an opaque non-searchable payload.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainRecord {
    pub values: Vec<f64>,
    pub payload: Vec<u8>,
}

impl PlainRecord {
    pub fn new(values: Vec<f64>) -> Self {
        PlainRecord {
            values,
            payload: Vec::new(),
        }
    }

    /// Canonical byte form stored inside the envelope.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.values.len() * 8 + self.payload.len());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::EnvelopeFormat);
        }
        let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let need = 4 + count * 8;
        if bytes.len() < need {
            return Err(Error::EnvelopeFormat);
        }
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            let off = 4 + i * 8;
            values.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
        }
        Ok(PlainRecord {
            values,
            payload: bytes[need..].to_vec(),
        })
    }
}

/// What the server stores: the `(d+2)`-dimensional perturbed vector and the
/// encrypted original record.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedRecord {
    pub id: u64,
    pub y: Vec<f64>,
    pub envelope: Vec<u8>,
}

/// The full secret. Never serialized into any wire message; only the key
/// file (a proxy-side artifact) carries it.
#[derive(Debug, Clone)]
pub struct RaspKey {
    a: Mat,
    a_inv: Mat,
    ope: OpeKey,
    noise: NoiseSpec,
    envelope: ChaChaEnvelope,
}

/// Tunables for key generation.
#[derive(Debug, Clone, Copy)]
pub struct KeyParams {
    pub buckets: usize,
    pub beta: f64,
    pub noise: NoiseSpec,
}

impl Default for KeyParams {
    fn default() -> Self {
        KeyParams {
            buckets: crate::ope::DEFAULT_BUCKETS,
            beta: crate::ope::DEFAULT_BETA,
            noise: NoiseSpec::default(),
        }
    }
}

impl RaspKey {
    /// Deterministic key generation from a seed: draws the `(d+2)x(d+2)`
    /// matrix, trains the OPE key on the (already normalized) training
    /// table, and derives the envelope key.
    pub fn generate<R: Rng + ?Sized>(
        training: &[Vec<f64>],
        params: &KeyParams,
        rng: &mut R,
    ) -> Result<Self> {
        if training.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = training[0].len();
        let a = linalg::generate_invertible_matrix(d + 2, rng)?;
        let a_inv = linalg::invert(&a)?;
        let ope = OpeKey::build(training, params.buckets, params.beta)?;
        let envelope = ChaChaEnvelope::generate(rng);
        Ok(RaspKey {
            a,
            a_inv,
            ope,
            noise: params.noise,
            envelope,
        })
    }

    pub fn from_parts(
        a: Mat,
        ope: OpeKey,
        noise: NoiseSpec,
        envelope_key: [u8; ENVELOPE_KEY_LEN],
    ) -> Result<Self> {
        if a.rows() != ope.dims() + 2 || a.cols() != ope.dims() + 2 {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{} but OPE key covers {} dimensions",
                a.rows(),
                a.cols(),
                ope.dims()
            )));
        }
        let a_inv = linalg::invert(&a)?;
        Ok(RaspKey {
            a,
            a_inv,
            ope,
            noise,
            envelope: ChaChaEnvelope::new(envelope_key),
        })
    }

    /// Searchable dimensionality `d`.
    pub fn dims(&self) -> usize {
        self.ope.dims()
    }

    /// Perturbed-space dimensionality `d + 2`.
    pub fn extended_dims(&self) -> usize {
        self.ope.dims() + 2
    }

    pub fn matrix(&self) -> &Mat {
        &self.a
    }

    pub fn matrix_inv(&self) -> &Mat {
        &self.a_inv
    }

    pub fn ope(&self) -> &OpeKey {
        &self.ope
    }

    pub fn noise(&self) -> NoiseSpec {
        self.noise
    }

    pub fn envelope_key(&self) -> &[u8; ENVELOPE_KEY_LEN] {
        self.envelope.key_bytes()
    }

    /// Extends an OPE-space point with the homogeneous 1 and a given noise
    /// value, then projects through `A`. Query transformation shares this
    /// path with data perturbation.
    pub fn project_extended(&self, ope_point: &[f64], v: f64) -> Vec<f64> {
        assert_eq!(ope_point.len(), self.dims(), "point width must match key");
        let mut z = Vec::with_capacity(self.extended_dims());
        z.extend_from_slice(ope_point);
        z.push(1.0);
        z.push(v);
        self.a.mul_vec(&z)
    }

    /// Recovers the extended vector `(E_ope(x), 1, v)` from a perturbed
    /// vector. Proxy-side diagnostics only.
    pub fn recover_extended(&self, y: &[f64]) -> Vec<f64> {
        self.a_inv.mul_vec(y)
    }

    pub fn decrypt_envelope(&self, record: &PerturbedRecord) -> Result<PlainRecord> {
        self.open_envelope(&record.envelope)
    }

    pub fn open_envelope(&self, envelope: &[u8]) -> Result<PlainRecord> {
        let bytes = self.envelope.open(envelope)?;
        PlainRecord::from_bytes(&bytes)
    }
}

/// Per-column `(mean, standard deviation)` pairs from normalization.
pub type ColumnStats = Vec<(f64, f64)>;

/// Z-score normalization: every column to mean 0, variance 1 (population
/// variance). Returns the per-column `(mu, sigma)` needed to interpret
/// queries later.
pub fn normalize_dataset(raw: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, ColumnStats)> {
    if raw.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let n = raw.len();
    let d = raw[0].len();
    let mut stats = Vec::with_capacity(d);
    for j in 0..d {
        let mean = raw.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = raw.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        // Mean-relative floor: constant columns accumulate rounding crumbs.
        if var <= (1e-12 * (1.0 + mean.abs())).powi(2) {
            return Err(Error::ZeroVariance(j));
        }
        stats.push((mean, var.sqrt()));
    }
    let normalized = raw
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - stats[j].0) / stats[j].1)
                .collect()
        })
        .collect();
    Ok((normalized, stats))
}

/// Perturbs one record with a fresh noise draw.
pub fn perturb<R: Rng>(
    key: &RaspKey,
    id: u64,
    record: &PlainRecord,
    rng: &mut R,
) -> PerturbedRecord {
    let v = key.noise.sample(rng);
    perturb_with_noise(key, id, record, v, rng)
}

/// Perturbs with an explicit noise value. Exposed so tests can pin `v`;
/// production callers go through [`perturb`].
pub fn perturb_with_noise<R: Rng>(
    key: &RaspKey,
    id: u64,
    record: &PlainRecord,
    v: f64,
    rng: &mut R,
) -> PerturbedRecord {
    let encrypted = key.ope.encrypt_record(&record.values);
    let y = key.project_extended(&encrypted, v);
    let envelope = key.envelope.seal(&record.to_bytes(), rng);
    PerturbedRecord { id, y, envelope }
}

/// Elementwise perturbation of a whole table; record ids are the input
/// positions.
pub fn perturb_dataset<R: Rng>(
    key: &RaspKey,
    records: &[PlainRecord],
    rng: &mut R,
) -> Vec<PerturbedRecord> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| perturb(key, i as u64, r, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ope::OpeDimensionKey;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Uniform test table in [0,1]^d, already normalized.
    fn normalized_uniform(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng(seed);
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.gen::<f64>()).collect())
            .collect();
        normalize_dataset(&raw).unwrap().0
    }

    #[test]
    fn two_point_column_z_scores() {
        let (normalized, stats) = normalize_dataset(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(normalized, vec![vec![-1.0], vec![1.0]]);
        assert_eq!(stats, vec![(1.0, 1.0)]);
    }

    #[test]
    fn normalized_columns_have_zero_mean_unit_variance() {
        let mut r = rng(11);
        let raw: Vec<Vec<f64>> = (0..2000)
            .map(|_| vec![r.gen::<f64>() * 9.0 + 2.0, r.gen::<f64>() - 5.0])
            .collect();
        let (normalized, _) = normalize_dataset(&raw).unwrap();
        for j in 0..2 {
            let mean = normalized.iter().map(|x| x[j]).sum::<f64>() / 2000.0;
            let var = normalized.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / 2000.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_column_normalizes_to_standard_moments() {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(5.0, 3.0).unwrap();
        let mut r = rng(17);
        let raw: Vec<Vec<f64>> = (0..10_000).map(|_| vec![normal.sample(&mut r)]).collect();
        let (normalized, stats) = normalize_dataset(&raw).unwrap();
        assert!((stats[0].0 - 5.0).abs() < 0.15);
        assert!((stats[0].1 - 3.0).abs() < 0.15);
        let mean = normalized.iter().map(|x| x[0]).sum::<f64>() / 10_000.0;
        let var = normalized.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / 10_000.0;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_column_rejected() {
        let err = normalize_dataset(&[vec![3.0], vec![3.0]]).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance(0)));
    }

    #[test]
    fn keygen_dimensions_follow_d_plus_two_rule() {
        let training = normalized_uniform(600, 5, 1);
        let key = RaspKey::generate(&training, &KeyParams::default(), &mut rng(2)).unwrap();
        assert_eq!(key.matrix().rows(), 7);
        assert_eq!(key.matrix().cols(), 7);
    }

    #[test]
    fn keygen_is_deterministic_in_the_seed() {
        let training = normalized_uniform(600, 3, 4);
        let k1 = RaspKey::generate(&training, &KeyParams::default(), &mut rng(9)).unwrap();
        let k2 = RaspKey::generate(&training, &KeyParams::default(), &mut rng(9)).unwrap();
        assert_eq!(k1.matrix().data(), k2.matrix().data());
        assert_eq!(k1.envelope_key(), k2.envelope_key());
    }

    #[test]
    fn hundred_keys_pass_the_structural_audit() {
        let training = normalized_uniform(400, 2, 5);
        let mut r = rng(100);
        for _ in 0..100 {
            let key = RaspKey::generate(&training, &KeyParams::default(), &mut r).unwrap();
            let a = key.matrix();
            let n = a.rows();
            for row in 0..n {
                let nz = a.row(row).iter().filter(|v| v.abs() > 1e-9).count();
                assert!(nz >= 2);
                assert!(a.get(row, n - 1).abs() > 1e-9);
            }
        }
    }

    /// Builds a d=1 key around a fixed matrix and identity-ish OPE so a
    /// hand computation is possible.
    fn handmade_key() -> RaspKey {
        let a = Mat::from_rows(&[
            vec![2.0, 0.0, 1.0],
            vec![0.0, 3.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ]);
        // Identity OPE over [-4, 4]: one bucket spanning the domain.
        let dim = OpeDimensionKey::from_boundaries(vec![-4.0, 4.0], vec![-4.0, 4.0], 4.0).unwrap();
        let ope = OpeKey::from_dims(vec![dim], 1);
        RaspKey::from_parts(a, ope, NoiseSpec::default(), [7u8; 32]).unwrap()
    }

    #[test]
    fn hand_multiplied_perturbation() {
        // z = (E(x), 1, v) = (0.5, 1, 5);
        // A z = (2*0.5 + 5, 3*1 + 5, 0.5 + 1 + 5) = (6, 8, 6.5).
        let key = handmade_key();
        let rec = PlainRecord::new(vec![0.5]);
        let out = perturb_with_noise(&key, 0, &rec, 5.0, &mut rng(0));
        assert!((out.y[0] - 6.0).abs() < 1e-12);
        assert!((out.y[1] - 8.0).abs() < 1e-12);
        assert!((out.y[2] - 6.5).abs() < 1e-12);
    }

    #[test]
    fn same_plaintext_perturbs_to_different_vectors_with_stable_prefix() {
        let training = normalized_uniform(500, 3, 6);
        let key = RaspKey::generate(&training, &KeyParams::default(), &mut rng(7)).unwrap();
        let rec = PlainRecord::new(training[0].clone());
        let mut r = rng(8);
        let p1 = perturb(&key, 0, &rec, &mut r);
        let p2 = perturb(&key, 1, &rec, &mut r);
        assert_ne!(p1.y, p2.y, "noise must be fresh per record");
        let z1 = key.recover_extended(&p1.y);
        let z2 = key.recover_extended(&p2.y);
        for j in 0..=3 {
            // First d+1 components agree: same OPE image, same homogeneous 1.
            assert!((z1[j] - z2[j]).abs() < 1e-9);
        }
        assert!((z1[4] - z2[4]).abs() > 1e-6, "noise coordinates collided");
    }

    #[test]
    fn recovery_through_inverse_matches_extended_form() {
        let training = normalized_uniform(500, 4, 20);
        let key = RaspKey::generate(&training, &KeyParams::default(), &mut rng(21)).unwrap();
        let mut r = rng(22);
        for rec_vals in training.iter().take(50) {
            let rec = PlainRecord::new(rec_vals.clone());
            let p = perturb(&key, 0, &rec, &mut r);
            let z = key.recover_extended(&p.y);
            let e = key.ope().encrypt_record(&rec.values);
            for j in 0..4 {
                assert!((z[j] - e[j]).abs() < 1e-9);
            }
            assert!((z[4] - 1.0).abs() < 1e-9, "homogeneous coordinate drifted");
            assert!(z[5] > key.noise().v0 && z[5] <= key.noise().v1);
        }
    }

    #[test]
    fn envelope_round_trips_whole_table() {
        let training = normalized_uniform(1000, 3, 30);
        let key = RaspKey::generate(&training, &KeyParams::default(), &mut rng(31)).unwrap();
        let records: Vec<PlainRecord> = training
            .iter()
            .enumerate()
            .map(|(i, v)| PlainRecord {
                values: v.clone(),
                payload: format!("row-{i}").into_bytes(),
            })
            .collect();
        let perturbed = perturb_dataset(&key, &records, &mut rng(32));
        assert_eq!(perturbed.len(), records.len());
        for (p, original) in perturbed.iter().zip(&records) {
            let back = key.decrypt_envelope(p).unwrap();
            assert_eq!(&back, original);
        }
    }

    #[test]
    fn empty_dataset_perturbs_to_empty() {
        let training = normalized_uniform(500, 2, 40);
        let key = RaspKey::generate(&training, &KeyParams::default(), &mut rng(41)).unwrap();
        let out = perturb_dataset(&key, &[], &mut rng(42));
        assert!(out.is_empty());
    }

    #[test]
    fn perturbation_does_not_preserve_dimensional_order() {
        // Existential check: some record pair flips its componentwise order
        // in some dimension after perturbation.
        let training = normalized_uniform(1000, 3, 50);
        let key = RaspKey::generate(&training, &KeyParams::default(), &mut rng(51)).unwrap();
        let mut r = rng(52);
        let perturbed: Vec<PerturbedRecord> = training
            .iter()
            .map(|v| perturb(&key, 0, &PlainRecord::new(v.clone()), &mut r))
            .collect();
        let mut flip_found = false;
        'outer: for pair in 0..1000 {
            let (s, t) = (pair % training.len(), (pair * 7 + 1) % training.len());
            if s == t {
                continue;
            }
            for j in 0..3 {
                let plain = training[s][j] - training[t][j];
                let pert = perturbed[s].y[j] - perturbed[t].y[j];
                if plain * pert < 0.0 {
                    flip_found = true;
                    break 'outer;
                }
            }
        }
        assert!(flip_found, "no order flip over 10^3 pairs is overwhelmingly unlikely");
    }

    #[test]
    fn perturbation_does_not_preserve_distance_order() {
        let training = normalized_uniform(1000, 3, 60);
        let key = RaspKey::generate(&training, &KeyParams::default(), &mut rng(61)).unwrap();
        let mut r = rng(62);
        let perturbed: Vec<Vec<f64>> = training
            .iter()
            .map(|v| perturb(&key, 0, &PlainRecord::new(v.clone()), &mut r).y)
            .collect();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
        };
        let mut flip_found = false;
        for trial in 0..1000 {
            let a = trial % 997;
            let b = (trial * 13 + 7) % 997;
            let c = (trial * 29 + 3) % 997;
            if a == b || a == c || b == c {
                continue;
            }
            let plain = dist(&training[a], &training[b]) - dist(&training[a], &training[c]);
            let pert = dist(&perturbed[a], &perturbed[b]) - dist(&perturbed[a], &perturbed[c]);
            if plain * pert < 0.0 {
                flip_found = true;
                break;
            }
        }
        assert!(flip_found, "no distance-order flip over 10^3 triples");
    }

    #[test]
    fn homogeneous_row_of_inverse_yields_all_ones() {
        let training = normalized_uniform(800, 4, 70);
        let key = RaspKey::generate(&training, &KeyParams::default(), &mut rng(71)).unwrap();
        let mut r = rng(72);
        let d = key.dims();
        let homog_row = key.matrix_inv().row(d).to_vec();
        for vals in training.iter().take(200) {
            let p = perturb(&key, 0, &PlainRecord::new(vals.clone()), &mut r);
            let dot: f64 = homog_row.iter().zip(&p.y).map(|(a, b)| a * b).sum();
            assert!((dot - 1.0).abs() < 1e-9);
        }
    }
}
