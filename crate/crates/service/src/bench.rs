//! Desk-scale benchmark drivers behind the `bench` subcommand. Each
//! produces a tab-separated report: range-query block accounting and
//! purity, kNN precision/rounds across delta settings, and perturbation
//! cost.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rasp_core::knn::BoundPolicy;
use rasp_core::perturb::{perturb_dataset, KeyParams};
use rasp_core::query::{transform_query, RangeQuerySpec};
use rasp_core::{IndexStore, RaspKey};

use crate::dataset::synthetic_uniform;
use crate::error::{Error, Result};
use crate::proxy::{Connection, Proxy};
use crate::server::serve;

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Random range query covering roughly `frac` of each dimension's span.
pub fn random_range_spec<R: Rng>(
    data_lo: f64,
    data_hi: f64,
    d: usize,
    frac: f64,
    rng: &mut R,
) -> RangeQuerySpec {
    let span = data_hi - data_lo;
    let width = frac * span;
    let intervals = (0..d)
        .map(|_| {
            let lo = data_lo + rng.gen::<f64>() * (span - width).max(0.0);
            (lo, lo + width)
        })
        .collect();
    RangeQuerySpec::from_intervals(intervals).expect("generated intervals are ordered")
}

pub struct RangeBenchParams {
    pub n: usize,
    pub d: usize,
    pub range_frac: f64,
    pub queries: usize,
    pub capacity: usize,
    pub buckets: usize,
    pub seed: u64,
}

pub struct RangeBenchSummary {
    pub linear_scan_blocks: u64,
    pub stage1_blocks_avg: f64,
    pub stage1_records_avg: f64,
    pub purity_pct: f64,
    pub prep_ms_avg: f64,
    pub stage1_ms_avg: f64,
    pub stage2_ms_avg: f64,
    pub results_avg: f64,
}

pub const RANGE_REPORT_HEADER: [&str; 12] = [
    "n",
    "d",
    "range",
    "queries",
    "linear_scan_blocks",
    "stage1_blocks_avg",
    "rpq",
    "purity_pct",
    "prep_ms",
    "stage1_ms",
    "stage2_ms",
    "results_avg",
];

/// Two-stage range processing cost against the linear-scan yardstick.
pub fn bench_range(p: &RangeBenchParams) -> Result<(RangeBenchSummary, Vec<Vec<String>>)> {
    let out = synthetic_uniform(p.n, p.d, p.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x5eed);
    let values: Vec<Vec<f64>> = out.records.iter().map(|r| r.values.clone()).collect();
    let key = RaspKey::generate(
        &values,
        &KeyParams {
            buckets: p.buckets,
            ..KeyParams::default()
        },
        &mut rng,
    )?;
    let perturbed = perturb_dataset(&key, &out.records, &mut rng);
    let index = IndexStore::build(perturbed, p.capacity)?;

    let lo = values.iter().flat_map(|r| r.iter().cloned()).fold(f64::INFINITY, f64::min);
    let hi = values
        .iter()
        .flat_map(|r| r.iter().cloned())
        .fold(f64::NEG_INFINITY, f64::max);

    let mut stage1_blocks = 0u64;
    let mut stage1_records = 0usize;
    let mut results = 0usize;
    let mut prep_ms = 0.0;
    let mut stage1_ms = 0.0;
    let mut stage2_ms = 0.0;
    for _ in 0..p.queries {
        let spec = random_range_spec(lo, hi, p.d, p.range_frac, &mut rng);

        let t0 = Instant::now();
        let secured = transform_query(&key, &spec)?;
        prep_ms += ms_since(t0);

        let t1 = Instant::now();
        let (candidate_ids, counters) = index.stage1_search(&secured.mbr)?;
        stage1_ms += ms_since(t1);
        stage1_blocks += counters.total();
        stage1_records += candidate_ids.len();

        let t2 = Instant::now();
        let survived = candidate_ids
            .iter()
            .filter(|&&id| {
                let y = &index.records()[id as usize].y;
                secured.thetas.iter().all(|th| th.accepts(y))
            })
            .count();
        stage2_ms += ms_since(t2);
        results += survived;
    }

    let q = p.queries as f64;
    let summary = RangeBenchSummary {
        linear_scan_blocks: index.linear_scan_blocks(),
        stage1_blocks_avg: stage1_blocks as f64 / q,
        stage1_records_avg: stage1_records as f64 / q,
        purity_pct: if stage1_records == 0 {
            100.0
        } else {
            100.0 * results as f64 / stage1_records as f64
        },
        prep_ms_avg: prep_ms / q,
        stage1_ms_avg: stage1_ms / q,
        stage2_ms_avg: stage2_ms / q,
        results_avg: results as f64 / q,
    };
    let row = vec![
        p.n.to_string(),
        p.d.to_string(),
        format!("{}", p.range_frac),
        p.queries.to_string(),
        summary.linear_scan_blocks.to_string(),
        format!("{:.2}", summary.stage1_blocks_avg),
        format!("{:.2}", summary.stage1_records_avg),
        format!("{:.3}", summary.purity_pct),
        format!("{:.4}", summary.prep_ms_avg),
        format!("{:.4}", summary.stage1_ms_avg),
        format!("{:.4}", summary.stage2_ms_avg),
        format!("{:.2}", summary.results_avg),
    ];
    Ok((summary, vec![row]))
}

pub struct KnnBenchParams {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub deltas: Vec<usize>,
    pub queries: usize,
    pub capacity: usize,
    pub buckets: usize,
    pub seed: u64,
}

pub struct KnnBenchRow {
    pub delta: usize,
    pub precision: f64,
    pub rounds_avg: f64,
    pub candidates_avg: f64,
    pub exact_rate: f64,
    pub pre_ms: f64,
    pub server_ms: f64,
    pub post_ms: f64,
}

pub const KNN_REPORT_HEADER: [&str; 11] = [
    "n",
    "d",
    "k",
    "delta",
    "queries",
    "precision",
    "rounds_avg",
    "candidates_avg",
    "pre_ms",
    "server_ms",
    "post_ms",
];

/// Runs the full proxy/server protocol over loopback and reports
/// precision, rounds, and the cost split per delta setting.
pub fn bench_knn(p: &KnnBenchParams) -> Result<(Vec<KnnBenchRow>, Vec<Vec<String>>)> {
    let out = synthetic_uniform(p.n, p.d, p.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x6b6e6e);
    let values: Vec<Vec<f64>> = out.records.iter().map(|r| r.values.clone()).collect();
    let key = RaspKey::generate(
        &values,
        &KeyParams {
            buckets: p.buckets,
            ..KeyParams::default()
        },
        &mut rng,
    )?;
    let perturbed = perturb_dataset(&key, &out.records, &mut rng);
    let index = IndexStore::build(perturbed, p.capacity)?;
    let server = serve("127.0.0.1:0", Some(index), p.capacity)?;
    let proxy = Proxy::new(key, out.manifest.clone());

    let exact_knn = |q: &[f64], k: usize| -> Vec<u64> {
        let mut order: Vec<(u64, f64)> = values
            .iter()
            .enumerate()
            .map(|(i, row)| (i as u64, rasp_core::knn::distance_sq(row, q)))
            .collect();
        order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        order.truncate(k);
        order.into_iter().map(|(i, _)| i).collect()
    };

    let mut rows = Vec::new();
    let mut report_rows = Vec::new();
    for &delta in &p.deltas {
        let mut conn = Connection::connect(server.addr())?;
        let mut precision_sum = 0.0;
        let mut rounds_sum = 0usize;
        let mut candidates_sum = 0usize;
        let mut exact = 0usize;
        let mut timing_pre = 0.0;
        let mut timing_server = 0.0;
        let mut timing_post = 0.0;
        let mut qrng = ChaCha8Rng::seed_from_u64(p.seed ^ 0xabcd);
        for _ in 0..p.queries {
            let q: Vec<f64> = (0..p.d)
                .map(|j| {
                    let row = qrng.gen_range(0..values.len());
                    values[row][j] * 0.9
                })
                .collect();
            let output = proxy.knn_normalized(
                &mut conn,
                &q,
                p.k,
                delta,
                &BoundPolicy::default(),
            )?;
            precision_sum += p.k as f64 / output.candidates.max(p.k) as f64;
            rounds_sum += output.rounds;
            candidates_sum += output.candidates;
            if output.ids == exact_knn(&q, p.k) {
                exact += 1;
            }
            timing_pre += output.timing.prep_ms;
            timing_server += output.timing.server_ms;
            timing_post += output.timing.post_ms;
        }
        let qf = p.queries as f64;
        let row = KnnBenchRow {
            delta,
            precision: precision_sum / qf,
            rounds_avg: rounds_sum as f64 / qf,
            candidates_avg: candidates_sum as f64 / qf,
            exact_rate: exact as f64 / qf,
            pre_ms: timing_pre / qf,
            server_ms: timing_server / qf,
            post_ms: timing_post / qf,
        };
        report_rows.push(vec![
            p.n.to_string(),
            p.d.to_string(),
            p.k.to_string(),
            delta.to_string(),
            p.queries.to_string(),
            format!("{:.4}", row.precision),
            format!("{:.2}", row.rounds_avg),
            format!("{:.2}", row.candidates_avg),
            format!("{:.4}", row.pre_ms),
            format!("{:.4}", row.server_ms),
            format!("{:.4}", row.post_ms),
        ]);
        rows.push(row);
    }
    server.shutdown();
    Ok((rows, report_rows))
}

pub struct PerturbBenchParams {
    pub n: usize,
    pub d: usize,
    pub buckets: usize,
    pub seed: u64,
}

pub struct PerturbBenchSummary {
    pub keygen_ms: f64,
    pub ope_ms: f64,
    pub total_ms: f64,
    pub per_record_us: f64,
}

pub const PERTURB_REPORT_HEADER: [&str; 7] = [
    "n",
    "d",
    "buckets",
    "keygen_ms",
    "ope_ms",
    "perturb_total_ms",
    "per_record_us",
];

/// Splits perturbation cost into the OPE share and the whole pipeline.
pub fn bench_perturb(p: &PerturbBenchParams) -> Result<(PerturbBenchSummary, Vec<Vec<String>>)> {
    let out = synthetic_uniform(p.n, p.d, p.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x9e37);
    let values: Vec<Vec<f64>> = out.records.iter().map(|r| r.values.clone()).collect();

    let t0 = Instant::now();
    let key = RaspKey::generate(
        &values,
        &KeyParams {
            buckets: p.buckets,
            ..KeyParams::default()
        },
        &mut rng,
    )?;
    let keygen_ms = ms_since(t0);

    let t1 = Instant::now();
    let mut sink = 0.0;
    for rec in &out.records {
        for v in key.ope().encrypt_record(&rec.values) {
            sink += v;
        }
    }
    let ope_ms = ms_since(t1);
    if !sink.is_finite() {
        return Err(Error::Ingest("OPE produced non-finite output".into()));
    }

    let t2 = Instant::now();
    let perturbed = perturb_dataset(&key, &out.records, &mut rng);
    let total_ms = ms_since(t2);
    assert_eq!(perturbed.len(), p.n);

    let summary = PerturbBenchSummary {
        keygen_ms,
        ope_ms,
        total_ms,
        per_record_us: total_ms * 1e3 / p.n as f64,
    };
    let row = vec![
        p.n.to_string(),
        p.d.to_string(),
        p.buckets.to_string(),
        format!("{:.2}", summary.keygen_ms),
        format!("{:.2}", summary.ope_ms),
        format!("{:.2}", summary.total_ms),
        format!("{:.3}", summary.per_record_us),
    ];
    Ok((summary, vec![row]))
}
