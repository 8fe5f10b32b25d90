use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rasp_core::attack::{
    ica_attack_series, naive_candidate_audit, score_estimate, worst_case_estimator,
    DistributionSpec, IcaConfig,
};
use rasp_core::perturb::{perturb_dataset, RaspKey};
use rasp_core::IndexStore;
use rasp_service::bench::{
    bench_knn, bench_perturb, bench_range, KnnBenchParams, PerturbBenchParams, RangeBenchParams,
    KNN_REPORT_HEADER, PERTURB_REPORT_HEADER, RANGE_REPORT_HEADER,
};
use rasp_service::config::{parse_bound_policy, ServiceConfig};
use rasp_service::dataset::{ingest_csv, parse_schema, synthetic_non_gaussian, synthetic_uniform, IngestOutput};
use rasp_service::error::Result;
use rasp_service::{proxy, server, store};

#[derive(Parser)]
#[command(name = "rasp", version, about = "Confidential range and kNN query service")]
struct Cli {
    /// Config file of key = value overrides (also honored via RASP_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a delimited file (or a synthetic table) into a plain dataset.
    Ingest {
        /// Delimited input file with a header row.
        #[arg(long, conflicts_with = "synthetic")]
        input: Option<PathBuf>,
        /// Searchable columns, e.g. "age:num,workclass:cat".
        #[arg(long)]
        schema: Option<String>,
        /// Generate a synthetic uniform table with this many rows instead.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Dimensions for the synthetic table.
        #[arg(long, default_value_t = 5)]
        dims: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate the secret key from a plain dataset.
    Keygen {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        buckets: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Perturb a plain dataset into the exportable server form.
    Perturb {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the server-side index file for a perturbed dataset.
    Index {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        capacity: Option<usize>,
    },
    /// Serve secured queries over a perturbed dataset.
    Serve {
        #[arg(long)]
        data: PathBuf,
        /// Prebuilt index file; built in memory when absent.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:7464")]
        addr: String,
        #[arg(long)]
        capacity: Option<usize>,
    },
    /// Run a conjunctive range query through the proxy.
    Query {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        addr: String,
        /// Conjunction of simple conditions, e.g. "x0 >= 0.2 and x0 <= 0.6".
        #[arg(long)]
        filter: String,
    },
    /// Run a k-nearest-neighbor query through the proxy.
    Knn {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        addr: String,
        /// Query point in the raw domain, comma-separated.
        #[arg(long)]
        point: String,
        #[arg(short, long)]
        k: usize,
        #[arg(long)]
        delta: Option<usize>,
        /// user:<edge> | center:<eps> | full
        #[arg(long)]
        policy: Option<String>,
    },
    /// Estimation attacks against perturbed data, scored with NR_MSE.
    Attack {
        #[command(subcommand)]
        attack: AttackCommand,
    },
    /// Desk-scale performance reproductions.
    Bench {
        #[command(subcommand)]
        bench: BenchCommand,
    },
}

#[derive(Subcommand)]
enum AttackCommand {
    /// ICA distributional attack across freshly drawn keys; writes the
    /// progressive best/worst/average series.
    Ica {
        #[arg(long, default_value_t = 10)]
        dims: usize,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        keys: usize,
        /// Attack the full scheme (true) or the variant without OPE (false).
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        ope: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Worst-case estimator: independent draws from the known distribution.
    WorstCase {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        dims: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// White-box audit of the naive-estimation candidate family.
    NaiveAudit {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        dims: usize,
        #[arg(long, default_value_t = 100)]
        candidates: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Two-stage range processing vs the linear-scan yardstick.
    Range {
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        d: usize,
        /// Query width as a fraction of the domain.
        #[arg(long, default_value_t = 0.3)]
        range: f64,
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// kNN precision/rounds across delta settings, over loopback.
    Knn {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        /// Comma-separated delta values.
        #[arg(long, default_value = "0,2,5")]
        deltas: String,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perturbation cost split (OPE share vs whole pipeline).
    Perturb {
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 9)]
        d: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = ServiceConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest {
            input,
            schema,
            synthetic,
            dims,
            out,
            seed,
        } => {
            let output: IngestOutput = match (input, synthetic) {
                (Some(path), _) => {
                    let schema = schema.ok_or_else(|| {
                        rasp_service::Error::Ingest("--schema is required with --input".into())
                    })?;
                    ingest_csv(&path, &parse_schema(&schema)?)?
                }
                (None, Some(n)) => synthetic_uniform(n, dims, seed.unwrap_or(config.seed))?,
                (None, None) => {
                    return Err(rasp_service::Error::Ingest(
                        "provide --input or --synthetic".into(),
                    ))
                }
            };
            for rej in &output.rejected {
                eprintln!("rejected line {}: {}", rej.line, rej.reason);
            }
            store::save_plain(&out, &output.manifest, &output.records)?;
            println!(
                "ingested {} records ({} rejected) into {}",
                output.records.len(),
                output.rejected.len(),
                out.display()
            );
            Ok(())
        }
        Command::Keygen {
            data,
            out,
            buckets,
            seed,
        } => {
            let (manifest, records) = store::load_plain(&data)?;
            let values: Vec<Vec<f64>> = records.iter().map(|r| r.values.clone()).collect();
            let mut params = config.key_params()?;
            if let Some(b) = buckets {
                params.buckets = b;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(config.seed));
            let key = RaspKey::generate(&values, &params, &mut rng)?;
            store::save_key(&out, &key, &manifest)?;
            println!(
                "key over {} dimensions ({} buckets) written to {}",
                key.dims(),
                params.buckets,
                out.display()
            );
            Ok(())
        }
        Command::Perturb {
            key,
            data,
            out,
            seed,
        } => {
            let (key, _) = store::load_key(&key)?;
            let (_, records) = store::load_plain(&data)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(config.seed.wrapping_add(1)));
            let started = std::time::Instant::now();
            let perturbed = perturb_dataset(&key, &records, &mut rng);
            let elapsed = started.elapsed().as_secs_f64();
            store::save_perturbed(&out, &perturbed)?;
            println!(
                "perturbed {} records in {:.3}s into {}",
                perturbed.len(),
                elapsed,
                out.display()
            );
            Ok(())
        }
        Command::Index {
            data,
            out,
            capacity,
        } => {
            let records = store::load_perturbed(&data)?;
            let capacity = capacity.unwrap_or(config.capacity);
            let index = IndexStore::build(records, capacity)?;
            store::save_index(&out, &index)?;
            println!(
                "indexed {} records (capacity {capacity}, height {}) into {}",
                index.len(),
                index.height(),
                out.display()
            );
            Ok(())
        }
        Command::Serve {
            data,
            index,
            addr,
            capacity,
        } => {
            let records = store::load_perturbed(&data)?;
            let capacity = capacity.unwrap_or(config.capacity);
            let store = match index {
                Some(path) => store::load_index(&path, records)?,
                None => IndexStore::build(records, capacity)?,
            };
            let n = store.len();
            let handle = server::serve(addr.as_str(), Some(store), capacity)?;
            println!("serving {n} records on {}", handle.addr());
            use std::io::Write as _;
            std::io::stdout().flush()?;
            handle.wait();
            Ok(())
        }
        Command::Query { key, addr, filter } => {
            let (key, manifest) = store::load_key(&key)?;
            let proxy = proxy::Proxy::new(key, manifest.clone());
            let mut conn = proxy::Connection::connect(addr.as_str())?;
            let output = proxy.range_query(&mut conn, &filter)?;
            let mut header: Vec<&str> =
                manifest.columns.iter().map(|c| c.name.as_str()).collect();
            header.push("payload");
            println!("id\t{}", header.join("\t"));
            for (id, row) in output.ids.iter().zip(&output.rows) {
                println!("{id}\t{}", row.join("\t"));
            }
            eprintln!(
                "{} rows; stage-1 candidates {}; blocks index={} data={}; prep {:.3}ms server {:.3}ms post {:.3}ms",
                output.ids.len(),
                output.stage1_count,
                output.counters.index_blocks,
                output.counters.data_blocks,
                output.timing.prep_ms,
                output.timing.server_ms,
                output.timing.post_ms
            );
            Ok(())
        }
        Command::Knn {
            key,
            addr,
            point,
            k,
            delta,
            policy,
        } => {
            let (key, manifest) = store::load_key(&key)?;
            let point: Vec<f64> = point
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        rasp_service::Error::Filter(format!("bad coordinate '{p}'"))
                    })
                })
                .collect::<Result<_>>()?;
            let policy = match policy {
                Some(p) => parse_bound_policy(&p)?,
                None => config.bound_policy,
            };
            let proxy = proxy::Proxy::new(key, manifest.clone());
            let mut conn = proxy::Connection::connect(addr.as_str())?;
            let output =
                proxy.knn(&mut conn, &point, k, delta.unwrap_or(config.delta), &policy)?;
            let mut header: Vec<&str> =
                manifest.columns.iter().map(|c| c.name.as_str()).collect();
            header.push("payload");
            println!("id\t{}", header.join("\t"));
            for (id, row) in output.ids.iter().zip(&output.rows) {
                println!("{id}\t{}", row.join("\t"));
            }
            eprintln!(
                "{} neighbors from {} candidates in {} rounds; pre {:.3}ms server {:.3}ms post {:.3}ms",
                output.ids.len(),
                output.candidates,
                output.rounds,
                output.timing.prep_ms,
                output.timing.server_ms,
                output.timing.post_ms
            );
            Ok(())
        }
        Command::Attack { attack } => run_attack(attack, &config),
        Command::Bench { bench } => run_bench(bench, &config),
    }
}

fn run_attack(attack: AttackCommand, config: &ServiceConfig) -> Result<()> {
    match attack {
        AttackCommand::Ica {
            dims,
            n,
            keys,
            ope,
            out,
            seed,
        } => {
            let data = synthetic_non_gaussian(n, dims, seed.unwrap_or(config.seed));
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(config.seed) ^ 0x1ca);
            let params = config.key_params()?;
            let rows =
                ica_attack_series(&data, ope, keys, &params, &IcaConfig::default(), &mut rng)?;
            let report: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.round.to_string(),
                        format!("{:.4}", r.best),
                        format!("{:.4}", r.worst),
                        format!("{:.4}", r.average),
                    ]
                })
                .collect();
            store::write_report(&out, &["round", "best", "worst", "average"], &report)?;
            let last = rows.last().expect("at least one key");
            println!(
                "ica attack over {keys} keys (ope={ope}): best {:.3}, worst {:.3}, average {:.3} -> {}",
                last.best,
                last.worst,
                last.average,
                out.display()
            );
            Ok(())
        }
        AttackCommand::WorstCase { n, dims, out, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(config.seed) ^ 0xbeef);
            let originals: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..dims)
                        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                        .collect()
                })
                .collect();
            let dists = vec![DistributionSpec::StdNormal; dims];
            let estimate = worst_case_estimator(&dists, n, &mut rng);
            let report = score_estimate(&originals, &estimate)?;
            let rows: Vec<Vec<String>> = report
                .per_dimension
                .iter()
                .enumerate()
                .map(|(j, v)| vec![j.to_string(), format!("{:.4}", v)])
                .collect();
            store::write_report(&out, &["dimension", "nr_mse"], &rows)?;
            println!(
                "worst-case estimator: min {:.3}, mean {:.3}, resilient {} -> {}",
                report.min,
                report.mean,
                report.resilient,
                out.display()
            );
            Ok(())
        }
        AttackCommand::NaiveAudit {
            n,
            dims,
            candidates,
            out,
            seed,
        } => {
            let data = synthetic_non_gaussian(n, dims, seed.unwrap_or(config.seed) ^ 0xa0d17);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(config.seed) ^ 0xbadc);
            let params = config.key_params()?;
            let key = RaspKey::generate(&data, &params, &mut rng)?;
            let perturbed: Vec<Vec<f64>> = data
                .iter()
                .map(|x| {
                    let e = key.ope().encrypt_record(x);
                    let v = key.noise().sample(&mut rng);
                    key.project_extended(&e, v)
                })
                .collect();
            let report = naive_candidate_audit(&key, &perturbed, &data, candidates, &mut rng)?;
            let rows = vec![vec![
                format!("{:.3e}", report.homogeneous_max_dev),
                report.candidates.to_string(),
                report.homogeneous_preserved.to_string(),
                report.resilient_candidates.to_string(),
                format!("{:.4}", report.min_candidate_nrmse),
            ]];
            store::write_report(
                &out,
                &[
                    "homogeneous_max_dev",
                    "candidates",
                    "homogeneous_preserved",
                    "resilient_candidates",
                    "min_candidate_nr_mse",
                ],
                &rows,
            )?;
            println!(
                "naive audit: {}/{} candidates resilient, homogeneous row deviation {:.2e} -> {}",
                report.resilient_candidates,
                report.candidates,
                report.homogeneous_max_dev,
                out.display()
            );
            Ok(())
        }
    }
}

fn run_bench(bench: BenchCommand, config: &ServiceConfig) -> Result<()> {
    match bench {
        BenchCommand::Range {
            n,
            d,
            range,
            queries,
            out,
        } => {
            let (summary, rows) = bench_range(&RangeBenchParams {
                n,
                d,
                range_frac: range,
                queries,
                capacity: config.capacity,
                buckets: config.buckets,
                seed: config.seed,
            })?;
            store::write_report(&out, &RANGE_REPORT_HEADER, &rows)?;
            println!(
                "range bench: linear scan {} blocks, stage-1 avg {:.1} blocks, purity {:.2}% -> {}",
                summary.linear_scan_blocks,
                summary.stage1_blocks_avg,
                summary.purity_pct,
                out.display()
            );
            Ok(())
        }
        BenchCommand::Knn {
            n,
            d,
            k,
            deltas,
            queries,
            out,
        } => {
            let deltas: Vec<usize> = deltas
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| rasp_service::Error::Config(format!("bad delta '{p}'")))
                })
                .collect::<Result<_>>()?;
            let (rows, report) = bench_knn(&KnnBenchParams {
                n,
                d,
                k,
                deltas,
                queries,
                capacity: config.capacity,
                buckets: config.buckets,
                seed: config.seed,
            })?;
            store::write_report(&out, &KNN_REPORT_HEADER, &report)?;
            for row in &rows {
                println!(
                    "delta {}: precision {:.3}, rounds {:.1}, exact {:.1}%",
                    row.delta,
                    row.precision,
                    row.rounds_avg,
                    100.0 * row.exact_rate
                );
            }
            println!("-> {}", out.display());
            Ok(())
        }
        BenchCommand::Perturb { n, d, out } => {
            let (summary, rows) = bench_perturb(&PerturbBenchParams {
                n,
                d,
                buckets: config.buckets,
                seed: config.seed,
            })?;
            store::write_report(&out, &PERTURB_REPORT_HEADER, &rows)?;
            println!(
                "perturb bench: {} records in {:.1}ms ({:.2}us/record, OPE share {:.1}ms) -> {}",
                n,
                summary.total_ms,
                summary.per_record_us,
                summary.ope_ms,
                out.display()
            );
            Ok(())
        }
    }
}
