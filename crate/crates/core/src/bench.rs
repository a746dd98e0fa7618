//! Sweeps over algorithm × seed × k, record I/O, and ratio reports.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::Serialize;

use crate::covertree::CoverTree;
use crate::data::{Dataset, DistanceCounter};
use crate::error::{Error, Result};
use crate::run::{run, Algorithm, RunConfig, RunMetrics};

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
    /// Shared settings; `k` and `seed` are overwritten per run.
    pub config: RunConfig,
}

impl SweepSpec {
    fn jobs(&self) -> Vec<(Algorithm, u64, usize)> {
        let mut jobs = Vec::new();
        for &a in &self.algorithms {
            for &s in &self.seeds {
                for &k in &self.ks {
                    jobs.push((a, s, k));
                }
            }
        }
        jobs
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// In algorithm, seed, k order.
    pub records: Vec<RunMetrics>,
    /// Cover trees constructed by the sweep: one if any algorithm needed it.
    pub trees_built: usize,
}

/// How sweep entries are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        return Execution::Parallel;
        #[cfg(not(feature = "parallel"))]
        Execution::Sequential
    }
}

/// Runs every (algorithm, seed, k) combination. Tree algorithms share one
/// tree built up front.
pub fn run_sweep(data: &Dataset, spec: &SweepSpec) -> Result<SweepOutcome> {
    run_sweep_with(data, spec, Execution::default())
}

/// [`run_sweep`] with explicit scheduling. Each run is single-threaded, so
/// records do not depend on the choice.
pub fn run_sweep_with(data: &Dataset, spec: &SweepSpec, execution: Execution) -> Result<SweepOutcome> {
    if spec.algorithms.is_empty() || spec.seeds.is_empty() || spec.ks.is_empty() {
        return Err(Error::Config("sweep needs at least one algorithm, seed and k".into()));
    }
    for &k in &spec.ks {
        RunConfig { k, ..spec.config }.validate(data)?;
    }
    let tree = if spec.algorithms.iter().any(|a| a.uses_tree()) {
        Some(CoverTree::build(data, spec.config.tree, &mut DistanceCounter::new())?)
    } else {
        None
    };
    let jobs = spec.jobs();
    let one = |&(a, seed, k): &(Algorithm, u64, usize)| {
        let cfg = RunConfig { k, seed, ..spec.config };
        run(a, data, &cfg, tree.as_ref()).map(|r| r.metrics)
    };
    let records: Result<Vec<_>> = match execution {
        Execution::Sequential => jobs.iter().map(one).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => jobs.par_iter().map(one).collect(),
    };
    Ok(SweepOutcome {
        records: records?,
        trees_built: tree.is_some() as usize,
    })
}

pub fn write_jsonl<W: Write>(records: &[RunMetrics], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<RunMetrics>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Long format, one row per iteration, with the run totals repeated.
pub fn write_csv<W: Write>(records: &[RunMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "algorithm",
        "seed",
        "k",
        "iterations",
        "converged",
        "sse",
        "dist_total",
        "time_total_ns",
        "tree_build_ns",
        "tree_build_dists",
        "iter",
        "dists",
        "time_ns",
    ])?;
    let opt = |v: Option<u64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in records {
        for (i, it) in r.per_iter.iter().enumerate() {
            w.write_record([
                r.algorithm.to_string(),
                r.seed.to_string(),
                r.k.to_string(),
                r.iterations.to_string(),
                r.converged.to_string(),
                r.sse.to_string(),
                r.dist_total.to_string(),
                r.time_total_ns.to_string(),
                opt(r.tree_build_ns),
                opt(r.tree_build_dists),
                (i + 1).to_string(),
                it.dists.to_string(),
                it.time_ns.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Records from one dataset, for reporting.
#[derive(Debug, Clone)]
pub struct Tagged<'a> {
    pub dataset: &'a str,
    pub metrics: &'a RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub k: usize,
    pub seeds: usize,
    /// Mean over seeds of `dist_total / standard dist_total`.
    pub dist_ratio: f64,
    /// Mean over seeds of `time_total_ns / standard time_total_ns`.
    pub time_ratio: f64,
}

/// Per (dataset, algorithm, k) ratios against the standard run with the
/// same dataset, seed and k, averaged over seeds.
pub fn report(records: &[Tagged<'_>]) -> Result<Vec<ReportRow>> {
    let mut baseline = BTreeMap::new();
    for r in records.iter().filter(|r| r.metrics.algorithm == Algorithm::Standard) {
        baseline.insert((r.dataset, r.metrics.seed, r.metrics.k), r.metrics);
    }
    let ratio = |a: u64, b: u64| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    let mut groups: BTreeMap<(&str, usize, Algorithm), (usize, f64, f64)> = BTreeMap::new();
    for r in records {
        let m = r.metrics;
        let base = baseline
            .get(&(r.dataset, m.seed, m.k))
            .ok_or_else(|| Error::MissingBaseline {
                dataset: r.dataset.to_string(),
                seed: m.seed,
                k: m.k,
            })?;
        let g = groups.entry((r.dataset, m.k, m.algorithm)).or_default();
        g.0 += 1;
        g.1 += ratio(m.dist_total, base.dist_total);
        g.2 += ratio(m.time_total_ns, base.time_total_ns);
    }
    Ok(groups
        .into_iter()
        .map(|((dataset, k, algorithm), (n, d, t))| ReportRow {
            dataset: dataset.to_string(),
            algorithm,
            k,
            seeds: n,
            dist_ratio: d / n as f64,
            time_ratio: t / n as f64,
        })
        .collect())
}

pub fn render_text(rows: &[ReportRow]) -> String {
    let header = ["dataset", "k", "algorithm", "seeds", "dists", "time"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.dataset.clone(),
                r.k.to_string(),
                r.algorithm.to_string(),
                r.seeds.to_string(),
                format!("{:.3}", r.dist_ratio),
                format!("{:.3}", r.time_ratio),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |row: &[&str]| {
        let parts: Vec<String> = row
            .iter()
            .zip(width)
            .enumerate()
            .map(|(i, (c, w))| if i < 3 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&header);
    for row in &cells {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

pub fn render_json(rows: &[ReportRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::IterationMetrics;
    use crate::synth;

    fn fake(algorithm: Algorithm, seed: u64, k: usize, dists: u64, time: u64) -> RunMetrics {
        RunMetrics {
            algorithm,
            seed,
            k,
            iterations: 1,
            converged: true,
            sse: 0.0,
            dist_total: dists,
            time_total_ns: time,
            tree_build_ns: None,
            tree_build_dists: None,
            per_iter: vec![IterationMetrics {
                dists,
                time_ns: time,
                changed: 0,
            }],
        }
    }

    fn tag(ms: &[RunMetrics]) -> Vec<Tagged<'_>> {
        ms.iter()
            .map(|m| Tagged {
                dataset: "d",
                metrics: m,
            })
            .collect()
    }

    #[test]
    fn standard_against_itself_is_one() {
        let ms = [fake(Algorithm::Standard, 0, 5, 400, 10)];
        let rows = report(&tag(&ms)).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].dist_ratio, 1.0);
        assert_eq!(rows[0].time_ratio, 1.0);
    }

    #[test]
    fn half_the_distances_is_one_half() {
        let ms = [
            fake(Algorithm::Standard, 0, 5, 400, 10),
            fake(Algorithm::Cover, 0, 5, 200, 10),
        ];
        let rows = report(&tag(&ms)).unwrap();
        let cover = rows.iter().find(|r| r.algorithm == Algorithm::Cover).unwrap();
        assert_eq!(cover.dist_ratio, 0.5);
        assert!(render_text(&rows).contains("0.500"));
    }

    #[test]
    fn hand_computed_seed_average() {
        // seed 0: 100/400 = 0.25, seed 1: 300/400 = 0.75 -> 0.5; times 5/10 and 20/10 -> 1.25
        let ms = [
            fake(Algorithm::Standard, 0, 3, 400, 10),
            fake(Algorithm::Standard, 1, 3, 400, 10),
            fake(Algorithm::Hamerly, 0, 3, 100, 5),
            fake(Algorithm::Hamerly, 1, 3, 300, 20),
        ];
        let rows = report(&tag(&ms)).unwrap();
        let h = rows.iter().find(|r| r.algorithm == Algorithm::Hamerly).unwrap();
        assert_eq!(h.seeds, 2);
        assert_eq!(h.dist_ratio, 0.5);
        assert_eq!(h.time_ratio, 1.25);
        let json: serde_json::Value = serde_json::from_str(&render_json(&rows).unwrap()).unwrap();
        assert_eq!(json[0]["algorithm"], "standard");
        assert_eq!(json[1]["algorithm"], "hamerly");
    }

    #[test]
    fn missing_baseline_names_the_triple() {
        let ms = [
            fake(Algorithm::Standard, 0, 5, 1, 1),
            fake(Algorithm::Elkan, 2, 5, 1, 1),
        ];
        match report(&tag(&ms)) {
            Err(Error::MissingBaseline { dataset, seed, k }) => {
                assert_eq!((dataset.as_str(), seed, k), ("d", 2, 5));
            }
            other => panic!("expected a missing baseline, got {other:?}"),
        }
    }

    #[test]
    fn sweep_is_a_cartesian_product_with_one_tree() {
        let data = synth::blobs(500, 2, 4, 1.0, 0).unwrap();
        let spec = SweepSpec {
            algorithms: vec![Algorithm::Standard, Algorithm::Cover],
            seeds: vec![1, 2],
            ks: vec![3, 6],
            config: RunConfig::new(1, 0),
        };
        let out = run_sweep(&data, &spec).unwrap();
        assert_eq!(out.records.len(), 8);
        assert_eq!(out.trees_built, 1);
        let builds: Vec<_> = out
            .records
            .iter()
            .filter(|r| r.algorithm == Algorithm::Cover)
            .map(|r| r.tree_build_ns)
            .collect();
        assert!(builds.iter().all(|b| b.is_some() && *b == builds[0]));
        assert!(out
            .records
            .iter()
            .filter(|r| r.algorithm == Algorithm::Standard)
            .all(|r| r.tree_build_ns.is_none()));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn scheduling_does_not_change_records() {
        let data = synth::blobs(800, 3, 5, 2.0, 6).unwrap();
        let spec = SweepSpec {
            algorithms: Algorithm::ALL.to_vec(),
            seeds: vec![0, 1],
            ks: vec![4, 7],
            config: RunConfig::new(1, 0),
        };
        let strip = |o: SweepOutcome| -> Vec<_> {
            o.records
                .into_iter()
                .map(|r| {
                    (
                        r.algorithm,
                        r.seed,
                        r.k,
                        r.sse.to_bits(),
                        r.per_iter.iter().map(|i| i.dists).collect::<Vec<_>>(),
                    )
                })
                .collect()
        };
        let seq = strip(run_sweep_with(&data, &spec, Execution::Sequential).unwrap());
        let par = strip(run_sweep_with(&data, &spec, Execution::Parallel).unwrap());
        assert_eq!(seq, par);
    }

    #[test]
    fn jsonl_round_trips() {
        let ms = vec![fake(Algorithm::Hybrid, 4, 7, 12, 34)];
        let mut buf = Vec::new();
        write_jsonl(&ms, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"algorithm\":\"hybrid\",\"seed\":4,\"k\":7,\"iterations\":1,"));
        assert!(text.contains("\"per_iter\":[{\"dists\":12,\"time_ns\":34}]"));
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back[0].dist_total, 12);
        assert_eq!(back[0].per_iter[0].dists, 12);
    }

    #[test]
    fn csv_has_a_row_per_iteration() {
        let mut m = fake(Algorithm::Standard, 0, 2, 5, 5);
        m.per_iter.push(m.per_iter[0]);
        let mut buf = Vec::new();
        write_csv(&[m], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
