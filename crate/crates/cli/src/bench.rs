//! Runtime scaling of sparsified Newton-Schulz against a dense inverse.

use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use gramspai::models::{generate_heat3d, HeatModelSpec};
use gramspai::spai::{banded_pattern, definite_interval, newton_schulz, predict_pattern_neumann, NewtonSchulzConfig};
use gramspai::statespace::{lift, obs_gramian};

use crate::args::BenchmarkArgs;
use crate::run::{write_csv, CliError, CliResult, Context, RunConfig};

/// One CSV row per (size, method).
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkRecord {
    #[serde(rename = "N")]
    pub subsystems: usize,
    pub dimension: usize,
    pub method: &'static str,
    pub beta: Option<usize>,
    pub neumann: Option<usize>,
    pub phi: Option<f64>,
    pub mu: f64,
    pub kappa: Option<f64>,
    pub final_error: Option<f64>,
    pub iterations: Option<usize>,
    pub seconds: f64,
    pub peak_blocks: usize,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingSummary {
    pub records: Vec<BenchmarkRecord>,
    pub sparse_slope: Option<f64>,
    pub dense_slope: Option<f64>,
}

/// Least-squares slope of `ln t` against `ln N`. With three or more points
/// the smallest size is dropped; a single point has no slope.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.len() >= 3 {
        pts.remove(0);
    }
    if pts.len() < 2 {
        return None;
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|&(n, t)| (n.ln(), t.max(1e-9).ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn grid_side(n: usize) -> CliResult<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || n == 0 {
        return Err(CliError::invalid(format!("size {n} is not a positive perfect square")));
    }
    Ok(side)
}

pub fn run_scaling(args: &BenchmarkArgs) -> CliResult<ScalingSummary> {
    if args.sizes.is_empty() || args.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::invalid("--sizes must be nonempty and strictly increasing"));
    }
    let mut records = Vec::new();
    for &nn in &args.sizes {
        let side = grid_side(nn)?;
        let spec = HeatModelSpec {
            gx: side,
            gy: side,
            gz: args.gz,
            ..Default::default()
        };
        let sys = generate_heat3d(&spec)?;
        let lifted = lift(&sys, args.p)?;
        let w = obs_gramian(&lifted, args.mu)?;
        let dim = w.dimension();

        let t0 = Instant::now();
        let pattern = if args.band {
            banded_pattern(w.matrix.row_sizes(), args.beta)
        } else {
            predict_pattern_neumann(&w, args.neumann)?
        };
        let mut cfg = NewtonSchulzConfig::sparse(Some(pattern), Some(args.phi));
        cfg.max_iter = args.max_iter;
        cfg.interval = Some(definite_interval(&w, cfg.seed)?);
        let inv = newton_schulz(&w, &cfg)?;
        let seconds = t0.elapsed().as_secs_f64();
        records.push(BenchmarkRecord {
            subsystems: nn,
            dimension: dim,
            method: "ns-sparse",
            beta: args.band.then_some(args.beta),
            neumann: (!args.band).then_some(args.neumann),
            phi: Some(args.phi),
            mu: args.mu,
            kappa: inv.report.kappa_used,
            final_error: inv.report.selected_residual(),
            iterations: Some(inv.report.iterations.len()),
            seconds,
            peak_blocks: inv.report.iterations.iter().map(|r| r.nnz_blocks).max().unwrap_or(0),
            status: format!("{:?}", inv.report.status).to_lowercase(),
        });

        if nn <= args.dense_limit {
            let t0 = Instant::now();
            let chol = w.matrix.to_dense().cholesky();
            let status = match chol {
                Some(c) => {
                    let inv = c.inverse();
                    std::hint::black_box(&inv);
                    "ok"
                }
                None => "not-positive-definite",
            };
            records.push(BenchmarkRecord {
                subsystems: nn,
                dimension: dim,
                method: "dense",
                beta: None,
                neumann: None,
                phi: None,
                mu: args.mu,
                kappa: None,
                final_error: None,
                iterations: None,
                seconds: t0.elapsed().as_secs_f64(),
                peak_blocks: nn * nn,
                status: status.into(),
            });
        }
    }
    let slope = |method: &str| {
        let pts: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.subsystems as f64, r.seconds))
            .collect();
        fit_slope(&pts)
    };
    Ok(ScalingSummary {
        sparse_slope: slope("ns-sparse"),
        dense_slope: slope("dense"),
        records,
    })
}

pub fn benchmark_scaling(args: &BenchmarkArgs, ctx: &Context) -> CliResult<serde_json::Value> {
    let run = RunConfig::new("benchmark-scaling", args, None, ctx, &[])?;
    let summary = run_scaling(args)?;
    let path = ctx.prepare(&args.out)?;
    write_csv(&path, &run, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for r in &summary.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(json!({
        "output": path,
        "sparse_slope": summary.sparse_slope,
        "dense_slope": summary.dense_slope,
        "records": summary.records,
    }))
}
