//! Heat-model pipeline: 30×30×3 grid, regularized observability Gramian,
//! band sweep of sparsified Newton-Schulz and a dense-inverse oracle.

use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use gramspai::models::{generate_heat3d, HeatModelSpec};
use gramspai::spai::{banded_pattern, definite_interval, newton_schulz, NewtonSchulzConfig};
use gramspai::sparse::spectral::two_norm_error;
use gramspai::statespace::{lift, obs_gramian};

use crate::args::HeatArgs;
use crate::commands::dense_inverse;
use crate::run::{write_csv, write_json, CliResult, Context, RunConfig};

/// Reference condition number of the regularized heat-model Gramian.
pub const REFERENCE_KAPPA: f64 = 3.78e3;

#[derive(Debug, Clone, Serialize)]
pub struct HeatRun {
    pub beta: usize,
    pub phi: f64,
    pub status: String,
    pub iterations: usize,
    /// `‖I − W_r X‖₂` of the returned iterate.
    pub final_error: f64,
    /// `‖X − W_r⁻¹‖₂ / ‖W_r⁻¹‖₂`.
    pub relative_error: Option<f64>,
    pub nnz_blocks: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HeatSummary {
    #[serde(rename = "N")]
    pub subsystems: usize,
    pub states: usize,
    pub p: usize,
    pub mu: f64,
    pub a: f64,
    pub b: f64,
    pub kappa: f64,
    pub reference_kappa: f64,
    pub kappa_ratio: f64,
    pub runs: Vec<HeatRun>,
    /// Final error does not grow as β increases.
    pub error_nonincreasing_in_beta: bool,
    pub gramian_seconds: f64,
    pub oracle_seconds: Option<f64>,
    pub total_seconds: f64,
}

pub fn run_heat(args: &HeatArgs, run: &RunConfig, ctx: &Context) -> CliResult<HeatSummary> {
    let start = Instant::now();
    let spec = HeatModelSpec {
        gx: args.gx,
        gy: args.gy,
        gz: args.gz,
        alpha: args.alpha,
        h: args.h,
        dt: args.dt,
    };
    let sys = generate_heat3d(&spec)?;
    let lifted = lift(&sys, args.p)?;
    let w = obs_gramian(&lifted, args.mu)?;
    let sv = definite_interval(&w, args.seed)?;
    let gramian_seconds = start.elapsed().as_secs_f64();
    let kappa = sv.b / sv.a;

    let (oracle, oracle_seconds) = if args.no_oracle {
        (None, None)
    } else {
        let t0 = Instant::now();
        let inv = dense_inverse(&w)?;
        (Some(inv), Some(t0.elapsed().as_secs_f64()))
    };

    let dir = ctx.output(&args.out);
    std::fs::create_dir_all(&dir)?;
    let mut runs = Vec::new();
    for &beta in &args.betas {
        let mut cfg = NewtonSchulzConfig::sparse(Some(banded_pattern(w.matrix.row_sizes(), beta)), Some(args.phi));
        cfg.max_iter = args.max_iter;
        cfg.interval = Some(sv);
        cfg.seed = args.seed;
        let inv = newton_schulz(&w, &cfg)?;
        let relative_error = match &oracle {
            Some(o) => Some(two_norm_error(&inv.x, o)? * sv.a),
            None => None,
        };
        write_csv(&dir.join(format!("iterations_beta{beta}.csv")), run, |buf| {
            inv.report.write_csv(buf)?;
            Ok(())
        })?;
        runs.push(HeatRun {
            beta,
            phi: args.phi,
            status: format!("{:?}", inv.report.status).to_lowercase(),
            iterations: inv.report.iterations.len(),
            final_error: inv.report.selected_residual().unwrap_or(f64::NAN),
            relative_error,
            nnz_blocks: inv.x.nnz_blocks(),
            seconds: inv.report.total_seconds,
        });
    }
    let mut by_beta: Vec<&HeatRun> = runs.iter().collect();
    by_beta.sort_by_key(|r| r.beta);
    let error_nonincreasing_in_beta = by_beta.windows(2).all(|p| p[1].final_error <= p[0].final_error);
    Ok(HeatSummary {
        subsystems: sys.subsystems,
        states: sys.state_dim(),
        p: args.p,
        mu: args.mu,
        a: sv.a,
        b: sv.b,
        kappa,
        reference_kappa: REFERENCE_KAPPA,
        kappa_ratio: kappa / REFERENCE_KAPPA,
        runs,
        error_nonincreasing_in_beta,
        gramian_seconds,
        oracle_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn reproduce_heat(args: &HeatArgs, ctx: &Context) -> CliResult<serde_json::Value> {
    let run = RunConfig::new("reproduce-heat", args, Some(args.seed), ctx, &[])?;
    let summary = run_heat(args, &run, ctx)?;
    let dir = ctx.output(&args.out);
    let path = dir.join("summary.json");
    write_json(&path, &json!({"run": run, "summary": summary}))?;
    Ok(json!({"output": path, "summary": summary}))
}
