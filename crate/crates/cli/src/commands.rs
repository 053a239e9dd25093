use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use gramspai::estimator::{
    build_estimator, centralized_estimate, control_residual, distributed_estimate, estimation_rhs,
    estimator_patterns_for, impulse_response_solve, least_norm_control, predict_estimator_patterns,
    CountingProvider, DistributedEstimator, LocalSignals,
};
use gramspai::models::{generate_banded_chain, generate_heat3d, generate_random, HeatModelSpec, RandomModelSpec};
use gramspai::spai::{
    banded_pattern, definite_interval, frobenius_spai, inverse_residual, newton_schulz, predict_pattern_neumann,
    regularize_and_invert, ApproxInverse, NewtonSchulzConfig, SpaiStatus,
};
use gramspai::sparse::mm::{read_block_matrix, read_pattern, write_block_matrix};
use gramspai::sparse::spectral::{two_norm_error, SpectralOptions};
use gramspai::sparse::{binarize, BlockSparseMatrix, PatternMatrix};
use gramspai::statespace::{
    apply_inverse_permutation, ctrl_gramian, global_pattern, lift, obs_gramian, simulate, Gramian, GramianKind,
    InterconnectedSystem, LiftedModel,
};

use crate::args::*;
use crate::run::{read_json, write_csv, write_json, CliError, CliResult, Context, RunConfig};

fn read_system(path: &Path) -> CliResult<InterconnectedSystem> {
    InterconnectedSystem::read(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn read_matrix(path: &Path) -> CliResult<(BlockSparseMatrix, Value)> {
    let (m, header) = read_block_matrix(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    Ok((m, header.map(|h| h.meta).unwrap_or(Value::Null)))
}

pub fn generate(args: &GenerateArgs, ctx: &Context) -> CliResult<Value> {
    let (mut sys, out, seed) = match &args.model {
        ModelArgs::Heat3d { gx, gy, gz, alpha, h, dt, out } => {
            let spec = HeatModelSpec {
                gx: *gx,
                gy: *gy,
                gz: *gz,
                alpha: *alpha,
                h: *h,
                dt: *dt,
            };
            (generate_heat3d(&spec)?, out, None)
        }
        ModelArgs::Chain { subsystems, n, coupling, rho, out } => {
            (generate_banded_chain(*subsystems, *n, *coupling, *rho)?, out, None)
        }
        ModelArgs::Random { subsystems, n, m, r, degree, rho, positive, seed, out } => {
            let spec = RandomModelSpec {
                subsystems: *subsystems,
                n: *n,
                m: *m,
                r: *r,
                mean_degree: *degree,
                rho: *rho,
                positive: *positive,
                seed: *seed,
            };
            (generate_random(&spec)?, out, Some(*seed))
        }
    };
    let run = RunConfig::new("generate", args, seed, ctx, &[])?;
    let mut meta = match std::mem::take(&mut sys.meta) {
        Value::Object(m) => m,
        Value::Null => Default::default(),
        other => [("model".to_string(), other)].into_iter().collect(),
    };
    meta.insert("run".into(), run.to_value());
    sys.meta = Value::Object(meta);
    let path = ctx.prepare(out)?;
    sys.write(&path)?;
    Ok(json!({
        "output": path,
        "N": sys.subsystems,
        "n": sys.n,
        "m": sys.m,
        "r": sys.r,
        "states": sys.state_dim(),
        "edges": sys.edges.len(),
    }))
}

pub fn gramian(args: &GramianArgs, ctx: &Context) -> CliResult<Value> {
    let sys = read_system(&args.system)?;
    let run = RunConfig::new("gramian", args, Some(args.seed), ctx, &[&args.system])?;
    let lifted = lift(&sys, args.p)?;
    let w = match args.kind {
        KindArg::Obs => obs_gramian(&lifted, args.mu)?,
        KindArg::Ctrl => ctrl_gramian(&lifted, args.mu)?,
    };
    let sv = definite_interval(&w, args.seed)?;
    let report = json!({
        "kind": w.kind,
        "p": w.p,
        "mu": w.mu,
        "dimension": w.dimension(),
        "nnz_blocks": w.matrix.nnz_blocks(),
        "a": sv.a,
        "b": sv.b,
        "kappa": sv.kappa,
        "interval_converged": sv.converged,
    });
    let path = ctx.prepare(&args.out)?;
    write_block_matrix(
        &w.matrix,
        &path,
        json!({"run": run, "gramian": {"kind": w.kind, "p": w.p, "mu": w.mu}, "interval": sv}),
    )?;
    Ok(json!({"output": path, "report": report}))
}

/// Reads a Gramian written by [`gramian`]; kind, `p` and `μ` come from the
/// sidecar when present.
pub fn read_gramian(path: &Path) -> CliResult<Gramian> {
    let (m, meta) = read_matrix(path)?;
    let g = &meta["gramian"];
    let kind: GramianKind = serde_json::from_value(g["kind"].clone()).unwrap_or(GramianKind::Observability);
    let p = g["p"].as_u64().unwrap_or(0) as usize;
    let mu = g["mu"].as_f64().unwrap_or(0.0);
    Ok(Gramian::from_matrix(m, p, mu, kind)?)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertConfig {
    pub method: Option<MethodArg>,
    pub pattern: Option<PatternSpec>,
    pub phi: Option<f64>,
    pub mu: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub dense: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PatternSpec {
    Band { beta: usize },
    Neumann { s: usize },
    File { path: PathBuf },
}

impl InvertConfig {
    /// Config file values overridden by explicit flags.
    pub fn resolve(args: &InvertArgs) -> CliResult<Self> {
        let mut cfg: InvertConfig = match &args.config {
            Some(p) => read_json(p)?,
            None => InvertConfig::default(),
        };
        if args.method.is_some() {
            cfg.method = args.method;
        }
        if args.dense {
            cfg.dense = Some(true);
        }
        if let Some(beta) = args.beta {
            cfg.pattern = Some(PatternSpec::Band { beta });
        } else if let Some(s) = args.neumann {
            cfg.pattern = Some(PatternSpec::Neumann { s });
        } else if let Some(path) = &args.pattern_file {
            cfg.pattern = Some(PatternSpec::File { path: path.clone() });
        }
        cfg.phi = args.phi.or(cfg.phi);
        cfg.mu = args.mu.or(cfg.mu);
        cfg.tol = args.tol.or(cfg.tol);
        cfg.max_iter = args.max_iter.or(cfg.max_iter);
        Ok(cfg)
    }

    fn pattern(&self, w: &Gramian) -> CliResult<Option<PatternMatrix>> {
        Ok(match &self.pattern {
            None => None,
            Some(PatternSpec::Band { beta }) => Some(banded_pattern(w.matrix.row_sizes(), *beta)),
            Some(PatternSpec::Neumann { s }) => Some(predict_pattern_neumann(w, *s)?),
            Some(PatternSpec::File { path }) => {
                Some(read_pattern(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?)
            }
        })
    }
}

/// Dispatches to Newton-Schulz or Frobenius SPAI.
pub fn run_inversion(w: &Gramian, cfg: &InvertConfig, seed: u64) -> CliResult<ApproxInverse> {
    let pattern = cfg.pattern(w)?;
    match cfg.method.unwrap_or(MethodArg::Ns) {
        MethodArg::Frob => {
            let pattern = pattern.ok_or_else(|| CliError::invalid("frobenius SPAI needs a pattern (band, neumann or file)"))?;
            if cfg.mu.unwrap_or(0.0) > 0.0 {
                let shifted = Gramian {
                    matrix: w.matrix.add_identity(cfg.mu.unwrap())?,
                    mu: w.mu + cfg.mu.unwrap(),
                    ..w.clone()
                };
                return Ok(frobenius_spai(&shifted, &pattern)?);
            }
            Ok(frobenius_spai(w, &pattern)?)
        }
        MethodArg::Ns => {
            let mut ns = if cfg.dense.unwrap_or(false) {
                if pattern.is_some() || cfg.phi.is_some() {
                    return Err(CliError::invalid("--dense excludes --beta/--neumann/--pattern-file/--phi"));
                }
                NewtonSchulzConfig::dense()
            } else {
                if pattern.is_none() && cfg.phi.is_none() {
                    return Err(CliError::invalid("choose --dense or a sparsifier (--beta, --neumann, --pattern-file, --phi)"));
                }
                NewtonSchulzConfig::sparse(pattern, cfg.phi)
            };
            ns.seed = seed;
            if let Some(t) = cfg.tol {
                ns.tol = t;
            }
            if let Some(k) = cfg.max_iter {
                ns.max_iter = k;
            }
            Ok(match cfg.mu {
                Some(mu) if mu > 0.0 => regularize_and_invert(w, mu, &ns)?,
                _ => newton_schulz(w, &ns)?,
            })
        }
    }
}

fn report_summary(inv: &ApproxInverse) -> Value {
    let r = &inv.report;
    json!({
        "method": r.method,
        "status": r.status,
        "iterations": r.iterations.len(),
        "selected_iteration": r.selected_iteration,
        "final_error": r.selected_residual(),
        "kappa_used": r.kappa_used,
        "kappa_original": r.kappa_original,
        "mu": r.mu,
        "objective": r.objective,
        "empty_columns": r.empty_columns.len(),
        "nnz_blocks": inv.x.nnz_blocks(),
        "seconds": r.total_seconds,
    })
}

pub fn invert(args: &InvertArgs, ctx: &Context) -> CliResult<Value> {
    let cfg = InvertConfig::resolve(args)?;
    let mut inputs: Vec<&Path> = vec![&args.gramian];
    if let Some(c) = &args.config {
        inputs.push(c);
    }
    if let Some(PatternSpec::File { path }) = &cfg.pattern {
        inputs.push(path);
    }
    let run = RunConfig::new("invert", &json!({"args": args, "resolved": cfg}), Some(args.seed), ctx, &inputs)?;
    let w = read_gramian(&args.gramian)?;
    let inv = run_inversion(&w, &cfg, args.seed)?;

    let path = ctx.prepare(&args.out)?;
    let summary = report_summary(&inv);
    write_block_matrix(&inv.x, &path, json!({"run": run, "report": summary}))?;
    let report_path = ctx.prepare(&args.report.clone().unwrap_or_else(|| args.out.with_extension("report.csv")))?;
    write_csv(&report_path, &run, |buf| {
        if inv.report.column_residuals.is_empty() {
            inv.report.write_csv(buf)?;
        } else {
            inv.report.write_column_csv(buf)?;
        }
        Ok(())
    })?;
    let out = json!({"output": path, "report_csv": report_path, "summary": summary});
    match inv.report.status {
        SpaiStatus::Diverged | SpaiStatus::MaxIter => Err(CliError::NotConverged {
            message: format!("inversion ended with status {:?}", inv.report.status),
            summary: out,
        }),
        _ => Ok(out),
    }
}

pub fn estimator(args: &EstimatorArgs, ctx: &Context) -> CliResult<Value> {
    let sys = read_system(&args.system)?;
    let (x, _) = read_matrix(&args.x)?;
    let run = RunConfig::new("estimator", args, None, ctx, &[&args.system, &args.x])?;
    let lifted = lift(&sys, args.p)?;
    let est = build_estimator(&x, &lifted)?;
    let dir = ctx.output(&args.out);
    est.write(&dir, run.to_value())?;

    let a_bar = global_pattern(&lifted.global);
    let graph = est.communication_graph();
    let (l_pred, q_pred) = estimator_patterns_for(&binarize(&x), &a_bar, args.p)?;
    let mut comparison = json!({
        "x_blocks": x.nnz_blocks(),
        "l_blocks": graph.l_bar.len(),
        "q_blocks": graph.q_bar.len(),
        "l_predicted_blocks": l_pred.len(),
        "q_predicted_blocks": q_pred.len(),
        "l_subset_of_predicted": graph.l_bar.is_subset_of(&l_pred),
        "q_subset_of_predicted": graph.q_bar.is_subset_of(&q_pred),
        "l_in_degree": graph.l_in_degree,
        "q_in_degree": graph.q_in_degree,
    });
    if let Some(s) = args.s {
        let (ls, qs) = predict_estimator_patterns(&a_bar, args.p, s)?;
        comparison["neumann_s"] = json!(s);
        comparison["l_subset_of_neumann_prediction"] = json!(graph.l_bar.is_subset_of(&ls));
        comparison["q_subset_of_neumann_prediction"] = json!(graph.q_bar.is_subset_of(&qs));
    }
    let subset = graph.l_bar.is_subset_of(&l_pred) && graph.q_bar.is_subset_of(&q_pred);
    eprintln!("actual ⊆ predicted: {subset}");
    write_json(&dir.join("patterns.json"), &json!({"run": run, "comparison": comparison}))?;
    Ok(json!({"output": dir, "comparison": comparison}))
}

/// A window of `p + 1` global samples and the states that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalWindow {
    pub p: usize,
    /// `y(k−p), …, y(k)`.
    pub outputs: Vec<Vec<f64>>,
    /// `u(k−p), …, u(k)`.
    pub inputs: Vec<Vec<f64>>,
    /// `x(k−p)`, when known.
    #[serde(default)]
    pub x_start: Option<Vec<f64>>,
    /// `x(k)`, when known.
    #[serde(default)]
    pub x_end: Option<Vec<f64>>,
    #[serde(default)]
    pub run: Value,
}

/// Simulates one window from a Gaussian initial state.
pub fn simulate_window(sys: &InterconnectedSystem, p: usize, noise: f64, zero_inputs: bool, seed: u64) -> CliResult<SignalWindow> {
    let global = gramspai::statespace::assemble_global(sys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let x0: Vec<f64> = (0..global.a.nrows()).map(|_| normal.sample(&mut rng)).collect();
    let inputs: Vec<Vec<f64>> = (0..=p)
        .map(|_| {
            (0..global.b.ncols())
                .map(|_| if zero_inputs { 0.0 } else { normal.sample(&mut rng) })
                .collect()
        })
        .collect();
    let traj = simulate(&global, &x0, &inputs, noise, seed ^ 0x5a5a)?;
    Ok(SignalWindow {
        p,
        outputs: traj.outputs,
        inputs: traj.inputs,
        x_start: Some(traj.states[0].clone()),
        x_end: Some(traj.states[p].clone()),
        run: Value::Null,
    })
}

pub fn simulate_cmd(args: &SimulateArgs, ctx: &Context) -> CliResult<Value> {
    let sys = read_system(&args.system)?;
    let run = RunConfig::new("simulate", args, Some(args.seed), ctx, &[&args.system])?;
    let mut window = simulate_window(&sys, args.p, args.noise, args.zero_inputs, args.seed)?;
    window.run = run.to_value();
    let path = ctx.prepare(&args.out)?;
    write_json(&path, &serde_json::to_value(&window)?)?;
    Ok(json!({"output": path, "samples": args.p + 1}))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Dense inverse of an SPD Gramian as a block matrix.
pub fn dense_inverse(w: &Gramian) -> CliResult<BlockSparseMatrix> {
    let chol = w
        .matrix
        .to_dense()
        .cholesky()
        .ok_or_else(|| CliError::invalid("Gramian is not positive definite; use mu > 0"))?;
    let inv = chol.inverse();
    let inv = (&inv + inv.transpose()) * 0.5;
    Ok(BlockSparseMatrix::from_dense(
        &inv,
        w.matrix.row_sizes().to_vec(),
        w.matrix.col_sizes().to_vec(),
    )?)
}

pub fn estimate(args: &EstimateArgs, ctx: &Context) -> CliResult<Value> {
    let sys = read_system(&args.system)?;
    let window: SignalWindow = read_json(&args.signals)?;
    let mut inputs: Vec<&Path> = vec![&args.system, &args.signals];
    let l_path = args.estimator.join("L.mtx");
    let q_path = args.estimator.join("Q.mtx");
    inputs.push(&l_path);
    inputs.push(&q_path);
    if let Some(x) = &args.x {
        inputs.push(x);
    }
    let run = RunConfig::new("estimate", args, None, ctx, &inputs)?;
    let est = DistributedEstimator::read(&args.estimator)?;
    let lifted = lift(&sys, args.p)?;
    if est.shape.p != args.p || window.p != args.p {
        return Err(CliError::invalid(format!(
            "window length mismatch: --p {}, estimator p {}, signals p {}",
            args.p, est.shape.p, window.p
        )));
    }
    let y = lifted.lift_outputs(&window.outputs)?;
    let u = lifted.lift_inputs(&window.inputs)?;
    let signals = LocalSignals::from_lifted(&est.shape, &y, &u)?;
    let counter = CountingProvider::new(&signals);
    let x_hat = distributed_estimate(&est, &counter)?;

    let mut report = json!({
        "signal_fetches": counter.total(),
        "expected_fetches": est.l.nnz_blocks() + est.q.nnz_blocks(),
        "estimate_norm": norm(&x_hat),
    });
    if let Some(x_true) = &window.x_start {
        report["state_error"] = json!(diff_norm(&x_hat, x_true));
        report["relative_state_error"] = json!(diff_norm(&x_hat, x_true) / norm(x_true).max(f64::MIN_POSITIVE));
    }
    if let Some(mu) = args.mu {
        let w = obs_gramian(&lifted, mu)?;
        let x_c = centralized_estimate(&lifted, &w, &y, &u)?;
        let gap = diff_norm(&x_hat, &x_c);
        report["centralized_gap"] = json!(gap);
        if let Some(xp) = &args.x {
            let (x, _) = read_matrix(xp)?;
            let e = two_norm_error(&x, &dense_inverse(&w)?)?;
            let bound = e * norm(&estimation_rhs(&lifted, &y, &u)?);
            report["inverse_error"] = json!(e);
            report["transfer_bound"] = json!(bound);
            report["transfer_bound_holds"] = json!(gap <= bound * (1.0 + 1e-8) + 1e-12);
        }
    }
    let path = ctx.prepare(&args.out)?;
    write_json(&path, &json!({"run": run, "estimate": x_hat, "report": report}))?;
    Ok(json!({"output": path, "report": report}))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ControlTargets {
    #[serde(default)]
    pub x_start: Option<Vec<f64>>,
    #[serde(default)]
    pub x_target: Option<Vec<f64>>,
    /// Structured lifted output.
    #[serde(default)]
    pub y_desired: Option<Vec<f64>>,
}

fn least_norm(
    lifted: &LiftedModel,
    targets: &ControlTargets,
    mu: f64,
    inverse: Option<&BlockSparseMatrix>,
) -> CliResult<(Vec<f64>, Value)> {
    let (xs, xt) = match (&targets.x_start, &targets.x_target) {
        (Some(s), Some(t)) => (s, t),
        _ => return Err(CliError::invalid("least-norm control needs x_start and x_target")),
    };
    let q = ctrl_gramian(lifted, mu)?;
    let u = least_norm_control(lifted, &q, inverse, xt, xs)?;
    let res = control_residual(lifted, &u, xt, xs)?;
    let d = control_residual(lifted, &vec![0.0; u.len()], xt, xs)?;
    let mut report = json!({
        "residual_norm": norm(&res),
        "input_norm": norm(&u),
        "target_gap_norm": norm(&d),
    });
    if let Some(x) = inverse {
        let e = inverse_residual(&q.matrix, x, &SpectralOptions { tol: 1e-10, max_iter: 600, ..Default::default() })?;
        report["inverse_residual"] = json!(e);
        report["residual_bound"] = json!(e * norm(&d));
        report["residual_bound_holds"] = json!(norm(&res) <= e * norm(&d) * (1.0 + 1e-8) + 1e-12);
    }
    Ok((u, report))
}

pub fn control(args: &ControlArgs, ctx: &Context) -> CliResult<Value> {
    let sys = read_system(&args.system)?;
    let targets: ControlTargets = read_json(&args.targets)?;
    let mut inputs: Vec<&Path> = vec![&args.system, &args.targets];
    if let Some(x) = &args.inverse {
        inputs.push(x);
    }
    let run = RunConfig::new("control", args, None, ctx, &inputs)?;
    let lifted = lift(&sys, args.p)?;
    let inverse = match &args.inverse {
        Some(p) => Some(read_matrix(p)?.0),
        None => None,
    };
    let (u, report) = match args.mode {
        ControlMode::LeastNorm => least_norm(&lifted, &targets, args.mu, inverse.as_ref())?,
        ControlMode::Impulse => {
            let y = targets
                .y_desired
                .as_ref()
                .ok_or_else(|| CliError::invalid("impulse solve needs y_desired"))?;
            let u = impulse_response_solve(&lifted, y, inverse.as_ref())?;
            let fit = lifted.cal_g.matvec(&u)?;
            let report = json!({"output_residual_norm": diff_norm(&fit, y), "input_norm": norm(&u)});
            (u, report)
        }
    };
    let classical = apply_inverse_permutation(&lifted.perm_u, &u);
    let samples: Vec<Vec<f64>> = classical.chunks(lifted.subsystems * lifted.m).map(<[f64]>::to_vec).collect();
    let path = ctx.prepare(&args.out)?;
    write_json(&path, &json!({"run": run, "lifted_input": u, "input_samples": samples, "report": report}))?;
    Ok(json!({"output": path, "report": report}))
}
