//! Homodyne detection: the ε-scaled mixed counting SSE, the scaled and
//! centered observation W_t^ε = εN_t − t/ε, the diffusive Belavkin
//! equation
//!   dρ = L(ρ)dt + (w_t ρV_s† + w̄_t V_sρ − Tr(·)ρ) dM_t^{hd},
//!   dM_t^{hd} = dW_t − Tr(w_t ρV_s† + w̄_t V_sρ)dt,
//! and the ε → 0 convergence study between the two integrators.
//!
//! The side-channel collapse operator V_s carries the coupling κ_s, so
//! the paper's w κ̄_s ρV† + w̄ κ_s Vρ reads w ρV_s† + w̄ V_sρ here.

use crate::algebra::{c, vec_trace, CMatrix, DensityMatrix, Superoperator, C64};
use crate::davies::SseError;
use crate::exec::{run_indexed, trajectory_rng};
use crate::lindblad::{
    HomodyneSpec, LindbladModel, ModelError, UnravelingSplit,
};
use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// One diffusive (or ε-scaled) path recorded on the requested grid.
#[derive(Clone, Debug)]
pub struct DiffusiveTrajectory {
    pub grid: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// W_t^ε (scaled counting) or W_t (diffusive) at the grid times.
    pub observation: Vec<f64>,
    /// Innovation martingale: ε(N_t − ∫Tr𝓙_a ds) or W_t − ∫m_s ds.
    pub martingale: Vec<f64>,
    /// N_t for the scaled-counting scheme; empty for the diffusive one.
    pub counts: Vec<u64>,
    /// Σ (ΔW)² over all micro-steps.
    pub qv: f64,
    /// Micro-steps violating the per-step increment law (zero when the
    /// construction is exact).
    pub ito_violations: u64,
    pub dt: f64,
}

fn hermitize_normalize(dim: usize, v: &mut Array1<C64>) {
    for i in 0..dim {
        for j in (i + 1)..dim {
            let a = v[i + dim * j];
            let b = v[j + dim * i];
            let avg = (a + b.conj()).scale(0.5);
            v[i + dim * j] = avg;
            v[j + dim * i] = avg.conj();
        }
        let d = v[i + dim * i];
        v[i + dim * i] = c(d.re, 0.0);
    }
    let tr = vec_trace(dim, v).re;
    let inv = c(1.0 / tr, 0.0);
    for z in v.iter_mut() {
        *z *= inv;
    }
}

/// Map requested output times onto the uniform index grid.
fn output_indices(out_grid: &[f64], horizon: f64, n_steps: usize) -> Result<Vec<usize>, SseError> {
    let h = horizon / n_steps as f64;
    let mut idx: Vec<usize> = Vec::with_capacity(out_grid.len());
    for &t in out_grid {
        if !(0.0..=horizon + 1e-9).contains(&t) {
            return Err(SseError::InvalidOutcome(
                "output grid must lie within [0, horizon]".into(),
            ));
        }
        idx.push((t / h).round() as usize);
    }
    idx.sort_unstable();
    idx.dedup();
    Ok(idx)
}

// ---------------------------------------------------------------------------
// Scaled counting (ε > 0)
// ---------------------------------------------------------------------------

/// Integrate the mixed counting SSE under the homodyne jump map
/// 𝓙_a(ρ) = (V_s + w_t/ε)ρ(V_s† + w̄_t/ε), emitting W_t^ε = εN_t − t/ε.
/// Jumps are Bernoulli per micro-step, so the per-step increment law
/// (ΔW)² = εΔW + Δt (counting rules applied) holds by construction.
#[allow(clippy::too_many_arguments)]
pub fn integrate_scaled_counting_sse<R: Rng + ?Sized>(
    model: &LindbladModel,
    side: usize,
    spec: &HomodyneSpec,
    rho0: &DensityMatrix,
    horizon: f64,
    dt: f64,
    out_grid: &[f64],
    rng: &mut R,
) -> Result<DiffusiveTrajectory, SseError> {
    if spec.epsilon <= 0.0 {
        return Err(SseError::Model(ModelError::BadParameter(
            "scaled counting needs epsilon > 0".into(),
        )));
    }
    let eps = spec.epsilon;
    // the jump rate is ~1/ε²; keep per-step probability at or below 1/2
    if dt > eps * eps / 2.0 {
        return Err(SseError::StepTooCoarse {
            dt,
            limit: eps * eps / 2.0,
        });
    }
    let split = UnravelingSplit::homodyne_mixed(model.clone(), side, spec.clone())?;
    let dim = rho0.dim();
    let n_steps = (horizon / dt).round().max(1.0) as usize;
    let h = horizon / n_steps as f64;
    let out_idx = output_indices(out_grid, horizon, n_steps)?;

    let static_prop = if split.is_static() {
        Some(split.smooth(0.0).expm(h)?)
    } else {
        None
    };

    let mut traj = DiffusiveTrajectory {
        grid: Vec::with_capacity(out_idx.len()),
        states: Vec::with_capacity(out_idx.len()),
        observation: Vec::with_capacity(out_idx.len()),
        martingale: Vec::with_capacity(out_idx.len()),
        counts: Vec::with_capacity(out_idx.len()),
        qv: 0.0,
        ito_violations: 0,
        dt: h,
    };
    let mut v = rho0.mat().vectorize();
    let mut w_path = 0.0;
    let mut mart = 0.0;
    let mut count: u64 = 0;
    let mut next_out = 0usize;
    let mut qv = 0.0;
    let mut violations = 0u64;

    let record = |traj: &mut DiffusiveTrajectory,
                      i: usize,
                      v: &Array1<C64>,
                      w: f64,
                      m: f64,
                      n: u64,
                      next_out: &mut usize|
     -> Result<(), SseError> {
        while *next_out < out_idx.len() && out_idx[*next_out] == i {
            traj.grid.push(i as f64 * h);
            traj.states
                .push(DensityMatrix::renormalized(&CMatrix::unvectorize(dim, v))?);
            traj.observation.push(w);
            traj.martingale.push(m);
            traj.counts.push(n);
            *next_out += 1;
        }
        Ok(())
    };

    record(&mut traj, 0, &v, w_path, mart, count, &mut next_out)?;
    for i in 0..n_steps {
        let t = i as f64 * h;
        let rate = vec_trace(dim, &split.jump_apply_vec(t, &v)).re;
        let p = rate * h;
        if p >= 1.0 {
            return Err(SseError::StepTooCoarse {
                dt: h,
                limit: 1.0 / rate,
            });
        }
        let jump = rng.random::<f64>() < p;
        let dn = if jump { 1u64 } else { 0u64 };
        // smooth propagation across the step; the jump fires at its end
        v = match &static_prop {
            Some(prop) => prop.apply_vec(&v),
            None => split.smooth(t + 0.5 * h).expm(h)?.apply_vec(&v),
        };
        if jump {
            v = split.jump_apply_vec(t + h, &v);
        }
        hermitize_normalize(dim, &mut v);
        count += dn;
        let dw = eps * dn as f64 - h / eps;
        w_path += dw;
        mart += eps * (dn as f64 - rate * h);
        qv += dw * dw;
        // per-step law: the count reconstructed from ΔW must be the 0/1
        // increment, equivalently (ΔW)² reduced by ΔN² = ΔN is ε ΔW + Δt
        let recon = (dw + h / eps) / eps;
        if (recon - dn as f64).abs() > 1e-9 {
            violations += 1;
        }
        record(&mut traj, i + 1, &v, w_path, mart, count, &mut next_out)?;
    }
    traj.qv = qv;
    traj.ito_violations = violations;
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Diffusive limit (ε = 0)
// ---------------------------------------------------------------------------

/// Noise source for [`integrate_homodyne_sse`]: fresh Gaussian increments
/// or a fixed per-step ΔW stream (filter replay).
pub enum DiffusiveDrive<'a, R: Rng + ?Sized> {
    Random(&'a mut R),
    Replay(&'a [f64]),
}

/// One-step building blocks for the diffusive filter in positivity form:
/// ρ′ ∝ AρA† + Δt Σ_{σ≠s} Ṽ_σρṼ_σ† with A = 1 + Δt D + ΔW w̄ V_s and
/// D = −iH̃ − ½Σ_σ Ṽ_σ†Ṽ_σ. Expanding reproduces the Euler–Maruyama
/// step of the Belavkin equation at weak order 1, while keeping every
/// update completely positive (the linear Euler step dips eigenvalues
/// by O(Δt), violating the state tolerance).
struct DiffusiveStep {
    /// Dρ + ρD† plus the unobserved-channel sandwiches, coefficient h.
    drift: Superoperator,
    /// V_sρ (coefficient β = ΔW w̄) and ρV_s† (coefficient β̄).
    left_v: Superoperator,
    right_vdag: Superoperator,
    /// V_sρV_s† (|β|²), DρD† (h²), DρV_s† (hβ̄), V_sρD† (hβ).
    sandwich_vv: Superoperator,
    sandwich_dd: Superoperator,
    sandwich_dv: Superoperator,
    sandwich_vd: Superoperator,
}

impl DiffusiveStep {
    fn build(model: &LindbladModel, side: usize, t: f64) -> Self {
        let (h_eff, ops) = model.effective_ops(t);
        let mut d = h_eff.scale(c(0.0, -1.0));
        for op in &ops {
            d = d - (op.adjoint() * op.clone()).scale(c(0.5, 0.0));
        }
        let v_s = &ops[side];
        let mut drift = Superoperator::left_mul(&d) + Superoperator::right_mul(&d.adjoint());
        for (j, op) in ops.iter().enumerate() {
            if j != side {
                drift = drift + Superoperator::conjugation(op);
            }
        }
        Self {
            drift,
            left_v: Superoperator::left_mul(v_s),
            right_vdag: Superoperator::right_mul(&v_s.adjoint()),
            sandwich_vv: Superoperator::conjugation(v_s),
            sandwich_dd: Superoperator::conjugation(&d),
            sandwich_dv: Superoperator::sandwich(&d, &v_s.adjoint()),
            sandwich_vd: Superoperator::sandwich(v_s, &d.adjoint()),
        }
    }
}

/// Integrate the diffusive Belavkin equation with per-step Hermitian
/// symmetrization and renormalization (weak order 1). Under the physical
/// law the observation increment is ΔW = m Δt + √Δt ξ with
/// m = Tr(w ρV_s† + w̄ V_sρ); the innovation ΔM = ΔW − m Δt drives the
/// state correction.
#[allow(clippy::too_many_arguments)]
pub fn integrate_homodyne_sse<R: Rng + ?Sized>(
    model: &LindbladModel,
    side: usize,
    spec: &HomodyneSpec,
    rho0: &DensityMatrix,
    horizon: f64,
    dt: f64,
    out_grid: &[f64],
    drive: DiffusiveDrive<'_, R>,
) -> Result<DiffusiveTrajectory, SseError> {
    assert!(horizon > 0.0 && dt > 0.0);
    let dim = rho0.dim();
    let n_steps = (horizon / dt).round().max(1.0) as usize;
    let h = horizon / n_steps as f64;
    let sqrt_h = h.sqrt();
    let out_idx = output_indices(out_grid, horizon, n_steps)?;

    let is_static = model.is_static();
    let mut step = DiffusiveStep::build(model, side, 0.5 * h);

    let (mut rng, replay) = match drive {
        DiffusiveDrive::Random(r) => (Some(r), None),
        DiffusiveDrive::Replay(s) => {
            if s.len() != n_steps {
                return Err(SseError::InvalidOutcome(format!(
                    "replay stream has {} increments, need {}",
                    s.len(),
                    n_steps
                )));
            }
            (None, Some(s))
        }
    };

    let mut traj = DiffusiveTrajectory {
        grid: Vec::with_capacity(out_idx.len()),
        states: Vec::with_capacity(out_idx.len()),
        observation: Vec::with_capacity(out_idx.len()),
        martingale: Vec::with_capacity(out_idx.len()),
        counts: Vec::new(),
        qv: 0.0,
        ito_violations: 0,
        dt: h,
    };
    let mut v = rho0.mat().vectorize();
    let mut w_path = 0.0;
    let mut mart = 0.0;
    let mut next_out = 0usize;
    let mut qv = 0.0;

    let record = |traj: &mut DiffusiveTrajectory,
                      i: usize,
                      v: &Array1<C64>,
                      w: f64,
                      m: f64,
                      next_out: &mut usize|
     -> Result<(), SseError> {
        while *next_out < out_idx.len() && out_idx[*next_out] == i {
            traj.grid.push(i as f64 * h);
            traj.states
                .push(DensityMatrix::renormalized(&CMatrix::unvectorize(dim, v))?);
            traj.observation.push(w);
            traj.martingale.push(m);
            *next_out += 1;
        }
        Ok(())
    };

    record(&mut traj, 0, &v, w_path, mart, &mut next_out)?;
    for i in 0..n_steps {
        let t = i as f64 * h;
        if !is_static {
            step = DiffusiveStep::build(model, side, t + 0.5 * h);
        }
        let w_t = spec.w(t);
        let lv = step.left_v.apply_vec(&v);
        let rv = step.right_vdag.apply_vec(&v);
        // m = Tr(w ρV_s† + w̄ V_sρ), real for Hermitian states
        let m = (w_t * vec_trace(dim, &rv) + w_t.conj() * vec_trace(dim, &lv)).re;
        let dw = match (&mut rng, replay) {
            (Some(r), _) => {
                let xi: f64 = r.sample(StandardNormal);
                m * h + sqrt_h * xi
            }
            (None, Some(stream)) => {
                let val = stream[i];
                if !val.is_finite() {
                    return Err(SseError::NonFiniteIncrement(i));
                }
                val
            }
            _ => unreachable!(),
        };
        let dm = dw - m * h;
        // ρ′ = AρA† + h Σ_{σ≠s} VρV†, expanded over fixed superoperators
        let beta = w_t.conj().scale(dw);
        let drift = step.drift.apply_vec(&v);
        let svv = step.sandwich_vv.apply_vec(&v);
        let sdd = step.sandwich_dd.apply_vec(&v);
        let sdv = step.sandwich_dv.apply_vec(&v);
        let svd = step.sandwich_vd.apply_vec(&v);
        let hc = c(h, 0.0);
        let h2 = c(h * h, 0.0);
        let b2 = c(beta.norm_sqr(), 0.0);
        let hbc = beta.conj().scale(h);
        let hb = beta.scale(h);
        for k in 0..dim * dim {
            v[k] = v[k]
                + hc * drift[k]
                + beta * lv[k]
                + beta.conj() * rv[k]
                + b2 * svv[k]
                + h2 * sdd[k]
                + hbc * sdv[k]
                + hb * svd[k];
        }
        hermitize_normalize(dim, &mut v);
        w_path += dw;
        mart += dm;
        qv += dw * dw;
        record(&mut traj, i + 1, &v, w_path, mart, &mut next_out)?;
    }
    traj.qv = qv;
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Gains and the ε → 0 limit
// ---------------------------------------------------------------------------

/// The finite-ε gain (1/ε)(𝓙_a(ρ)/Tr𝓙_a(ρ) − ρ).
pub fn scaled_gain(
    model: &LindbladModel,
    side: usize,
    spec: &HomodyneSpec,
    t: f64,
    rho: &DensityMatrix,
) -> Result<CMatrix, SseError> {
    let split = UnravelingSplit::homodyne_mixed(model.clone(), side, spec.clone())?;
    let jumped = split.jump(t).apply(rho.mat());
    let tr = jumped.trace().re;
    Ok((jumped.scale(c(1.0 / tr, 0.0)) - rho.mat().clone()).scale(c(1.0 / spec.epsilon, 0.0)))
}

/// The diffusive gain w ρV_s† + w̄ V_sρ − Tr(w ρV_s† + w̄ V_sρ)ρ.
pub fn diffusive_gain(model: &LindbladModel, side: usize, w: C64, rho: &DensityMatrix) -> CMatrix {
    let v_s = &model.channels()[side].op;
    let a = (rho.mat() * &v_s.adjoint()).scale(w);
    let b = (v_s * rho.mat()).scale(w.conj());
    let sum = a + b;
    let m = sum.trace().re;
    sum - rho.mat().scale(c(m, 0.0))
}

// ---------------------------------------------------------------------------
// Convergence report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LimitConfig {
    /// Strictly decreasing ε values, all positive.
    pub eps_schedule: Vec<f64>,
    pub n_traj: usize,
    /// dt = dt_coeff · ε², snapped so the checkpoints stay on the grid.
    pub dt_coeff: f64,
    /// Step for the diffusive reference ensemble.
    pub dt_diffusive: f64,
    pub horizon: f64,
    pub checkpoints: Vec<f64>,
    pub seed: u64,
    pub workers: usize,
    /// Abort threshold on total micro-steps across the schedule.
    pub max_total_steps: u64,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            eps_schedule: vec![0.4, 0.2, 0.05],
            n_traj: 4000,
            dt_coeff: 0.1,
            dt_diffusive: 1e-3,
            horizon: 2.0,
            checkpoints: vec![0.5, 1.0, 2.0],
            seed: 7,
            workers: 0,
            max_total_steps: 2_000_000_000,
        }
    }
}

/// One metric row of the convergence table.
#[derive(Clone, Debug)]
pub struct LimitRow {
    pub epsilon: f64,
    pub checkpoint: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug)]
pub struct LimitReport {
    pub rows: Vec<LimitRow>,
    /// Per ε: (ε, distance d(ε), stderr of the metric realizing it).
    pub distances: Vec<(f64, f64, f64)>,
    pub decreasing: bool,
    /// d(smallest ε) ≤ 3 stderr of the comparison.
    pub terminal_within_noise: bool,
}

struct MomentAcc {
    n: usize,
    sums: Vec<f64>,
    sq_sums: Vec<f64>,
}

impl MomentAcc {
    fn new(k: usize) -> Self {
        Self {
            n: 0,
            sums: vec![0.0; k],
            sq_sums: vec![0.0; k],
        }
    }

    fn push(&mut self, values: &[f64]) {
        self.n += 1;
        for (i, v) in values.iter().enumerate() {
            self.sums[i] += v;
            self.sq_sums[i] += v * v;
        }
    }

    fn mean(&self, i: usize) -> f64 {
        self.sums[i] / self.n as f64
    }

    fn stderr(&self, i: usize) -> f64 {
        let n = self.n as f64;
        let var = (self.sq_sums[i] / n - (self.sums[i] / n).powi(2)).max(0.0);
        (var / n).sqrt()
    }
}

/// Per-checkpoint scalar features of one path: state entries (re/im),
/// compensated observation mean, raw observation, squared observation.
fn path_features(states: &[DensityMatrix], obs: &[f64], mart: &[f64], dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(states.len() * (2 * dim * dim + 3));
    for k in 0..states.len() {
        let m = states[k].mat();
        for i in 0..dim {
            for j in 0..dim {
                out.push(m.at(i, j).re);
                out.push(m.at(i, j).im);
            }
        }
        // compensated estimator of E[W_t]: the martingale part removed
        out.push(obs[k] - mart[k]);
        out.push(obs[k]);
        out.push(obs[k] * obs[k]);
    }
    out
}

fn feature_names(dim: usize, checkpoints: &[f64]) -> Vec<(f64, String)> {
    let mut names = Vec::new();
    for &cp in checkpoints {
        for i in 0..dim {
            for j in 0..dim {
                names.push((cp, format!("state.{i}{j}.re")));
                names.push((cp, format!("state.{i}{j}.im")));
            }
        }
        names.push((cp, "obs.mean.compensated".into()));
        names.push((cp, "obs.mean".into()));
        names.push((cp, "obs.second".into()));
    }
    names
}

/// Snap dt = c·ε² down so checkpoint spacing stays on the grid.
pub fn snapped_dt(eps: f64, coeff: f64, interval: f64) -> f64 {
    let raw = coeff * eps * eps;
    interval / (interval / raw).ceil()
}

/// Run the ε-schedule against the diffusive reference and report moment
/// distances. Metrics entering d(ε): state means and the compensated
/// observation mean; the raw observation moments travel along as
/// reported rows.
pub fn diffusive_limit_report(
    model: &LindbladModel,
    side: usize,
    spec0: &HomodyneSpec,
    rho0: &DensityMatrix,
    cfg: &LimitConfig,
) -> Result<LimitReport, SseError> {
    if cfg.eps_schedule.is_empty()
        || cfg
            .eps_schedule
            .windows(2)
            .any(|w| !(w[0] > w[1] && w[1] > 0.0))
        || !(cfg.eps_schedule[0] > 0.0)
    {
        return Err(SseError::InvalidOutcome(
            "eps schedule must be strictly decreasing and positive".into(),
        ));
    }
    // budget check before launching anything
    let mut total_steps: u64 = 0;
    for &eps in &cfg.eps_schedule {
        let dt = snapped_dt(eps, cfg.dt_coeff, cfg.checkpoints[0]);
        total_steps += (cfg.horizon / dt) as u64 * cfg.n_traj as u64;
    }
    total_steps += (cfg.horizon / cfg.dt_diffusive) as u64 * cfg.n_traj as u64;
    if total_steps > cfg.max_total_steps {
        return Err(SseError::Budget(format!(
            "{total_steps} steps exceed the limit of {}",
            cfg.max_total_steps
        )));
    }

    let dim = rho0.dim();
    let k_features = cfg.checkpoints.len() * (2 * dim * dim + 3);

    let chunks = run_indexed(cfg.n_traj, cfg.workers, |i| {
        let mut rng = trajectory_rng(cfg.seed.wrapping_add(1_000_000), i);
        let traj = integrate_homodyne_sse(
            model,
            side,
            spec0,
            rho0,
            cfg.horizon,
            cfg.dt_diffusive,
            &cfg.checkpoints,
            DiffusiveDrive::Random(&mut rng),
        )?;
        Ok::<Vec<f64>, SseError>(path_features(
            &traj.states,
            &traj.observation,
            &traj.martingale,
            dim,
        ))
    });
    let mut reference = MomentAcc::new(k_features);
    for ch in chunks {
        reference.push(&ch?);
    }

    let names = feature_names(dim, &cfg.checkpoints);
    let mut rows = Vec::new();
    let mut distances = Vec::new();
    for (eps_idx, &eps) in cfg.eps_schedule.iter().enumerate() {
        let dt = snapped_dt(eps, cfg.dt_coeff, cfg.checkpoints[0]);
        let spec = HomodyneSpec {
            epsilon: eps,
            ..spec0.clone()
        };
        let chunks = run_indexed(cfg.n_traj, cfg.workers, |i| {
            let mut rng =
                trajectory_rng(cfg.seed.wrapping_add(2_000_000 * (eps_idx as u64 + 1)), i);
            let traj = integrate_scaled_counting_sse(
                model,
                side,
                &spec,
                rho0,
                cfg.horizon,
                dt,
                &cfg.checkpoints,
                &mut rng,
            )?;
            Ok::<Vec<f64>, SseError>(path_features(
                &traj.states,
                &traj.observation,
                &traj.martingale,
                dim,
            ))
        });
        let mut acc = MomentAcc::new(k_features);
        for ch in chunks {
            acc.push(&ch?);
        }

        let mut d = 0.0;
        let mut d_err = 0.0;
        for (i, (cp, name)) in names.iter().enumerate() {
            let diff = acc.mean(i) - reference.mean(i);
            let err = (acc.stderr(i).powi(2) + reference.stderr(i).powi(2)).sqrt();
            rows.push(LimitRow {
                epsilon: eps,
                checkpoint: *cp,
                metric: name.clone(),
                value: diff,
                stderr: err,
            });
            // raw observation moments are reported but kept out of d(ε)
            let in_distance = name != "obs.second" && name != "obs.mean";
            if in_distance && diff.abs() > d {
                d = diff.abs();
                d_err = err;
            }
        }
        distances.push((eps, d, d_err));
    }

    let decreasing = distances.windows(2).all(|w| w[0].1 > w[1].1);
    let (_, d_last, err_last) = *distances.last().unwrap();
    Ok(LimitReport {
        rows,
        distances,
        decreasing,
        terminal_within_noise: d_last <= 3.0 * err_last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{excited, ground, propagate_master, TwoLevelAtom, SIDE};
    use approx::assert_abs_diff_eq;

    fn fluorescence() -> LindbladModel {
        let k = 0.5f64.sqrt();
        TwoLevelAtom::resonance_fluorescence(0.0, 1.0, c(k, 0.0), c(k, 0.0), 1.0)
            .model()
            .unwrap()
    }

    fn no_side_coupling() -> LindbladModel {
        TwoLevelAtom::resonance_fluorescence(0.0, 1.0, c(1.0, 0.0), c(0.0, 0.0), 1.0)
            .model()
            .unwrap()
    }

    #[test]
    fn scaled_counting_rejects_coarse_steps() {
        let model = fluorescence();
        let spec = HomodyneSpec::new(0.1, 0.0, 0.0).unwrap();
        let mut rng = trajectory_rng(1, 0);
        let res = integrate_scaled_counting_sse(
            &model,
            SIDE,
            &spec,
            &ground(),
            1.0,
            0.01,
            &[1.0],
            &mut rng,
        );
        assert!(matches!(res, Err(SseError::StepTooCoarse { .. })));
    }

    #[test]
    fn scaled_counting_step_law_holds_exactly() {
        let model = fluorescence();
        let spec = HomodyneSpec::new(0.2, 0.3, 0.0).unwrap();
        let mut rng = trajectory_rng(2, 1);
        let traj = integrate_scaled_counting_sse(
            &model,
            SIDE,
            &spec,
            &ground(),
            1.0,
            spec.epsilon * spec.epsilon / 10.0,
            &[0.5, 1.0],
            &mut rng,
        )
        .unwrap();
        assert_eq!(traj.ito_violations, 0);
        // W^ε reconstructs from the recorded counts
        for (k, &t) in traj.grid.iter().enumerate() {
            let expected = spec.epsilon * traj.counts[k] as f64 - t / spec.epsilon;
            assert_abs_diff_eq!(traj.observation[k], expected, epsilon = 1e-9);
        }
        // jumps are frequent at this epsilon
        assert!(*traj.counts.last().unwrap() > 10);
    }

    #[test]
    fn zero_side_coupling_makes_scaled_path_deterministic() {
        // J_a(ρ) = ρ/ε²: jumps fire constantly but do not move the state,
        // so the path is the deterministic master flow
        let model = no_side_coupling();
        let spec = HomodyneSpec::new(0.5, 0.0, 0.0).unwrap();
        let mut rng = trajectory_rng(3, 2);
        let traj = integrate_scaled_counting_sse(
            &model,
            SIDE,
            &spec,
            &ground(),
            1.0,
            spec.epsilon * spec.epsilon / 10.0,
            &[0.5, 1.0],
            &mut rng,
        )
        .unwrap();
        for (k, &t) in traj.grid.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            let oracle = propagate_master(&model, &ground(), t, 1e-3).unwrap();
            let diff = traj.states[k].mat().max_abs_diff(oracle.mat());
            assert!(diff < 1e-4, "t = {t}: diff {diff:.3e}");
        }
    }

    #[test]
    fn zero_side_coupling_makes_diffusive_path_deterministic() {
        let model = no_side_coupling();
        let spec = HomodyneSpec::new(0.0, 0.0, 0.0).unwrap();
        let mut rng = trajectory_rng(4, 0);
        let traj = integrate_homodyne_sse(
            &model,
            SIDE,
            &spec,
            &ground(),
            1.0,
            1e-3,
            &[0.5, 1.0],
            DiffusiveDrive::Random(&mut rng),
        )
        .unwrap();
        for (k, &t) in traj.grid.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            let oracle = propagate_master(&model, &ground(), t, 1e-3).unwrap();
            let diff = traj.states[k].mat().max_abs_diff(oracle.mat());
            assert!(diff < 1e-4, "t = {t}: diff {diff:.3e}");
        }
        // zero coupling kills the drift, so the martingale equals W
        assert_abs_diff_eq!(
            traj.martingale.last().unwrap(),
            traj.observation.last().unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn diffusive_coefficient_is_traceless() {
        let model = fluorescence();
        let mut rng = trajectory_rng(5, 5);
        for _ in 0..20 {
            let a = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let b = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
            let (a, b) = (a / n, b / n);
            let pure = CMatrix::from_rows(
                2,
                &[a * a.conj(), a * b.conj(), b * a.conj(), b * b.conj()],
            )
            .unwrap();
            let rho = DensityMatrix::new(pure).unwrap();
            let w = C64::from_polar(1.0, rng.random::<f64>() * 6.28);
            let g = diffusive_gain(&model, SIDE, w, &rho);
            assert!(g.trace().norm() < 1e-12);
        }
    }

    #[test]
    fn scaled_gain_converges_linearly_to_diffusive_gain() {
        let model = fluorescence();
        let spec0 = HomodyneSpec::new(0.0, 0.4, 0.0).unwrap();
        let rho = DensityMatrix::new(
            CMatrix::from_rows(
                2,
                &[c(0.6, 0.0), c(0.2, 0.1), c(0.2, -0.1), c(0.4, 0.0)],
            )
            .unwrap(),
        )
        .unwrap();
        let limit = diffusive_gain(&model, SIDE, spec0.w(0.0), &rho);
        let mut errors = Vec::new();
        for &eps in &[1e-1, 1e-2, 1e-3] {
            let spec = HomodyneSpec {
                epsilon: eps,
                ..spec0.clone()
            };
            let g = scaled_gain(&model, SIDE, &spec, 0.0, &rho).unwrap();
            errors.push(g.max_abs_diff(&limit));
        }
        let r1 = errors[0] / errors[1];
        let r2 = errors[1] / errors[2];
        assert!(
            (8.0..12.0).contains(&r1) && (8.0..12.0).contains(&r2),
            "ratios {r1:.2}, {r2:.2} (errors {errors:?})"
        );
    }

    #[test]
    fn diffusive_qv_concentrates_at_horizon() {
        let model = fluorescence();
        let spec = HomodyneSpec::new(0.0, 0.0, 0.0).unwrap();
        let horizon = 2.0;
        let dt = 1e-3_f64;
        let band = 4.0 * (2.0 * horizon * dt).sqrt();
        for idx in 0..50 {
            let mut rng = trajectory_rng(6, idx);
            let traj = integrate_homodyne_sse(
                &model,
                SIDE,
                &spec,
                &excited(),
                horizon,
                dt,
                &[horizon],
                DiffusiveDrive::Random(&mut rng),
            )
            .unwrap();
            assert!(
                (traj.qv - horizon).abs() < band,
                "QV {} vs {horizon} ± {band}",
                traj.qv
            );
        }
    }

    #[test]
    fn replay_is_deterministic_bitwise() {
        let model = fluorescence();
        let spec = HomodyneSpec::new(0.0, 0.2, 1.0).unwrap();
        let n_steps = 1000;
        let mut rng = trajectory_rng(7, 3);
        let stream: Vec<f64> = (0..n_steps)
            .map(|_| 0.001 + 0.0316 * rng.random::<f64>())
            .collect();
        let run = || {
            integrate_homodyne_sse::<rand_chacha::ChaCha12Rng>(
                &model,
                SIDE,
                &spec,
                &ground(),
                1.0,
                1e-3,
                &[0.5, 1.0],
                DiffusiveDrive::Replay(&stream),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        for (x, y) in a.states.iter().zip(b.states.iter()) {
            assert_eq!(x.mat().data(), y.mat().data());
        }
        assert_eq!(a.observation, b.observation);
        // a perturbed stream changes the path
        let mut stream2 = stream.clone();
        stream2[500] += 0.01;
        let c2 = integrate_homodyne_sse::<rand_chacha::ChaCha12Rng>(
            &model,
            SIDE,
            &spec,
            &ground(),
            1.0,
            1e-3,
            &[0.5, 1.0],
            DiffusiveDrive::Replay(&stream2),
        )
        .unwrap();
        assert!(c2.states.last().unwrap().mat() != a.states.last().unwrap().mat());
    }

    #[test]
    fn replay_rejects_bad_streams() {
        let model = fluorescence();
        let spec = HomodyneSpec::new(0.0, 0.0, 0.0).unwrap();
        let stream = vec![0.0; 10];
        let res = integrate_homodyne_sse::<rand_chacha::ChaCha12Rng>(
            &model,
            SIDE,
            &spec,
            &ground(),
            1.0,
            1e-3,
            &[1.0],
            DiffusiveDrive::Replay(&stream),
        );
        assert!(matches!(res, Err(SseError::InvalidOutcome(_))));

        let mut nan_stream = vec![0.001; 1000];
        nan_stream[3] = f64::NAN;
        let res = integrate_homodyne_sse::<rand_chacha::ChaCha12Rng>(
            &model,
            SIDE,
            &spec,
            &ground(),
            1.0,
            1e-3,
            &[1.0],
            DiffusiveDrive::Replay(&nan_stream),
        );
        assert!(matches!(res, Err(SseError::NonFiniteIncrement(3))));
    }

    #[test]
    fn trace_and_positivity_hold_along_diffusive_paths() {
        let model = fluorescence();
        let spec = HomodyneSpec::new(0.0, 0.7, 2.0).unwrap();
        for idx in 0..10 {
            let mut rng = trajectory_rng(8, idx);
            let traj = integrate_homodyne_sse(
                &model,
                SIDE,
                &spec,
                &ground(),
                2.0,
                1e-3,
                &(0..=20).map(|k| k as f64 * 0.1).collect::<Vec<_>>(),
                DiffusiveDrive::Random(&mut rng),
            )
            .unwrap();
            for s in &traj.states {
                // DensityMatrix construction enforces trace/positivity
                assert_abs_diff_eq!(s.mat().trace().re, 1.0, epsilon = 1e-9);
                assert!(s.mat().herm_eigenvalues()[0] >= -1e-8);
            }
        }
    }

    #[test]
    fn budget_error_fires_before_launch() {
        let model = fluorescence();
        let spec = HomodyneSpec::new(0.0, 0.0, 0.0).unwrap();
        let cfg = LimitConfig {
            eps_schedule: vec![1e-3, 1e-4],
            n_traj: 100_000,
            max_total_steps: 1_000_000,
            ..LimitConfig::default()
        };
        let res = diffusive_limit_report(&model, SIDE, &spec, &ground(), &cfg);
        assert!(matches!(res, Err(SseError::Budget(_))));
    }

    #[test]
    fn snapped_dt_divides_the_checkpoint_interval() {
        for &eps in &[0.4, 0.2, 0.1, 0.05] {
            let dt = snapped_dt(eps, 0.1, 0.5);
            assert!(dt <= 0.1 * eps * eps + 1e-15);
            let ratio = 0.5 / dt;
            assert_abs_diff_eq!(ratio, ratio.round(), epsilon = 1e-9);
        }
    }
}
