//! Photon counting: Guichardet-space outcome records, Davies weights,
//! exact jump-time sampling by norm tracking, and the counting
//! stochastic Schrödinger equation
//!   dρ = L(ρ)dt + (𝓙(ρ)/Tr𝓙(ρ) − ρ)(dN_t − Tr𝓙(ρ)dt).
//!
//! The unnormalized conditioned state along a record {t_1 < … < t_k} is
//! the alternating product W_t = e^{(t−t_k)𝓛}𝓙 ⋯ 𝓙 e^{t_1𝓛}; its trace
//! is the record's probability density. Sector masses integrate that
//! density over the ordered simplex with Gauss–Legendre quadrature and
//! serve as the normalization oracle.
//!
//! Integrator internals work on column-stacked states, so a propagation
//! step is one matrix–vector product.

use crate::algebra::{
    c, vec_trace, AlgebraError, CMatrix, DensityMatrix, PropagatorTable, Superoperator, C64,
};
use crate::lindblad::{ModelError, UnravelingSplit};
use ndarray::Array1;
use rand::Rng;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SseError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("invalid outcome record: {0}")]
    InvalidOutcome(String),
    #[error("replayed jump at t = {t}: jump rate {rate:.3e} vanishes (probability-zero record)")]
    ImpossibleOutcome { t: f64, rate: f64 },
    #[error(
        "jump-time refinement stalled after {iters} iterations in [{lo}, {hi}] (target width {target:.3e})"
    )]
    RefinementFailure {
        lo: f64,
        hi: f64,
        iters: usize,
        target: f64,
    },
    #[error("step dt = {dt:.3e} too coarse: needs dt <= {limit:.3e}")]
    StepTooCoarse { dt: f64, limit: f64 },
    #[error("non-finite increment in replay stream at index {0}")]
    NonFiniteIncrement(usize),
    #[error("{0} requires a time-independent split")]
    TimeDependent(&'static str),
    #[error("run exceeds the step budget: {0}")]
    Budget(String),
}

// ---------------------------------------------------------------------------
// Outcome records
// ---------------------------------------------------------------------------

/// A point of the Guichardet space: finitely many jump times in [0, horizon).
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeSet {
    horizon: f64,
    times: Vec<f64>,
}

impl OutcomeSet {
    pub fn new(horizon: f64, times: Vec<f64>) -> Result<Self, SseError> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(SseError::InvalidOutcome(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        for pair in times.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(SseError::InvalidOutcome(
                    "jump times must be strictly increasing".into(),
                ));
            }
        }
        if let (Some(first), Some(last)) = (times.first(), times.last()) {
            if !(*first >= 0.0) || !(*last < horizon) {
                return Err(SseError::InvalidOutcome(
                    "jump times must lie in [0, horizon)".into(),
                ));
            }
        }
        Ok(Self { horizon, times })
    }

    pub fn empty(horizon: f64) -> Self {
        Self {
            horizon,
            times: Vec::new(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Smooth propagation
// ---------------------------------------------------------------------------

/// Propagator supplier for the smooth part 𝓛 acting on column-stacked
/// states. Static splits combine a per-step-size exponential cache with
/// a Chebyshev table for the short segments produced by bisection;
/// time-dependent generators are frozen at the segment midpoint.
struct SmoothFlow<'a> {
    split: &'a UnravelingSplit,
    is_static: bool,
    cache: HashMap<u64, Superoperator>,
    table: Option<PropagatorTable>,
}

impl<'a> SmoothFlow<'a> {
    /// `short_span`: segment lengths at or below this use the table.
    fn new(split: &'a UnravelingSplit, short_span: Option<f64>) -> Result<Self, SseError> {
        let is_static = split.is_static();
        let table = match (is_static, short_span) {
            (true, Some(span)) if span > 0.0 => {
                Some(PropagatorTable::build(&split.smooth(0.0), span, 48)?)
            }
            _ => None,
        };
        Ok(Self {
            split,
            is_static,
            cache: HashMap::new(),
            table,
        })
    }

    /// e^{h𝓛} v (midpoint-frozen when time-dependent).
    fn apply(&mut self, t0: f64, h: f64, v: &Array1<C64>) -> Result<Array1<C64>, SseError> {
        if h == 0.0 {
            return Ok(v.clone());
        }
        if self.is_static {
            if let Some(p) = self.cache.get(&h.to_bits()) {
                return Ok(p.apply_vec(v));
            }
            if let Some(table) = &self.table {
                if h <= table.t_max() {
                    return Ok(table.apply_vec(h, v));
                }
            }
            let p = self.split.smooth(0.0).expm(h)?;
            let out = p.apply_vec(v);
            self.cache.insert(h.to_bits(), p);
            return Ok(out);
        }
        Ok(self.split.smooth(t0 + 0.5 * h).expm(h)?.apply_vec(v))
    }
}

// ---------------------------------------------------------------------------
// Davies weights
// ---------------------------------------------------------------------------

/// Unnormalized conditioned state and its probability density.
#[derive(Clone, Debug)]
pub struct DaviesWeight {
    pub state: CMatrix,
    pub density: f64,
}

/// W_t(ω)(ρ) and its trace density with respect to the simplex measure.
pub fn davies_weight(
    split: &UnravelingSplit,
    outcome: &OutcomeSet,
    rho0: &DensityMatrix,
) -> Result<DaviesWeight, SseError> {
    let dim = rho0.dim();
    let mut flow = SmoothFlow::new(split, None)?;
    let mut state = rho0.mat().vectorize();
    let mut t = 0.0;
    for &tj in outcome.times() {
        state = flow.apply(t, tj - t, &state)?;
        state = split.jump_apply_vec(tj, &state);
        t = tj;
    }
    state = flow.apply(t, outcome.horizon() - t, &state)?;
    let density = vec_trace(dim, &state).re;
    Ok(DaviesWeight {
        state: CMatrix::unvectorize(dim, &state),
        density,
    })
}

// ---------------------------------------------------------------------------
// Guichardet quadrature
// ---------------------------------------------------------------------------

/// Gauss–Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // initial guess on [-1, 1], refined by Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    for i in 0..n {
        nodes[i] = 0.5 * (nodes[i] + 1.0);
        weights[i] *= 0.5;
    }
    (nodes, weights)
}

/// Legendre P_n(x) and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Per-sector masses ∫_{Ω_n} Tr W_t(ω)(ρ0) dμ for n = 0..=max_sector,
/// by nested Gauss–Legendre quadrature over the ordered simplex: with
/// G_0(s) = e^{s𝓛}ρ0 and G_k(s) = ∫_0^s e^{(s−u)𝓛} 𝓙 G_{k−1}(u) du, the
/// sector-n mass is Tr G_n(t). Accepts an unnormalized initial state.
pub fn guichardet_sector_masses(
    split: &UnravelingSplit,
    rho0: &CMatrix,
    t: f64,
    max_sector: usize,
    order: usize,
) -> Result<Vec<f64>, SseError> {
    if !split.is_static() {
        return Err(SseError::TimeDependent("guichardet_sector_masses"));
    }
    let dim = rho0.dim();
    let (nodes, weights) = gauss_legendre_unit(order);
    let table = PropagatorTable::build(&split.smooth(0.0), t, 48)?;
    let jump = split.jump(0.0);
    let v0 = rho0.vectorize();

    fn sector(
        k: usize,
        s: f64,
        table: &PropagatorTable,
        jump: &Superoperator,
        v0: &Array1<C64>,
        nodes: &[f64],
        weights: &[f64],
    ) -> Array1<C64> {
        if k == 0 {
            return table.apply_vec(s, v0);
        }
        let mut acc = Array1::zeros(v0.len());
        for (x, w) in nodes.iter().zip(weights.iter()) {
            let u = s * x;
            let inner = sector(k - 1, u, table, jump, v0, nodes, weights);
            let jumped = jump.apply_vec(&inner);
            let moved = table.apply_vec(s - u, &jumped);
            let scale = c(s * w, 0.0);
            for (a, b) in acc.iter_mut().zip(moved.iter()) {
                *a += scale * b;
            }
        }
        acc
    }

    let masses: Vec<f64> = (0..=max_sector)
        .map(|k| vec_trace(dim, &sector(k, t, &table, &jump, &v0, &nodes, &weights)).re)
        .collect();
    Ok(masses)
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// One sampled counting path, recorded on the requested output grid with
/// exact jump times inserted.
#[derive(Clone, Debug)]
pub struct CountingTrajectory {
    /// Recorded times: the output grid plus every jump time.
    pub grid: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// N_t at each recorded time.
    pub counts: Vec<u64>,
    /// Innovating martingale M_t = N_t − ∫_0^t Tr 𝓙(ρ_s) ds.
    pub innovation: Vec<f64>,
    /// State-valued residual martingale ρ_t − ρ_0 − ∫_0^t L(ρ_s) ds.
    pub residual: Vec<CMatrix>,
    pub jumps: OutcomeSet,
}

#[derive(Clone, Debug)]
pub struct TrajectoryOptions {
    /// Micro-step for propagation, rate integrals and jump scanning.
    pub dt: f64,
    /// Bisection width target for jump-time refinement.
    pub refine_tol: f64,
    pub max_refine: usize,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            refine_tol: 1e-10,
            max_refine: 200,
        }
    }
}

/// Recording bookkeeping shared by the counting samplers. State vectors
/// are column-stacked; the rate and generator integrals are accumulated
/// by the trapezoid rule with loop-carried endpoint evaluations.
struct Recorder {
    dim: usize,
    out_grid: Vec<f64>,
    next_out: usize,
    traj: CountingTrajectory,
    v0: Array1<C64>,
    rate_integral: f64,
    gen_integral: Array1<C64>,
    count: u64,
}

impl Recorder {
    fn new(out_grid: &[f64], horizon: f64, rho0: &DensityMatrix) -> Result<Self, SseError> {
        let mut grid: Vec<f64> = out_grid.to_vec();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        if grid.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
            return Err(SseError::InvalidOutcome(
                "output grid must lie within [0, horizon]".into(),
            ));
        }
        let dim = rho0.dim();
        let v0 = rho0.mat().vectorize();
        Ok(Self {
            dim,
            out_grid: grid,
            next_out: 0,
            traj: CountingTrajectory {
                grid: Vec::new(),
                states: Vec::new(),
                counts: Vec::new(),
                innovation: Vec::new(),
                residual: Vec::new(),
                jumps: OutcomeSet::empty(horizon),
            },
            v0: v0.clone(),
            rate_integral: 0.0,
            gen_integral: Array1::zeros(dim * dim),
            count: 0,
        })
    }

    /// Next output time strictly inside (0, limit), else `limit`.
    fn next_boundary(&self, limit: f64) -> f64 {
        match self.out_grid.get(self.next_out) {
            Some(&to) if to > 0.0 && to < limit => to,
            _ => limit,
        }
    }

    /// `v` need not be normalized.
    fn record(&mut self, t: f64, v: &Array1<C64>) -> Result<(), SseError> {
        let state = DensityMatrix::renormalized(&CMatrix::unvectorize(self.dim, v))?;
        self.traj.grid.push(t);
        self.traj.counts.push(self.count);
        self.traj
            .innovation
            .push(self.count as f64 - self.rate_integral);
        let res = state.mat().vectorize() - &self.v0 - &self.gen_integral;
        self.traj.residual.push(CMatrix::unvectorize(self.dim, &res));
        self.traj.states.push(state);
        Ok(())
    }

    fn record_if_due(&mut self, t: f64, v: &Array1<C64>) -> Result<(), SseError> {
        while let Some(&to) = self.out_grid.get(self.next_out) {
            if (to - t).abs() <= 1e-12 {
                self.record(to, v)?;
                self.next_out += 1;
            } else {
                break;
            }
        }
        Ok(())
    }

    fn accumulate_trapezoid(
        &mut self,
        h: f64,
        rate0: f64,
        rate1: f64,
        l0: &Array1<C64>,
        l1: &Array1<C64>,
    ) {
        self.rate_integral += 0.5 * (rate0 + rate1) * h;
        let half_h = c(0.5 * h, 0.0);
        for (acc, (a, b)) in self.gen_integral.iter_mut().zip(l0.iter().zip(l1.iter())) {
            *acc += half_h * (a + b);
        }
    }

    fn add_jump(&mut self, t: f64) {
        self.traj.jumps.times.push(t);
        self.count += 1;
    }

    fn finish(self) -> CountingTrajectory {
        self.traj
    }
}

fn normalize_vec(dim: usize, v: &mut Array1<C64>) {
    let tr = vec_trace(dim, v).re;
    let inv = c(1.0 / tr, 0.0);
    for z in v.iter_mut() {
        *z *= inv;
    }
}

/// Rate and generator evaluation for a normalized state vector.
fn flows_at(split: &UnravelingSplit, t: f64, v: &Array1<C64>, dim: usize) -> (f64, Array1<C64>) {
    let rate = vec_trace(dim, &split.jump_apply_vec(t, v)).re;
    let l = split.full_apply_vec(t, v);
    (rate, l)
}

/// Sample one counting trajectory by norm tracking: the unnormalized
/// state evolves under e^{s𝓛}, a jump fires when its trace crosses a
/// fresh uniform draw, the jump time is refined by bisection, then 𝓙 is
/// applied and the state renormalized. The recorded filtered path equals
/// the normalized Davies product at every grid time.
pub fn sample_counting_trajectory<R: Rng + ?Sized>(
    split: &UnravelingSplit,
    rho0: &DensityMatrix,
    horizon: f64,
    out_grid: &[f64],
    opts: &TrajectoryOptions,
    rng: &mut R,
) -> Result<CountingTrajectory, SseError> {
    assert!(horizon > 0.0 && opts.dt > 0.0);
    let dim = rho0.dim();
    let mut flow = SmoothFlow::new(split, Some(opts.dt))?;
    let mut rec = Recorder::new(out_grid, horizon, rho0)?;
    let mut sigma = rho0.mat().vectorize(); // unnormalized; trace 1 after jumps
    let mut survival_target: f64 = rng.random();
    let mut t = 0.0;

    // loop-carried rate/generator at the (normalized) current state
    let (mut rate_here, mut l_here) = flows_at(split, t, &sigma, dim);

    rec.record_if_due(0.0, &sigma)?;
    while t < horizon - 1e-12 {
        let step_end = rec.next_boundary((t + opts.dt).min(horizon));
        let h = step_end - t;
        let cand = flow.apply(t, h, &sigma)?;
        let cand_tr = vec_trace(dim, &cand).re;
        if cand_tr > survival_target {
            let mut cand_n = cand.clone();
            normalize_vec(dim, &mut cand_n);
            let (rate_next, l_next) = flows_at(split, step_end, &cand_n, dim);
            rec.accumulate_trapezoid(h, rate_here, rate_next, &l_here, &l_next);
            rate_here = rate_next;
            l_here = l_next;
            sigma = cand;
            t = step_end;
            rec.record_if_due(t, &sigma)?;
            continue;
        }
        // a jump lies in (t, step_end]: bisect the survival crossing
        let (mut lo, mut hi) = (t, step_end);
        let mut iters = 0;
        while hi - lo > opts.refine_tol {
            iters += 1;
            if iters > opts.max_refine {
                return Err(SseError::RefinementFailure {
                    lo,
                    hi,
                    iters,
                    target: opts.refine_tol,
                });
            }
            let mid = 0.5 * (lo + hi);
            let tr = vec_trace(dim, &flow.apply(t, mid - t, &sigma)?).re;
            if tr > survival_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tau = 0.5 * (lo + hi);
        let mut before = flow.apply(t, tau - t, &sigma)?;
        normalize_vec(dim, &mut before);
        let (rate_tau, l_tau) = flows_at(split, tau, &before, dim);
        rec.accumulate_trapezoid(tau - t, rate_here, rate_tau, &l_here, &l_tau);
        let jumped = split.jump_apply_vec(tau, &before);
        let tr = vec_trace(dim, &jumped).re;
        if !(tr > 0.0) {
            return Err(SseError::ImpossibleOutcome { t: tau, rate: tr });
        }
        rec.add_jump(tau);
        sigma = jumped;
        normalize_vec(dim, &mut sigma);
        rec.record(tau, &sigma)?;
        let flows = flows_at(split, tau, &sigma, dim);
        rate_here = flows.0;
        l_here = flows.1;
        survival_target = rng.random();
        t = tau;
    }
    rec.record_if_due(horizon, &sigma)?;
    Ok(rec.finish())
}

/// Noise source for [`integrate_counting_sse`]: fresh randomness or a
/// fixed outcome record to replay (filter mode).
pub enum CountingDrive<'a, R: Rng + ?Sized> {
    Random(&'a mut R),
    Replay(&'a OutcomeSet),
}

/// Integrate the counting SSE on a dt-grid. Between jumps the state
/// follows the normalized smooth flow (O(dt²) per step); at a jump it
/// maps to 𝓙(ρ)/Tr𝓙(ρ). Counts increment by at most one per micro-step,
/// and the innovating martingale N_t − ∫Tr𝓙(ρ_s)ds is emitted.
pub fn integrate_counting_sse<R: Rng + ?Sized>(
    split: &UnravelingSplit,
    rho0: &DensityMatrix,
    horizon: f64,
    dt: f64,
    out_grid: &[f64],
    drive: CountingDrive<'_, R>,
) -> Result<CountingTrajectory, SseError> {
    assert!(horizon > 0.0 && dt > 0.0);
    let dim = rho0.dim();
    let mut flow = SmoothFlow::new(split, None)?;
    let mut rec = Recorder::new(out_grid, horizon, rho0)?;
    let mut rho = rho0.mat().vectorize();
    let mut t = 0.0;

    let (mut rng, replay) = match drive {
        CountingDrive::Random(r) => (Some(r), None),
        CountingDrive::Replay(o) => {
            if o.horizon() > horizon + 1e-12 {
                return Err(SseError::InvalidOutcome(
                    "replay record extends past the horizon".into(),
                ));
            }
            (None, Some(o))
        }
    };
    let mut next_jump = 0usize;
    let (mut rate_here, mut l_here) = flows_at(split, t, &rho, dim);

    rec.record_if_due(0.0, &rho)?;
    while t < horizon - 1e-12 {
        let mut step_end = rec.next_boundary((t + dt).min(horizon));
        // replayed jump times become step boundaries so 𝓙 lands exactly
        let mut jump_here = false;
        if let Some(o) = replay {
            if let Some(&tj) = o.times().get(next_jump) {
                if tj > t && tj <= step_end + 1e-15 {
                    step_end = tj;
                    jump_here = true;
                }
            }
        }
        let h = step_end - t;

        if rng.is_none() {
            let mut next = flow.apply(t, h, &rho)?;
            normalize_vec(dim, &mut next);
            let (rate_next, l_next) = flows_at(split, step_end, &next, dim);
            rec.accumulate_trapezoid(h, rate_here, rate_next, &l_here, &l_next);
            rho = next;
            t = step_end;
            rate_here = rate_next;
            l_here = l_next;
            if jump_here {
                if rate_here <= 1e-12 {
                    return Err(SseError::ImpossibleOutcome {
                        t,
                        rate: rate_here,
                    });
                }
                rho = split.jump_apply_vec(t, &rho);
                normalize_vec(dim, &mut rho);
                rec.add_jump(t);
                next_jump += 1;
                rec.record(t, &rho)?;
                let flows = flows_at(split, t, &rho, dim);
                rate_here = flows.0;
                l_here = flows.1;
            }
            rec.record_if_due(t, &rho)?;
            continue;
        }

        // random drive: Bernoulli jump with probability rate·h
        let p = rate_here * h;
        if p >= 1.0 {
            return Err(SseError::StepTooCoarse {
                dt: h,
                limit: 1.0 / rate_here,
            });
        }
        let draw: f64 = rng.as_mut().unwrap().random();
        if draw < p {
            rec.rate_integral += rate_here * h;
            for (acc, a) in rec.gen_integral.iter_mut().zip(l_here.iter()) {
                *acc += c(h, 0.0) * a;
            }
            // smooth propagation across the step, then the jump at its end
            t = step_end;
            rho = flow.apply(t - h, h, &rho)?;
            rho = split.jump_apply_vec(t, &rho);
            normalize_vec(dim, &mut rho);
            rec.add_jump(t);
            rec.record(t, &rho)?;
            let flows = flows_at(split, t, &rho, dim);
            rate_here = flows.0;
            l_here = flows.1;
        } else {
            let mut next = flow.apply(t, h, &rho)?;
            normalize_vec(dim, &mut next);
            let (rate_next, l_next) = flows_at(split, step_end, &next, dim);
            rec.accumulate_trapezoid(h, rate_here, rate_next, &l_here, &l_next);
            rho = next;
            t = step_end;
            rate_here = rate_next;
            l_here = l_next;
        }
        rec.record_if_due(t, &rho)?;
    }
    rec.record_if_due(horizon, &rho)?;
    Ok(rec.finish())
}
