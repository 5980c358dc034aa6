//! No-U-Turn sampler with multinomial trajectory sampling, the generalised
//! U-turn criterion, a diagonal metric and dual-averaging step-size
//! adaptation over a windowed warmup.

use std::time::Instant;

use rand::Rng as _;

use crate::chain::ChainDraws;
use crate::error::{Error, Result};
use crate::model::{LogDensity, MarginalPosterior};
use crate::stats::{log_add_exp, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct NutsConfig {
    pub iterations: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Random inits are uniform on `[-init_radius, init_radius]^d`.
    pub init_radius: f64,
    /// Energy error beyond which a trajectory is declared divergent.
    pub max_delta_h: f64,
    pub initial_step_size: f64,
    /// When false the step size and metric stay at their initial values.
    pub adapt: bool,
}

impl NutsConfig {
    pub fn new(iterations: usize, warmup: usize) -> Result<Self> {
        let cfg = Self {
            iterations,
            warmup,
            target_accept: 0.8,
            max_tree_depth: 10,
            init_radius: 2.0,
            max_delta_h: 1000.0,
            initial_step_size: 1.0,
            adapt: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "warmup {} must be below iterations {}",
                self.warmup, self.iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidParameter(format!("target acceptance {}", self.target_accept)));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::InvalidParameter("max tree depth must be at least 1".into()));
        }
        if !(self.init_radius > 0.0) || !(self.initial_step_size > 0.0) || !(self.max_delta_h > 0.0) {
            return Err(Error::InvalidParameter("init radius, step size and divergence threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Phase-space point with its cached log density and gradient.
#[derive(Clone, Debug)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl PhasePoint {
    pub fn new<M: LogDensity + ?Sized>(model: &M, q: Vec<f64>, p: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = model.log_density_and_grad(&q, &mut grad);
        Self { q, p, grad, logp }
    }

    fn kinetic(&self, inv_metric: &[f64]) -> f64 {
        0.5 * self.p.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    /// Hamiltonian; NaN maps to +inf.
    pub fn hamiltonian(&self, inv_metric: &[f64]) -> f64 {
        let h = -self.logp + self.kinetic(inv_metric);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn velocity(&self, inv_metric: &[f64]) -> Vec<f64> {
        self.p.iter().zip(inv_metric).map(|(p, m)| p * m).collect()
    }
}

/// One leapfrog step of signed size `eps`.
pub fn leapfrog<M: LogDensity + ?Sized>(model: &M, z: &mut PhasePoint, eps: f64, inv_metric: &[f64]) {
    let half = 0.5 * eps;
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += half * g;
    }
    for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(inv_metric) {
        *q += eps * m * p;
    }
    z.logp = model.log_density_and_grad(&z.q, &mut z.grad);
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += half * g;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(vel_minus: &[f64], vel_plus: &[f64], rho: &[f64]) -> bool {
    dot(vel_plus, rho) > 0.0 && dot(vel_minus, rho) > 0.0
}

/// Per-transition diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionInfo {
    pub depth: usize,
    pub n_leapfrog: usize,
    pub accept_stat: f64,
    pub divergent: bool,
    pub energy: f64,
}

/// Subtree summary threaded through the recursion.
#[derive(Clone, Copy)]
struct Tree {
    log_sum_weight: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

struct Ends {
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    vel_beg: Vec<f64>,
    vel_end: Vec<f64>,
    rho: Vec<f64>,
}

struct Integrator<'a, M: ?Sized> {
    model: &'a M,
    eps: f64,
    inv_metric: &'a [f64],
    h0: f64,
    max_delta_h: f64,
}

impl<M: LogDensity + ?Sized> Integrator<'_, M> {
    /// Extends the trajectory from `z` by `2^depth` steps in direction
    /// `sign`, leaving `z` at the new end. Returns false when the subtree
    /// diverged or made a U-turn.
    fn build_tree(
        &self,
        depth: usize,
        z: &mut PhasePoint,
        propose: &mut PhasePoint,
        ends: &mut Ends,
        sign: f64,
        tree: &mut Tree,
        rng: &mut Rng,
    ) -> bool {
        if depth == 0 {
            leapfrog(self.model, z, sign * self.eps, self.inv_metric);
            tree.n_leapfrog += 1;
            let h = z.hamiltonian(self.inv_metric);
            if h - self.h0 > self.max_delta_h {
                tree.divergent = true;
            }
            let delta = self.h0 - h;
            tree.log_sum_weight = log_add_exp(tree.log_sum_weight, delta);
            tree.sum_metro_prob += if delta > 0.0 { 1.0 } else { delta.exp() };
            propose.clone_from(z);
            ends.vel_beg = z.velocity(self.inv_metric);
            ends.vel_end.clone_from(&ends.vel_beg);
            for (r, p) in ends.rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            ends.p_beg.clone_from(&z.p);
            ends.p_end.clone_from(&z.p);
            return !tree.divergent;
        }

        let d = z.q.len();
        let mut init = Ends {
            p_beg: Vec::new(),
            p_end: vec![0.0; d],
            vel_beg: Vec::new(),
            vel_end: vec![0.0; d],
            rho: vec![0.0; d],
        };
        let mut init_tree = Tree { log_sum_weight: f64::NEG_INFINITY, ..*tree };
        let valid_init = self.build_tree(depth - 1, z, propose, &mut init, sign, &mut init_tree, rng);
        tree.n_leapfrog = init_tree.n_leapfrog;
        tree.sum_metro_prob = init_tree.sum_metro_prob;
        tree.divergent = init_tree.divergent;
        if !valid_init {
            return false;
        }

        let mut propose_final = propose.clone();
        let mut fin = Ends {
            p_beg: vec![0.0; d],
            p_end: Vec::new(),
            vel_beg: vec![0.0; d],
            vel_end: Vec::new(),
            rho: vec![0.0; d],
        };
        let mut final_tree = Tree { log_sum_weight: f64::NEG_INFINITY, ..*tree };
        let valid_final = self.build_tree(depth - 1, z, &mut propose_final, &mut fin, sign, &mut final_tree, rng);
        tree.n_leapfrog = final_tree.n_leapfrog;
        tree.sum_metro_prob = final_tree.sum_metro_prob;
        tree.divergent = final_tree.divergent;
        if !valid_final {
            return false;
        }

        // multinomial choice between the halves
        let lsw_subtree = log_add_exp(init_tree.log_sum_weight, final_tree.log_sum_weight);
        tree.log_sum_weight = log_add_exp(tree.log_sum_weight, lsw_subtree);
        if rng.random::<f64>() < (final_tree.log_sum_weight - lsw_subtree).exp() {
            *propose = propose_final;
        }

        let rho_subtree = add(&init.rho, &fin.rho);
        for (r, s) in ends.rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        ends.p_beg = init.p_beg;
        ends.vel_beg = init.vel_beg;
        ends.p_end = fin.p_end;
        ends.vel_end = fin.vel_end;

        let mut persist = no_u_turn(&ends.vel_beg, &ends.vel_end, &rho_subtree);
        persist &= no_u_turn(&ends.vel_beg, &fin.vel_beg, &add(&init.rho, &fin.p_beg));
        persist &= no_u_turn(&init.vel_end, &ends.vel_end, &add(&fin.rho, &init.p_end));
        persist
    }
}

fn sample_momentum(rng: &mut Rng, inv_metric: &[f64]) -> Vec<f64> {
    inv_metric.iter().map(|m| rng.std_normal() / m.sqrt()).collect()
}

/// One NUTS transition from `current`.
pub fn transition<M: LogDensity + ?Sized>(
    model: &M,
    current: &PhasePoint,
    eps: f64,
    inv_metric: &[f64],
    max_depth: usize,
    max_delta_h: f64,
    rng: &mut Rng,
) -> (PhasePoint, TransitionInfo) {
    let mut z0 = current.clone();
    z0.p = sample_momentum(rng, inv_metric);
    let h0 = z0.hamiltonian(inv_metric);
    let integ = Integrator { model, eps, inv_metric, h0, max_delta_h };

    let vel0 = z0.velocity(inv_metric);
    let mut fwd = z0.clone();
    let mut bck = z0.clone();
    let mut sample = z0.clone();
    // momenta at the inner ends of the forward and backward halves
    let (mut p_fwd_bck, mut p_bck_fwd) = (z0.p.clone(), z0.p.clone());
    let (mut v_fwd_fwd, mut v_fwd_bck, mut v_bck_fwd, mut v_bck_bck) =
        (vel0.clone(), vel0.clone(), vel0.clone(), vel0);
    let mut rho = z0.p.clone();
    let mut log_sum_weight = 0.0;
    let mut tree = Tree { log_sum_weight: f64::NEG_INFINITY, n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false };
    let mut depth = 0;
    let d = z0.q.len();

    while depth < max_depth {
        let mut propose = z0.clone();
        let mut sub = Tree { log_sum_weight: f64::NEG_INFINITY, ..tree };
        let (valid, rho_fwd, rho_bck);
        if rng.random::<f64>() < 0.5 {
            rho_bck = rho.clone();
            p_bck_fwd.clone_from(&p_fwd_bck);
            v_bck_fwd.clone_from(&v_fwd_bck);
            let mut ends =
                Ends { p_beg: Vec::new(), p_end: Vec::new(), vel_beg: Vec::new(), vel_end: Vec::new(), rho: vec![0.0; d] };
            valid = integ.build_tree(depth, &mut fwd, &mut propose, &mut ends, 1.0, &mut sub, rng);
            p_fwd_bck = ends.p_beg;
            v_fwd_bck = ends.vel_beg;
            v_fwd_fwd = ends.vel_end;
            rho_fwd = ends.rho;
        } else {
            rho_fwd = rho.clone();
            p_fwd_bck.clone_from(&p_bck_fwd);
            v_fwd_bck.clone_from(&v_bck_fwd);
            let mut ends =
                Ends { p_beg: Vec::new(), p_end: Vec::new(), vel_beg: Vec::new(), vel_end: Vec::new(), rho: vec![0.0; d] };
            valid = integ.build_tree(depth, &mut bck, &mut propose, &mut ends, -1.0, &mut sub, rng);
            p_bck_fwd = ends.p_beg;
            v_bck_fwd = ends.vel_beg;
            v_bck_bck = ends.vel_end;
            rho_bck = ends.rho;
        }
        tree.n_leapfrog = sub.n_leapfrog;
        tree.sum_metro_prob = sub.sum_metro_prob;
        tree.divergent = sub.divergent;
        if !valid {
            break;
        }
        depth += 1;

        if sub.log_sum_weight > log_sum_weight || rng.random::<f64>() < (sub.log_sum_weight - log_sum_weight).exp() {
            sample = propose;
        }
        log_sum_weight = log_add_exp(log_sum_weight, sub.log_sum_weight);

        rho = add(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&v_bck_bck, &v_fwd_fwd, &rho);
        persist &= no_u_turn(&v_bck_bck, &v_fwd_bck, &add(&rho_bck, &p_fwd_bck));
        persist &= no_u_turn(&v_bck_fwd, &v_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
        if !persist {
            break;
        }
    }

    let info = TransitionInfo {
        depth,
        n_leapfrog: tree.n_leapfrog,
        accept_stat: if tree.n_leapfrog > 0 { tree.sum_metro_prob / tree.n_leapfrog as f64 } else { 0.0 },
        divergent: tree.divergent,
        energy: sample.hamiltonian(inv_metric),
    };
    (sample, info)
}

/// Dual-averaging state for the step size.
#[derive(Clone, Debug, PartialEq)]
pub struct DualAveraging {
    pub mu: f64,
    pub counter: f64,
    pub s_bar: f64,
    pub x_bar: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
    pub delta: f64,
}

impl DualAveraging {
    pub fn new(step_size: f64, delta: f64) -> Self {
        Self { mu: (10.0 * step_size).ln(), counter: 0.0, s_bar: 0.0, x_bar: 0.0, gamma: 0.05, t0: 10.0, kappa: 0.75, delta }
    }

    pub fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Returns the next step size given the latest acceptance statistic.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let w = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup schedule: an initial fast buffer, doubling slow windows for the
/// metric, and a terminal fast buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSchedule {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
}

impl WindowSchedule {
    pub fn new(warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75, 50, 25);
        if warmup < 20 {
            // too short for metric adaptation: windows never open
            return Self { warmup, init_buffer: warmup, term_buffer: 0, window_size: 0, next_window: usize::MAX, counter: 0 };
        }
        if init_buffer + base_window + term_buffer > warmup {
            init_buffer = (0.15 * warmup as f64) as usize;
            term_buffer = (0.1 * warmup as f64) as usize;
            base_window = warmup - (init_buffer + term_buffer);
        }
        Self { warmup, init_buffer, term_buffer, window_size: base_window, next_window: init_buffer + base_window - 1, counter: 0 }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.warmup - self.term_buffer
            && self.counter != self.warmup
    }

    fn window_ends(&self) -> bool {
        self.counter == self.next_window && self.counter != self.warmup
    }

    fn advance_window(&mut self) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.warmup - self.term_buffer {
            self.next_window = last;
        }
    }
}

/// Adaptation state carried through warmup.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptState {
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub dual: DualAveraging,
    pub schedule: WindowSchedule,
    window_mean: Vec<f64>,
    window_m2: Vec<f64>,
    window_n: usize,
}

impl AdaptState {
    pub fn new(dim: usize, step_size: f64, target_accept: f64, warmup: usize) -> Self {
        Self {
            step_size,
            inv_metric: vec![1.0; dim],
            dual: DualAveraging::new(step_size, target_accept),
            schedule: WindowSchedule::new(warmup),
            window_mean: vec![0.0; dim],
            window_m2: vec![0.0; dim],
            window_n: 0,
        }
    }

    /// Welford accumulation of the window's draws.
    fn add_to_window(&mut self, q: &[f64]) {
        self.window_n += 1;
        let n = self.window_n as f64;
        for ((m, m2), &x) in self.window_mean.iter_mut().zip(self.window_m2.iter_mut()).zip(q) {
            let delta = x - *m;
            *m += delta / n;
            *m2 += delta * (x - *m);
        }
    }

    fn take_window_variance(&mut self) -> Vec<f64> {
        let denom = self.window_n.saturating_sub(1).max(1) as f64;
        let var = self.window_m2.iter().map(|m2| m2 / denom).collect();
        self.window_mean.iter_mut().for_each(|v| *v = 0.0);
        self.window_m2.iter_mut().for_each(|v| *v = 0.0);
        var
    }
}

/// One warmup adaptation step after a transition that ended at `position`
/// with acceptance statistic `accept_stat`. Returns true when a metric window
/// closed, in which case the caller re-initialises the step size.
pub fn adapt_warmup(state: &mut AdaptState, accept_stat: f64, position: &[f64]) -> bool {
    state.step_size = state.dual.learn(accept_stat);
    if state.schedule.in_window() {
        state.add_to_window(position);
    }
    if state.schedule.window_ends() {
        state.schedule.advance_window();
        let n = state.window_n as f64;
        let var = state.take_window_variance();
        state.window_n = 0;
        // shrink toward a small constant, as in Stan's regularised estimator
        state.inv_metric = var.iter().map(|v| (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0))).collect();
        state.schedule.counter += 1;
        return true;
    }
    state.schedule.counter += 1;
    false
}

/// Heuristic initial step size: double or halve until the one-step
/// acceptance probability crosses 0.8.
pub fn find_reasonable_step_size<M: LogDensity + ?Sized>(
    model: &M,
    z: &PhasePoint,
    mut eps: f64,
    inv_metric: &[f64],
    rng: &mut Rng,
) -> Result<f64> {
    let threshold = 0.8f64.ln();
    let try_step = |eps: f64, rng: &mut Rng| {
        let mut w = z.clone();
        w.p = sample_momentum(rng, inv_metric);
        let h0 = w.hamiltonian(inv_metric);
        leapfrog(model, &mut w, eps, inv_metric);
        h0 - w.hamiltonian(inv_metric)
    };
    let direction = if try_step(eps, rng) > threshold { 1.0 } else { -1.0 };
    loop {
        let delta = try_step(eps, rng);
        if (direction > 0.0 && !(delta > threshold)) || (direction < 0.0 && !(delta < threshold)) {
            return Ok(eps);
        }
        eps = if direction > 0.0 { 2.0 * eps } else { 0.5 * eps };
        if eps > 1e7 {
            return Err(Error::InvalidArgument("posterior is improper: step size search diverged".into()));
        }
        if eps == 0.0 {
            return Err(Error::NonFinite("step size search collapsed to zero".into()));
        }
    }
}

fn finite_point<M: LogDensity + ?Sized>(model: &M, q: Vec<f64>) -> Option<PhasePoint> {
    let d = q.len();
    let z = PhasePoint::new(model, q, vec![0.0; d]);
    (z.logp.is_finite() && z.grad.iter().all(|g| g.is_finite())).then_some(z)
}

/// Runs one chain. `init = None` draws up to 100 uniform inits until the log
/// density and gradient are finite.
pub fn nuts_run<M: MarginalPosterior + ?Sized>(
    model: &M,
    config: &NutsConfig,
    rng: &mut Rng,
    init: Option<Vec<f64>>,
) -> Result<ChainDraws> {
    config.validate()?;
    let d = model.dim();
    let mut z = match init {
        Some(q) => {
            if q.len() != d {
                return Err(Error::InvalidArgument(format!("init of length {} for dimension {d}", q.len())));
            }
            finite_point(model, q).ok_or_else(|| Error::NonFinite("log density or gradient at the initial point".into()))?
        }
        None => (0..100)
            .find_map(|_| {
                let q = (0..d).map(|_| rng.random_range(-config.init_radius..config.init_radius)).collect();
                finite_point(model, q)
            })
            .ok_or_else(|| Error::NonFinite("no finite initial point in 100 attempts".into()))?,
    };

    let mut adapt = AdaptState::new(d, config.initial_step_size, config.target_accept, config.warmup);
    if config.adapt {
        adapt.step_size = find_reasonable_step_size(model, &z, adapt.step_size, &adapt.inv_metric, rng)?;
        adapt.dual.restart(adapt.step_size);
    }

    let kept = config.iterations - config.warmup;
    let mut out = ChainDraws {
        param_names: model.param_names(),
        draws: Vec::with_capacity(kept),
        tree_depths: Vec::with_capacity(kept),
        accept_stats: Vec::with_capacity(kept),
        ..Default::default()
    };
    let start = Instant::now();
    let mut sampling_start = start;

    for it in 0..config.iterations {
        if it == config.warmup {
            if config.adapt {
                adapt.step_size = adapt.dual.final_step_size();
            }
            sampling_start = Instant::now();
            out.warmup_seconds = (sampling_start - start).as_secs_f64();
        }
        let (next, info) =
            transition(model, &z, adapt.step_size, &adapt.inv_metric, config.max_tree_depth, config.max_delta_h, rng);
        z = next;
        if it < config.warmup {
            out.warmup_accept_stats.push(info.accept_stat);
            if config.adapt && adapt_warmup(&mut adapt, info.accept_stat, &z.q) {
                adapt.step_size = find_reasonable_step_size(model, &z, adapt.step_size, &adapt.inv_metric, rng)?;
                adapt.dual.restart(adapt.step_size);
            }
        } else {
            out.draws.push(model.constrained(&z.q));
            out.tree_depths.push(info.depth);
            out.accept_stats.push(info.accept_stat);
            out.divergences += info.divergent as usize;
        }
    }
    out.sampling_seconds = sampling_start.elapsed().as_secs_f64();
    out.step_size = Some(adapt.step_size);
    out.inv_metric = Some(adapt.inv_metric);
    Ok(out)
}
