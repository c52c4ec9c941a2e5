//! Exact simulation by per-user Ogata thinning.
//!
//! Between events each user's endogenous intensity only decays, so the
//! intensity at the current time bounds it until the next event. Each user owns
//! an independent random stream; an accepted event only forces redraws for the
//! users it excites. Runs that differ only in one user's control therefore share
//! most of their randomness, which keeps common-random-number comparisons tight.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Event, EventSequence, Exogenous, NetworkModel, PiecewiseExo, StageSchedule};
use crate::{Error, Result};

pub const DEFAULT_MAX_EVENTS: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimulationOptions {
    /// Hard cap on the number of events over the simulator's lifetime.
    pub max_events: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            max_events: DEFAULT_MAX_EVENTS,
        }
    }
}

/// Seeded stream for `(seed, replication, lane)`. Lanes below `2^24` are user
/// streams; policies draw from [`policy_stream`].
pub fn stream_rng(seed: u64, replication: u64, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replication << 24) | (lane & 0xFF_FFFF));
    rng
}

pub fn policy_stream(seed: u64, replication: u64) -> ChaCha8Rng {
    stream_rng(seed ^ 0x9E37_79B9_7F4A_7C15, replication, 0xFF_FFFF)
}

#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub events: Vec<Event>,
    /// Endogenous intensity at the end of the window.
    pub state: DVector<f64>,
}

/// Stateful simulator for one replication; successive `run` calls continue
/// each user's random stream.
pub struct Simulator<'m> {
    model: &'m NetworkModel,
    rngs: Vec<ChaCha8Rng>,
    options: SimulationOptions,
    produced: usize,
}

impl<'m> Simulator<'m> {
    pub fn new(model: &'m NetworkModel, seed: u64, replication: u64, options: SimulationOptions) -> Result<Self> {
        if !model.is_stable() && !model.allow_unstable() {
            return Err(Error::Unstable {
                ratio: model.stability_ratio(),
            });
        }
        let rngs = (0..model.n() as u64).map(|i| stream_rng(seed, replication, i)).collect();
        Ok(Self {
            model,
            rngs,
            options,
            produced: 0,
        })
    }

    pub fn model(&self) -> &NetworkModel {
        self.model
    }

    /// Simulates `[t_a, t_b)` starting from endogenous state `x_init` at `t_a`.
    pub fn run(&mut self, exo: &dyn Exogenous, x_init: &DVector<f64>, window: (f64, f64)) -> Result<SimulationOutput> {
        let n = self.model.n();
        let (t_a, t_b) = window;
        if !(t_a <= t_b) || !t_a.is_finite() || !t_b.is_finite() {
            return Err(Error::Domain(format!("invalid window [{t_a}, {t_b}]")));
        }
        if exo.dim() != n {
            return Err(Error::dim("exogenous intensity", n, exo.dim()));
        }
        if x_init.len() != n {
            return Err(Error::dim("initial state", n, x_init.len()));
        }
        if x_init.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("initial state must be nonnegative".into()));
        }

        let omega = self.model.omega();
        let mut x = x_init.clone();
        let mut events = Vec::new();
        let mut exo_bound = vec![0.0; n];
        let mut exo_now = vec![0.0; n];
        let mut bound = vec![0.0; n];
        let mut candidate = vec![f64::INFINITY; n];
        let mut t = t_a;

        while t < t_b {
            let mut seg_end = t_b.min(t + exo.max_segment());
            if let Some(b) = exo.next_break(t) {
                seg_end = seg_end.min(b);
            }
            exo.bound(t, seg_end, &mut exo_bound);
            for i in 0..n {
                bound[i] = exo_bound[i] + x[i];
                candidate[i] = draw(&mut self.rngs[i], t, bound[i]);
            }

            loop {
                let (who, when) = argmin(&candidate);
                if when >= seg_end {
                    decay(&mut x, omega * (seg_end - t));
                    t = seg_end;
                    break;
                }
                decay(&mut x, omega * (when - t));
                t = when;
                exo.eval(t, &mut exo_now);
                let lambda = exo_now[who] + x[who];
                let u: f64 = self.rngs[who].random();
                if u * bound[who] <= lambda {
                    events.push(Event { time: t, user: who });
                    self.produced += 1;
                    if self.produced > self.options.max_events {
                        return Err(Error::Explosion {
                            cap: self.options.max_events,
                            time: t,
                        });
                    }
                    for (i, a) in self.model.influence_of(who) {
                        x[i] += a;
                        if i != who {
                            bound[i] = exo_bound[i] + x[i];
                            candidate[i] = draw(&mut self.rngs[i], t, bound[i]);
                        }
                    }
                }
                bound[who] = exo_bound[who] + x[who];
                candidate[who] = draw(&mut self.rngs[who], t, bound[who]);
            }
        }
        Ok(SimulationOutput { events, state: x })
    }
}

fn draw(rng: &mut ChaCha8Rng, t: f64, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    let u: f64 = rng.random();
    t + (-(1.0 - u).ln()) / rate
}

/// Smallest candidate; ties go to the lowest user index.
fn argmin(c: &[f64]) -> (usize, f64) {
    let mut best = (0, c[0]);
    for (i, &v) in c.iter().enumerate().skip(1) {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

fn decay(x: &mut DVector<f64>, rate_dt: f64) {
    if rate_dt > 0.0 {
        let f = (-rate_dt).exp();
        x.iter_mut().for_each(|v| *v *= f);
    }
}

/// Simulates the controlled process `mu + u_m` on stage `m` over `window`,
/// starting from endogenous state `x_init` at `window.0`.
pub fn simulate(
    model: &NetworkModel,
    controls: &[DVector<f64>],
    schedule: &StageSchedule,
    x_init: &DVector<f64>,
    window: (f64, f64),
    seed: u64,
) -> Result<EventSequence> {
    let exo = controlled_exo(model, controls, schedule)?;
    if !(0.0 <= window.0 && window.0 <= window.1 && window.1 <= schedule.horizon()) {
        return Err(Error::Domain(format!(
            "window [{}, {}] not within [0, {}]",
            window.0,
            window.1,
            schedule.horizon()
        )));
    }
    let mut sim = Simulator::new(model, seed, 0, SimulationOptions::default())?;
    let out = sim.run(&exo, x_init, window)?;
    EventSequence::new(schedule.horizon(), model.n(), out.events)
}

/// `mu + u_m` on `[tau_m, tau_{m+1})`.
pub fn controlled_exo(model: &NetworkModel, controls: &[DVector<f64>], schedule: &StageSchedule) -> Result<PiecewiseExo> {
    if controls.len() != schedule.stages() {
        return Err(Error::dim("stage controls", schedule.stages(), controls.len()));
    }
    let levels = controls
        .iter()
        .map(|u| {
            if u.len() != model.n() {
                Err(Error::dim("stage control", model.n(), u.len()))
            } else {
                Ok(model.mu() + u)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    PiecewiseExo::new(schedule.boundaries(), levels)
}
