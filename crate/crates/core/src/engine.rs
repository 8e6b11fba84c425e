//! Exact event-driven evolution of a [`ClusterState`].
//!
//! Between events every endpoint moves affinely: free endpoints at the
//! segment velocity, pinned endpoints not at all. Events are gap closures,
//! a free head reaching a transition, and an upstream coupling member
//! shrinking to zero length. Their times are solved in closed form.
//!
//! Velocities are never stored independently of the desired speed
//! `w = u + p`, which each segment carries unchanged through collisions.
//! After every structural change one right-to-left sweep recomputes `u`
//! and `p` for all segments:
//!
//! * a chain of pinned segments carries a single mass flux `q`, so
//!   `u_k = q / n*_k` for each member;
//! * `q` is as large as the members allow (`u_k ≤ w_k`, so `p_k ≥ 0`);
//! * a free head touching the next chain cannot outrun it.
//!
//! This single rule reproduces collisions (`u' = u_r`), the narrowing and
//! enlargement intermediate states, and the contact closures at blocked
//! exits.

use std::io::{self, Write};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::road::RoadProfile;
use crate::state::{ClusterState, Coupling, Segment};
use crate::{EPS_T, EPS_X};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("segment {0} is not in contact with its successor")]
    NotInContact(usize),
    #[error("transition {transition} does not match the requested crossing direction")]
    WrongDirection { transition: usize },
    #[error("closure produced a negative offset on segment {0}")]
    NegativeOffset(usize),
    #[error("coupling at transition {0} is not complete")]
    CouplingNotComplete(usize),
    #[error("head of segment {segment} is not at transition {transition}")]
    NotAtTransition { segment: usize, transition: usize },
    #[error("no segment {0}")]
    NoSuchSegment(usize),
    #[error("an event at t = {at} lies inside the requested step")]
    EventSkipped { at: f64 },
    #[error("stalled simulation: {events} events within {window:e} of t = {time}")]
    StalledSimulation {
        time: f64,
        events: usize,
        window: f64,
    },
    #[error("initial state is not admissible: {0}")]
    Inadmissible(String),
    #[error("invalid horizon {0}")]
    InvalidHorizon(f64),
    #[error("negative step {0}")]
    NegativeStep(f64),
}

/// Deliberate corruption of one handler formula, used to check that the
/// weak residual notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Adds `delta` to the offset of every non-leading member of a collision group.
    CollisionOffset,
    /// Speeds up the downstream member of a narrowing coupling by `delta`.
    NarrowingRate,
    /// Adds `delta` to the desired speed of a freshly created narrowing downstream segment.
    NarrowingOffset,
    /// Adds `delta` to the desired speed of the exit block of a narrowing.
    NarrowingExit,
    EnlargementRate,
    EnlargementOffset,
    EnlargementExit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    pub kind: Perturbation,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineOptions {
    /// Overrides the default stall guard `10 · (segments + transitions)`.
    #[serde(default)]
    pub max_events_per_window: Option<usize>,
    #[serde(default)]
    pub perturbation: Option<Mutation>,
}

impl EngineOptions {
    fn delta(&self, kind: Perturbation) -> f64 {
        match self.perturbation {
            Some(m) if m.kind == kind => m.delta,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    /// Contiguous group of segments forming one jam at the event time.
    Collision(Vec<usize>),
    TransitionHit { segment: usize, transition: usize },
    CouplingComplete { transition: usize },
    HorizonReached,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Collision(_) => "collision",
            EventKind::TransitionHit { .. } => "transition_hit",
            EventKind::CouplingComplete { .. } => "coupling_complete",
            EventKind::HorizonReached => "horizon_reached",
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        match self {
            EventKind::Collision(g) => g.clone(),
            EventKind::TransitionHit {
                segment,
                transition,
            } => vec![*segment, *transition],
            EventKind::CouplingComplete { transition } => vec![*transition],
            EventKind::HorizonReached => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    /// Where it happens, when that is a single point.
    pub x: Option<f64>,
}

impl Serialize for Event {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Record<'a> {
            t: f64,
            kind: &'a str,
            indices: Vec<usize>,
        }
        Record {
            t: self.time,
            kind: self.kind.name(),
            indices: self.kind.indices(),
        }
        .serialize(ser)
    }
}

/// Initial state, every event with the state right after it, and the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub road: RoadProfile,
    pub initial: ClusterState,
    pub events: Vec<(Event, ClusterState)>,
    pub horizon: f64,
}

impl Trajectory {
    /// The initial state followed by every logged post-event state.
    pub fn states(&self) -> impl Iterator<Item = &ClusterState> {
        std::iter::once(&self.initial).chain(self.events.iter().map(|(_, s)| s))
    }

    pub fn final_state(&self) -> &ClusterState {
        self.events.last().map_or(&self.initial, |(_, s)| s)
    }

    /// State at time `t`, obtained by drifting the latest logged state at or before `t`.
    pub fn state_at(&self, t: f64) -> ClusterState {
        let base = self
            .states()
            .take_while(|s| s.time <= t)
            .last()
            .unwrap_or(&self.initial);
        let mut s = base.clone();
        s.drift(t - s.time);
        s.time = t;
        s
    }

    /// Intervals of affine motion: each state paired with the time it stays valid until.
    pub fn pieces(&self) -> Vec<(&ClusterState, f64)> {
        let states: Vec<&ClusterState> = self.states().collect();
        let mut out = Vec::new();
        for (k, s) in states.iter().enumerate() {
            let end = states.get(k + 1).map_or(self.horizon, |n| n.time);
            if end > s.time {
                out.push((*s, end));
            }
        }
        out
    }

    /// One JSON line per event, each followed by a line with the post-event state.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (e, s) in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pending {
    Gap(usize),
    Hit { seg: usize, transition: usize },
    Complete { seg: usize, transition: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    tau: f64,
    what: Pending,
}

fn candidates(state: &ClusterState, road: &RoadProfile) -> Vec<Candidate> {
    let segs = &state.segments;
    let mut out = Vec::new();
    for (i, s) in segs.iter().enumerate() {
        if let Some(next) = segs.get(i + 1) {
            let gap = next.a - s.b;
            let closing = s.head_rate() - next.tail_rate();
            if gap > EPS_X && closing > 0.0 {
                out.push(Candidate {
                    tau: gap / closing,
                    what: Pending::Gap(i),
                });
            }
        }
        if s.coupling.head_pin().is_none() && s.desired() > 0.0 {
            let k = s.region(road);
            if k < road.num_transitions() {
                let r = road.transition(k + 1);
                let tau = if r - s.b <= EPS_X {
                    Some(0.0)
                } else if s.u > 0.0 {
                    Some((r - s.b) / s.u)
                } else {
                    None
                };
                if let Some(tau) = tau {
                    out.push(Candidate {
                        tau,
                        what: Pending::Hit {
                            seg: i,
                            transition: k + 1,
                        },
                    });
                }
            }
        }
        if let Coupling::Upstream(j) = s.coupling {
            if s.u > 0.0 {
                out.push(Candidate {
                    tau: s.length().max(0.0) / s.u,
                    what: Pending::Complete {
                        seg: i,
                        transition: j,
                    },
                });
            }
        }
    }
    out
}

/// Recomputes `u` and `p` of every segment from its desired speed.
fn resolve(state: &mut ClusterState, road: &RoadProfile, opts: &EngineOptions) {
    let segs = &mut state.segments;
    let mut end = segs.len();
    while end > 0 {
        let last = end - 1;
        let mut first = last;
        while first > 0 {
            let tail = segs[first].coupling.tail_pin();
            if tail.is_some() && segs[first - 1].coupling.head_pin() == tail {
                first -= 1;
            } else {
                break;
            }
        }
        let mut q = segs[first..=last]
            .iter()
            .map(|s| s.density() * s.desired().max(0.0))
            .fold(f64::INFINITY, f64::min);
        if let Some(next) = segs.get(last + 1) {
            let s = &segs[last];
            if s.coupling.head_pin().is_none() && next.a - s.b <= EPS_X {
                q = q.min(s.density() * next.u.max(0.0));
            }
        }
        for s in &mut segs[first..=last] {
            let w = s.desired();
            s.u = q / s.density();
            s.p = (w - s.u).max(0.0);
            if let Some(j) = s.coupling.tail_pin() {
                let kind = if road.levels[j] == 1 {
                    Perturbation::NarrowingRate
                } else {
                    Perturbation::EnlargementRate
                };
                let d = opts.delta(kind);
                s.u += d;
                s.p -= d;
            }
        }
        end = first;
    }
}

fn same(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()))
}

/// Fuses touching segments that carry identical `(u, p, level)` and no pin between them.
fn merge(state: &mut ClusterState) {
    let mut out: Vec<Segment> = Vec::with_capacity(state.segments.len());
    for s in state.segments.drain(..) {
        if let Some(last) = out.last_mut() {
            let fusable = last.level == s.level
                && last.coupling.head_pin().is_none()
                && s.coupling.tail_pin().is_none()
                && s.a - last.b <= EPS_X
                && same(last.u, s.u)
                && same(last.p, s.p);
            if fusable {
                let total = last.length() + s.length();
                let tail = last.coupling.tail_pin();
                let head = s.coupling.head_pin();
                match (tail, head) {
                    (Some(_), Some(_)) => last.b = s.b,
                    (None, Some(_)) => {
                        last.a = s.b - total;
                        last.b = s.b;
                    }
                    _ => last.b = last.a + total,
                }
                last.coupling = Coupling::from_pins(tail, head).unwrap_or(Coupling::None);
                continue;
            }
        }
        out.push(s);
    }
    state.segments = out;
}

fn pin_head(
    segs: &mut Vec<Segment>,
    i: usize,
    j: usize,
    road: &RoadProfile,
    opts: &EngineOptions,
) {
    let r = road.transition(j);
    let s = &mut segs[i];
    if s.coupling.tail_pin().is_some() {
        s.b = r;
    } else {
        let shift = r - s.b;
        s.a += shift;
        s.b = r;
    }
    let tail = s.coupling.tail_pin();
    s.coupling = Coupling::from_pins(tail, Some(j)).unwrap_or(Coupling::Upstream(j));
    let level = road.levels[j];
    let offset = if level == 1 {
        Perturbation::NarrowingOffset
    } else {
        Perturbation::EnlargementOffset
    };
    let w = s.desired() * road.crossing_factor(j) + opts.delta(offset);
    segs.insert(
        i + 1,
        Segment {
            a: r,
            b: r,
            u: 0.0,
            p: w,
            level,
            coupling: Coupling::Downstream(j),
        },
    );
}

fn release(segs: &mut Vec<Segment>, i: usize, opts: &EngineOptions) {
    let up = segs.remove(i);
    let Some(down) = segs.get_mut(i) else {
        return;
    };
    let residual = up.mass().max(0.0) / down.density();
    down.coupling = Coupling::from_pins(None, down.coupling.head_pin()).unwrap_or(Coupling::None);
    if down.coupling.head_pin().is_none() {
        down.b += residual;
    } else {
        down.a -= residual;
    }
    let exit = if down.level < up.level {
        Perturbation::NarrowingExit
    } else {
        Perturbation::EnlargementExit
    };
    down.p += opts.delta(exit);
}

fn contact_group(state: &ClusterState, i: usize) -> Vec<usize> {
    let mut lo = i;
    while lo > 0 && state.in_contact(lo - 1) {
        lo -= 1;
    }
    let mut hi = i + 1;
    while state.in_contact(hi) {
        hi += 1;
    }
    (lo..=hi).collect()
}

/// The simulator: a road plus engine options.
#[derive(Debug, Clone)]
pub struct Engine {
    road: RoadProfile,
    options: EngineOptions,
}

impl Engine {
    pub fn new(road: RoadProfile) -> Self {
        Self::with_options(road, EngineOptions::default())
    }

    pub fn with_options(road: RoadProfile, options: EngineOptions) -> Self {
        Self { road, options }
    }

    pub fn road(&self) -> &RoadProfile {
        &self.road
    }

    /// Earliest upcoming event, or `HorizonReached` if none occurs before `horizon`.
    pub fn next_event(&self, state: &ClusterState, horizon: f64) -> Event {
        next_event(state, &self.road, horizon)
    }

    pub fn run(&self, initial: &ClusterState, horizon: f64) -> Result<Trajectory, EngineError> {
        let road = &self.road;
        if !(horizon.is_finite() && horizon > initial.time) {
            return Err(EngineError::InvalidHorizon(horizon));
        }
        let violations = initial.check_constraints(road);
        if let Some(v) = violations.first() {
            return Err(EngineError::Inadmissible(v.to_string()));
        }
        let mut state = initial.clone();
        resolve(&mut state, road, &self.options);
        merge(&mut state);

        let limit = self
            .options
            .max_events_per_window
            .unwrap_or(10 * (initial.len() + road.num_transitions()))
            .max(1);
        let mut window = (state.time, 0usize);
        let mut traj = Trajectory {
            road: road.clone(),
            initial: state.clone(),
            events: Vec::new(),
            horizon,
        };

        loop {
            let cands = candidates(&state, road);
            let tmin = cands.iter().map(|c| c.tau).fold(f64::INFINITY, f64::min);
            if state.time + tmin >= horizon {
                state.drift(horizon - state.time);
                state.time = horizon;
                let end = Event {
                    time: horizon,
                    kind: EventKind::HorizonReached,
                    x: None,
                };
                traj.events.push((end, state));
                return Ok(traj);
            }
            let t = state.time + tmin;
            state.drift(tmin);
            state.time = t;
            let batch: Vec<Candidate> = cands
                .into_iter()
                .filter(|c| c.tau <= tmin + EPS_T)
                .collect();
            let events = self.process(&mut state, &batch);

            if t - window.0 > EPS_T {
                window = (t, 0);
            }
            window.1 += events.len();
            if window.1 > limit {
                return Err(EngineError::StalledSimulation {
                    time: t,
                    events: window.1,
                    window: EPS_T,
                });
            }
            for e in events {
                traj.events.push((e, state.clone()));
            }
        }
    }

    fn process(&self, state: &mut ClusterState, batch: &[Candidate]) -> Vec<Event> {
        let road = &self.road;
        let t = state.time;
        let mut events = Vec::new();

        let mut groups: Vec<Vec<usize>> = Vec::new();
        for c in batch {
            if let Pending::Gap(i) = c.what {
                if state.in_contact(i) && !groups.iter().any(|g| g.contains(&i)) {
                    let g = contact_group(state, i);
                    events.push(Event {
                        time: t,
                        kind: EventKind::Collision(g.clone()),
                        x: Some(state.segments[i].b),
                    });
                    groups.push(g);
                }
            }
        }
        let bump = self.options.delta(Perturbation::CollisionOffset);
        if bump != 0.0 {
            for g in &groups {
                for &k in &g[..g.len() - 1] {
                    state.segments[k].p += bump;
                }
            }
        }

        let mut ops: Vec<Pending> = batch
            .iter()
            .map(|c| c.what)
            .filter(|w| match *w {
                Pending::Complete { seg, .. } => state.segments[seg].length() <= EPS_X,
                Pending::Hit { seg, transition } => {
                    road.transition(transition) - state.segments[seg].b <= EPS_X
                }
                Pending::Gap(_) => false,
            })
            .collect();
        for w in &ops {
            if let Pending::Complete { transition, .. } = *w {
                events.push(Event {
                    time: t,
                    kind: EventKind::CouplingComplete { transition },
                    x: Some(road.transition(transition)),
                });
            }
        }
        for w in &ops {
            if let Pending::Hit { seg, transition } = *w {
                events.push(Event {
                    time: t,
                    kind: EventKind::TransitionHit {
                        segment: seg,
                        transition,
                    },
                    x: Some(road.transition(transition)),
                });
            }
        }

        // structural edits from the right so earlier indices stay valid
        ops.sort_by_key(|w| match *w {
            Pending::Complete { seg, .. } | Pending::Hit { seg, .. } => std::cmp::Reverse(seg),
            Pending::Gap(i) => std::cmp::Reverse(i),
        });
        for w in ops {
            match w {
                Pending::Complete { seg, .. } => release(&mut state.segments, seg, &self.options),
                Pending::Hit { seg, transition } => {
                    pin_head(&mut state.segments, seg, transition, road, &self.options)
                }
                Pending::Gap(_) => {}
            }
        }
        resolve(state, road, &self.options);
        merge(state);
        events
    }
}

/// Runs the default engine on `road` from `initial` until `horizon`.
pub fn run(
    road: &RoadProfile,
    initial: &ClusterState,
    horizon: f64,
) -> Result<Trajectory, EngineError> {
    Engine::new(road.clone()).run(initial, horizon)
}

pub fn next_event(state: &ClusterState, road: &RoadProfile, horizon: f64) -> Event {
    let cands = candidates(state, road);
    let best = cands
        .iter()
        .copied()
        .min_by(|x, y| x.tau.total_cmp(&y.tau));
    match best {
        Some(c) if state.time + c.tau < horizon => {
            let (kind, x) = match c.what {
                Pending::Gap(i) => {
                    let mut ahead = state.clone();
                    ahead.drift(c.tau);
                    let s = &ahead.segments[i];
                    (EventKind::Collision(contact_group(&ahead, i)), Some(s.b))
                }
                Pending::Hit { seg, transition } => (
                    EventKind::TransitionHit {
                        segment: seg,
                        transition,
                    },
                    Some(road.transition(transition)),
                ),
                Pending::Complete { transition, .. } => (
                    EventKind::CouplingComplete { transition },
                    Some(road.transition(transition)),
                ),
            };
            Event {
                time: state.time + c.tau,
                kind,
                x,
            }
        }
        _ => Event {
            time: horizon,
            kind: EventKind::HorizonReached,
            x: None,
        },
    }
}

/// Moves every endpoint at its current rate for `dt`. Fails if an event
/// would fall strictly inside the step.
pub fn advance(
    state: &ClusterState,
    road: &RoadProfile,
    dt: f64,
) -> Result<ClusterState, EngineError> {
    if dt < 0.0 {
        return Err(EngineError::NegativeStep(dt));
    }
    if let Some(c) = candidates(state, road)
        .iter()
        .find(|c| c.tau > EPS_T && c.tau < dt - EPS_T)
    {
        return Err(EngineError::EventSkipped {
            at: state.time + c.tau,
        });
    }
    let mut s = state.clone();
    s.drift(dt);
    Ok(s)
}

/// Resolves a jam formed by the contiguous segments in `group`.
pub fn apply_collision(
    state: &ClusterState,
    road: &RoadProfile,
    group: RangeInclusive<usize>,
) -> Result<ClusterState, EngineError> {
    let (lo, hi) = (*group.start(), *group.end());
    if hi >= state.len() {
        return Err(EngineError::NoSuchSegment(hi));
    }
    if let Some(i) = (lo..hi).find(|&i| !state.in_contact(i)) {
        return Err(EngineError::NotInContact(i));
    }
    let mut s = state.clone();
    resolve(&mut s, road, &EngineOptions::default());
    merge(&mut s);
    Ok(s)
}

fn begin_crossing(
    state: &ClusterState,
    road: &RoadProfile,
    i: usize,
    j: usize,
    from: u8,
) -> Result<ClusterState, EngineError> {
    let seg = state.segments.get(i).ok_or(EngineError::NoSuchSegment(i))?;
    if j == 0 || j > road.num_transitions() {
        return Err(EngineError::NotAtTransition {
            segment: i,
            transition: j,
        });
    }
    if seg.level != from || road.levels[j - 1] != from || road.levels[j] == from {
        return Err(EngineError::WrongDirection { transition: j });
    }
    if seg.coupling.head_pin().is_some() || (seg.b - road.transition(j)).abs() > EPS_X {
        return Err(EngineError::NotAtTransition {
            segment: i,
            transition: j,
        });
    }
    let mut s = state.clone();
    if seg.desired() > 0.0 {
        pin_head(&mut s.segments, i, j, road, &EngineOptions::default());
    }
    resolve(&mut s, road, &EngineOptions::default());
    merge(&mut s);
    if let Some(k) = s.segments.iter().position(|x| x.p < 0.0 || x.u < 0.0) {
        return Err(EngineError::NegativeOffset(k));
    }
    Ok(s)
}

/// Starts a 2 → 1 crossing of segment `i` whose head sits on transition `j`.
pub fn begin_narrowing(
    state: &ClusterState,
    road: &RoadProfile,
    i: usize,
    j: usize,
) -> Result<ClusterState, EngineError> {
    begin_crossing(state, road, i, j, 2)
}

/// Starts a 1 → 2 crossing of segment `i` whose head sits on transition `j`.
pub fn begin_enlargement(
    state: &ClusterState,
    road: &RoadProfile,
    i: usize,
    j: usize,
) -> Result<ClusterState, EngineError> {
    begin_crossing(state, road, i, j, 1)
}

/// Removes the exhausted upstream member of the coupling at transition `j`.
pub fn complete_coupling(
    state: &ClusterState,
    road: &RoadProfile,
    j: usize,
) -> Result<ClusterState, EngineError> {
    let i = state
        .segments
        .iter()
        .position(|s| s.coupling == Coupling::Upstream(j))
        .ok_or(EngineError::CouplingNotComplete(j))?;
    if state.segments[i].length() > EPS_X {
        return Err(EngineError::CouplingNotComplete(j));
    }
    let mut s = state.clone();
    release(&mut s.segments, i, &EngineOptions::default());
    resolve(&mut s, road, &EngineOptions::default());
    merge(&mut s);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free(a: f64, b: f64, u: f64, p: f64, level: u8) -> Segment {
        Segment::free(a, b, u, p, level)
    }

    fn st(segs: Vec<Segment>) -> ClusterState {
        ClusterState::new(0.0, segs)
    }

    fn close(x: f64, y: f64) -> bool {
        (x - y).abs() < 1e-12
    }

    #[test]
    fn advance_examples() {
        let road = RoadProfile::uniform(1, 1.0).unwrap();
        let s = st(vec![free(0.0, 1.0, 2.0, 0.0, 1)]);
        let out = advance(&s, &road, 0.5).unwrap();
        assert_eq!((out.segments[0].a, out.segments[0].b), (1.0, 2.0));
        assert_eq!(advance(&s, &road, 0.0).unwrap().segments, s.segments);

        let road = RoadProfile::new(vec![0.0], vec![2, 1], 2.0).unwrap();
        let mut up = free(-1.0, 0.0, 0.25, 0.75, 2);
        up.coupling = Coupling::Upstream(1);
        let mut down = free(0.0, 0.5, 0.5, 0.0, 1);
        down.coupling = Coupling::Downstream(1);
        let out = advance(&st(vec![up, down]), &road, 1.0).unwrap();
        assert!(close(out.segments[0].a, -0.75) && out.segments[0].b == 0.0);
        assert!(out.segments[1].a == 0.0 && close(out.segments[1].b, 1.0));
        assert!(close(out.total_mass(), 2.0 * 1.0 + 0.5));

        let pair = st(vec![free(0.0, 1.0, 2.0, 0.0, 1), free(2.0, 3.0, 1.0, 0.0, 1)]);
        let uniform = RoadProfile::uniform(1, 1.0).unwrap();
        assert!(matches!(
            advance(&pair, &uniform, 2.0),
            Err(EngineError::EventSkipped { .. })
        ));
    }

    #[test]
    fn next_event_examples() {
        let road = RoadProfile::uniform(1, 1.0).unwrap();
        let pair = st(vec![free(0.0, 1.0, 2.0, 0.0, 1), free(2.0, 3.0, 1.0, 0.0, 1)]);
        let e = next_event(&pair, &road, 10.0);
        assert_eq!(e.kind, EventKind::Collision(vec![0, 1]));
        assert!(close(e.time, 1.0));

        let road = RoadProfile::new(vec![3.0], vec![1, 2], 2.0).unwrap();
        let one = st(vec![free(0.0, 1.0, 1.0, 0.0, 1)]);
        let e = next_event(&one, &road, 10.0);
        assert_eq!(
            e.kind,
            EventKind::TransitionHit {
                segment: 0,
                transition: 1
            }
        );
        assert!(close(e.time, 2.0));

        let flat = RoadProfile::uniform(1, 1.0).unwrap();
        let e = next_event(&one, &flat, 10.0);
        assert_eq!((e.kind, e.time), (EventKind::HorizonReached, 10.0));

        let equal = st(vec![free(0.0, 1.0, 1.0, 0.0, 1), free(2.0, 3.0, 1.0, 0.0, 1)]);
        assert_eq!(next_event(&equal, &flat, 10.0).kind, EventKind::HorizonReached);
    }

    #[test]
    fn collision_examples() {
        let road = RoadProfile::uniform(1, 1.0).unwrap();
        let s = st(vec![free(0.0, 1.0, 2.0, 0.0, 1), free(1.0, 2.0, 1.0, 0.0, 1)]);
        let out = apply_collision(&s, &road, 0..=1).unwrap();
        assert_eq!((out.segments[0].u, out.segments[0].p), (1.0, 1.0));
        assert_eq!((out.segments[1].u, out.segments[1].p), (1.0, 0.0));

        let s = st(vec![
            free(0.0, 1.0, 3.0, 0.0, 1),
            free(1.0, 2.0, 2.0, 0.0, 1),
            free(2.0, 3.0, 1.0, 0.0, 1),
        ]);
        let out = apply_collision(&s, &road, 0..=2).unwrap();
        let ps: Vec<f64> = out.segments.iter().map(|s| s.p).collect();
        assert_eq!(ps, vec![2.0, 1.0, 0.0]);
        assert!(out.segments.iter().all(|s| s.u == 1.0));

        let apart = st(vec![free(0.0, 1.0, 2.0, 0.0, 1), free(1.5, 2.0, 1.0, 0.0, 1)]);
        assert_eq!(
            apply_collision(&apart, &road, 0..=1),
            Err(EngineError::NotInContact(0))
        );
    }

    fn uf(s: &Segment) -> (f64, f64) {
        (s.u, s.p)
    }

    #[test]
    fn narrowing_examples() {
        let road = RoadProfile::new(vec![0.0], vec![2, 1], 2.0).unwrap();
        let s = st(vec![free(-1.0, 0.0, 1.0, 0.0, 2)]);
        let out = begin_narrowing(&s, &road, 0, 1).unwrap();
        assert_eq!(uf(&out.segments[0]), (0.25, 0.75));
        assert_eq!(uf(&out.segments[1]), (0.5, 0.0));
        assert_eq!(out.segments[1].coupling, Coupling::Downstream(1));

        let flat = RoadProfile::new(vec![0.0], vec![2, 1], 1.0).unwrap();
        let out = begin_narrowing(&s, &flat, 0, 1).unwrap();
        assert_eq!(uf(&out.segments[0]).0, 0.5);
        assert_eq!(uf(&out.segments[1]), (1.0, 0.0));

        let jam = st(vec![
            free(-1.0, 0.0, 1.0, 0.0, 2),
            free(0.0, 1.0, 0.0, 0.0, 1),
        ]);
        let out = begin_narrowing(&jam, &road, 0, 1).unwrap();
        assert_eq!(uf(&out.segments[0]), (0.0, 1.0));
        assert_eq!(uf(&out.segments[1]), (0.0, 0.5));

        assert_eq!(
            begin_enlargement(&s, &road, 0, 1),
            Err(EngineError::WrongDirection { transition: 1 })
        );
    }

    #[test]
    fn enlargement_examples() {
        let road = RoadProfile::new(vec![0.0], vec![1, 2], 2.0).unwrap();
        let s = st(vec![free(-1.0, 0.0, 1.0, 0.0, 1)]);
        let out = begin_enlargement(&s, &road, 0, 1).unwrap();
        assert_eq!(uf(&out.segments[0]), (1.0, 0.0));
        assert_eq!(uf(&out.segments[1]), (0.5, 1.5));

        let flat = RoadProfile::new(vec![0.0], vec![1, 2], 1.0).unwrap();
        let out = begin_enlargement(&s, &flat, 0, 1).unwrap();
        assert_eq!(uf(&out.segments[1]), (0.5, 0.5));

        let blocked = st(vec![
            free(-1.0, 0.0, 1.0, 0.0, 1),
            free(0.0, 1.0, 0.25, 0.0, 2),
        ]);
        let out = begin_enlargement(&blocked, &road, 0, 1).unwrap();
        assert_eq!(uf(&out.segments[0]), (0.5, 0.5));
        assert_eq!(out.segments[1].u, 0.25);
    }

    #[test]
    fn completion_examples() {
        let road = RoadProfile::new(vec![0.0], vec![2, 1], 2.0).unwrap();
        let mut up = free(0.0, 0.0, 0.25, 0.75, 2);
        up.coupling = Coupling::Upstream(1);
        let mut down = free(0.0, 2.0, 0.5, 0.0, 1);
        down.coupling = Coupling::Downstream(1);
        let out = complete_coupling(&st(vec![up, down]), &road, 1).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(uf(&out.segments[0]), (0.5, 0.0));
        assert_eq!(out.segments[0].coupling, Coupling::None);

        let blocker = free(2.0, 3.0, 0.2, 0.0, 1);
        let out = complete_coupling(&st(vec![up, down, blocker]), &road, 1).unwrap();
        assert!(close(out.segments[0].u, 0.2) && close(out.segments[0].p, 0.3));

        let mut long = up;
        long.a = -1.0;
        assert_eq!(
            complete_coupling(&st(vec![long, down]), &road, 1),
            Err(EngineError::CouplingNotComplete(1))
        );

        let wide = RoadProfile::new(vec![0.0], vec![1, 2], 2.0).unwrap();
        let mut up = free(0.0, 0.0, 1.0, 0.0, 1);
        up.coupling = Coupling::Upstream(1);
        let mut down = free(0.0, 0.5, 0.5, 1.5, 2);
        down.coupling = Coupling::Downstream(1);
        let out = complete_coupling(&st(vec![up, down]), &wide, 1).unwrap();
        assert_eq!(uf(&out.segments[0]), (2.0, 0.0));
    }

    #[test]
    fn run_single_block() {
        let road = RoadProfile::uniform(2, 2.0).unwrap();
        let s = st(vec![free(0.0, 1.0, 1.5, 0.0, 2)]);
        let traj = run(&road, &s, 4.0).unwrap();
        assert_eq!(traj.events.len(), 1);
        assert_eq!(traj.events[0].0.kind, EventKind::HorizonReached);
        let f = traj.final_state();
        assert!(close(f.segments[0].a, 6.0) && close(f.segments[0].b, 7.0));
    }

    #[test]
    fn run_narrowing_closed_form() {
        let road = RoadProfile::new(vec![0.0], vec![2, 1], 2.0).unwrap();
        let s = st(vec![free(-2.0, -1.0, 1.0, 0.0, 2)]);
        let traj = run(&road, &s, 10.0).unwrap();
        let kinds: Vec<&str> = traj.events.iter().map(|(e, _)| e.kind.name()).collect();
        assert_eq!(kinds, ["transition_hit", "coupling_complete", "horizon_reached"]);
        let (hit, after_hit) = &traj.events[0];
        assert!(close(hit.time, 1.0));
        assert_eq!(uf(&after_hit.segments[0]), (0.25, 0.75));
        let (done, after) = &traj.events[1];
        assert!(close(done.time, 5.0));
        assert_eq!(after.len(), 1);
        assert!(close(after.segments[0].length(), 2.0));
        assert!(close(after.segments[0].u, 0.5));
        for s in traj.states() {
            assert!(close(s.total_mass(), 2.0));
            assert!(s.check_constraints(&road).is_empty(), "{s:?}");
        }
    }

    #[test]
    fn zeno_guard_trips() {
        let road = RoadProfile::uniform(1, 1.0).unwrap();
        let s = st(vec![
            free(0.0, 1.0, 3.0, 0.0, 1),
            free(2.0, 3.0, 2.0, 0.0, 1),
            free(4.0, 5.0, 1.0, 0.0, 1),
            free(6.0, 7.0, 0.0, 0.0, 1),
        ]);
        // three pairs close at t = 1 but only the group is one event; two groups would need two
        let opts = EngineOptions {
            max_events_per_window: Some(1),
            perturbation: None,
        };
        let e = Engine::with_options(road.clone(), opts.clone()).run(&s, 5.0);
        assert!(e.is_ok());
        let split = st(vec![
            free(0.0, 1.0, 2.0, 0.0, 1),
            free(2.0, 3.0, 1.0, 0.0, 1),
            free(10.0, 11.0, 2.0, 0.0, 1),
            free(12.0, 13.0, 1.0, 0.0, 1),
        ]);
        let e = Engine::with_options(road, opts).run(&split, 5.0);
        assert!(matches!(e, Err(EngineError::StalledSimulation { .. })));
    }

    #[test]
    fn event_serializes_compactly() {
        let e = Event {
            time: 1.5,
            kind: EventKind::TransitionHit {
                segment: 2,
                transition: 1,
            },
            x: Some(0.0),
        };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"t":1.5,"kind":"transition_hit","indices":[2,1]}"#
        );
    }
}
