#![allow(dead_code)]

use mlcpgd_core::{ClusterState, RoadProfile, Segment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub road: RoadProfile,
    pub init: ClusterState,
    pub horizon: f64,
}

/// Random road with up to four transitions and an admissible block list:
/// lone blocks and short jams whose rear members carry an offset.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = rng.random_range(1.0..3.0);
    let m = rng.random_range(0usize..=4);
    let mut transitions = Vec::with_capacity(m);
    let mut x = 0.0;
    for _ in 0..m {
        transitions.push(x);
        x += rng.random_range(0.3..4.0);
    }
    let first = rng.random_range(1u8..=2);
    let levels: Vec<u8> = (0..=m).map(|k| if k % 2 == 0 { first } else { 3 - first }).collect();
    let road = RoadProfile::new(transitions.clone(), levels.clone(), alpha).unwrap();

    let mut bounds = vec![-8.0];
    bounds.extend(&transitions);
    bounds.push(x + 3.0);
    let mut segs = Vec::new();
    for (k, w) in bounds.windows(2).enumerate() {
        let (lo, hi) = (w[0], w[1]);
        let mut pos = lo + rng.random_range(0.05..0.5);
        loop {
            let members = if rng.random_bool(0.3) { rng.random_range(2..=3) } else { 1 };
            let lens: Vec<f64> = (0..members).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = lens.iter().sum();
            if pos + total > hi - 0.05 || segs.len() >= 8 {
                break;
            }
            let u = rng.random_range(0.0..2.0);
            for (i, l) in lens.iter().enumerate() {
                let p = if i + 1 < members { rng.random_range(0.0..1.0) } else { 0.0 };
                segs.push(Segment::free(pos, pos + l, u, p, levels[k]));
                pos += l;
            }
            pos += rng.random_range(0.05..2.0);
        }
    }
    Case {
        road,
        init: ClusterState::new(0.0, segs),
        horizon: rng.random_range(2.0..15.0),
    }
}
