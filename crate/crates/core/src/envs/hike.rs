//! Mountain Hike: walk from the bottom-left of a hilly map to its summit
//! while observing either a noisy position or a noisy altitude.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{one_hot, Action, ActionSpace, EnvDescriptor, Environment, InformedStep, Reset};
use crate::{Error, Result};

/// Summit of the terrain and its unique maximum.
pub const HIKE_TOP: (f64, f64) = (0.7, 0.7);

const START: (f64, f64) = (-0.7, -0.7);
const START_JITTER: f64 = 0.05;
const STEP: f64 = 0.05;
const NOISE_STD: f64 = 0.05;
const TOP_RADIUS: f64 = 0.1;
const MAX_STEPS: usize = 160;

const MAIN_WIDTH: f64 = 0.4;
const SIDE_CENTER: (f64, f64) = (-0.3, 0.3);
const SIDE_HEIGHT: f64 = 0.5;
const SIDE_RADIUS: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    North,
    East,
    South,
    West,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::North,
        Orientation::East,
        Orientation::South,
        Orientation::West,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    fn unit(self) -> (f64, f64) {
        match self {
            Orientation::North => (0.0, 1.0),
            Orientation::East => (1.0, 0.0),
            Orientation::South => (0.0, -1.0),
            Orientation::West => (-1.0, 0.0),
        }
    }

    /// Rotates clockwise by `quarter_turns`.
    fn turn(self, quarter_turns: usize) -> Self {
        Self::ALL[(self.index() + quarter_turns) % 4]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HikeVariant {
    /// Observe the altitude instead of the position.
    pub altitude_obs: bool,
    /// Draw the initial orientation uniformly instead of always facing north.
    pub varying: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MountainHikeState {
    pub position: (f64, f64),
    pub orientation: Orientation,
    pub steps: usize,
}

/// Smooth terrain: a Gaussian summit of height 1 plus a smaller secondary
/// hill with compact support, so the summit stays the exact global maximum.
pub fn altitude(x: f64, y: f64) -> f64 {
    let d2 = (x - HIKE_TOP.0).powi(2) + (y - HIKE_TOP.1).powi(2);
    let main = (-d2 / (2.0 * MAIN_WIDTH * MAIN_WIDTH)).exp();
    let r2 = ((x - SIDE_CENTER.0).powi(2) + (y - SIDE_CENTER.1).powi(2)) / (SIDE_RADIUS * SIDE_RADIUS);
    let side = if r2 < 1.0 {
        SIDE_HEIGHT * (1.0 - 1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    };
    main + side
}

/// Reward for standing at `position`: `altitude(position) − altitude(top)`.
pub fn reward_at(position: (f64, f64)) -> f64 {
    altitude(position.0, position.1) - altitude(HIKE_TOP.0, HIKE_TOP.1)
}

fn at_top(p: (f64, f64)) -> bool {
    (p.0 - HIKE_TOP.0).hypot(p.1 - HIKE_TOP.1) <= TOP_RADIUS
}

/// Actions are relative to the initial orientation: 0 forward, 1 right,
/// 2 backward, 3 left.
pub struct MountainHike {
    variant: HikeVariant,
    descriptor: EnvDescriptor,
    rng: ChaCha8Rng,
    state: MountainHikeState,
    done: bool,
}

impl MountainHike {
    pub fn new(variant: HikeVariant) -> Self {
        let name = format!(
            "hike/{}-{}",
            if variant.altitude_obs { "alt" } else { "pos" },
            if variant.varying { "var" } else { "fixed" }
        );
        let descriptor = EnvDescriptor {
            name,
            action_space: ActionSpace::Discrete(4),
            obs_dim: if variant.altitude_obs { 1 } else { 2 },
            info_dim: 6,
            discount: 0.99,
        };
        Self {
            variant,
            descriptor,
            rng: ChaCha8Rng::seed_from_u64(0),
            state: MountainHikeState {
                position: START,
                orientation: Orientation::North,
                steps: 0,
            },
            done: true,
        }
    }

    pub fn variant(&self) -> HikeVariant {
        self.variant
    }

    pub fn state(&self) -> MountainHikeState {
        self.state
    }

    fn information(&self) -> Vec<f64> {
        let mut v = vec![self.state.position.0, self.state.position.1];
        v.extend(one_hot(4, self.state.orientation.index()));
        v
    }

    fn observation(&mut self) -> Vec<f64> {
        let noise = Normal::new(0.0, NOISE_STD).expect("valid noise scale");
        let (x, y) = self.state.position;
        if self.variant.altitude_obs {
            vec![altitude(x, y) + noise.sample(&mut self.rng)]
        } else {
            vec![x + noise.sample(&mut self.rng), y + noise.sample(&mut self.rng)]
        }
    }
}

impl Environment for MountainHike {
    fn descriptor(&self) -> &EnvDescriptor {
        &self.descriptor
    }

    fn reset(&mut self, seed: u64) -> Reset {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Uniform::new_inclusive(-START_JITTER, START_JITTER).expect("valid range");
        let position = (
            START.0 + jitter.sample(&mut self.rng),
            START.1 + jitter.sample(&mut self.rng),
        );
        let orientation = if self.variant.varying {
            Orientation::ALL[Uniform::new(0, 4).expect("valid range").sample(&mut self.rng)]
        } else {
            Orientation::North
        };
        self.state = MountainHikeState {
            position,
            orientation,
            steps: 0,
        };
        self.done = false;
        Reset {
            information: self.information(),
            observation: self.observation(),
            continuation: true,
        }
    }

    fn step(&mut self, action: &Action) -> Result<InformedStep> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        self.descriptor.action_space.check(action)?;
        let Action::Discrete(a) = *action else {
            unreachable!("checked against a discrete action space")
        };
        let reward = reward_at(self.state.position);
        let (dx, dy) = self.state.orientation.turn(a).unit();
        let (x, y) = self.state.position;
        self.state.position = (
            (x + STEP * dx).clamp(-1.0, 1.0),
            (y + STEP * dy).clamp(-1.0, 1.0),
        );
        self.state.steps += 1;
        let continuation = !at_top(self.state.position) && self.state.steps < MAX_STEPS;
        self.done = !continuation;
        Ok(InformedStep {
            reward,
            information: self.information(),
            observation: self.observation(),
            continuation,
        })
    }

    fn success(&self) -> Option<bool> {
        self.done.then(|| at_top(self.state.position))
    }
}
