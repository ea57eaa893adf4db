//! The IcyLake gridworld.
//!
//! A 4×4 tile map with one start and one goal tile connected by two
//! corridors of equal length: one through deep snow (every landing costs a
//! flat 2) and one over ice (base cost 0.5, plus a +10 slip spike with
//! probability 0.1). Reaching the goal pays reward 1 and ends the episode;
//! nothing else is rewarded. Movement is deterministic in the commanded
//! direction and clipped at the grid edges — the slip is purely a cost
//! event, never a displacement.
//!
//! With the default map both corridors take six moves, so an episode on
//! either corridor draws exactly six tile costs (see [`GoalEntryCost`]): the
//! snow corridor costs 12 deterministically, while the ice corridor costs
//! `3 + 10·Binomial(6, 0.1)`, whose 95th percentile is 23. A cumulative-cost
//! threshold of 15 therefore separates the two: the snow route never crosses
//! it, the ice route crosses it with probability ≈ 0.1143 (two or more
//! slips).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, ActionSpace, AugmentedState, CmdpSpec, Environment, StepOutcome};
use crate::{Error, Result};

/// Tile kinds. Start and goal carry no cost of their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tile {
    /// Episode start position; zero cost.
    Start,
    /// Absorbing goal; zero cost, pays `goal_reward` on entry.
    Goal,
    /// Flat high cost on every landing.
    DeepSnow,
    /// Low base cost with a rare additive slip spike.
    Ice,
}

/// Cost rule for the move that enters the goal tile.
///
/// The goal tile itself never carries a cost. Under `DepartedTile` (the
/// default) the final move still crosses the terrain it leaves, so it draws
/// the departed tile's cost; every complete corridor then produces exactly
/// as many cost draws as moves, which is what makes the corridor arithmetic
/// above exact. Under `Free` the final move costs nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalEntryCost {
    /// Entering the goal draws the cost of the tile being departed.
    DepartedTile,
    /// Entering the goal is free.
    Free,
}

/// IcyLake parameters. Defaults reproduce the reference tile-cost
/// distribution: deep snow 2, ice 0.5 + 10·Bernoulli(0.1), goal reward 1.
#[derive(Debug, Clone)]
pub struct IcyLakeConfig {
    /// Row-major tile map, e.g. `"SIII/DDDI/DIDI/DDDG"`.
    pub map: Vec<Vec<Tile>>,
    /// Cost of landing on deep snow.
    pub snow_cost: f64,
    /// Base cost of landing on ice.
    pub ice_base_cost: f64,
    /// Additional cost when a slip is drawn.
    pub slip_cost: f64,
    /// Probability of a slip per ice landing.
    pub slip_prob: f64,
    /// Reward for reaching the goal.
    pub goal_reward: f64,
    /// Cost rule for the goal-entering move.
    pub goal_entry_cost: GoalEntryCost,
    /// Reward discount γ.
    pub reward_discount: f64,
    /// Cost discount γ_c.
    pub cost_discount: f64,
    /// Step limit; exceeding it truncates the episode.
    pub max_episode_steps: usize,
}

impl Default for IcyLakeConfig {
    fn default() -> Self {
        IcyLakeConfig {
            map: parse_map(DEFAULT_MAP).expect("default map is valid"),
            snow_cost: 2.0,
            ice_base_cost: 0.5,
            slip_cost: 10.0,
            slip_prob: 0.1,
            goal_reward: 1.0,
            goal_entry_cost: GoalEntryCost::DepartedTile,
            reward_discount: 0.99,
            cost_discount: 1.0,
            max_episode_steps: 100,
        }
    }
}

/// Default 4×4 layout: an all-ice corridor along the top and right edges and
/// an all-snow corridor along the left and bottom edges, both six moves long.
pub const DEFAULT_MAP: &str = "SIII/DDDI/DIDI/DDDG";

/// Parses a `/`-separated row-major map string (`S`, `G`, `D`, `I`).
pub fn parse_map(text: &str) -> Result<Vec<Vec<Tile>>> {
    let rows: Vec<Vec<Tile>> = text
        .split('/')
        .map(|row| {
            row.chars()
                .map(|ch| match ch {
                    'S' => Ok(Tile::Start),
                    'G' => Ok(Tile::Goal),
                    'D' => Ok(Tile::DeepSnow),
                    'I' => Ok(Tile::Ice),
                    other => Err(Error::Env(format!("unknown map tile '{other}'"))),
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    validate_map(&rows)?;
    Ok(rows)
}

fn validate_map(rows: &[Vec<Tile>]) -> Result<()> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Env("map must be non-empty".into()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Env("map rows must have equal width".into()));
    }
    let count = |tile: Tile| rows.iter().flatten().filter(|&&t| t == tile).count();
    if count(Tile::Start) != 1 || count(Tile::Goal) != 1 {
        return Err(Error::Env("map needs exactly one start and one goal tile".into()));
    }
    Ok(())
}

/// Discrete actions: 0 = up, 1 = right, 2 = down, 3 = left.
const MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

/// The IcyLake environment. One instance per rollout worker.
pub struct IcyLake {
    config: IcyLakeConfig,
    spec: CmdpSpec,
    start: (usize, usize),
    position: (usize, usize),
    steps: usize,
    finished: bool,
    rng: ChaCha8Rng,
}

impl IcyLake {
    /// Builds the environment, validating map and parameters.
    pub fn new(config: IcyLakeConfig) -> Result<Self> {
        validate_map(&config.map)?;
        if !(0.0..=1.0).contains(&config.slip_prob) {
            return Err(Error::Env(format!(
                "slip_prob must lie in [0,1], got {}",
                config.slip_prob
            )));
        }
        if config.snow_cost < 0.0 || config.ice_base_cost < 0.0 || config.slip_cost < 0.0 {
            return Err(Error::Env("tile costs must be non-negative".into()));
        }
        let start = find_tile(&config.map, Tile::Start);
        let spec = CmdpSpec {
            observation_dim: config.map.len() * config.map[0].len(),
            action_space: ActionSpace::Categorical(4),
            reward_discount: config.reward_discount,
            cost_discount: config.cost_discount,
            max_episode_steps: config.max_episode_steps,
        };
        spec.validate()?;
        Ok(IcyLake {
            start,
            position: start,
            steps: 0,
            finished: true,
            rng: ChaCha8Rng::seed_from_u64(0),
            config,
            spec,
        })
    }

    /// Builds the environment with the default map and parameters.
    pub fn default_env() -> Self {
        IcyLake::new(IcyLakeConfig::default()).expect("default config is valid")
    }

    fn width(&self) -> usize {
        self.config.map[0].len()
    }

    fn tile(&self, pos: (usize, usize)) -> Tile {
        self.config.map[pos.0][pos.1]
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.spec.observation_dim];
        obs[self.position.0 * self.width() + self.position.1] = 1.0;
        obs
    }

    /// Draws the landing cost for a tile kind. Returns `(cost, was_ice)`.
    fn draw_cost(&mut self, tile: Tile) -> (f64, bool) {
        match tile {
            Tile::Start | Tile::Goal => (0.0, false),
            Tile::DeepSnow => (self.config.snow_cost, false),
            Tile::Ice => {
                let slipped = self.rng.gen::<f64>() < self.config.slip_prob;
                let cost = self.config.ice_base_cost
                    + if slipped { self.config.slip_cost } else { 0.0 };
                (cost, true)
            }
        }
    }
}

fn find_tile(map: &[Vec<Tile>], tile: Tile) -> (usize, usize) {
    for (r, row) in map.iter().enumerate() {
        for (c, &t) in row.iter().enumerate() {
            if t == tile {
                return (r, c);
            }
        }
    }
    unreachable!("validated maps contain the tile")
}

impl Environment for IcyLake {
    fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> AugmentedState {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.position = self.start;
        self.steps = 0;
        self.finished = false;
        AugmentedState::initial(self.observation())
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.finished {
            return Err(Error::Env("step called on a finished IcyLake episode".into()));
        }
        let dir = match action {
            Action::Discrete(a) if *a < 4 => *a,
            other => {
                return Err(Error::Env(format!("invalid IcyLake action {other:?}")));
            }
        };
        let from = self.position;
        let (dr, dc) = MOVES[dir];
        let rows = self.config.map.len() as isize;
        let cols = self.width() as isize;
        let r = (from.0 as isize + dr).clamp(0, rows - 1) as usize;
        let c = (from.1 as isize + dc).clamp(0, cols - 1) as usize;
        self.position = (r, c);
        self.steps += 1;

        let landed = self.tile(self.position);
        let cost_source = if landed == Tile::Goal
            && self.config.goal_entry_cost == GoalEntryCost::DepartedTile
        {
            self.tile(from)
        } else {
            landed
        };
        let (cost, cost_from_ice) = self.draw_cost(cost_source);

        let terminated = landed == Tile::Goal;
        let truncated = !terminated && self.steps >= self.config.max_episode_steps;
        self.finished = terminated || truncated;
        Ok(StepOutcome {
            next_observation: self.observation(),
            reward: if terminated { self.config.goal_reward } else { 0.0 },
            cost,
            terminated,
            truncated,
            cost_from_ice,
        })
    }
}
