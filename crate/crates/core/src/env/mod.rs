//! The toy top-down shooter: maps, transition function and renderer.

pub mod map;
pub mod render;
pub mod state;

use serde::{Deserialize, Serialize};

pub use map::{GameMap, PickupKind, Tile, TileCoord};
pub use render::{render, Frame};
pub use state::{GameState, RewardLedger, StepInfo};

use crate::error::{Error, Result};

pub const NUM_ACTIONS: usize = 8;
/// Version of the action id mapping below.
pub const ACTION_TABLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    Noop = 0,
    Forward = 1,
    Backward = 2,
    TurnLeft = 3,
    TurnRight = 4,
    StrafeLeft = 5,
    StrafeRight = 6,
    Fire = 7,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Noop,
        Action::Forward,
        Action::Backward,
        Action::TurnLeft,
        Action::TurnRight,
        Action::StrafeLeft,
        Action::StrafeRight,
        Action::Fire,
    ];

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::range("action id", id))
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Noop => "noop",
            Action::Forward => "forward",
            Action::Backward => "backward",
            Action::TurnLeft => "turn-left",
            Action::TurnRight => "turn-right",
            Action::StrafeLeft => "strafe-left",
            Action::StrafeRight => "strafe-right",
            Action::Fire => "fire",
        }
    }
}

/// Environment setup shared by data collection and serving.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub map: String,
    /// Start each episode on a random floor tile instead of the map spawn.
    #[serde(default)]
    pub randomize_start: bool,
}

impl EnvConfig {
    pub fn new(map: impl Into<String>) -> Self {
        Self {
            map: map.into(),
            randomize_start: false,
        }
    }

    pub fn reset(&self, seed: u64) -> Result<GameState> {
        let map = GameMap::shipped(&self.map)?;
        Ok(if self.randomize_start {
            GameState::reset_random_start(map, seed)
        } else {
            GameState::reset(map, seed)
        })
    }
}
