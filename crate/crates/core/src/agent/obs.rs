//! Agent observations: downscaled viewport, minimap, recent actions.

use std::collections::VecDeque;

use crate::env::render::{FRAME_W, VIEW_H};
use crate::env::{Action, Frame, GameState, Tile, TileCoord};

pub const OBS_SIZE: usize = 32;
pub const HISTORY: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentObservation {
    /// Grayscale viewport in `[0, 1]`, row-major `32 x 32`.
    pub frame: Vec<f32>,
    /// Walls, doors, visited tiles and the player, row-major `32 x 32`.
    pub minimap: Vec<f32>,
    /// Oldest first; exactly [`HISTORY`] ids.
    pub last_actions: Vec<u8>,
}

/// Downscales the viewport rows by box averaging.
pub fn viewport_gray(frame: &Frame) -> Vec<f32> {
    let mut out = vec![0.0; OBS_SIZE * OBS_SIZE];
    for oy in 0..OBS_SIZE {
        let y0 = oy * VIEW_H / OBS_SIZE;
        let y1 = ((oy + 1) * VIEW_H / OBS_SIZE).max(y0 + 1);
        for ox in 0..OBS_SIZE {
            let x0 = ox * FRAME_W / OBS_SIZE;
            let x1 = (ox + 1) * FRAME_W / OBS_SIZE;
            let mut acc = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let [r, g, b] = frame.get(x, y);
                    acc += 0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32;
                }
            }
            out[oy * OBS_SIZE + ox] = acc / ((y1 - y0) * (x1 - x0)) as f32 / 255.0;
        }
    }
    out
}

/// The map drawn one pixel per tile, centered in a 32x32 raster.
pub fn minimap(state: &GameState) -> Vec<f32> {
    let mut out = vec![0.0; OBS_SIZE * OBS_SIZE];
    let (w, h) = (state.map.width, state.map.height);
    let ox = OBS_SIZE.saturating_sub(w) / 2;
    let oy = OBS_SIZE.saturating_sub(h) / 2;
    for y in 0..h.min(OBS_SIZE) {
        for x in 0..w.min(OBS_SIZE) {
            let v = match state.tile(x as i32, y as i32) {
                Tile::Wall => 1.0,
                Tile::DoorClosed => 0.75,
                _ if state.visited.contains(TileCoord {
                    x: x as u8,
                    y: y as u8,
                }) =>
                {
                    0.5
                }
                _ => 0.0,
            };
            out[(y + oy) * OBS_SIZE + x + ox] = v;
        }
    }
    let p = state.player_tile();
    if (p.x as usize) < OBS_SIZE && (p.y as usize) < OBS_SIZE {
        out[(p.y as usize + oy) * OBS_SIZE + p.x as usize + ox] = -1.0;
    }
    out
}

/// Tracks the action history of one episode.
#[derive(Debug, Clone)]
pub struct ObsBuilder {
    history: VecDeque<u8>,
}

impl Default for ObsBuilder {
    fn default() -> Self {
        ObsBuilder {
            history: std::iter::repeat_n(Action::Noop.id(), HISTORY).collect(),
        }
    }
}

impl ObsBuilder {
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn push_action(&mut self, a: Action) {
        self.history.pop_front();
        self.history.push_back(a.id());
    }

    pub fn observe(&self, state: &GameState, frame: &Frame) -> AgentObservation {
        AgentObservation {
            frame: viewport_gray(frame),
            minimap: minimap(state),
            last_actions: self.history.iter().copied().collect(),
        }
    }
}
