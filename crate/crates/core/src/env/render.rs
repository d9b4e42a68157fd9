//! Top-down renderer: 64x40 viewport centered on the player with a 90 degree
//! view cone, an 8-row HUD strip and 16 rows of constant padding.

use serde::{Deserialize, Serialize};

use super::map::Tile;
use super::state::{GameState, DIRECTIONS};
use crate::error::{Error, Result};

pub const FRAME_W: usize = 64;
pub const FRAME_H: usize = 64;
pub const VIEW_H: usize = 40;
pub const HUD_Y: usize = 40;
pub const PAD_Y: usize = 48;
/// Rows that carry content (viewport and HUD); metrics ignore the pad below.
pub const CONTENT_H: usize = PAD_Y;
pub const FRAME_BYTES: usize = FRAME_W * FRAME_H * 3;
pub const TILE_PX: i32 = 8;

pub const PAD_COLOR: [u8; 3] = [20, 20, 28];
const HUD_BG: [u8; 3] = [28, 28, 36];
const HEALTH_COLOR: [u8; 3] = [220, 70, 70];
const AMMO_COLOR: [u8; 3] = [230, 200, 70];
const WALL: [u8; 3] = [128, 118, 104];
const DOOR_CLOSED: [u8; 3] = [150, 100, 50];
const DOOR_OPEN: [u8; 3] = [92, 72, 48];
const VOID: [u8; 3] = [0, 0, 0];
const PLAYER: [u8; 3] = [60, 200, 80];
const GUN: [u8; 3] = [230, 230, 230];
const FLASH: [u8; 3] = [255, 240, 120];
const ENEMY: [u8; 3] = [200, 40, 40];
const ENEMY_EYE: [u8; 3] = [40, 0, 0];
const AMMO_ITEM: [u8; 3] = [220, 190, 50];
const HEALTH_ITEM: [u8; 3] = [235, 235, 235];
const ROOM_PALETTE: [[u8; 3]; 9] = [
    [70, 70, 92],
    [92, 76, 60],
    [58, 86, 70],
    [86, 64, 88],
    [96, 92, 58],
    [58, 80, 98],
    [84, 58, 58],
    [62, 96, 96],
    [90, 90, 90],
];

/// x anchors of the three health digits and the three ammo digits.
pub const HEALTH_ANCHORS: [usize; 3] = [4, 8, 12];
pub const AMMO_ANCHORS: [usize; 3] = [48, 52, 56];
pub const DIGIT_Y: usize = 41;

/// 3x5 digit glyphs, one row per byte, bit 2 = leftmost column.
pub const FONT: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b001, 0b001, 0b001],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

/// An RGB24 raster, row-major.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame({}x{})", self.width, self.height)
    }
}

impl Frame {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn blank() -> Self {
        Self::filled(FRAME_W, FRAME_H, [0, 0, 0])
    }

    pub fn from_rgb(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::shape(
                format!("{}x{}x3 bytes", width, height),
                pixels.len(),
            ));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Standard 64x64 frame from raw bytes.
    pub fn from_bytes(pixels: &[u8]) -> Result<Self> {
        Self::from_rgb(FRAME_W, FRAME_H, pixels.to_vec())
    }

    pub fn is_standard(&self) -> bool {
        self.width == FRAME_W && self.height == FRAME_H && self.pixels.len() == FRAME_BYTES
    }

    pub fn ensure_standard(&self) -> Result<()> {
        if self.is_standard() {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{FRAME_W}x{FRAME_H}x3"),
                format!("{}x{}x3", self.width, self.height),
            ))
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn fill_rect(&mut self, x0: i32, y0: i32, w: i32, h: i32, rgb: [u8; 3], clip_h: usize) {
        for y in y0.max(0)..(y0 + h).min(clip_h as i32) {
            for x in x0.max(0)..(x0 + w).min(self.width as i32) {
                self.set(x as usize, y as usize, rgb);
            }
        }
    }

    /// Writes a binary PPM (P6), handy for eyeballing frames.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

#[inline]
fn dim(c: [u8; 3]) -> [u8; 3] {
    [
        (c[0] as u16 * 3 / 8) as u8,
        (c[1] as u16 * 3 / 8) as u8,
        (c[2] as u16 * 3 / 8) as u8,
    ]
}

/// Whether a viewport-relative offset (in half pixels, from the player center) lies in the view cone.
#[inline]
fn in_cone(rx2: i32, ry2: i32, facing: u8) -> bool {
    let (fx, fy) = DIRECTIONS[facing as usize];
    let dot = rx2 * fx + ry2 * fy;
    if dot < 0 {
        return false;
    }
    let r2 = (rx2 * rx2 + ry2 * ry2) as i64;
    let f2 = (fx * fx + fy * fy) as i64;
    2 * (dot as i64) * (dot as i64) >= r2 * f2
}

fn floor_color(room: u8) -> [u8; 3] {
    ROOM_PALETTE[room as usize % ROOM_PALETTE.len()]
}

pub fn draw_digit(frame: &mut Frame, x: usize, y: usize, digit: u8, rgb: [u8; 3]) {
    for (row, bits) in FONT[digit as usize].iter().enumerate() {
        for col in 0..3 {
            if bits >> (2 - col) & 1 == 1 {
                frame.set(x + col, y + row, rgb);
            }
        }
    }
}

fn draw_number(frame: &mut Frame, anchors: &[usize; 3], value: i32, rgb: [u8; 3]) {
    let v = value.clamp(0, 999) as u32;
    let digits = [(v / 100) as u8, (v / 10 % 10) as u8, (v % 10) as u8];
    for (&x, d) in anchors.iter().zip(digits) {
        draw_digit(frame, x, DIGIT_Y, d, rgb);
    }
}

/// Renders the observation for `state`. Pure function of the state.
pub fn render(state: &GameState) -> Frame {
    let mut frame = Frame::filled(FRAME_W, FRAME_H, PAD_COLOR);
    let map = &state.map;
    // Player position in world pixels; the camera keeps it at (32, 20).
    let (ppx, ppy) = (state.player_pos.0 / 2, state.player_pos.1 / 2);
    let (cx, cy) = (FRAME_W as i32 / 2, VIEW_H as i32 / 2);
    let (ox, oy) = (ppx - cx, ppy - cy);

    for vy in 0..VIEW_H as i32 {
        for vx in 0..FRAME_W as i32 {
            let (wx, wy) = (ox + vx, oy + vy);
            let (tx, ty) = (wx.div_euclid(TILE_PX), wy.div_euclid(TILE_PX));
            let base = if !map.in_bounds(tx, ty) {
                VOID
            } else {
                match state.tile(tx, ty) {
                    Tile::Wall => WALL,
                    Tile::DoorClosed => DOOR_CLOSED,
                    Tile::DoorOpen => DOOR_OPEN,
                    Tile::Floor => floor_color(map.room(tx, ty)),
                }
            };
            frame.set(vx as usize, vy as usize, base);
        }
    }

    for (i, (t, kind)) in map.pickups.iter().enumerate() {
        if state.pickups_taken & (1 << i) != 0 {
            continue;
        }
        let (wx, wy) = (t.x as i32 * TILE_PX + 2, t.y as i32 * TILE_PX + 2);
        let color = match kind {
            super::map::PickupKind::Ammo => AMMO_ITEM,
            super::map::PickupKind::Health => HEALTH_ITEM,
        };
        frame.fill_rect(wx - ox, wy - oy, 4, 4, color, VIEW_H);
    }

    // Fog: everything outside the cone is dimmed.
    for vy in 0..VIEW_H as i32 {
        for vx in 0..FRAME_W as i32 {
            if !in_cone(2 * vx + 1 - 2 * cx, 2 * vy + 1 - 2 * cy, state.facing) {
                let c = frame.get(vx as usize, vy as usize);
                frame.set(vx as usize, vy as usize, dim(c));
            }
        }
    }

    // Enemies are only visible inside the cone.
    for e in state.enemies.iter().filter(|e| e.alive) {
        let (ex, ey) = (e.pos.0 / 2 - ox, e.pos.1 / 2 - oy);
        if !in_cone(2 * ex + 1 - 2 * cx, 2 * ey + 1 - 2 * cy, state.facing) {
            continue;
        }
        frame.fill_rect(ex - 3, ey - 3, 6, 6, ENEMY, VIEW_H);
        let (fx, fy) = DIRECTIONS[e.facing as usize];
        frame.fill_rect(ex - 1 + fx * 2, ey - 1 + fy * 2, 2, 2, ENEMY_EYE, VIEW_H);
    }

    frame.fill_rect(cx - 3, cy - 3, 6, 6, PLAYER, VIEW_H);
    let (fx, fy) = DIRECTIONS[state.facing as usize];
    frame.fill_rect(cx - 1 + fx * 4, cy - 1 + fy * 4, 2, 2, GUN, VIEW_H);
    if state.flash {
        frame.fill_rect(cx - 1 + fx * 7, cy - 1 + fy * 7, 2, 2, FLASH, VIEW_H);
    }

    frame.fill_rect(
        0,
        HUD_Y as i32,
        FRAME_W as i32,
        (PAD_Y - HUD_Y) as i32,
        HUD_BG,
        PAD_Y,
    );
    draw_number(&mut frame, &HEALTH_ANCHORS, state.health, HEALTH_COLOR);
    draw_number(&mut frame, &AMMO_ANCHORS, state.ammo, AMMO_COLOR);
    frame
}

/// Reads the three glyphs at the given anchors back as a number, if every glyph matches the font.
pub fn read_number(frame: &Frame, anchors: &[usize; 3]) -> Option<u32> {
    let mut value = 0;
    for &x in anchors {
        let mut rows = [0u8; 5];
        for (r, row) in rows.iter_mut().enumerate() {
            for col in 0..3 {
                if frame.get(x + col, DIGIT_Y + r) != HUD_BG {
                    *row |= 1 << (2 - col);
                }
            }
        }
        let d = FONT.iter().position(|g| *g == rows)?;
        value = value * 10 + d as u32;
    }
    Some(value)
}
