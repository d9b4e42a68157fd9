//! Game state and the fixed-point transition function.
//!
//! Positions are integers in sixteenths of a tile. Nothing in `step` touches
//! floating point, so a replay of `(seed, actions)` is bit-exact on any target.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::map::{GameMap, PickupKind, Tile, TileCoord};
use super::Action;
use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Fixed-point units per tile.
pub const SUB: i32 = 16;
pub const MAX_HEALTH: i32 = 100;
pub const MAX_AMMO: i32 = 50;
pub const START_AMMO: i32 = 30;
pub const ENEMY_MAX_HP: i32 = 40;
pub const EPISODE_CAP: u32 = 1000;

const PLAYER_RADIUS: i32 = 5;
const ENEMY_RADIUS: i32 = 5;
const ACCEL: i32 = 2;
const MAX_SPEED: i32 = 4;
const FRICTION: i32 = 1;
const TURN_TICKS: u8 = 2;
const ENEMY_SPEED: i32 = 2;
const ENEMY_SIGHT: i32 = 7 * SUB;
const CONTACT: i32 = 12;
const ENEMY_DAMAGE: i32 = 10;
const FIRE_RANGE: i32 = 6 * SUB;
const FIRE_COOLDOWN: u8 = 4;
const HIT_RADIUS: i32 = 6;
const SHOT_DAMAGE: i32 = 20;
const HEALTH_PICKUP: i32 = 25;
const AMMO_PICKUP: i32 = 5;

/// Compass directions, clockwise from north. Screen y grows downward.
pub const DIRECTIONS: [(i32, i32); 8] = [
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
];

/// Bit grid over map tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TileSet {
    rows: [u32; 24],
}

impl TileSet {
    pub fn contains(&self, t: TileCoord) -> bool {
        (t.y as usize) < 24 && (self.rows[t.y as usize] >> t.x) & 1 == 1
    }

    /// Returns true when the tile was newly inserted.
    pub fn insert(&mut self, t: TileCoord) -> bool {
        let had = self.contains(t);
        self.rows[t.y as usize] |= 1 << t.x;
        !had
    }

    pub fn len(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = TileCoord> + '_ {
        (0..24u8)
            .flat_map(move |y| (0..24u8).map(move |x| TileCoord::new(x, y)))
            .filter(|t| self.contains(*t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Enemy {
    pub pos: (i32, i32),
    pub facing: u8,
    pub hp: i32,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    pub map: Arc<GameMap>,
    pub player_pos: (i32, i32),
    pub velocity: (i32, i32),
    pub facing: u8,
    pub turn_phase: u8,
    pub health: i32,
    pub ammo: i32,
    pub fire_cooldown: u8,
    /// Set on ticks where a shot left the barrel; drives the muzzle flash sprite.
    pub flash: bool,
    pub enemies: Vec<Enemy>,
    pub doors_open: TileSet,
    pub visited: TileSet,
    pub pickups_taken: u32,
    pub tick: u32,
    pub episode_cap: u32,
    pub rng: CounterRng,
}

/// Per-term reward accumulator. Every term is integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RewardLedger {
    pub player_hit: i64,
    pub player_death: i64,
    pub enemy_hit: i64,
    pub enemy_kill: i64,
    pub pickup: i64,
    pub new_tile: i64,
    pub health_delta: i64,
    pub ammo_delta: i64,
}

impl RewardLedger {
    pub fn total(&self) -> i64 {
        self.player_hit
            + self.player_death
            + self.enemy_hit
            + self.enemy_kill
            + self.pickup
            + self.new_tile
            + self.health_delta
            + self.ammo_delta
    }

    pub fn accumulate(&mut self, o: &RewardLedger) {
        self.player_hit += o.player_hit;
        self.player_death += o.player_death;
        self.enemy_hit += o.enemy_hit;
        self.enemy_kill += o.enemy_kill;
        self.pickup += o.pickup;
        self.new_tile += o.new_tile;
        self.health_delta += o.health_delta;
        self.ammo_delta += o.ammo_delta;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub reward: f32,
    pub done: bool,
    pub ledger: RewardLedger,
}

pub fn tile_of(pos: (i32, i32)) -> TileCoord {
    TileCoord::new(pos.0.div_euclid(SUB) as u8, pos.1.div_euclid(SUB) as u8)
}

fn tile_center(t: TileCoord) -> (i32, i32) {
    (t.x as i32 * SUB + SUB / 2, t.y as i32 * SUB + SUB / 2)
}

impl GameState {
    /// Initial state at the map's spawn.
    pub fn reset(map: Arc<GameMap>, seed: u64) -> Self {
        let spawn = map.spawn;
        Self::reset_at(map, seed, spawn)
    }

    /// Initial state with the player placed on `start` (must be a floor tile).
    pub fn reset_at(map: Arc<GameMap>, seed: u64, start: TileCoord) -> Self {
        let enemies = map
            .enemy_spawns
            .iter()
            .map(|&t| Enemy {
                pos: tile_center(t),
                facing: 4,
                hp: ENEMY_MAX_HP,
                alive: true,
            })
            .collect();
        let mut visited = TileSet::default();
        visited.insert(start);
        Self {
            player_pos: tile_center(start),
            velocity: (0, 0),
            facing: 0,
            turn_phase: 0,
            health: MAX_HEALTH,
            ammo: START_AMMO,
            fire_cooldown: 0,
            flash: false,
            enemies,
            doors_open: TileSet::default(),
            visited,
            pickups_taken: 0,
            tick: 0,
            episode_cap: EPISODE_CAP,
            rng: CounterRng::new(seed),
            map,
        }
    }

    /// Picks a uniformly random floor start tile from `seed`, away from enemy spawns.
    pub fn reset_random_start(map: Arc<GameMap>, seed: u64) -> Self {
        let mut rng = CounterRng::new(seed ^ 0x5157_A127);
        let candidates: Vec<TileCoord> = map
            .floor_tiles()
            .filter(|t| map.enemy_spawns.iter().all(|e| e.l1(*t) > 3))
            .collect();
        let start = candidates[rng.below(candidates.len() as u32) as usize];
        Self::reset_at(map, seed, start)
    }

    pub fn player_tile(&self) -> TileCoord {
        tile_of(self.player_pos)
    }

    /// Effective tile type with door state applied.
    pub fn tile(&self, x: i32, y: i32) -> Tile {
        match self.map.tile(x, y) {
            Tile::DoorClosed if self.doors_open.contains(TileCoord::new(x as u8, y as u8)) => {
                Tile::DoorOpen
            }
            t => t,
        }
    }

    fn solid(&self, x: i32, y: i32) -> bool {
        matches!(self.tile(x, y), Tile::Wall | Tile::DoorClosed)
    }

    /// Tiles overlapped by a square body of half-size `r` centered at `pos`.
    fn overlapped(pos: (i32, i32), r: i32) -> impl Iterator<Item = (i32, i32)> {
        let (x0, x1) = ((pos.0 - r).div_euclid(SUB), (pos.0 + r).div_euclid(SUB));
        let (y0, y1) = ((pos.1 - r).div_euclid(SUB), (pos.1 + r).div_euclid(SUB));
        (y0..=y1).flat_map(move |y| (x0..=x1).map(move |x| (x, y)))
    }

    fn blocked(&self, pos: (i32, i32), r: i32) -> bool {
        Self::overlapped(pos, r).any(|(x, y)| self.solid(x, y))
    }

    pub fn alive_enemies(&self) -> usize {
        self.enemies.iter().filter(|e| e.alive).count()
    }

    pub fn is_terminal(&self) -> bool {
        self.health == 0 || self.alive_enemies() == 0 || self.tick >= self.episode_cap
    }

    /// Tile-level line of sight (closed doors and walls block).
    pub fn line_of_sight(&self, from: TileCoord, to: TileCoord) -> bool {
        let (mut x, mut y) = (from.x as i32, from.y as i32);
        let (x1, y1) = (to.x as i32, to.y as i32);
        let (dx, dy) = ((x1 - x).abs(), -(y1 - y).abs());
        let (sx, sy) = (if x < x1 { 1 } else { -1 }, if y < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            if (x, y) != (from.x as i32, from.y as i32) && (x, y) != (x1, y1) && self.solid(x, y) {
                return false;
            }
            if x == x1 && y == y1 {
                return true;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Applies one tick. Returns the reward terms and terminal flag.
    pub fn step_mut(&mut self, action: Action) -> StepInfo {
        let mut ledger = RewardLedger::default();
        let (health0, ammo0) = (self.health, self.ammo);
        self.flash = false;

        // Turning is slowed by a phase counter: two consecutive turn ticks per 45 degrees.
        match action {
            Action::TurnLeft | Action::TurnRight => {
                self.turn_phase += 1;
                if self.turn_phase >= TURN_TICKS {
                    self.turn_phase = 0;
                    self.facing = if action == Action::TurnLeft {
                        (self.facing + 7) % 8
                    } else {
                        (self.facing + 1) % 8
                    };
                }
            }
            _ => self.turn_phase = 0,
        }

        let thrust = match action {
            Action::Forward => DIRECTIONS[self.facing as usize],
            Action::Backward => {
                let (x, y) = DIRECTIONS[self.facing as usize];
                (-x, -y)
            }
            Action::StrafeLeft => DIRECTIONS[((self.facing + 6) % 8) as usize],
            Action::StrafeRight => DIRECTIONS[((self.facing + 2) % 8) as usize],
            _ => (0, 0),
        };
        self.velocity.0 = accelerate(self.velocity.0, thrust.0);
        self.velocity.1 = accelerate(self.velocity.1, thrust.1);
        self.move_player();

        if action == Action::Fire && self.fire_cooldown == 0 && self.ammo > 0 {
            self.ammo -= 1;
            self.fire_cooldown = FIRE_COOLDOWN;
            self.flash = true;
            self.shoot(&mut ledger);
        }

        let here = self.player_tile();
        for (i, (t, kind)) in self.map.pickups.iter().enumerate() {
            if *t == here && self.pickups_taken & (1 << i) == 0 {
                self.pickups_taken |= 1 << i;
                ledger.pickup += 100;
                match kind {
                    PickupKind::Health => {
                        self.health = (self.health + HEALTH_PICKUP).min(MAX_HEALTH)
                    }
                    PickupKind::Ammo => self.ammo = (self.ammo + AMMO_PICKUP).min(MAX_AMMO),
                }
            }
        }

        if self.visited.insert(here) {
            ledger.new_tile += 20 + 10 * here.l1(self.map.spawn) as i64;
        }

        self.enemies_act(&mut ledger);

        if health0 > 0 && self.health == 0 {
            ledger.player_death -= 5000;
        }
        ledger.health_delta += 10 * (self.health - health0) as i64;
        let d_ammo = (self.ammo - ammo0) as i64;
        ledger.ammo_delta += 10 * d_ammo.max(0) + d_ammo.min(0);

        self.tick += 1;
        self.fire_cooldown = self.fire_cooldown.saturating_sub(1);
        StepInfo {
            reward: ledger.total() as f32,
            done: self.is_terminal(),
            ledger,
        }
    }

    /// Pure transition: `(state, action) -> (state', info)`.
    pub fn step(&self, action: Action) -> (GameState, StepInfo) {
        let mut next = self.clone();
        let info = next.step_mut(action);
        (next, info)
    }

    /// Like [`step`](Self::step) but validates a raw action id.
    pub fn step_id(&self, action_id: u8) -> Result<(GameState, StepInfo)> {
        let action = Action::from_id(action_id)?;
        Ok(self.step(action))
    }

    fn move_player(&mut self) {
        for axis in 0..2 {
            let v = if axis == 0 {
                self.velocity.0
            } else {
                self.velocity.1
            };
            if v == 0 {
                continue;
            }
            let mut next = self.player_pos;
            if axis == 0 {
                next.0 += v;
            } else {
                next.1 += v;
            }
            if self.blocked(next, PLAYER_RADIUS) {
                let doors: Vec<(i32, i32)> = Self::overlapped(next, PLAYER_RADIUS)
                    .filter(|&(x, y)| self.tile(x, y) == Tile::DoorClosed)
                    .collect();
                for (x, y) in doors {
                    self.doors_open.insert(TileCoord::new(x as u8, y as u8));
                }
                if axis == 0 {
                    self.velocity.0 = 0;
                } else {
                    self.velocity.1 = 0;
                }
            } else {
                self.player_pos = next;
            }
        }
    }

    fn shoot(&mut self, ledger: &mut RewardLedger) {
        let (dx, dy) = DIRECTIONS[self.facing as usize];
        let (px, py) = self.player_pos;
        for s in 1..=FIRE_RANGE {
            let (x, y) = (px + dx * s, py + dy * s);
            if self.solid(x.div_euclid(SUB), y.div_euclid(SUB)) {
                return;
            }
            if let Some(e) = self.enemies.iter_mut().find(|e| {
                e.alive && (e.pos.0 - x).abs() <= HIT_RADIUS && (e.pos.1 - y).abs() <= HIT_RADIUS
            }) {
                e.hp = (e.hp - SHOT_DAMAGE).max(0);
                ledger.enemy_hit += 300;
                if e.hp == 0 {
                    e.alive = false;
                    ledger.enemy_kill += 1000;
                }
                return;
            }
        }
    }

    fn enemies_act(&mut self, ledger: &mut RewardLedger) {
        let player = self.player_pos;
        let player_tile = self.player_tile();
        for i in 0..self.enemies.len() {
            let e = self.enemies[i];
            if !e.alive {
                continue;
            }
            let (dx, dy) = (player.0 - e.pos.0, player.1 - e.pos.1);
            if dx.abs().max(dy.abs()) <= CONTACT {
                self.enemies[i].facing = direction_towards(dx, dy);
                if self.health > 0 {
                    self.health = (self.health - ENEMY_DAMAGE).max(0);
                    ledger.player_hit -= 100;
                }
                continue;
            }
            let sees = dx * dx + dy * dy <= ENEMY_SIGHT * ENEMY_SIGHT
                && self.line_of_sight(tile_of(e.pos), player_tile);
            if sees {
                let mut pos = e.pos;
                let step_x = dx.signum() * dx.abs().min(ENEMY_SPEED);
                let step_y = dy.signum() * dy.abs().min(ENEMY_SPEED);
                if !self.blocked((pos.0 + step_x, pos.1), ENEMY_RADIUS) {
                    pos.0 += step_x;
                }
                if !self.blocked((pos.0, pos.1 + step_y), ENEMY_RADIUS) {
                    pos.1 += step_y;
                }
                self.enemies[i].pos = pos;
                self.enemies[i].facing = direction_towards(dx, dy);
            } else if self.rng.below(16) == 0 {
                self.enemies[i].facing = self.rng.below(8) as u8;
            }
        }
    }
}

fn accelerate(v: i32, thrust: i32) -> i32 {
    if thrust != 0 {
        (v + thrust * ACCEL).clamp(-MAX_SPEED, MAX_SPEED)
    } else if v > 0 {
        (v - FRICTION).max(0)
    } else {
        (v + FRICTION).min(0)
    }
}

fn direction_towards(dx: i32, dy: i32) -> u8 {
    // Sign pattern of the dominant axes; ties between axes count as diagonal.
    let sx = if dx.abs() * 2 >= dy.abs() {
        dx.signum()
    } else {
        0
    };
    let sy = if dy.abs() * 2 >= dx.abs() {
        dy.signum()
    } else {
        0
    };
    DIRECTIONS.iter().position(|&d| d == (sx, sy)).unwrap_or(4) as u8
}

/// Validates the structural invariants of a state.
pub fn check_invariants(s: &GameState) -> Result<()> {
    let bad = |msg: String| Err(Error::range("game state", msg));
    if !(0..=MAX_HEALTH).contains(&s.health) {
        return bad(format!("health {}", s.health));
    }
    if !(0..=MAX_AMMO).contains(&s.ammo) {
        return bad(format!("ammo {}", s.ammo));
    }
    let pt = s.player_tile();
    if matches!(
        s.tile(pt.x as i32, pt.y as i32),
        Tile::Wall | Tile::DoorClosed
    ) {
        return bad(format!("player inside solid tile {pt:?}"));
    }
    for e in s.enemies.iter().filter(|e| e.alive) {
        if !(0..=ENEMY_MAX_HP).contains(&e.hp) {
            return bad(format!("enemy hp {}", e.hp));
        }
        let t = tile_of(e.pos);
        if matches!(
            s.tile(t.x as i32, t.y as i32),
            Tile::Wall | Tile::DoorClosed
        ) {
            return bad(format!("enemy inside solid tile {t:?}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GameMap;

    fn fresh() -> GameState {
        GameState::reset(GameMap::shipped("crossroads").unwrap(), 7)
    }

    #[test]
    fn reset_is_deterministic_and_initialized() {
        assert_eq!(fresh(), fresh());
        let s = GameState::reset(GameMap::shipped("crossroads").unwrap(), 0);
        assert_eq!((s.health, s.ammo, s.tick), (100, 30, 0));
        assert!(s.enemies.iter().all(|e| e.hp == 40 && e.alive));
        assert_eq!(s.visited.len(), 1);
        assert!(s.visited.contains(s.map.spawn));
        let map = GameMap::shipped("crossroads").unwrap();
        assert_ne!(
            GameState::reset(map.clone(), 1).rng,
            GameState::reset(map, 2).rng
        );
    }

    #[test]
    fn forward_into_wall_does_not_move() {
        let mut s = fresh();
        // Park the player against the north wall of the top-middle room, facing north.
        s.player_pos = (12 * SUB + 8, SUB + PLAYER_RADIUS);
        s.visited.insert(s.player_tile());
        let before = s.player_pos;
        let (next, info) = s.step(Action::Forward);
        assert_eq!(next.player_pos, before);
        assert_eq!(info.ledger.new_tile, 0);
    }

    #[test]
    fn fire_hits_enemy_on_ray() {
        let mut s = fresh();
        s.facing = 2;
        s.enemies[0].pos = (s.player_pos.0 + 3 * SUB, s.player_pos.1);
        let (next, info) = s.step(Action::Fire);
        assert_eq!(next.enemies[0].hp, 20);
        assert_eq!(info.ledger.enemy_hit, 300);
        assert_eq!(info.ledger.ammo_delta, -1);
        assert_eq!(next.ammo, 29);
    }

    #[test]
    fn ammo_pickup_rewards() {
        let mut s = fresh();
        let (i, (tile, _)) = s
            .map
            .pickups
            .iter()
            .enumerate()
            .find(|(_, (_, k))| *k == PickupKind::Ammo)
            .map(|(i, p)| (i, *p))
            .unwrap();
        s.player_pos = tile_center(tile);
        s.visited.insert(tile);
        let (next, info) = s.step(Action::Noop);
        assert_eq!(next.ammo, 35);
        assert_eq!(next.pickups_taken, 1 << i);
        assert_eq!(info.ledger.pickup + info.ledger.ammo_delta, 150);
    }

    #[test]
    fn fire_without_ammo_only_ticks() {
        let mut s = fresh();
        s.ammo = 0;
        // Only the tick advances (plus idle enemy behaviour, which a noop shares).
        let (next, info) = s.step(Action::Fire);
        let (idle, _) = s.step(Action::Noop);
        assert_eq!(next, idle);
        assert_eq!(next.tick, s.tick + 1);
        assert!(!next.flash);
        assert_eq!(
            (next.ammo, next.player_pos, next.health),
            (0, s.player_pos, s.health)
        );
        assert_eq!(info.reward, 0.0);
    }

    #[test]
    fn invalid_action_rejected() {
        assert!(matches!(fresh().step_id(8), Err(Error::Range { .. })));
    }

    #[test]
    fn bumping_a_door_opens_it() {
        let mut s = fresh();
        // Walk east from spawn toward the door at (16, 12).
        s.facing = 2;
        let mut opened = false;
        for _ in 0..60 {
            s.step_mut(Action::Forward);
            if s.doors_open.contains(TileCoord::new(16, 12)) {
                opened = true;
                break;
            }
        }
        assert!(opened);
        for _ in 0..20 {
            s.step_mut(Action::Forward);
        }
        assert!(s.player_tile().x >= 16);
    }

    #[test]
    fn scripted_path_kills_an_enemy_quickly() {
        // Walk east through the door and shoot the enemy in the east room.
        let mut s = fresh();
        s.facing = 2;
        let mut ledger = RewardLedger::default();
        let mut killed_at = None;
        for t in 0..500 {
            let a = if t % 3 == 0 {
                Action::Fire
            } else {
                Action::Forward
            };
            let info = s.step_mut(a);
            ledger.accumulate(&info.ledger);
            if s.enemies.iter().any(|e| !e.alive) {
                killed_at = Some(t);
                break;
            }
            if info.done {
                break;
            }
        }
        assert!(killed_at.is_some(), "no kill; ledger {ledger:?}");
        assert!(ledger.enemy_kill >= 1000);
    }

    #[test]
    fn line_of_sight_blocked_by_walls() {
        let s = fresh();
        assert!(s.line_of_sight(TileCoord::new(10, 12), TileCoord::new(14, 12)));
        assert!(!s.line_of_sight(TileCoord::new(12, 12), TileCoord::new(12, 4)));
    }
}
