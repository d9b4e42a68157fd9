//! Tile maps in the plain-text `toymap v1` format.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAP_SIZE: usize = 24;
pub const MAP_HEADER: &str = "toymap v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tile {
    Floor,
    Wall,
    DoorClosed,
    DoorOpen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PickupKind {
    Ammo,
    Health,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileCoord {
    pub x: u8,
    pub y: u8,
}

impl TileCoord {
    pub const fn new(x: u8, y: u8) -> Self {
        Self { x, y }
    }

    pub fn l1(self, other: TileCoord) -> u32 {
        (self.x as i32 - other.x as i32).unsigned_abs()
            + (self.y as i32 - other.y as i32).unsigned_abs()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameMap {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub tiles: Vec<Tile>,
    pub spawn: TileCoord,
    pub pickups: Vec<(TileCoord, PickupKind)>,
    pub enemy_spawns: Vec<TileCoord>,
    /// Connected floor region of each tile; walls and doors carry `u8::MAX`.
    pub rooms: Vec<u8>,
}

const SHIPPED: [(&str, &str); 3] = [
    ("crossroads", include_str!("../../maps/crossroads.txt")),
    ("pillars", include_str!("../../maps/pillars.txt")),
    ("westwing", include_str!("../../maps/westwing.txt")),
];

impl GameMap {
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next().map(str::trim_end) {
            Some(MAP_HEADER) => {}
            other => {
                return Err(Error::Map(format!(
                    "expected header `{MAP_HEADER}`, got {other:?}"
                )))
            }
        }
        let rows: Vec<&str> = lines.map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if rows.len() != MAP_SIZE {
            return Err(Error::Map(format!(
                "expected {MAP_SIZE} rows, got {}",
                rows.len()
            )));
        }
        let mut tiles = Vec::with_capacity(MAP_SIZE * MAP_SIZE);
        let mut spawn = None;
        let mut pickups = Vec::new();
        let mut enemy_spawns = Vec::new();
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != MAP_SIZE {
                return Err(Error::Map(format!(
                    "row {y} has {} columns",
                    row.chars().count()
                )));
            }
            for (x, ch) in row.chars().enumerate() {
                let at = TileCoord::new(x as u8, y as u8);
                let tile = match ch {
                    '#' => Tile::Wall,
                    '.' => Tile::Floor,
                    'D' => Tile::DoorClosed,
                    'P' => {
                        if spawn.replace(at).is_some() {
                            return Err(Error::Map("more than one spawn tile".into()));
                        }
                        Tile::Floor
                    }
                    'A' => {
                        pickups.push((at, PickupKind::Ammo));
                        Tile::Floor
                    }
                    'H' => {
                        pickups.push((at, PickupKind::Health));
                        Tile::Floor
                    }
                    'E' => {
                        enemy_spawns.push(at);
                        Tile::Floor
                    }
                    other => {
                        return Err(Error::Map(format!(
                            "unknown tile char {other:?} at ({x},{y})"
                        )))
                    }
                };
                tiles.push(tile);
            }
        }
        let spawn = spawn.ok_or_else(|| Error::Map("no spawn tile".into()))?;
        if pickups.len() > 32 {
            return Err(Error::Map("at most 32 pickups are supported".into()));
        }
        for i in 0..MAP_SIZE {
            for (x, y) in [(i, 0), (i, MAP_SIZE - 1), (0, i), (MAP_SIZE - 1, i)] {
                if tiles[y * MAP_SIZE + x] != Tile::Wall {
                    return Err(Error::Map(format!("boundary tile ({x},{y}) is not a wall")));
                }
            }
        }
        let rooms = label_rooms(&tiles);
        Ok(Self {
            name: name.to_string(),
            width: MAP_SIZE,
            height: MAP_SIZE,
            tiles,
            spawn,
            pickups,
            enemy_spawns,
            rooms,
        })
    }

    /// Serializes back to the text format.
    pub fn to_text(&self) -> String {
        let mut out = String::from(MAP_HEADER);
        out.push('\n');
        for y in 0..self.height {
            for x in 0..self.width {
                let at = TileCoord::new(x as u8, y as u8);
                let ch = if at == self.spawn {
                    'P'
                } else if let Some((_, kind)) = self.pickups.iter().find(|(p, _)| *p == at) {
                    match kind {
                        PickupKind::Ammo => 'A',
                        PickupKind::Health => 'H',
                    }
                } else if self.enemy_spawns.contains(&at) {
                    'E'
                } else {
                    match self.tiles[y * self.width + x] {
                        Tile::Wall => '#',
                        Tile::Floor => '.',
                        Tile::DoorClosed | Tile::DoorOpen => 'D',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    pub fn shipped_names() -> impl Iterator<Item = &'static str> {
        SHIPPED.iter().map(|(n, _)| *n)
    }

    pub fn shipped(name: &str) -> Result<Arc<Self>> {
        let (n, text) = SHIPPED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Map(format!("no shipped map named {name:?}")))?;
        Self::parse(n, text).map(Arc::new)
    }

    pub fn all_shipped() -> Vec<Arc<Self>> {
        SHIPPED
            .iter()
            .map(|(n, t)| Arc::new(Self::parse(n, t).expect("shipped maps are valid")))
            .collect()
    }

    #[inline]
    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Base tile (door state as authored). Out-of-bounds reads as wall.
    #[inline]
    pub fn tile(&self, x: i32, y: i32) -> Tile {
        if self.in_bounds(x, y) {
            self.tiles[y as usize * self.width + x as usize]
        } else {
            Tile::Wall
        }
    }

    #[inline]
    pub fn room(&self, x: i32, y: i32) -> u8 {
        if self.in_bounds(x, y) {
            self.rooms[y as usize * self.width + x as usize]
        } else {
            u8::MAX
        }
    }

    pub fn floor_tiles(&self) -> impl Iterator<Item = TileCoord> + '_ {
        (0..self.height).flat_map(move |y| {
            (0..self.width).filter_map(move |x| {
                (self.tiles[y * self.width + x] == Tile::Floor)
                    .then_some(TileCoord::new(x as u8, y as u8))
            })
        })
    }
}

fn label_rooms(tiles: &[Tile]) -> Vec<u8> {
    let mut rooms = vec![u8::MAX; tiles.len()];
    let mut next = 0u8;
    for start in 0..tiles.len() {
        if tiles[start] != Tile::Floor || rooms[start] != u8::MAX {
            continue;
        }
        let mut stack = vec![start];
        rooms[start] = next;
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % MAP_SIZE) as i32, (i / MAP_SIZE) as i32);
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= MAP_SIZE as i32 || ny >= MAP_SIZE as i32 {
                    continue;
                }
                let j = ny as usize * MAP_SIZE + nx as usize;
                if tiles[j] == Tile::Floor && rooms[j] == u8::MAX {
                    rooms[j] = next;
                    stack.push(j);
                }
            }
        }
        next = next.saturating_add(1).min(u8::MAX - 1);
    }
    rooms
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_maps_parse_and_hold_invariants() {
        for map in GameMap::all_shipped() {
            assert_eq!(map.tiles.len(), MAP_SIZE * MAP_SIZE);
            assert_eq!(
                map.tile(map.spawn.x as i32, map.spawn.y as i32),
                Tile::Floor
            );
            for (p, _) in &map.pickups {
                assert_eq!(map.tile(p.x as i32, p.y as i32), Tile::Floor);
            }
            for e in &map.enemy_spawns {
                assert_eq!(map.tile(e.x as i32, e.y as i32), Tile::Floor);
            }
            assert!(map.rooms.iter().filter(|&&r| r != u8::MAX).count() > 200);
        }
    }

    #[test]
    fn text_round_trip() {
        for map in GameMap::all_shipped() {
            let again = GameMap::parse(&map.name, &map.to_text()).unwrap();
            assert_eq!(*map, again);
        }
    }

    #[test]
    fn rejects_bad_header_and_open_boundary() {
        assert!(GameMap::parse("x", "toymap v2\n").is_err());
        let map = GameMap::shipped("crossroads").unwrap();
        let text =
            map.to_text()
                .replacen("########################", "#######.################", 1);
        assert!(matches!(GameMap::parse("x", &text), Err(Error::Map(_))));
    }

    #[test]
    fn doors_separate_rooms() {
        let map = GameMap::shipped("crossroads").unwrap();
        let spawn_room = map.room(12, 12);
        assert_ne!(spawn_room, map.room(4, 4));
        assert_eq!(map.room(8, 12), u8::MAX);
    }
}
