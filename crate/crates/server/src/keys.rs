//! Held-key set to action resolution.
//!
//! Keys are browser `KeyboardEvent.code` strings. When several mapped keys
//! are held, the highest entry in [`PRIORITY`] wins.

use std::collections::BTreeSet;

use neurosim::env::Action;

/// Version of [`PRIORITY`] and [`KEYMAP`].
pub const KEYMAP_VERSION: u32 = 1;

/// Key code to action.
pub const KEYMAP: [(&str, Action); 12] = [
    ("Space", Action::Fire),
    ("ControlLeft", Action::Fire),
    ("ArrowUp", Action::Forward),
    ("KeyW", Action::Forward),
    ("ArrowDown", Action::Backward),
    ("KeyS", Action::Backward),
    ("KeyA", Action::StrafeLeft),
    ("KeyD", Action::StrafeRight),
    ("ArrowLeft", Action::TurnLeft),
    ("KeyQ", Action::TurnLeft),
    ("ArrowRight", Action::TurnRight),
    ("KeyE", Action::TurnRight),
];

/// Fire, then movement, then turning.
pub const PRIORITY: [Action; 7] = [
    Action::Fire,
    Action::Forward,
    Action::Backward,
    Action::StrafeLeft,
    Action::StrafeRight,
    Action::TurnLeft,
    Action::TurnRight,
];

pub fn key_action(code: &str) -> Option<Action> {
    KEYMAP.iter().find(|(k, _)| *k == code).map(|&(_, a)| a)
}

pub fn is_known_key(code: &str) -> bool {
    key_action(code).is_some()
}

/// Resolves the held keys to one action; unmapped keys are ignored.
pub fn held_keys_to_action(held: &BTreeSet<String>) -> Action {
    let actions: BTreeSet<Action> = held.iter().filter_map(|k| key_action(k)).collect();
    PRIORITY
        .into_iter()
        .find(|a| actions.contains(a))
        .unwrap_or(Action::Noop)
}
