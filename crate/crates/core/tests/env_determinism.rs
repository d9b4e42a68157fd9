use neurosim::env::render::{
    read_number, AMMO_ANCHORS, FRAME_BYTES, HEALTH_ANCHORS, PAD_COLOR, PAD_Y,
};
use neurosim::env::state::{check_invariants, RewardLedger};
use neurosim::env::{render, Action, GameMap, GameState};
use neurosim::rng::CounterRng;
use proptest::prelude::*;

fn replay(map: &str, seed: u64, actions: &[u8]) -> (Vec<Vec<u8>>, Vec<f32>, RewardLedger) {
    let mut s = GameState::reset(GameMap::shipped(map).unwrap(), seed);
    let mut frames = vec![render(&s).pixels];
    let mut rewards = Vec::new();
    let mut ledger = RewardLedger::default();
    for &a in actions {
        let info = s.step_mut(Action::from_id(a).unwrap());
        ledger.accumulate(&info.ledger);
        rewards.push(info.reward);
        frames.push(render(&s).pixels);
        check_invariants(&s).unwrap();
        if info.done {
            break;
        }
    }
    (frames, rewards, ledger)
}

#[test]
fn render_contract() {
    let s = GameState::reset(GameMap::shipped("pillars").unwrap(), 3);
    let f = render(&s);
    assert_eq!(f.pixels.len(), FRAME_BYTES);
    assert_eq!(f, render(&s));
    for y in PAD_Y..64 {
        for x in 0..64 {
            assert_eq!(f.get(x, y), PAD_COLOR);
        }
    }
    assert_eq!(read_number(&f, &HEALTH_ANCHORS), Some(100));
    assert_eq!(read_number(&f, &AMMO_ANCHORS), Some(30));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn replays_are_bit_exact(seed in any::<u64>(), actions in prop::collection::vec(0u8..8, 0..300), map in 0usize..3) {
        let name = GameMap::shipped_names().nth(map).unwrap();
        let a = replay(name, seed, &actions);
        let b = replay(name, seed, &actions);
        prop_assert_eq!(&a.0, &b.0);
        prop_assert_eq!(&a.1, &b.1);
        let total: f64 = a.1.iter().map(|&r| r as f64).sum();
        prop_assert_eq!(total, a.2.total() as f64);
    }

    #[test]
    fn hud_always_shows_state(seed in any::<u64>(), actions in prop::collection::vec(0u8..8, 1..200)) {
        let mut s = GameState::reset(GameMap::shipped("crossroads").unwrap(), seed);
        for &a in &actions {
            let (health0, ammo0) = (s.health, s.ammo);
            let info = s.step_mut(Action::from_id(a).unwrap());
            let f = render(&s);
            prop_assert_eq!(read_number(&f, &HEALTH_ANCHORS), Some(s.health as u32));
            prop_assert_eq!(read_number(&f, &AMMO_ANCHORS), Some(s.ammo as u32));
            // Conservation: increases only come with a pickup.
            if s.ammo > ammo0 || s.health > health0 {
                prop_assert!(info.ledger.pickup > 0);
            }
            if info.done { break; }
        }
    }
}

#[test]
fn random_seeds_and_actions_replay_identically() {
    let mut rng = CounterRng::new(99);
    for i in 0..20 {
        let actions: Vec<u8> = (0..500).map(|_| rng.below(8) as u8).collect();
        let name = GameMap::shipped_names().nth(i % 3).unwrap();
        let seed = rng.next_u64();
        assert_eq!(replay(name, seed, &actions), replay(name, seed, &actions));
    }
}
