//! Plays a short scripted episode of the toy game and writes frames as PPM files.
//!
//! ```bash
//! cargo run -p neurosim-core --example play_toy_game -- /tmp/frames
//! ```

use std::path::PathBuf;

use neurosim::env::{render, Action, EnvConfig};

fn main() -> neurosim::Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "toy_frames".into()),
    );
    std::fs::create_dir_all(&out)?;
    let mut state = EnvConfig::new("crossroads").reset(7)?;
    let script = [
        (Action::TurnRight, 4),
        (Action::Forward, 30),
        (Action::Fire, 1),
        (Action::Forward, 20),
        (Action::Fire, 4),
        (Action::TurnLeft, 6),
        (Action::StrafeRight, 12),
    ];
    let mut index = 0;
    let mut total = 0.0;
    for (action, repeat) in script {
        for _ in 0..repeat {
            std::fs::write(
                out.join(format!("frame_{index:04}.ppm")),
                render(&state).to_ppm(),
            )?;
            let info = state.step_mut(action);
            total += info.reward;
            index += 1;
            if info.done {
                break;
            }
        }
    }
    println!(
        "wrote {index} frames to {}; reward {total}, health {}, ammo {}",
        out.display(),
        state.health,
        state.ammo
    );
    Ok(())
}
