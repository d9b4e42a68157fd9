//! Sliding window of past latents and actions conditioning the denoiser.
//!
//! `actions[j]` is the action taken while `latents[j]` was on screen, so the
//! newest action is the one whose outcome is predicted next. A rollout step
//! sets it with [`ContextBuffer::set_newest_action`], samples, then pushes the
//! new latent with a noop placeholder.

use std::collections::VecDeque;

use crate::autoencoder::{LatentFrame, Provenance};
use crate::env::Action;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ContextBuffer {
    latents: VecDeque<LatentFrame>,
    actions: VecDeque<Action>,
    /// Set once autoregressive generation starts; from then on only
    /// generated latents may enter.
    autoregressive: bool,
}

impl ContextBuffer {
    /// Builds a buffer from `N` encoded latents (oldest first) and their actions.
    pub fn new(latents: Vec<LatentFrame>, actions: Vec<Action>) -> Result<Self> {
        if latents.is_empty() || latents.len() != actions.len() {
            return Err(Error::shape(
                format!("{} actions (one per latent, at least one)", latents.len()),
                actions.len(),
            ));
        }
        Ok(ContextBuffer {
            latents: latents.into(),
            actions: actions.into(),
            autoregressive: false,
        })
    }

    /// `n` copies of one latent with noop actions.
    pub fn replicated(latent: LatentFrame, n: usize) -> Result<Self> {
        Self::new(vec![latent; n], vec![Action::Noop; n])
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn latents(&self) -> impl Iterator<Item = &LatentFrame> {
        self.latents.iter()
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.actions.iter().copied()
    }

    pub fn newest(&self) -> &LatentFrame {
        self.latents.back().expect("buffer is never empty")
    }

    pub fn is_autoregressive(&self) -> bool {
        self.autoregressive
    }

    /// Switches to autoregressive mode.
    pub fn seal(&mut self) {
        self.autoregressive = true;
    }

    /// Sets the action applied to the newest latent.
    pub fn set_newest_action(&mut self, action: Action) {
        *self.actions.back_mut().expect("buffer is never empty") = action;
    }

    /// Drops the oldest entry and appends `(latent, action)`.
    ///
    /// In autoregressive mode only [`Provenance::Generated`] latents are
    /// accepted, so decoded frames are never re-encoded into the context.
    pub fn push(&mut self, latent: LatentFrame, action: Action) -> Result<()> {
        if self.autoregressive && latent.provenance != Provenance::Generated {
            return Err(Error::Config(
                "autoregressive context only accepts generated latents".into(),
            ));
        }
        self.latents.pop_front();
        self.actions.pop_front();
        self.latents.push_back(latent);
        self.actions.push_back(action);
        Ok(())
    }

    /// Flattened values `(N * 256)` oldest first, and action ids.
    pub fn flat(&self) -> (Vec<f32>, Vec<i64>) {
        (
            self.latents
                .iter()
                .flat_map(|l| l.values.iter().copied())
                .collect(),
            self.actions.iter().map(|a| a.id() as i64).collect(),
        )
    }
}
