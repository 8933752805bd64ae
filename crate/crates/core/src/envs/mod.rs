//! MiniCatch: a 16×16 single-channel paddle-ball game, plus a family of
//! visual/control variants of it (recolors, frozen noise, flips, zoom)
//! with known overlap structure between tasks.
//!
//! The ball falls from the top row at a seeded column with a horizontal
//! drift that reflects off the walls; the paddle (width 3, bottom row)
//! moves one cell per tick. Catching scores +1 and ends the episode
//! (configurable), missing scores −1. Because fall speeds vary, a minority
//! of episodes are provably uncatchable, which keeps the exhaustive-oracle
//! normalizer strictly below 1 on average.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::net::gaussian;
use crate::seeds;
use crate::tensor::Tensor;

pub const GRID: usize = 16;
const PADDLE_ROW: usize = GRID - 1;
const PADDLE_MIN: i32 = 1;
const PADDLE_MAX: i32 = (GRID as i32) - 2;
const PADDLE_START: i32 = 8;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeOver,
    #[error("unknown action {action} (have {n_actions})")]
    UnknownAction { action: usize, n_actions: usize },
    #[error("unknown task name {0:?}")]
    UnknownTask(String),
}

/// Common surface for anything the trainer can roll out against.
pub trait Environment {
    fn obs_shape(&self) -> Vec<usize>;
    fn n_actions(&self) -> usize;
    fn reset(&mut self, episode_seed: u64) -> Tensor;
    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError>;
}

pub struct StepOutcome {
    pub obs: Tensor,
    pub reward: f64,
    pub done: bool,
}

// ── Variants ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariantKind {
    Base,
    Noisy,
    Black,
    White,
    HFlip,
    VFlip,
    HVFlip,
    Zoom,
}

impl VariantKind {
    pub const ALL: [VariantKind; 8] = [
        VariantKind::Base,
        VariantKind::Noisy,
        VariantKind::Black,
        VariantKind::White,
        VariantKind::HFlip,
        VariantKind::VFlip,
        VariantKind::HVFlip,
        VariantKind::Zoom,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            VariantKind::Base => "base",
            VariantKind::Noisy => "noisy",
            VariantKind::Black => "black",
            VariantKind::White => "white",
            VariantKind::HFlip => "hflip",
            VariantKind::VFlip => "vflip",
            VariantKind::HVFlip => "hvflip",
            VariantKind::Zoom => "zoom",
        }
    }

    /// Whether the variant swaps the Left/Right actions (the horizontal
    /// mirror is experienced through both eyes and hands).
    pub fn swaps_actions(&self) -> bool {
        matches!(self, VariantKind::HFlip | VariantKind::HVFlip)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VariantKind::ALL
            .iter()
            .find(|v| v.name() == s)
            .copied()
            .ok_or_else(|| EnvError::UnknownTask(s.to_string()))
    }
}

/// A task instance: the transform kind plus any per-task frozen state.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    kind: VariantKind,
    /// Sampled once per task instance; added to every frame.
    noise_mask: Option<Vec<f64>>,
    /// Ablation: flip the picture but keep Left/Right meanings.
    pure_observation_flip: bool,
}

impl Variant {
    pub fn new(kind: VariantKind, task_seed: u64) -> Self {
        let noise_mask = (kind == VariantKind::Noisy).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(task_seed, "noise-mask"));
            (0..GRID * GRID).map(|_| 0.2 * gaussian(&mut rng)).collect()
        });
        Variant { kind, noise_mask, pure_observation_flip: false }
    }

    pub fn observation_only(kind: VariantKind, task_seed: u64) -> Self {
        let mut v = Variant::new(kind, task_seed);
        v.pure_observation_flip = true;
        v
    }

    pub fn kind(&self) -> VariantKind {
        self.kind
    }

    pub fn swaps_actions(&self) -> bool {
        self.kind.swaps_actions() && !self.pure_observation_flip
    }

    /// Transforms one raw frame (background 0, sprites 1) into what the
    /// agent sees.
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        debug_assert_eq!(raw.len(), GRID * GRID);
        match self.kind {
            VariantKind::Base => raw.to_vec(),
            VariantKind::White => raw.iter().map(|v| 1.0 - v).collect(),
            VariantKind::Black => raw.iter().map(|v| 0.5 * v).collect(),
            VariantKind::Noisy => {
                let mask = self.noise_mask.as_ref().expect("noisy variant has a mask");
                raw.iter()
                    .zip(mask)
                    .map(|(v, m)| (v + m).clamp(0.0, 1.0))
                    .collect()
            }
            VariantKind::HFlip => flip_x(raw),
            VariantKind::VFlip => flip_y(raw),
            VariantKind::HVFlip => flip_y(&flip_x(raw)),
            VariantKind::Zoom => zoom_75(raw),
        }
    }
}

fn flip_x(frame: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; frame.len()];
    for y in 0..GRID {
        for x in 0..GRID {
            out[y * GRID + x] = frame[y * GRID + (GRID - 1 - x)];
        }
    }
    out
}

fn flip_y(frame: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; frame.len()];
    for y in 0..GRID {
        out[y * GRID..(y + 1) * GRID]
            .copy_from_slice(&frame[(GRID - 1 - y) * GRID..(GRID - y) * GRID]);
    }
    out
}

/// Nearest-neighbor 75% rescale pasted at a fixed (2,2) offset on an empty
/// canvas. Sampling is center-aligned — source row/column for target `t` is
/// `floor((t + 0.5) · 16/12)` — so the border rows survive the rescale; in
/// particular the paddle row stays visible, which keeps the game playable.
fn zoom_75(frame: &[f64]) -> Vec<f64> {
    const SCALED: usize = 12; // 16 × 0.75
    const OFFSET: usize = 2;
    let src = |t: usize| (2 * t + 1) * GRID / (2 * SCALED);
    let mut out = vec![0.0; GRID * GRID];
    for y in 0..SCALED {
        let sy = src(y);
        for x in 0..SCALED {
            let sx = src(x);
            out[(y + OFFSET) * GRID + (x + OFFSET)] = frame[sy * GRID + sx];
        }
    }
    out
}

// ── Game state ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ball {
    pub x: i32,
    pub y: i32,
    pub dx: i32,
    /// Fall speed in rows per tick: 1, 2, or 3.
    pub dy: i32,
}

#[derive(Debug, Clone, Copy)]
pub struct GameState {
    pub paddle_x: i32,
    pub ball: Ball,
    pub score: i32,
    pub ticks: usize,
    pub catches: usize,
}

/// What one tick of ball physics produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Landing {
    InFlight,
    Caught,
    Missed,
}

fn spawn_ball(rng: &mut ChaCha8Rng) -> Ball {
    let x = rng.gen_range(0..GRID as i32);
    let dx = rng.gen_range(-1..=1);
    // Fall speed weights 6/6/4: speed-3 drops are the only ones that can
    // outrun the paddle, and this mix keeps the mean optimal return in the
    // high-but-below-one band the score normalizer wants.
    let dy = match rng.gen_range(0..16) {
        0..=5 => 1,
        6..=11 => 2,
        _ => 3,
    };
    Ball { x, y: 0, dx, dy }
}

fn advance_ball(ball: &mut Ball, paddle_x: i32) -> Landing {
    ball.y += ball.dy;
    ball.x += ball.dx;
    if ball.x < 0 {
        ball.x = -ball.x;
        ball.dx = -ball.dx;
    } else if ball.x >= GRID as i32 {
        ball.x = 2 * (GRID as i32 - 1) - ball.x;
        ball.dx = -ball.dx;
    }
    if ball.y >= PADDLE_ROW as i32 {
        if (ball.x - paddle_x).abs() <= 1 {
            Landing::Caught
        } else {
            Landing::Missed
        }
    } else {
        Landing::InFlight
    }
}

fn move_paddle(paddle_x: i32, action: usize) -> i32 {
    let dir = match action {
        0 => -1,
        1 => 0,
        _ => 1,
    };
    (paddle_x + dir).clamp(PADDLE_MIN, PADDLE_MAX)
}

// ── The environment ─────────────────────────────────────────────────────

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EnvOptions {
    pub action_repeat: usize,
    pub frame_stack: usize,
    /// Episode ends after this many catches.
    pub catch_limit: usize,
    /// Hard tick ceiling per episode.
    pub step_limit: usize,
}

impl Default for EnvOptions {
    fn default() -> Self {
        EnvOptions { action_repeat: 2, frame_stack: 2, catch_limit: 1, step_limit: 128 }
    }
}

pub struct MiniCatch {
    variant: Variant,
    opts: EnvOptions,
    state: GameState,
    rng: ChaCha8Rng,
    /// Most recent `frame_stack` post-transform frames, newest last.
    frames: Vec<Vec<f64>>,
    done: bool,
}

impl MiniCatch {
    pub fn new(variant: Variant, opts: EnvOptions) -> Self {
        assert!(opts.action_repeat >= 1 && opts.frame_stack >= 1 && opts.catch_limit >= 1);
        let mut env = MiniCatch {
            variant,
            opts,
            state: GameState {
                paddle_x: PADDLE_START,
                ball: Ball { x: 0, y: 0, dx: 0, dy: 1 },
                score: 0,
                ticks: 0,
                catches: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            frames: Vec::new(),
            done: true,
        };
        env.reset(0);
        env
    }

    /// Builds the task named by its config string ("base", "noisy", …).
    pub fn from_task_name(name: &str, task_seed: u64, opts: EnvOptions) -> Result<Self, EnvError> {
        let kind: VariantKind = name.parse()?;
        Ok(MiniCatch::new(Variant::new(kind, task_seed), opts))
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    pub fn state(&self) -> &GameState {
        &self.state
    }

    /// Lowest possible episode return: every drop missed.
    pub fn min_episode_return(&self) -> f64 {
        -1.0
    }

    /// Starts an episode from an explicit state instead of a seed draw.
    /// Respawns after a catch still use the episode RNG.
    pub fn reset_from_state(&mut self, paddle_x: i32, ball: Ball) -> Tensor {
        self.rng = ChaCha8Rng::seed_from_u64(seeds::derive(0, "from-state"));
        self.state = GameState { paddle_x, ball, score: 0, ticks: 0, catches: 0 };
        self.done = false;
        self.refill_frames();
        self.observation()
    }

    fn refill_frames(&mut self) {
        let frame = self.variant.apply(&self.render_raw());
        self.frames = vec![frame; self.opts.frame_stack];
    }

    fn render_raw(&self) -> Vec<f64> {
        let mut frame = vec![0.0; GRID * GRID];
        for off in -1..=1i32 {
            let x = self.state.paddle_x + off;
            if (0..GRID as i32).contains(&x) {
                frame[PADDLE_ROW * GRID + x as usize] = 1.0;
            }
        }
        let b = &self.state.ball;
        if (0..GRID as i32).contains(&b.y) && (0..GRID as i32).contains(&b.x) {
            frame[b.y as usize * GRID + b.x as usize] = 1.0;
        }
        frame
    }

    fn observation(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.opts.frame_stack * GRID * GRID);
        for f in &self.frames {
            data.extend_from_slice(f);
        }
        Tensor::from_vec(vec![self.opts.frame_stack, GRID, GRID], data)
            .expect("frame shapes are fixed")
    }

    fn push_frame(&mut self) {
        let frame = self.variant.apply(&self.render_raw());
        self.frames.remove(0);
        self.frames.push(frame);
    }
}

impl Environment for MiniCatch {
    fn obs_shape(&self) -> Vec<usize> {
        vec![self.opts.frame_stack, GRID, GRID]
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn reset(&mut self, episode_seed: u64) -> Tensor {
        self.rng = ChaCha8Rng::seed_from_u64(episode_seed);
        let ball = spawn_ball(&mut self.rng);
        self.state = GameState { paddle_x: PADDLE_START, ball, score: 0, ticks: 0, catches: 0 };
        self.done = false;
        self.refill_frames();
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        if action >= 3 {
            return Err(EnvError::UnknownAction { action, n_actions: 3 });
        }
        let action = if self.variant.swaps_actions() {
            match action {
                0 => 2,
                2 => 0,
                a => a,
            }
        } else {
            action
        };

        let mut reward = 0.0;
        for _ in 0..self.opts.action_repeat {
            self.state.paddle_x = move_paddle(self.state.paddle_x, action);
            match advance_ball(&mut self.state.ball, self.state.paddle_x) {
                Landing::InFlight => {}
                Landing::Caught => {
                    reward += 1.0;
                    self.state.score += 1;
                    self.state.catches += 1;
                    if self.state.catches >= self.opts.catch_limit {
                        self.done = true;
                    } else {
                        self.state.ball = spawn_ball(&mut self.rng);
                    }
                }
                Landing::Missed => {
                    reward -= 1.0;
                    self.state.score -= 1;
                    self.done = true;
                }
            }
            self.state.ticks += 1;
            if self.state.ticks >= self.opts.step_limit {
                self.done = true;
            }
            if self.done {
                break;
            }
        }
        self.push_frame();
        Ok(StepOutcome { obs: self.observation(), reward, done: self.done })
    }
}

// ── Optimal-return oracle ───────────────────────────────────────────────

/// Best achievable episode return for the episode `episode_seed` starts,
/// by propagating the interval of paddle positions reachable at each tick.
///
/// The ball's path is action-independent, so each drop lands at a known
/// (tick, column); a drop is catchable iff the reachable-position interval
/// at the landing tick intersects [x−1, x+1]. After a catch the interval
/// shrinks to the positions that caught, and the next drop is propagated
/// from there. Visual variants share the base game's dynamics, and the
/// mirrored variants only relabel actions, so the value is
/// variant-independent.
pub fn optimal_return(opts: &EnvOptions, episode_seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let mut ball = spawn_ball(&mut rng);
    let (mut lo, mut hi) = (PADDLE_START, PADDLE_START);
    let mut ticks = 0usize;
    let mut score = 0.0;
    let mut catches = 0usize;

    loop {
        // Advance one tick: the paddle interval widens by one (any per-tick
        // move is available somewhere in an action sequence), then the ball
        // moves.
        lo = (lo - 1).max(PADDLE_MIN);
        hi = (hi + 1).min(PADDLE_MAX);
        let landing_probe = |p| {
            let mut b = ball;
            advance_ball(&mut b, p)
        };
        let mut b = ball;
        let landed = advance_ball(&mut b, PADDLE_START) != Landing::InFlight;
        if landed {
            let caught_lo = (b.x - 1).max(PADDLE_MIN);
            let caught_hi = (b.x + 1).min(PADDLE_MAX);
            let can_lo = lo.max(caught_lo);
            let can_hi = hi.min(caught_hi);
            if can_lo <= can_hi {
                debug_assert_eq!(landing_probe(can_lo), Landing::Caught);
                score += 1.0;
                catches += 1;
                if catches >= opts.catch_limit {
                    return score;
                }
                lo = can_lo;
                hi = can_hi;
                ball = spawn_ball(&mut rng);
            } else {
                return score - 1.0;
            }
        } else {
            ball = b;
        }
        ticks += 1;
        if ticks >= opts.step_limit {
            return score;
        }
    }
}

/// Mean of [`optimal_return`] over episode seeds `0..n_seeds` — the
/// normalizer desk-scale scores are judged against.
pub fn mean_optimal_return(opts: &EnvOptions, n_seeds: u64) -> f64 {
    let total: f64 = (0..n_seeds).map(|s| optimal_return(opts, s)).sum();
    total / n_seeds as f64
}
