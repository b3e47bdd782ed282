use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::{MdpError, MdpParts, Result, TabularMdp};

/// Random MDP with sparse transitions.
///
/// Each transition entry is drawn from `U[0,1]` and independently zeroed with
/// probability `clip_prob`; rows are then renormalized. A row that ends up
/// all zero is drawn again. Rewards are `U[0,1]`; the initial distribution is
/// uniform. Draws come from a SplitMix64 stream in the order
/// (state, action, next state), value before clip decision, followed by the
/// rewards in (state, action) order.
pub fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, clip_prob: f64, seed: u64) -> Result<TabularMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(MdpError::Dimensions(format!(
            "need at least one state and action, got {n_states}x{n_actions}"
        )));
    }
    if !(0.0..1.0).contains(&clip_prob) {
        return Err(MdpError::Dimensions(format!("clip probability must lie in [0,1), got {clip_prob}")));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    let mut row = vec![0.0; n_states];
    for _ in 0..n_states * n_actions {
        loop {
            for p in row.iter_mut() {
                let value: f64 = rng.random();
                let clip: f64 = rng.random();
                *p = if clip < clip_prob { 0.0 } else { value };
            }
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|p| *p /= sum);
                break;
            }
        }
        transition.extend_from_slice(&row);
    }
    let reward = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    TabularMdp::try_from(MdpParts {
        n_states,
        n_actions,
        gamma,
        reward,
        transition,
        initial: vec![1.0 / n_states as f64; n_states],
    })
}

/// Moves on the grid. Rows are the first coordinate, columns the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Left = 0,
    Right = 1,
    Up = 2,
    Down = 3,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [GridAction::Left, GridAction::Right, GridAction::Up, GridAction::Down];

    fn delta(self) -> (i64, i64) {
        match self {
            GridAction::Left => (0, -1),
            GridAction::Right => (0, 1),
            GridAction::Up => (-1, 0),
            GridAction::Down => (1, 0),
        }
    }
}

/// State index of cell `(x, y)`, both in `[-(N-1), N-1]`.
pub fn gridworld_index(n: usize, x: i64, y: i64) -> usize {
    let m = n as i64 - 1;
    let side = 2 * m + 1;
    ((x + m) * side + (y + m)) as usize
}

/// Cell `(x, y)` of state `s`.
pub fn gridworld_coords(n: usize, s: usize) -> (i64, i64) {
    let m = n as i64 - 1;
    let side = 2 * m + 1;
    let s = s as i64;
    (s / side - m, s % side - m)
}

/// `(2N−1) × (2N−1)` grid with deterministic moves and walls at the border.
///
/// Entering one of the four corners pays 1; corners are absorbing and pay
/// nothing afterwards. The start distribution is concentrated on `(0, 0)`.
pub fn gridworld(n: usize, gamma: f64) -> Result<TabularMdp> {
    if n < 2 {
        return Err(MdpError::Dimensions(format!("grid size N must be at least 2, got {n}")));
    }
    let m = n as i64 - 1;
    let side = (2 * m + 1) as usize;
    let n_states = side * side;
    let n_actions = GridAction::ALL.len();
    let is_corner = |x: i64, y: i64| x.abs() == m && y.abs() == m;

    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = vec![0.0; n_states * n_actions];
    for s in 0..n_states {
        let (x, y) = gridworld_coords(n, s);
        for action in GridAction::ALL {
            let a = action as usize;
            let row = s * n_actions + a;
            if is_corner(x, y) {
                transition[row * n_states + s] = 1.0;
                continue;
            }
            let (dx, dy) = action.delta();
            let (nx, ny) = (x + dx, y + dy);
            let next = if nx.abs() <= m && ny.abs() <= m {
                gridworld_index(n, nx, ny)
            } else {
                s
            };
            transition[row * n_states + next] = 1.0;
            let (cx, cy) = gridworld_coords(n, next);
            if is_corner(cx, cy) {
                reward[row] = 1.0;
            }
        }
    }
    let mut initial = vec![0.0; n_states];
    initial[gridworld_index(n, 0, 0)] = 1.0;
    TabularMdp::try_from(MdpParts {
        n_states,
        n_actions,
        gamma,
        reward,
        transition,
        initial,
    })
}
