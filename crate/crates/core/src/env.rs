//! Task variants and their dynamics: a 5x5 grid family and a planar
//! thrust-bot family, both supporting per-channel actuator disabling, plus
//! exact occupancy computation and the state-linkage check used to decide
//! whether a shared abstraction can exist.

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const GRID_SIDE: usize = 5;
pub const GRID_STATES: usize = GRID_SIDE * GRID_SIDE;
pub const GRID_ACTIONS: usize = 4; // N, E, S, W

// Thrust-bot constants. Actuator k pushes along a fixed angle; velocities
// decay geometrically; deflection readings are smoothed copies of the applied
// commands, frozen at rest for disabled channels.
pub const BOT_DT: f64 = 0.1;
pub const BOT_DRAG: f64 = 0.15;
pub const BOT_THRUST: f64 = 3.0;
pub const BOT_DEFL_DECAY: f64 = 0.9;
pub const BOT_DEFL_GAIN: f64 = 0.05;
pub const BOT_ANGLE_SPREAD: f64 = 0.35;
pub const BOT_RESET_NOISE: f64 = 0.01;
/// Positions are integrated on a coarse scale so every observation channel
/// stays O(1) over a full episode; they feed no other dynamics.
pub const BOT_POS_SCALE: f64 = 0.01;
/// True reward is forward velocity in units that put per-step reward in the
/// mid-single digits, keeping the value scale well above the entropy bonus.
pub const BOT_REWARD_SCALE: f64 = 5.0;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    TabularGrid,
    Pointbot,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Expert,
    Learner,
}

/// Axis-aligned box predicate over selected state dimensions. Unbounded sides
/// use +-1e300 (JSON cannot carry infinities).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub dims: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GoalRegion {
    pub fn contains(&self, state: &[f64]) -> bool {
        self.dims.iter().enumerate().all(|(i, &d)| {
            d < state.len() && state[d] >= self.lower[i] && state[d] <= self.upper[i]
        })
    }

    /// Goal cell shorthand for the grid family: a one-hot predicate on `cell`.
    pub fn grid_cell(cell: usize) -> Self {
        GoalRegion {
            dims: vec![cell],
            lower: vec![0.5],
            upper: vec![1.5],
        }
    }

    fn validate(&self, state_dim: usize) -> Result<()> {
        if self.dims.len() != self.lower.len() || self.dims.len() != self.upper.len() {
            return Err(Error::Config("goal_region arrays differ in length".into()));
        }
        if self.dims.iter().any(|&d| d >= state_dim) {
            return Err(Error::Config("goal_region dim out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub family: Family,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub discount: f64,
    pub disabled_mask: Vec<bool>,
    pub goal_region: Option<GoalRegion>,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!(
                "discount must lie in (0,1), got {}",
                self.discount
            )));
        }
        if self.disabled_mask.len() != self.action_dim {
            return Err(Error::Config(format!(
                "disabled_mask has {} entries for action_dim {}",
                self.disabled_mask.len(),
                self.action_dim
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        match self.family {
            Family::TabularGrid => {
                if self.state_dim != GRID_STATES || self.action_dim != GRID_ACTIONS {
                    return Err(Error::Config(format!(
                        "grid family requires state_dim {GRID_STATES} and action_dim {GRID_ACTIONS}"
                    )));
                }
            }
            Family::Pointbot => {
                if self.state_dim != 4 + self.action_dim {
                    return Err(Error::Config(format!(
                        "pointbot state_dim must be 4 + action_dim, got {} vs {}",
                        self.state_dim, self.action_dim
                    )));
                }
                if self.action_dim == 0 {
                    return Err(Error::Config("pointbot needs at least one actuator".into()));
                }
            }
        }
        if let Some(g) = &self.goal_region {
            g.validate(self.state_dim)?;
        }
        Ok(())
    }
}

/// One action as consumed by an environment step.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionChoice {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// A state-only trajectory. Actions are kept in memory during generation but
/// never serialized and never consumed by the recovery pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub role: Role,
    pub states: Vec<Vec<f64>>,
    pub returns_true: Option<f64>,
    #[serde(skip)]
    pub actions: Option<Vec<ActionChoice>>,
}

/// Fully enumerated finite MDP with a state-indexed true reward.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Flat row-major transition tensor, index [s][a][s'].
    pub transition: Vec<f64>,
    pub true_reward: Vec<f64>,
    pub initial_dist: Vec<f64>,
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.num_states, self.num_actions);
        if s == 0 || a == 0 {
            return Err(Error::Config("empty MDP".into()));
        }
        if self.transition.len() != s * a * s
            || self.true_reward.len() != s
            || self.initial_dist.len() != s
        {
            return Err(Error::Dimension("MDP tensor sizes inconsistent".into()));
        }
        for row in 0..s * a {
            let slice = &self.transition[row * s..(row + 1) * s];
            if slice.iter().any(|&p| p < 0.0) {
                return Err(Error::Config("negative transition probability".into()));
            }
            let sum: f64 = slice.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "transition row {row} sums to {sum}, expected 1"
                )));
            }
        }
        let isum: f64 = self.initial_dist.iter().sum();
        if (isum - 1.0).abs() > 1e-9 {
            return Err(Error::Config("initial distribution does not sum to 1".into()));
        }
        Ok(())
    }

    pub fn trans(&self, s: usize, a: usize) -> &[f64] {
        let n = self.num_states;
        &self.transition[(s * self.num_actions + a) * n..(s * self.num_actions + a) * n + n]
    }

    /// Grid layout: cell = row*5 + col, actions N/E/S/W. A disabled channel or
    /// a wall leaves the agent in place; every transition is deterministic.
    pub fn from_grid_spec(spec: &TaskSpec) -> Result<Self> {
        spec.validate()?;
        if spec.family != Family::TabularGrid {
            return Err(Error::Config("from_grid_spec needs the grid family".into()));
        }
        let goal = match &spec.goal_region {
            Some(g) => {
                if g.dims.len() != 1 || g.dims[0] >= GRID_STATES {
                    return Err(Error::Config(
                        "grid goal_region must name exactly one cell".into(),
                    ));
                }
                Some(g.dims[0])
            }
            None => None,
        };
        let n = GRID_STATES;
        let mut transition = vec![0.0; n * GRID_ACTIONS * n];
        for s in 0..n {
            let (r, c) = ((s / GRID_SIDE) as i32, (s % GRID_SIDE) as i32);
            for a in 0..GRID_ACTIONS {
                let (dr, dc) = match a {
                    0 => (-1, 0),
                    1 => (0, 1),
                    2 => (1, 0),
                    _ => (0, -1),
                };
                let (nr, nc) = if spec.disabled_mask[a] {
                    (r, c)
                } else {
                    let (tr, tc) = (r + dr, c + dc);
                    if tr < 0 || tr >= GRID_SIDE as i32 || tc < 0 || tc >= GRID_SIDE as i32 {
                        (r, c)
                    } else {
                        (tr, tc)
                    }
                };
                let ns = (nr as usize) * GRID_SIDE + nc as usize;
                transition[(s * GRID_ACTIONS + a) * n + ns] = 1.0;
            }
        }
        let mut true_reward = vec![0.0; n];
        if let Some(g) = goal {
            true_reward[g] = 1.0;
        }
        let mut initial_dist = vec![0.0; n];
        initial_dist[0] = 1.0;
        let mdp = TabularMdp {
            num_states: n,
            num_actions: GRID_ACTIONS,
            transition,
            true_reward,
            initial_dist,
        };
        mdp.validate()?;
        Ok(mdp)
    }
}

/// Average state-visitation distribution over s_0..s_H under a stationary
/// row-stochastic policy, by forward dynamic programming.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &[f64], horizon: usize) -> Result<Vec<f64>> {
    let (n, na) = (mdp.num_states, mdp.num_actions);
    if policy.len() != n * na {
        return Err(Error::Dimension(format!(
            "policy table has {} entries, MDP wants {}",
            policy.len(),
            n * na
        )));
    }
    let mut p = mdp.initial_dist.clone();
    let mut occ = p.clone();
    for _ in 0..horizon {
        let mut next = vec![0.0; n];
        for s in 0..n {
            if p[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let pa = p[s] * policy[s * na + a];
                if pa == 0.0 {
                    continue;
                }
                for (ns, t) in mdp.trans(s, a).iter().enumerate() {
                    if *t > 0.0 {
                        next[ns] += pa * t;
                    }
                }
            }
        }
        for (o, v) in occ.iter_mut().zip(next.iter()) {
            *o += v;
        }
        p = next;
    }
    let scale = 1.0 / (horizon as f64 + 1.0);
    for o in &mut occ {
        *o *= scale;
    }
    Ok(occ)
}

/// Two states are linked when some single state can reach both in one step.
/// Returns whether the transitive closure joins every state into one class,
/// plus per-state class labels normalized by first appearance.
pub fn decomposability_check(mdp: &TabularMdp) -> Result<(bool, Vec<usize>)> {
    mdp.validate()?;
    let n = mdp.num_states;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for s in 0..n {
        let mut reachable: Vec<usize> = Vec::new();
        for a in 0..mdp.num_actions {
            for (ns, t) in mdp.trans(s, a).iter().enumerate() {
                if *t > 0.0 && !reachable.contains(&ns) {
                    reachable.push(ns);
                }
            }
        }
        for pair in reachable.windows(2) {
            let (ra, rb) = (find(&mut parent, pair[0]), find(&mut parent, pair[1]));
            if ra != rb {
                parent[ra] = rb;
            }
        }
    }
    let mut label_of_root: Vec<Option<usize>> = vec![None; n];
    let mut labels = vec![0usize; n];
    let mut next_label = 0;
    for s in 0..n {
        let r = find(&mut parent, s);
        let l = match label_of_root[r] {
            Some(l) => l,
            None => {
                let l = next_label;
                label_of_root[r] = Some(l);
                next_label += 1;
                l
            }
        };
        labels[s] = l;
    }
    Ok((next_label == 1, labels))
}

/// Reference fixture: a 3-state single-action chain (0 -> 1 -> 2 -> 1) whose
/// first state is nobody's sibling, so the linkage check fails.
pub fn chain_fixture() -> TabularMdp {
    let n = 3;
    let mut transition = vec![0.0; n * n];
    transition[0 * n + 1] = 1.0; // 0 -> 1
    transition[1 * n + 2] = 1.0; // 1 -> 2
    transition[2 * n + 1] = 1.0; // 2 -> 1
    TabularMdp {
        num_states: n,
        num_actions: 1,
        transition,
        true_reward: vec![0.0, 0.0, 1.0],
        initial_dist: vec![1.0, 0.0, 0.0],
    }
}

/// The repaired quotient of `chain_fixture`: states 0 and 1 merged, the merged
/// state mixing its members' moves uniformly. Every state becomes linked.
pub fn chain_fixture_quotient() -> TabularMdp {
    let n = 2; // state 0 = merged {0,1}, state 1 = old state 2
    let mut transition = vec![0.0; n * n];
    transition[0 * n + 0] = 0.5; // old 0 -> old 1, stays inside the merge
    transition[0 * n + 1] = 0.5; // old 1 -> old 2
    transition[1 * n + 0] = 1.0; // old 2 -> old 1
    TabularMdp {
        num_states: n,
        num_actions: 1,
        transition,
        true_reward: vec![0.0, 1.0],
        initial_dist: vec![1.0, 0.0],
    }
}

pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

enum Backend {
    Tabular {
        mdp: TabularMdp,
        state: usize,
    },
    Pointbot {
        angles: Vec<f64>,
        state: Vec<f64>,
    },
}

/// A live environment instance. Reset noise is drawn from a per-episode
/// stream derived from the task seed, so identical specs behave identically.
pub struct Environment {
    spec: TaskSpec,
    backend: Backend,
    t: usize,
    episode: u64,
    rng: ChaCha8Rng,
}

/// Evenly spread actuator angles in [-BOT_ANGLE_SPREAD, +BOT_ANGLE_SPREAD].
pub fn actuator_angles(k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| {
            if k == 1 {
                0.0
            } else {
                BOT_ANGLE_SPREAD * (2.0 * i as f64 - (k as f64 - 1.0)) / (k as f64 - 1.0)
            }
        })
        .collect()
}

pub fn make_environment(spec: &TaskSpec) -> Result<Environment> {
    spec.validate()?;
    let backend = match spec.family {
        Family::TabularGrid => Backend::Tabular {
            mdp: TabularMdp::from_grid_spec(spec)?,
            state: 0,
        },
        Family::Pointbot => Backend::Pointbot {
            angles: actuator_angles(spec.action_dim),
            state: vec![0.0; spec.state_dim],
        },
    };
    Ok(Environment {
        rng: rng::module_stream(spec.seed, "env", &[]),
        spec: spec.clone(),
        backend,
        t: 0,
        episode: 0,
    })
}

impl Environment {
    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn task_id(&self) -> &str {
        &self.spec.task_id
    }

    pub fn state_dim(&self) -> usize {
        self.spec.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.spec.action_dim
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn discount(&self) -> f64 {
        self.spec.discount
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    /// True per-state reward: goal-cell indicator for the grid, forward
    /// velocity for the thrust-bot.
    pub fn state_reward(&self, state: &[f64]) -> f64 {
        match self.spec.family {
            Family::TabularGrid => match one_hot_index(state) {
                Ok(s) => match &self.backend {
                    Backend::Tabular { mdp, .. } => mdp.true_reward[s],
                    _ => 0.0,
                },
                Err(_) => 0.0,
            },
            Family::Pointbot => BOT_REWARD_SCALE * state[2],
        }
    }

    pub fn tabular(&self) -> Option<&TabularMdp> {
        match &self.backend {
            Backend::Tabular { mdp, .. } => Some(mdp),
            _ => None,
        }
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.t = 0;
        let mut ep_rng = rng::module_stream(self.spec.seed, "env-reset", &[self.episode]);
        self.episode += 1;
        match &mut self.backend {
            Backend::Tabular { mdp, state } => {
                // Sample the initial state from the declared distribution.
                let u: f64 = ep_rng.gen();
                let mut acc = 0.0;
                let mut chosen = mdp.num_states - 1;
                for (s, p) in mdp.initial_dist.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        chosen = s;
                        break;
                    }
                }
                *state = chosen;
                one_hot(chosen, mdp.num_states)
            }
            Backend::Pointbot { state, .. } => {
                // Noise on pose and velocity; deflection readings start at rest.
                for v in state.iter_mut().take(4) {
                    *v = ep_rng.gen_range(-BOT_RESET_NOISE..BOT_RESET_NOISE);
                }
                for v in state.iter_mut().skip(4) {
                    *v = 0.0;
                }
                state.clone()
            }
        }
    }

    pub fn step(&mut self, action: &ActionChoice) -> Result<Step> {
        if self.t >= self.spec.horizon {
            return Err(Error::Config("step called on a finished episode".into()));
        }
        self.t += 1;
        let done = self.t >= self.spec.horizon;
        match (&mut self.backend, action) {
            (Backend::Tabular { mdp, state }, ActionChoice::Discrete(a)) => {
                if *a >= mdp.num_actions {
                    return Err(Error::Dimension(format!(
                        "action {a} out of range for {} channels",
                        mdp.num_actions
                    )));
                }
                let row = mdp.trans(*state, *a);
                let u: f64 = self.rng.gen();
                let mut acc = 0.0;
                let mut next = mdp.num_states - 1;
                for (ns, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        next = ns;
                        break;
                    }
                }
                *state = next;
                Ok(Step {
                    state: one_hot(next, mdp.num_states),
                    reward: mdp.true_reward[next],
                    done,
                })
            }
            (Backend::Pointbot { angles, state }, ActionChoice::Continuous(a)) => {
                if a.len() != self.spec.action_dim {
                    return Err(Error::Dimension(format!(
                        "action width {} but task has {} actuators",
                        a.len(),
                        self.spec.action_dim
                    )));
                }
                let k = self.spec.action_dim;
                let (mut ax, mut ay) = (0.0, 0.0);
                for i in 0..k {
                    let eff = if self.spec.disabled_mask[i] {
                        0.0
                    } else {
                        a[i].clamp(-1.0, 1.0)
                    };
                    state[4 + i] = BOT_DEFL_DECAY * state[4 + i] + BOT_DEFL_GAIN * eff;
                    ax += angles[i].cos() * eff;
                    ay += angles[i].sin() * eff;
                }
                ax *= BOT_THRUST / k as f64;
                ay *= BOT_THRUST / k as f64;
                state[2] = (1.0 - BOT_DRAG) * state[2] + BOT_DT * ax;
                state[3] = (1.0 - BOT_DRAG) * state[3] + BOT_DT * ay;
                state[0] += BOT_DT * BOT_POS_SCALE * state[2];
                state[1] += BOT_DT * BOT_POS_SCALE * state[3];
                Ok(Step {
                    state: state.clone(),
                    reward: BOT_REWARD_SCALE * state[2],
                    done,
                })
            }
            _ => Err(Error::Dimension(
                "action kind does not match environment family".into(),
            )),
        }
    }
}

pub fn one_hot(index: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[index] = 1.0;
    v
}

/// Index of the single nonzero entry of a one-hot state vector.
pub fn one_hot_index(state: &[f64]) -> Result<usize> {
    let mut found = None;
    for (i, &v) in state.iter().enumerate() {
        if v != 0.0 {
            if found.is_some() || (v - 1.0).abs() > 1e-9 {
                return Err(Error::Dimension("state vector is not one-hot".into()));
            }
            found = Some(i);
        }
    }
    found.ok_or_else(|| Error::Dimension("all-zero state vector".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn grid_spec(task_id: &str, disabled: [bool; 4], goal: Option<usize>) -> TaskSpec {
        TaskSpec {
            task_id: task_id.into(),
            family: Family::TabularGrid,
            state_dim: GRID_STATES,
            action_dim: GRID_ACTIONS,
            horizon: 30,
            discount: 0.99,
            disabled_mask: disabled.to_vec(),
            goal_region: goal.map(GoalRegion::grid_cell),
            seed: 11,
        }
    }

    pub fn bot_spec(task_id: &str, k: usize, disabled: Vec<bool>) -> TaskSpec {
        TaskSpec {
            task_id: task_id.into(),
            family: Family::Pointbot,
            state_dim: 4 + k,
            action_dim: k,
            horizon: 200,
            discount: 0.99,
            disabled_mask: disabled,
            goal_region: None,
            seed: 11,
        }
    }

    #[test]
    fn spec_validation_rejects_bad_fields() {
        let mut s = grid_spec("g", [false; 4], Some(24));
        s.discount = 1.0;
        assert!(s.validate().is_err());
        let mut s = grid_spec("g", [false; 4], Some(24));
        s.disabled_mask = vec![false; 3];
        assert!(s.validate().is_err());
        let mut s = bot_spec("b", 4, vec![false; 4]);
        s.state_dim = 7;
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let s = grid_spec("grid-a", [false, true, false, false], Some(24));
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"family\":\"tabular-grid\""));
        let back: TaskSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn grid_moves_right_deterministically() {
        let spec = grid_spec("g", [false; 4], Some(24));
        let mdp = TabularMdp::from_grid_spec(&spec).unwrap();
        // From cell (0,0), action E lands in (0,1).
        let row = mdp.trans(0, 1);
        assert_eq!(row[1], 1.0);
        assert_eq!(row.iter().sum::<f64>(), 1.0);
        // Wall: from (0,0), action N stays.
        assert_eq!(mdp.trans(0, 0)[0], 1.0);
    }

    #[test]
    fn disabled_grid_channel_freezes_motion() {
        let spec = grid_spec("g", [false, true, false, false], Some(24));
        let mdp = TabularMdp::from_grid_spec(&spec).unwrap();
        // E disabled: from (2,2)=12 the E action stays in place.
        assert_eq!(mdp.trans(12, 1)[12], 1.0);
        assert_eq!(mdp.trans(12, 2)[17], 1.0); // S still works
    }

    #[test]
    fn pointbot_zero_action_decays_velocity_only() {
        let spec = bot_spec("b", 4, vec![false; 4]);
        let mut env = make_environment(&spec).unwrap();
        let s0 = env.reset();
        let step = env.step(&ActionChoice::Continuous(vec![0.0; 4])).unwrap();
        for k in 0..4 {
            assert!((step.state[4 + k] - BOT_DEFL_DECAY * s0[4 + k]).abs() < 1e-15);
        }
        let vx1 = (1.0 - BOT_DRAG) * s0[2];
        let vy1 = (1.0 - BOT_DRAG) * s0[3];
        assert!((step.state[2] - vx1).abs() < 1e-15);
        assert!((step.state[3] - vy1).abs() < 1e-15);
        assert!((step.state[0] - (s0[0] + BOT_DT * BOT_POS_SCALE * vx1)).abs() < 1e-15);
        assert!((step.state[1] - (s0[1] + BOT_DT * BOT_POS_SCALE * vy1)).abs() < 1e-15);
    }

    #[test]
    fn disabled_actuator_input_has_no_effect() {
        let spec = bot_spec("b", 4, vec![true, false, false, false]);
        let mk = || {
            let mut env = make_environment(&spec).unwrap();
            env.reset();
            env
        };
        let mut a = mk();
        let mut b = mk();
        let sa = a
            .step(&ActionChoice::Continuous(vec![1.0, 0.3, 0.3, 0.3]))
            .unwrap();
        let sb = b
            .step(&ActionChoice::Continuous(vec![-1.0, 0.3, 0.3, 0.3]))
            .unwrap();
        assert_eq!(sa.state, sb.state);
        assert_eq!(sa.state[4], 0.0); // frozen deflection never moves from rest
    }

    #[test]
    fn identical_specs_behave_identically() {
        let spec = bot_spec("b", 4, vec![false; 4]);
        let run = || {
            let mut env = make_environment(&spec).unwrap();
            let mut out = vec![env.reset()];
            for i in 0..5 {
                let a = vec![0.3 * (i as f64).sin(); 4];
                out.push(env.step(&ActionChoice::Continuous(a)).unwrap().state);
            }
            out.push(env.reset());
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn occupancy_horizon_zero_is_initial_dist() {
        let spec = grid_spec("g", [false; 4], Some(24));
        let mdp = TabularMdp::from_grid_spec(&spec).unwrap();
        let pi = vec![0.25; GRID_STATES * GRID_ACTIONS];
        let occ = exact_occupancy(&mdp, &pi, 0).unwrap();
        assert_eq!(occ, mdp.initial_dist);
    }

    #[test]
    fn occupancy_concentrates_on_absorbing_state() {
        // Two states; state 1 falls into absorbing state 0 in one step.
        let mdp = TabularMdp {
            num_states: 2,
            num_actions: 1,
            transition: vec![1.0, 0.0, 1.0, 0.0],
            true_reward: vec![0.0, 0.0],
            initial_dist: vec![0.0, 1.0],
        };
        let occ = exact_occupancy(&mdp, &[1.0, 1.0], 50).unwrap();
        assert!(occ[0] > 0.97);
        assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    // Independent oracle: enumerate every state path of length H with its
    // probability and average the visit counts.
    fn occupancy_by_enumeration(mdp: &TabularMdp, policy: &[f64], horizon: usize) -> Vec<f64> {
        let n = mdp.num_states;
        let na = mdp.num_actions;
        let mut occ = vec![0.0; n];
        fn recurse(
            mdp: &TabularMdp,
            policy: &[f64],
            occ: &mut [f64],
            path_prob: f64,
            s: usize,
            remaining: usize,
            weight: f64,
        ) {
            occ[s] += path_prob * weight;
            if remaining == 0 {
                return;
            }
            for a in 0..mdp.num_actions {
                let pa = policy[s * mdp.num_actions + a];
                if pa == 0.0 {
                    continue;
                }
                for (ns, t) in mdp.trans(s, a).iter().enumerate() {
                    if *t > 0.0 {
                        recurse(mdp, policy, occ, path_prob * pa * t, ns, remaining - 1, weight);
                    }
                }
            }
        }
        let weight = 1.0 / (horizon as f64 + 1.0);
        for s in 0..n {
            if mdp.initial_dist[s] > 0.0 {
                recurse(mdp, policy, &mut occ, mdp.initial_dist[s], s, horizon, weight);
            }
        }
        let _ = na;
        occ
    }

    #[test]
    fn occupancy_matches_path_enumeration() {
        // 3-cycle with a second, stay-in-place action and a stochastic policy.
        let n = 3;
        let mut transition = vec![0.0; n * 2 * n];
        for s in 0..n {
            transition[(s * 2) * n + (s + 1) % n] = 1.0;
            transition[(s * 2 + 1) * n + s] = 1.0;
        }
        let mdp = TabularMdp {
            num_states: n,
            num_actions: 2,
            transition,
            true_reward: vec![0.0; n],
            initial_dist: vec![0.6, 0.4, 0.0],
        };
        let policy = vec![0.7, 0.3, 0.2, 0.8, 0.5, 0.5];
        let dp = exact_occupancy(&mdp, &policy, 3).unwrap();
        let brute = occupancy_by_enumeration(&mdp, &policy, 3);
        for (a, b) in dp.iter().zip(brute.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((dp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linkage_fails_on_chain_and_passes_on_quotient() {
        let (ok, classes) = decomposability_check(&chain_fixture()).unwrap();
        assert!(!ok);
        // Nothing reaches two distinct states in one step: all singletons.
        assert_eq!(classes, vec![0, 1, 2]);
        let (ok, classes) = decomposability_check(&chain_fixture_quotient()).unwrap();
        assert!(ok);
        assert_eq!(classes, vec![0, 0]);
    }

    #[test]
    fn linkage_single_state_trivially_holds() {
        let mdp = TabularMdp {
            num_states: 1,
            num_actions: 1,
            transition: vec![1.0],
            true_reward: vec![0.0],
            initial_dist: vec![1.0],
        };
        let (ok, classes) = decomposability_check(&mdp).unwrap();
        assert!(ok);
        assert_eq!(classes, vec![0]);
    }

    #[test]
    fn linkage_is_permutation_equivariant() {
        use rand::seq::SliceRandom;
        let mut rng = crate::rng::substream(3, &[1]);
        for trial in 0..20u64 {
            // Random small MDP with deterministic transitions.
            let n = 4 + (trial % 3) as usize;
            let na = 2;
            let mut transition = vec![0.0; n * na * n];
            for s in 0..n {
                for a in 0..na {
                    let ns = rng.gen_range(0..n);
                    transition[(s * na + a) * n + ns] = 1.0;
                }
            }
            let mdp = TabularMdp {
                num_states: n,
                num_actions: na,
                transition,
                true_reward: vec![0.0; n],
                initial_dist: one_hot(0, n),
            };
            let (ok, labels) = decomposability_check(&mdp).unwrap();

            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut pt = vec![0.0; n * na * n];
            for s in 0..n {
                for a in 0..na {
                    for ns in 0..n {
                        pt[(perm[s] * na + a) * n + perm[ns]] =
                            mdp.transition[(s * na + a) * n + ns];
                    }
                }
            }
            let mut pinit = vec![0.0; n];
            for s in 0..n {
                pinit[perm[s]] = mdp.initial_dist[s];
            }
            let pmdp = TabularMdp {
                num_states: n,
                num_actions: na,
                transition: pt,
                true_reward: vec![0.0; n],
                initial_dist: pinit,
            };
            let (pok, plabels) = decomposability_check(&pmdp).unwrap();
            assert_eq!(ok, pok);
            // Same partition up to relabeling: compare pairwise co-membership.
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(
                        labels[i] == labels[j],
                        plabels[perm[i]] == plabels[perm[j]],
                        "trial {trial}"
                    );
                }
            }
        }
    }

    #[test]
    fn one_hot_helpers() {
        assert_eq!(one_hot_index(&one_hot(3, 5)).unwrap(), 3);
        assert!(one_hot_index(&[0.0, 0.0]).is_err());
        assert!(one_hot_index(&[1.0, 1.0]).is_err());
        assert!(one_hot_index(&[0.0, 0.5]).is_err());
    }

    #[test]
    fn goal_region_box_predicate() {
        let g = GoalRegion {
            dims: vec![0, 2],
            lower: vec![1.0, -1.0],
            upper: vec![2.0, 1.0],
        };
        assert!(g.contains(&[1.5, 99.0, 0.0]));
        assert!(!g.contains(&[0.5, 0.0, 0.0]));
        assert!(!g.contains(&[1.5, 0.0, 2.0]));
    }
}
