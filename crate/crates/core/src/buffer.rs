//! Trajectory buffer: a per-(task, role) store that keeps every expert
//! demonstration forever and a bounded FIFO of recent learner rollouts, with
//! uniform sampling over whatever is stored.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Role, Trajectory};
use crate::error::{Error, Result};

/// Per-(task_id, role) trajectory store. Expert trajectories are never
/// evicted; learner trajectories are a FIFO bounded by `learner_cap`.
#[derive(Debug)]
pub struct TrajectoryBuffer {
    learner_cap: usize,
    slots: BTreeMap<(String, Role), VecDeque<Trajectory>>,
}

impl TrajectoryBuffer {
    pub fn new(learner_cap: usize) -> Self {
        TrajectoryBuffer {
            learner_cap,
            slots: BTreeMap::new(),
        }
    }

    /// Insert one trajectory under its own (task_id, role) key, evicting the
    /// oldest learner trajectory of that task when over capacity.
    pub fn insert(&mut self, traj: Trajectory) {
        let key = (traj.task_id.clone(), traj.role);
        let slot = self.slots.entry(key).or_default();
        slot.push_back(traj);
        if slot.back().map(|t| t.role) == Some(Role::Learner) {
            while slot.len() > self.learner_cap {
                slot.pop_front();
            }
        }
    }

    pub fn insert_all(&mut self, trajs: Vec<Trajectory>) {
        for t in trajs {
            self.insert(t);
        }
    }

    pub fn len(&self, task_id: &str, role: Role) -> usize {
        self.slots
            .get(&(task_id.to_string(), role))
            .map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.slots.values().all(VecDeque::is_empty)
    }

    /// Task ids that have at least one trajectory stored for `role`, in
    /// deterministic (sorted) order.
    pub fn task_ids(&self, role: Role) -> Vec<String> {
        self.slots
            .iter()
            .filter(|((_, r), v)| *r == role && !v.is_empty())
            .map(|((id, _), _)| id.clone())
            .collect()
    }

    pub fn trajectories(&self, task_id: &str, role: Role) -> Result<&VecDeque<Trajectory>> {
        self.slots
            .get(&(task_id.to_string(), role))
            .ok_or_else(|| Error::MissingData(format!("no {role:?} trajectories for {task_id}")))
    }

    /// Uniformly sample one stored trajectory.
    pub fn sample_trajectory(
        &self,
        task_id: &str,
        role: Role,
        rng: &mut ChaCha8Rng,
    ) -> Result<&Trajectory> {
        let slot = self.trajectories(task_id, role)?;
        if slot.is_empty() {
            return Err(Error::EmptyBatch(format!("{task_id} {role:?} buffer")));
        }
        Ok(&slot[rng.gen_range(0..slot.len())])
    }

    /// Sample `n` states by drawing a trajectory uniformly and then a state
    /// uniformly within it, with replacement.
    pub fn sample_states(
        &self,
        task_id: &str,
        role: Role,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let traj = self.sample_trajectory(task_id, role, rng)?;
            out.push(traj.states[rng.gen_range(0..traj.states.len())].clone());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::module_stream;

    fn traj(task: &str, role: Role, tag: f64) -> Trajectory {
        Trajectory {
            task_id: task.into(),
            role,
            states: vec![vec![tag], vec![tag + 0.5]],
            returns_true: Some(tag),
            actions: None,
        }
    }

    #[test]
    fn learner_fifo_evicts_oldest_but_experts_persist() {
        let mut buf = TrajectoryBuffer::new(3);
        for i in 0..5 {
            buf.insert(traj("a", Role::Learner, i as f64));
            buf.insert(traj("a", Role::Expert, 100.0 + i as f64));
        }
        assert_eq!(buf.len("a", Role::Learner), 3);
        assert_eq!(buf.len("a", Role::Expert), 5);
        let kept: Vec<f64> = buf
            .trajectories("a", Role::Learner)
            .unwrap()
            .iter()
            .map(|t| t.states[0][0])
            .collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn tasks_are_isolated() {
        let mut buf = TrajectoryBuffer::new(2);
        buf.insert(traj("a", Role::Learner, 1.0));
        buf.insert(traj("b", Role::Learner, 2.0));
        buf.insert(traj("b", Role::Learner, 3.0));
        assert_eq!(buf.len("a", Role::Learner), 1);
        assert_eq!(buf.len("b", Role::Learner), 2);
        assert_eq!(buf.len("a", Role::Expert), 0);
        assert_eq!(buf.task_ids(Role::Learner), vec!["a", "b"]);
        assert!(buf.task_ids(Role::Expert).is_empty());
    }

    #[test]
    fn sampling_empty_slot_errors() {
        let buf = TrajectoryBuffer::new(2);
        let mut rng = module_stream(1, "buffer-test", &[0]);
        assert!(buf.sample_trajectory("a", Role::Expert, &mut rng).is_err());
        assert!(buf.sample_states("a", Role::Learner, 4, &mut rng).is_err());
    }

    #[test]
    fn trajectory_sampling_is_uniform_within_3_sigma() {
        let mut buf = TrajectoryBuffer::new(100);
        let m = 20;
        for i in 0..m {
            buf.insert(traj("a", Role::Expert, i as f64));
        }
        let mut rng = module_stream(7, "buffer-test", &[1]);
        let draws = 100_000usize;
        let mut counts = vec![0usize; m];
        for _ in 0..draws {
            let t = buf.sample_trajectory("a", Role::Expert, &mut rng).unwrap();
            counts[t.states[0][0] as usize] += 1;
        }
        let p = 1.0 / m as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        let expect = draws as f64 * p;
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expect).abs() <= 3.0 * sigma,
                "trajectory {i} drawn {c} times, expected {expect:.0} +- {:.0}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn state_sampling_draws_from_all_positions() {
        let mut buf = TrajectoryBuffer::new(10);
        buf.insert(traj("a", Role::Learner, 0.0));
        let mut rng = module_stream(9, "buffer-test", &[2]);
        let states = buf.sample_states("a", Role::Learner, 200, &mut rng).unwrap();
        let first = states.iter().filter(|s| s[0] == 0.0).count();
        assert!(first > 50 && first < 150, "position skew: {first}/200");
    }
}
