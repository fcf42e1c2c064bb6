//! Consistent hashing of hosts onto agents.

use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RingError {
    #[error("no agents in the ring")]
    EmptyRing,
}

pub const DEFAULT_VNODES: u32 = 128;

#[derive(Debug, Clone)]
pub struct AgentRing {
    agents: Vec<String>,
    /// (point, agent index), sorted by point.
    points: Vec<(u64, u32)>,
    vnodes: u32,
    version: u64,
}

fn point(agent: &str, replica: u32) -> u64 {
    let mut key = Vec::with_capacity(agent.len() + 4);
    key.extend_from_slice(agent.as_bytes());
    key.extend_from_slice(&replica.to_le_bytes());
    xxh3_64(&key)
}

impl AgentRing {
    pub fn new<S: Into<String>>(agents: impl IntoIterator<Item = S>, vnodes: u32) -> Self {
        let mut agents: Vec<String> = agents.into_iter().map(Into::into).collect();
        agents.sort();
        agents.dedup();
        let mut ring = AgentRing {
            agents,
            points: Vec::new(),
            vnodes,
            version: 0,
        };
        ring.rebuild();
        ring
    }

    fn rebuild(&mut self) {
        self.points = self
            .agents
            .iter()
            .enumerate()
            .flat_map(|(i, a)| (0..self.vnodes).map(move |r| (point(a, r), i as u32)))
            .collect();
        self.points.sort_unstable();
    }

    pub fn agents(&self) -> &[String] {
        &self.agents
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// The agent owning `host`.
    pub fn assign(&self, host: &[u8]) -> Result<&str, RingError> {
        self.assign_index(host).map(|i| self.agents[i].as_str())
    }

    pub fn assign_index(&self, host: &[u8]) -> Result<usize, RingError> {
        if self.points.is_empty() {
            return Err(RingError::EmptyRing);
        }
        let h = xxh3_64(host);
        let i = self.points.partition_point(|&(p, _)| p < h);
        let (_, agent) = self.points[if i == self.points.len() { 0 } else { i }];
        Ok(agent as usize)
    }

    pub fn index_of(&self, agent: &str) -> Option<usize> {
        self.agents.iter().position(|a| a == agent)
    }

    /// The ring without `agent`.
    pub fn without(&self, agent: &str) -> AgentRing {
        let mut ring = AgentRing {
            agents: self.agents.iter().filter(|a| *a != agent).cloned().collect(),
            points: Vec::new(),
            vnodes: self.vnodes,
            version: self.version + 1,
        };
        ring.rebuild();
        ring
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_agent_owns_everything() {
        let ring = AgentRing::new(["a"], DEFAULT_VNODES);
        for i in 0..100 {
            assert_eq!(ring.assign(format!("h{i}").as_bytes()).unwrap(), "a");
        }
    }

    #[test]
    fn empty_ring_errors() {
        let ring = AgentRing::new(Vec::<String>::new(), DEFAULT_VNODES);
        assert_eq!(ring.assign(b"x"), Err(RingError::EmptyRing));
    }

    #[test]
    fn order_of_agents_does_not_matter() {
        let a = AgentRing::new(["x", "y", "z"], 16);
        let b = AgentRing::new(["z", "x", "y"], 16);
        for i in 0..1000 {
            let h = format!("host{i}.test");
            assert_eq!(a.assign(h.as_bytes()), b.assign(h.as_bytes()));
        }
    }
}
