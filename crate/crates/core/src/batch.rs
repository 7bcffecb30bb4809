use std::fmt;

use crate::error::{Error, Result};

/// Ordered partition of the agents into update batches.
///
/// Agents inside a batch are kept sorted by index. The batch order is the
/// update order: the policy of an agent in batch `k` may condition on the
/// actions of every agent in batches `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BatchSequence {
    batches: Vec<Vec<usize>>,
    batch_of: Vec<usize>,
}

impl BatchSequence {
    pub fn new(mut batches: Vec<Vec<usize>>, n_agents: usize) -> Result<Self> {
        let mut batch_of = vec![usize::MAX; n_agents];
        if batches.is_empty() && n_agents > 0 {
            return Err(Error::input("batch sequence has no batches"));
        }
        for (k, batch) in batches.iter_mut().enumerate() {
            if batch.is_empty() {
                return Err(Error::input(format!("batch {k} is empty")));
            }
            batch.sort_unstable();
            for &i in batch.iter() {
                if i >= n_agents {
                    return Err(Error::input(format!("agent {i} out of range in batch {k}")));
                }
                if batch_of[i] != usize::MAX {
                    return Err(Error::input(format!("agent {i} appears in more than one batch")));
                }
                batch_of[i] = k;
            }
        }
        if let Some(i) = batch_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::input(format!("agent {i} is not in any batch")));
        }
        Ok(Self { batches, batch_of })
    }

    /// One batch holding every agent.
    pub fn single(n_agents: usize) -> Self {
        Self::new(vec![(0..n_agents).collect()], n_agents).expect("valid")
    }

    /// One agent per batch, in the given order.
    pub fn singletons(order: &[usize]) -> Result<Self> {
        Self::new(order.iter().map(|&i| vec![i]).collect(), order.len())
    }

    pub fn n_agents(&self) -> usize {
        self.batch_of.len()
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    pub fn batch(&self, k: usize) -> &[usize] {
        &self.batches[k]
    }

    pub fn batch_of(&self, agent: usize) -> usize {
        self.batch_of[agent]
    }

    /// Agents in batches strictly before `k`, sorted by index.
    pub fn preceding(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.batches[..k].iter().flatten().copied().collect();
        out.sort_unstable();
        out
    }

    /// Agents whose actions `agent`'s policy conditions on.
    pub fn context_agents(&self, agent: usize) -> Vec<usize> {
        self.preceding(self.batch_of[agent])
    }

    /// No edge `(j, i)` joins two agents of one batch.
    pub fn is_independent(&self, edges: &[(usize, usize)]) -> bool {
        edges.iter().all(|&(j, i)| self.batch_of[j] != self.batch_of[i])
    }

    /// Every edge `(j, i)` runs from an earlier batch to a later one.
    pub fn respects(&self, edges: &[(usize, usize)]) -> bool {
        edges.iter().all(|&(j, i)| self.batch_of[j] < self.batch_of[i])
    }

    /// Parses `0,1;2;3,4`: batches separated by `;`, agents by `,`.
    pub fn parse(text: &str, n_agents: usize) -> Result<Self> {
        let batches = text
            .split(';')
            .map(|b| {
                b.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::input(format!("bad agent index `{}`", x.trim())))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(batches, n_agents)
    }

    /// Inverse of [`BatchSequence::parse`].
    pub fn compact(&self) -> String {
        self.batches
            .iter()
            .map(|b| b.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join(";")
    }
}

impl fmt::Display for BatchSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (k, b) in self.batches.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{{")?;
            for (m, i) in b.iter().enumerate() {
                if m > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{i}")?;
            }
            write!(f, "}}")?;
        }
        write!(f, "]")
    }
}
