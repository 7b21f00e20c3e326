use crate::model::Topology;

/// One agent's copies of a neighbor's net-power block, with the multipliers
/// attached to those copies.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyBlock {
    pub owner: usize,
    pub values: Vec<f64>,
    pub multipliers: Vec<f64>,
}

/// What an agent publishes at the end of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentMessage {
    pub sender: usize,
    pub iteration: usize,
    pub global_block: Vec<f64>,
    pub copy_blocks: Vec<CopyBlock>,
}

impl AgentMessage {
    pub fn copies_of(&self, owner: usize) -> Option<&CopyBlock> {
        self.copy_blocks.iter().find(|b| b.owner == owner)
    }
}

/// Delivery layer between agents. Implementations receive every agent's
/// outgoing message for a round and return one inbox per agent.
pub trait Transport: Send {
    fn exchange(&mut self, outbox: Vec<AgentMessage>, topology: &Topology) -> Vec<Vec<AgentMessage>>;
}

/// In-process delivery: each message goes to every agent that copies the
/// sender or is copied by it, in ascending sender order.
#[derive(Debug, Default, Clone, Copy)]
pub struct Mailbox;

impl Transport for Mailbox {
    fn exchange(&mut self, outbox: Vec<AgentMessage>, topology: &Topology) -> Vec<Vec<AgentMessage>> {
        let n = topology.n_agents();
        let mut inboxes = vec![Vec::new(); n];
        let mut sorted = outbox;
        sorted.sort_by_key(|m| m.sender);
        for msg in sorted {
            for (i, inbox) in inboxes.iter_mut().enumerate() {
                if i == msg.sender {
                    continue;
                }
                let linked = topology.neighbors(i).contains(&msg.sender)
                    || topology.neighbors(msg.sender).contains(&i);
                if linked {
                    inbox.push(msg.clone());
                }
            }
        }
        inboxes
    }
}
