//! Basic blocks and the control flow graph.
//!
//! Blocks are keyed by [`BlockId`], assigned in program order starting at the
//! entry block (`b0`). Edges are derived from block terminators, so rewriting
//! a terminator is the only way to change the graph shape.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::{self, Write as _};

use crate::frontend::{Instruction, JumpCondition, MemoryRef, ParseError, Program};

/// Probability assumed for a conditional jump without a pragma.
pub const DEFAULT_BRANCH_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub usize);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Terminator {
    Jump(BlockId),
    CondJump {
        condition: JumpCondition,
        bit: MemoryRef,
        taken: BlockId,
        fallthrough: BlockId,
        /// Probability that the jump is taken.
        probability: f64,
        /// Whether the probability came from a pragma (and is re-emitted).
        explicit: bool,
    },
    Fallthrough(BlockId),
    Halt,
}

impl Terminator {
    pub fn targets(&self) -> Vec<BlockId> {
        match *self {
            Terminator::Jump(t) | Terminator::Fallthrough(t) => vec![t],
            Terminator::CondJump {
                taken, fallthrough, ..
            } => vec![taken, fallthrough],
            Terminator::Halt => Vec::new(),
        }
    }

    /// Redirects every reference to `old` towards `new`.
    pub fn retarget(&mut self, old: BlockId, new: BlockId) {
        match self {
            Terminator::Jump(t) | Terminator::Fallthrough(t) => {
                if *t == old {
                    *t = new;
                }
            }
            Terminator::CondJump {
                taken, fallthrough, ..
            } => {
                if *taken == old {
                    *taken = new;
                }
                if *fallthrough == old {
                    *fallthrough = new;
                }
            }
            Terminator::Halt => {}
        }
    }
}

/// Straight-line run of gates and measurements closed by a terminator.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub label: Option<String>,
    pub instructions: Vec<Instruction>,
    pub terminator: Terminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Taken,
    Fallthrough,
    Unconditional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: BlockId,
    pub to: BlockId,
    pub probability: f64,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CfgError {
    #[error("program has no executable instructions")]
    Empty,
    #[error("control falls off the end of the program after block {0}")]
    FallsOffEnd(BlockId),
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("lowered program is invalid: {0}")]
    Lowering(#[from] ParseError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlFlowGraph {
    blocks: BTreeMap<BlockId, BasicBlock>,
    entry: BlockId,
    memory: Vec<(String, usize)>,
    suppressed: BTreeSet<(BlockId, BlockId)>,
}

/// Builds the CFG with the default 0.5 branch probability.
pub fn build_cfg(p: &Program) -> Result<ControlFlowGraph, CfgError> {
    build_cfg_with_default(p, DEFAULT_BRANCH_PROBABILITY)
}

enum PendingTerm {
    Jump(String),
    CondJump {
        condition: JumpCondition,
        bit: MemoryRef,
        target: String,
        probability: Option<f64>,
    },
    Fallthrough,
    Halt,
}

struct PendingBlock {
    label: Option<String>,
    instructions: Vec<Instruction>,
    term: Option<PendingTerm>,
}

pub fn build_cfg_with_default(
    p: &Program,
    default_probability: f64,
) -> Result<ControlFlowGraph, CfgError> {
    let mut pending: Vec<PendingBlock> = Vec::new();
    let mut open: Option<PendingBlock> = None;
    let mut probability: Option<f64> = None;

    let fresh = |label: Option<String>| PendingBlock {
        label,
        instructions: Vec::new(),
        term: None,
    };

    for instr in p.instructions() {
        match instr {
            Instruction::Declare { .. } => {}
            Instruction::BranchProbability(v) => probability = Some(*v),
            Instruction::Label(name) => {
                if let Some(mut b) = open.take() {
                    b.term = Some(PendingTerm::Fallthrough);
                    pending.push(b);
                }
                open = Some(fresh(Some(name.clone())));
            }
            Instruction::Gate(_) | Instruction::Measure { .. } => {
                open.get_or_insert_with(|| fresh(None))
                    .instructions
                    .push(instr.clone());
            }
            Instruction::Jump(_) | Instruction::CondJump { .. } | Instruction::Halt => {
                let mut b = open.take().unwrap_or_else(|| fresh(None));
                b.term = Some(match instr {
                    Instruction::Jump(t) => PendingTerm::Jump(t.clone()),
                    Instruction::CondJump {
                        condition,
                        target,
                        bit,
                    } => PendingTerm::CondJump {
                        condition: *condition,
                        bit: bit.clone(),
                        target: target.clone(),
                        probability: probability.take(),
                    },
                    _ => PendingTerm::Halt,
                });
                pending.push(b);
            }
        }
    }
    if let Some(mut b) = open.take() {
        b.term = Some(PendingTerm::Fallthrough);
        pending.push(b);
    }
    if pending.is_empty() {
        return Err(CfgError::Empty);
    }

    let by_label: BTreeMap<String, BlockId> = pending
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.label.clone().map(|l| (l, BlockId(i))))
        .collect();
    let n = pending.len();
    let mut blocks = BTreeMap::new();
    for (i, b) in pending.into_iter().enumerate() {
        let id = BlockId(i);
        let next = || {
            if i + 1 < n {
                Ok(BlockId(i + 1))
            } else {
                Err(CfgError::FallsOffEnd(id))
            }
        };
        // Labels were validated by the program, so lookups cannot fail.
        let resolve = |label: &str| by_label[label];
        let terminator = match b.term.expect("every pending block is closed") {
            PendingTerm::Jump(t) => Terminator::Jump(resolve(&t)),
            PendingTerm::CondJump {
                condition,
                bit,
                target,
                probability,
            } => Terminator::CondJump {
                condition,
                bit,
                taken: resolve(&target),
                fallthrough: next()?,
                probability: probability.unwrap_or(default_probability),
                explicit: probability.is_some(),
            },
            PendingTerm::Fallthrough => Terminator::Fallthrough(next()?),
            PendingTerm::Halt => Terminator::Halt,
        };
        blocks.insert(
            id,
            BasicBlock {
                id,
                label: b.label,
                instructions: b.instructions,
                terminator,
            },
        );
    }

    Ok(ControlFlowGraph {
        blocks,
        entry: BlockId(0),
        memory: p.declared_memory(),
        suppressed: BTreeSet::new(),
    })
}

impl ControlFlowGraph {
    pub fn entry(&self) -> BlockId {
        self.entry
    }

    pub fn blocks(&self) -> impl Iterator<Item = &BasicBlock> {
        self.blocks.values()
    }

    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.blocks.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.blocks.contains_key(&id)
    }

    pub fn block(&self, id: BlockId) -> Option<&BasicBlock> {
        self.blocks.get(&id)
    }

    pub fn block_mut(&mut self, id: BlockId) -> Option<&mut BasicBlock> {
        self.blocks.get_mut(&id)
    }

    /// Declared classical memory, in declaration order.
    pub fn memory(&self) -> &[(String, usize)] {
        &self.memory
    }

    /// Label of the block if it has one, otherwise its id.
    pub fn block_name(&self, id: BlockId) -> String {
        self.blocks
            .get(&id)
            .and_then(|b| b.label.clone())
            .unwrap_or_else(|| id.to_string())
    }

    pub fn exit_blocks(&self) -> BTreeSet<BlockId> {
        self.blocks
            .values()
            .filter(|b| b.terminator == Terminator::Halt)
            .map(|b| b.id)
            .collect()
    }

    /// Out-edges of a block. A conditional jump whose two targets coincide
    /// yields a single edge of probability 1.
    pub fn successors(&self, id: BlockId) -> Vec<Edge> {
        let Some(b) = self.blocks.get(&id) else {
            return Vec::new();
        };
        let edge = |to, probability, kind| Edge {
            from: id,
            to,
            probability,
            kind,
        };
        match b.terminator {
            Terminator::Jump(t) => vec![edge(t, 1.0, EdgeKind::Unconditional)],
            Terminator::Fallthrough(t) => vec![edge(t, 1.0, EdgeKind::Fallthrough)],
            Terminator::CondJump {
                taken,
                fallthrough,
                probability,
                ..
            } => {
                if taken == fallthrough {
                    vec![edge(taken, 1.0, EdgeKind::Unconditional)]
                } else {
                    vec![
                        edge(taken, probability, EdgeKind::Taken),
                        edge(fallthrough, 1.0 - probability, EdgeKind::Fallthrough),
                    ]
                }
            }
            Terminator::Halt => Vec::new(),
        }
    }

    pub fn edges(&self) -> Vec<Edge> {
        self.blocks
            .keys()
            .flat_map(|&id| self.successors(id))
            .collect()
    }

    /// Edges that carry expected-execution flow: all edges minus those
    /// suppressed by infinite-loop pruning.
    pub fn flow_edges(&self) -> Vec<Edge> {
        self.edges()
            .into_iter()
            .filter(|e| !self.suppressed.contains(&(e.from, e.to)))
            .collect()
    }

    pub fn suppressed_edges(&self) -> &BTreeSet<(BlockId, BlockId)> {
        &self.suppressed
    }

    pub(crate) fn set_suppressed(&mut self, edges: BTreeSet<(BlockId, BlockId)>) {
        self.suppressed = edges;
    }

    pub fn predecessors(&self, id: BlockId) -> Vec<BlockId> {
        let mut preds: Vec<BlockId> = self
            .edges()
            .into_iter()
            .filter(|e| e.to == id)
            .map(|e| e.from)
            .collect();
        preds.dedup();
        preds
    }

    pub fn successor_ids(&self, id: BlockId) -> Vec<BlockId> {
        self.successors(id).into_iter().map(|e| e.to).collect()
    }

    /// Forward reachability from the entry block.
    pub fn reachable_from_entry(&self) -> BTreeSet<BlockId> {
        let mut seen = BTreeSet::from([self.entry]);
        let mut queue = VecDeque::from([self.entry]);
        while let Some(b) = queue.pop_front() {
            for s in self.successor_ids(b) {
                if seen.insert(s) {
                    queue.push_back(s);
                }
            }
        }
        seen
    }

    /// Blocks from which some path reaches a `HALT` block.
    pub fn can_reach_exit(&self) -> BTreeSet<BlockId> {
        let mut preds: BTreeMap<BlockId, Vec<BlockId>> = BTreeMap::new();
        for e in self.edges() {
            preds.entry(e.to).or_default().push(e.from);
        }
        let mut seen = self.exit_blocks();
        let mut queue: VecDeque<BlockId> = seen.iter().copied().collect();
        while let Some(b) = queue.pop_front() {
            for &p in preds.get(&b).into_iter().flatten() {
                if seen.insert(p) {
                    queue.push_back(p);
                }
            }
        }
        seen
    }

    /// Drops every block that cannot be reached from the entry.
    pub fn eliminate_dead_code(&self) -> ControlFlowGraph {
        let live = self.reachable_from_entry();
        let mut out = self.clone();
        out.blocks.retain(|id, _| live.contains(id));
        out.suppressed
            .retain(|(a, b)| live.contains(a) && live.contains(b));
        out
    }

    pub fn next_block_id(&self) -> BlockId {
        BlockId(self.blocks.keys().next_back().map_or(0, |b| b.0 + 1))
    }

    /// Adds a block under a fresh id.
    pub fn add_block(
        &mut self,
        label: Option<String>,
        instructions: Vec<Instruction>,
        terminator: Terminator,
    ) -> BlockId {
        let id = self.next_block_id();
        self.blocks.insert(
            id,
            BasicBlock {
                id,
                label,
                instructions,
                terminator,
            },
        );
        id
    }

    pub fn labels(&self) -> BTreeSet<String> {
        self.blocks
            .values()
            .filter_map(|b| b.label.clone())
            .collect()
    }

    /// Returns `base`, or `base_N` for the smallest N that does not collide
    /// with an existing label or any name in `taken`.
    pub fn fresh_label(&self, base: &str, taken: &BTreeSet<String>) -> String {
        let existing = self.labels();
        let free = |s: &str| !existing.contains(s) && !taken.contains(s);
        if free(base) {
            return base.to_string();
        }
        (1..)
            .map(|i| format!("{base}_{i}"))
            .find(|s| free(s))
            .expect("unbounded suffix search")
    }

    /// Blocks in reverse postorder of a depth-first traversal from the entry
    /// (successors visited in id order). Unreachable blocks are omitted.
    pub fn reverse_postorder(&self) -> Vec<BlockId> {
        let mut visited = BTreeSet::new();
        let mut post = Vec::with_capacity(self.blocks.len());
        let mut stack: Vec<(BlockId, Vec<BlockId>)> = Vec::new();
        visited.insert(self.entry);
        stack.push((self.entry, self.sorted_successors(self.entry)));
        while let Some((node, succs)) = stack.last_mut() {
            if let Some(next) = succs.pop() {
                if visited.insert(next) {
                    let s = self.sorted_successors(next);
                    stack.push((next, s));
                }
            } else {
                post.push(*node);
                stack.pop();
            }
        }
        post.reverse();
        post
    }

    /// Successors in descending id order, so that popping yields ascending.
    fn sorted_successors(&self, id: BlockId) -> Vec<BlockId> {
        let mut s = self.successor_ids(id);
        s.sort_unstable_by(|a, b| b.cmp(a));
        s.dedup();
        s
    }

    /// Checks that out-edge probabilities of every non-exit block sum to 1.
    pub fn probabilities_consistent(&self, tol: f64) -> bool {
        self.blocks.keys().all(|&id| {
            let out = self.successors(id);
            out.is_empty() || (out.iter().map(|e| e.probability).sum::<f64>() - 1.0).abs() <= tol
        })
    }

    /// Lowers the graph back into a linear program. The entry block is placed
    /// first, the rest follow in id order; labels are generated for unnamed
    /// jump targets and explicit jumps are added where a fall-through no
    /// longer lands on the next block.
    pub fn to_program(&self) -> Result<Program, CfgError> {
        let mut order: Vec<BlockId> = vec![self.entry];
        order.extend(self.blocks.keys().copied().filter(|&b| b != self.entry));
        let next_of: BTreeMap<BlockId, Option<BlockId>> = order
            .iter()
            .enumerate()
            .map(|(i, &b)| (b, order.get(i + 1).copied()))
            .collect();

        let mut needs_label = BTreeSet::new();
        for &id in &order {
            let next = next_of[&id];
            match self.blocks[&id].terminator {
                Terminator::Jump(t) => {
                    needs_label.insert(t);
                }
                Terminator::CondJump {
                    taken, fallthrough, ..
                } => {
                    needs_label.insert(taken);
                    if Some(fallthrough) != next {
                        needs_label.insert(fallthrough);
                    }
                }
                Terminator::Fallthrough(t) => {
                    if Some(t) != next {
                        needs_label.insert(t);
                    }
                }
                Terminator::Halt => {}
            }
        }
        let mut generated = BTreeSet::new();
        let mut names: BTreeMap<BlockId, String> = BTreeMap::new();
        for &id in &order {
            let block = &self.blocks[&id];
            if let Some(l) = &block.label {
                names.insert(id, l.clone());
            } else if needs_label.contains(&id) {
                let l = self.fresh_label(&format!("block_{}", id.0), &generated);
                generated.insert(l.clone());
                names.insert(id, l);
            }
        }

        let mut out: Vec<Instruction> = self
            .memory
            .iter()
            .map(|(name, size)| Instruction::Declare {
                name: name.clone(),
                size: *size,
            })
            .collect();
        for &id in &order {
            let block = &self.blocks[&id];
            let next = next_of[&id];
            if let Some(name) = names.get(&id) {
                out.push(Instruction::Label(name.clone()));
            }
            out.extend(block.instructions.iter().cloned());
            match &block.terminator {
                Terminator::Jump(t) => out.push(Instruction::Jump(names[t].clone())),
                Terminator::CondJump {
                    condition,
                    bit,
                    taken,
                    fallthrough,
                    probability,
                    explicit,
                } => {
                    if *explicit {
                        out.push(Instruction::BranchProbability(*probability));
                    }
                    out.push(Instruction::CondJump {
                        condition: *condition,
                        target: names[taken].clone(),
                        bit: bit.clone(),
                    });
                    if Some(*fallthrough) != next {
                        out.push(Instruction::Jump(names[fallthrough].clone()));
                    }
                }
                Terminator::Fallthrough(t) => {
                    if Some(*t) != next {
                        out.push(Instruction::Jump(names[t].clone()));
                    }
                }
                Terminator::Halt => out.push(Instruction::Halt),
            }
        }
        Ok(Program::from_instructions(out)?)
    }

    /// Graphviz rendering: one node per block with its instruction count,
    /// edges labelled with their probability.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph cfg {\n  node [shape=box];\n");
        let exits = self.exit_blocks();
        for b in self.blocks.values() {
            let mut tags = Vec::new();
            if b.id == self.entry {
                tags.push("entry");
            }
            if exits.contains(&b.id) {
                tags.push("exit");
            }
            let tags = if tags.is_empty() {
                String::new()
            } else {
                format!(" ({})", tags.join(", "))
            };
            let _ = writeln!(
                out,
                "  {} [label=\"{}{}\\n{} instr\"];",
                b.id,
                self.block_name(b.id),
                tags,
                b.instructions.len()
            );
        }
        for e in self.edges() {
            let style = if self.suppressed.contains(&(e.from, e.to)) {
                ", style=dashed"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "  {} -> {} [label=\"{}\"{}];",
                e.from, e.to, e.probability, style
            );
        }
        out.push_str("}\n");
        out
    }
}
