//! Dominator tree via the iterative two-finger intersection algorithm over
//! reverse postorder.

use std::collections::BTreeMap;

use crate::cfg::{BlockId, ControlFlowGraph};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomError {
    #[error("block {0} is not in the dominator tree")]
    UnknownBlock(BlockId),
}

/// Immediate dominators of every block; the entry maps to itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DominatorTree {
    entry: BlockId,
    idom: BTreeMap<BlockId, BlockId>,
}

/// Computes dominators. Every block of `cfg` must be reachable from the
/// entry; run dead-code elimination first.
pub fn compute_dominators(cfg: &ControlFlowGraph) -> DominatorTree {
    let rpo = cfg.reverse_postorder();
    assert_eq!(
        rpo.len(),
        cfg.len(),
        "dominators require a CFG without unreachable blocks"
    );
    let order: BTreeMap<BlockId, usize> = rpo.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let preds: BTreeMap<BlockId, Vec<BlockId>> =
        rpo.iter().map(|&b| (b, cfg.predecessors(b))).collect();

    let entry = cfg.entry();
    let mut idom: BTreeMap<BlockId, BlockId> = BTreeMap::from([(entry, entry)]);

    let intersect = |idom: &BTreeMap<BlockId, BlockId>, mut a: BlockId, mut b: BlockId| {
        while a != b {
            while order[&a] > order[&b] {
                a = idom[&a];
            }
            while order[&b] > order[&a] {
                b = idom[&b];
            }
        }
        a
    };

    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new_idom: Option<BlockId> = None;
            for &p in &preds[&b] {
                if !idom.contains_key(&p) {
                    continue;
                }
                new_idom = Some(match new_idom {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            let new_idom = new_idom.expect("reachable block has a processed predecessor");
            if idom.get(&b) != Some(&new_idom) {
                idom.insert(b, new_idom);
                changed = true;
            }
        }
    }

    DominatorTree { entry, idom }
}

impl DominatorTree {
    pub fn entry(&self) -> BlockId {
        self.entry
    }

    pub fn idom(&self, b: BlockId) -> Option<BlockId> {
        self.idom.get(&b).copied()
    }

    pub fn contains(&self, b: BlockId) -> bool {
        self.idom.contains_key(&b)
    }

    pub fn blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.idom.keys().copied()
    }

    /// `b` followed by its dominators up to the entry.
    pub fn dominator_chain(&self, b: BlockId) -> Result<Vec<BlockId>, DomError> {
        let mut cur = self.idom.get(&b).map(|_| b).ok_or(DomError::UnknownBlock(b))?;
        let mut chain = vec![cur];
        while cur != self.entry {
            cur = self.idom[&cur];
            chain.push(cur);
        }
        Ok(chain)
    }

    pub fn dominates(&self, a: BlockId, b: BlockId) -> Result<bool, DomError> {
        if !self.contains(a) {
            return Err(DomError::UnknownBlock(a));
        }
        Ok(self.dominator_chain(b)?.contains(&a))
    }

    pub fn strictly_dominates(&self, a: BlockId, b: BlockId) -> Result<bool, DomError> {
        Ok(a != b && self.dominates(a, b)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::build_cfg;
    use crate::frontend::parse_program;

    fn tree(src: &str) -> DominatorTree {
        compute_dominators(&build_cfg(&parse_program(src).unwrap()).unwrap())
    }

    const DIAMOND: &str = "DECLARE ro BIT\nJUMP-WHEN @R ro[0]\nRX(pi) 0\nJUMP @M\n\
                           LABEL @R\nRX(pi) 1\nLABEL @M\nHALT";

    #[test]
    fn single_block() {
        let t = tree("HALT");
        assert_eq!(t.idom(BlockId(0)), Some(BlockId(0)));
        assert!(t.dominates(BlockId(0), BlockId(0)).unwrap());
        assert!(!t.strictly_dominates(BlockId(0), BlockId(0)).unwrap());
    }

    #[test]
    fn chain() {
        let t = tree("RX(pi) 0\nJUMP @A\nLABEL @A\nRX(pi) 0\nJUMP @B\nLABEL @B\nHALT");
        assert_eq!(t.idom(BlockId(1)), Some(BlockId(0)));
        assert_eq!(t.idom(BlockId(2)), Some(BlockId(1)));
        assert!(t.strictly_dominates(BlockId(0), BlockId(2)).unwrap());
        assert_eq!(
            t.dominator_chain(BlockId(2)).unwrap(),
            vec![BlockId(2), BlockId(1), BlockId(0)]
        );
    }

    #[test]
    fn diamond_join_dominated_by_entry() {
        let t = tree(DIAMOND);
        // b0 entry, b1 left arm, b2 right arm, b3 join.
        assert_eq!(t.idom(BlockId(3)), Some(BlockId(0)));
        assert!(!t.strictly_dominates(BlockId(1), BlockId(3)).unwrap());
        assert!(!t.dominates(BlockId(2), BlockId(3)).unwrap());
    }

    #[test]
    fn loop_header_dominates_body() {
        let t = tree(
            "DECLARE ro BIT\nLABEL @H\nRX(pi/2) 0\nMEASURE 0 ro[0]\nJUMP-WHEN @X ro[0]\n\
             RX(pi) 1\nJUMP @H\nLABEL @X\nHALT",
        );
        assert_eq!(t.idom(BlockId(1)), Some(BlockId(0)));
        assert_eq!(t.idom(BlockId(2)), Some(BlockId(0)));
    }

    #[test]
    fn unknown_block() {
        let t = tree("HALT");
        assert_eq!(
            t.dominates(BlockId(0), BlockId(9)),
            Err(DomError::UnknownBlock(BlockId(9)))
        );
        assert_eq!(
            t.dominates(BlockId(9), BlockId(0)),
            Err(DomError::UnknownBlock(BlockId(9)))
        );
    }

    #[test]
    #[should_panic(expected = "unreachable")]
    fn unreachable_blocks_rejected() {
        tree("JUMP @e\nLABEL @dead\nHALT\nLABEL @e\nHALT");
    }
}
