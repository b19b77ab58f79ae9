//! Quil-subset instruction language: AST, parser and emitter.
//!
//! The accepted fragment is the one needed for control-flow programs on a
//! native gate set: `DECLARE`, `RX`, `RZ`, `CZ`, `SWAP`, `MEASURE`, `LABEL`,
//! `JUMP`, `JUMP-WHEN`, `JUMP-UNLESS`, `HALT` and
//! `PRAGMA BRANCH_PROBABILITY <p>`. Everything else is rejected.

mod emit;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;

pub use emit::{emit_program, format_angle};
pub use parse::{parse_angle, parse_program, parse_program_named};

/// Index of a qubit. Logical before allocation, physical after.
pub type Qubit = u32;

/// Allowed `RX` rotation multiples of pi.
pub const RX_MULTIPLES: [f64; 4] = [-1.0, -0.5, 0.5, 1.0];

const RX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemoryRef {
    pub name: String,
    pub index: usize,
}

impl MemoryRef {
    pub fn new(name: impl Into<String>, index: usize) -> Self {
        Self {
            name: name.into(),
            index,
        }
    }
}

impl fmt::Display for MemoryRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.name, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GateKind {
    Rx,
    Rz,
    Cz,
    Swap,
}

impl GateKind {
    pub fn name(self) -> &'static str {
        match self {
            GateKind::Rx => "RX",
            GateKind::Rz => "RZ",
            GateKind::Cz => "CZ",
            GateKind::Swap => "SWAP",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "RX" => Some(GateKind::Rx),
            "RZ" => Some(GateKind::Rz),
            "CZ" => Some(GateKind::Cz),
            "SWAP" => Some(GateKind::Swap),
            _ => None,
        }
    }

    pub fn arity(self) -> usize {
        match self {
            GateKind::Rx | GateKind::Rz => 1,
            GateKind::Cz | GateKind::Swap => 2,
        }
    }

    pub fn param_count(self) -> usize {
        match self {
            GateKind::Rx | GateKind::Rz => 1,
            GateKind::Cz | GateKind::Swap => 0,
        }
    }
}

/// A gate application.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub params: Vec<f64>,
    pub qubits: Vec<Qubit>,
}

impl Gate {
    pub fn rx(angle: f64, q: Qubit) -> Self {
        Self {
            kind: GateKind::Rx,
            params: vec![angle],
            qubits: vec![q],
        }
    }

    /// `RZ` with the angle wrapped into `[-pi, pi]`.
    pub fn rz(angle: f64, q: Qubit) -> Self {
        Self {
            kind: GateKind::Rz,
            params: vec![normalize_rz(angle)],
            qubits: vec![q],
        }
    }

    pub fn cz(a: Qubit, b: Qubit) -> Self {
        Self {
            kind: GateKind::Cz,
            params: Vec::new(),
            qubits: vec![a, b],
        }
    }

    pub fn swap(a: Qubit, b: Qubit) -> Self {
        Self {
            kind: GateKind::Swap,
            params: Vec::new(),
            qubits: vec![a, b],
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        self.kind.arity() == 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JumpCondition {
    When,
    Unless,
}

impl JumpCondition {
    pub fn keyword(self) -> &'static str {
        match self {
            JumpCondition::When => "JUMP-WHEN",
            JumpCondition::Unless => "JUMP-UNLESS",
        }
    }

    /// Whether the jump is taken for the given condition bit.
    pub fn taken(self, bit: bool) -> bool {
        match self {
            JumpCondition::When => bit,
            JumpCondition::Unless => !bit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instruction {
    Gate(Gate),
    Measure {
        qubit: Qubit,
        target: MemoryRef,
    },
    Label(String),
    Jump(String),
    CondJump {
        condition: JumpCondition,
        target: String,
        bit: MemoryRef,
    },
    Halt,
    Declare {
        name: String,
        size: usize,
    },
    /// Probability that the immediately following conditional jump is taken.
    BranchProbability(f64),
}

impl Instruction {
    pub fn is_control(&self) -> bool {
        matches!(
            self,
            Instruction::Label(_)
                | Instruction::Jump(_)
                | Instruction::CondJump { .. }
                | Instruction::Halt
        )
    }

    pub fn qubits(&self) -> &[Qubit] {
        match self {
            Instruction::Gate(g) => &g.qubits,
            Instruction::Measure { qubit, .. } => std::slice::from_ref(qubit),
            _ => &[],
        }
    }
}

/// Parser and validation errors. Line numbers are 1-based.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unsupported instruction `{instruction}`")]
    Unsupported { line: usize, instruction: String },
    #[error("line {line}: undefined label \"{label}\"")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: duplicate label \"{label}\"")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: branch probability {value} is outside [0, 1]")]
    ProbabilityOutOfRange { line: usize, value: f64 },
    #[error("line {line}: RX angle {angle} is not one of -pi, -pi/2, pi/2, pi")]
    InvalidRxAngle { line: usize, angle: f64 },
    #[error("line {line}: {reference} is outside declared classical memory")]
    UndeclaredMemory { line: usize, reference: String },
    #[error("line {line}: BRANCH_PROBABILITY pragma must be followed by JUMP-WHEN or JUMP-UNLESS")]
    DanglingPragma { line: usize },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::Syntax { line, .. }
            | ParseError::Unsupported { line, .. }
            | ParseError::UndefinedLabel { line, .. }
            | ParseError::DuplicateLabel { line, .. }
            | ParseError::ProbabilityOutOfRange { line, .. }
            | ParseError::InvalidRxAngle { line, .. }
            | ParseError::UndeclaredMemory { line, .. }
            | ParseError::DanglingPragma { line } => *line,
        }
    }
}

/// A validated instruction list.
///
/// Equality compares instructions only; source positions and the source name
/// are provenance and do not take part.
#[derive(Debug, Clone)]
pub struct Program {
    instructions: Vec<Instruction>,
    lines: Vec<usize>,
    source_name: String,
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.instructions == other.instructions
    }
}

impl Program {
    /// Validates an instruction list built in memory. Positions are the
    /// 1-based instruction indices.
    pub fn from_instructions(instructions: Vec<Instruction>) -> Result<Self, ParseError> {
        let lines = (1..=instructions.len()).collect();
        Self::with_lines(instructions, lines, "<memory>".to_string())
    }

    pub(crate) fn with_lines(
        instructions: Vec<Instruction>,
        lines: Vec<usize>,
        source_name: String,
    ) -> Result<Self, ParseError> {
        debug_assert_eq!(instructions.len(), lines.len());
        let program = Self {
            instructions,
            lines,
            source_name,
        };
        program.validate()?;
        Ok(program)
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    /// Source line of each instruction.
    pub fn lines(&self) -> &[usize] {
        &self.lines
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Declared classical memory regions in declaration order.
    pub fn declared_memory(&self) -> Vec<(String, usize)> {
        self.instructions
            .iter()
            .filter_map(|i| match i {
                Instruction::Declare { name, size } => Some((name.clone(), *size)),
                _ => None,
            })
            .collect()
    }

    /// Every qubit index used by a gate or measurement.
    pub fn qubits(&self) -> BTreeSet<Qubit> {
        self.instructions
            .iter()
            .flat_map(|i| i.qubits().iter().copied())
            .collect()
    }

    /// Number of qubits needed to address every index, i.e. `max + 1`.
    pub fn qubit_span(&self) -> usize {
        self.qubits().last().map_or(0, |&q| q as usize + 1)
    }

    /// Structural equality with parameters compared within `tol`.
    pub fn approx_eq(&self, other: &Program, tol: f64) -> bool {
        self.instructions.len() == other.instructions.len()
            && self
                .instructions
                .iter()
                .zip(&other.instructions)
                .all(|(a, b)| instruction_approx_eq(a, b, tol))
    }

    fn validate(&self) -> Result<(), ParseError> {
        let mut labels: BTreeMap<&str, usize> = BTreeMap::new();
        let mut memory: BTreeMap<&str, usize> = BTreeMap::new();
        for (instr, &line) in self.instructions.iter().zip(&self.lines) {
            match instr {
                Instruction::Label(name) => {
                    if labels.insert(name, line).is_some() {
                        return Err(ParseError::DuplicateLabel {
                            line,
                            label: name.clone(),
                        });
                    }
                }
                Instruction::Declare { name, size } => {
                    if *size == 0 {
                        return Err(ParseError::Syntax {
                            line,
                            message: format!("memory region `{name}` must have positive size"),
                        });
                    }
                    if memory.insert(name, *size).is_some() {
                        return Err(ParseError::Syntax {
                            line,
                            message: format!("memory region `{name}` declared twice"),
                        });
                    }
                }
                _ => {}
            }
        }

        let check_ref = |r: &MemoryRef, line: usize| -> Result<(), ParseError> {
            match memory.get(r.name.as_str()) {
                Some(&size) if r.index < size => Ok(()),
                _ => Err(ParseError::UndeclaredMemory {
                    line,
                    reference: r.to_string(),
                }),
            }
        };

        for (pos, (instr, &line)) in self.instructions.iter().zip(&self.lines).enumerate() {
            match instr {
                Instruction::Gate(g) => validate_gate(g, line)?,
                Instruction::Measure { target, .. } => check_ref(target, line)?,
                Instruction::Jump(target) => {
                    if !labels.contains_key(target.as_str()) {
                        return Err(ParseError::UndefinedLabel {
                            line,
                            label: target.clone(),
                        });
                    }
                }
                Instruction::CondJump { target, bit, .. } => {
                    if !labels.contains_key(target.as_str()) {
                        return Err(ParseError::UndefinedLabel {
                            line,
                            label: target.clone(),
                        });
                    }
                    check_ref(bit, line)?;
                }
                Instruction::BranchProbability(p) => {
                    if !(0.0..=1.0).contains(p) {
                        return Err(ParseError::ProbabilityOutOfRange { line, value: *p });
                    }
                    if !matches!(
                        self.instructions.get(pos + 1),
                        Some(Instruction::CondJump { .. })
                    ) {
                        return Err(ParseError::DanglingPragma { line });
                    }
                }
                Instruction::Label(_) | Instruction::Halt | Instruction::Declare { .. } => {}
            }
        }
        Ok(())
    }
}

fn validate_gate(g: &Gate, line: usize) -> Result<(), ParseError> {
    let kind = g.kind;
    if g.qubits.len() != kind.arity() {
        return Err(ParseError::Syntax {
            line,
            message: format!(
                "{} takes {} qubit(s), got {}",
                kind.name(),
                kind.arity(),
                g.qubits.len()
            ),
        });
    }
    if g.params.len() != kind.param_count() {
        return Err(ParseError::Syntax {
            line,
            message: format!(
                "{} takes {} parameter(s), got {}",
                kind.name(),
                kind.param_count(),
                g.params.len()
            ),
        });
    }
    if kind.arity() == 2 && g.qubits[0] == g.qubits[1] {
        return Err(ParseError::Syntax {
            line,
            message: format!("{} requires two distinct qubits", kind.name()),
        });
    }
    match kind {
        GateKind::Rx if !is_allowed_rx(g.params[0]) => Err(ParseError::InvalidRxAngle {
            line,
            angle: g.params[0],
        }),
        GateKind::Rz if !(-PI..=PI).contains(&g.params[0]) => Err(ParseError::Syntax {
            line,
            message: format!("RZ angle {} not normalized into [-pi, pi]", g.params[0]),
        }),
        _ => Ok(()),
    }
}

pub(crate) fn is_allowed_rx(angle: f64) -> bool {
    RX_MULTIPLES
        .iter()
        .any(|k| (angle - k * PI).abs() <= RX_TOLERANCE)
}

/// Snaps an allowed `RX` angle onto its exact multiple of pi.
pub(crate) fn snap_rx(angle: f64) -> Option<f64> {
    RX_MULTIPLES
        .iter()
        .map(|k| k * PI)
        .find(|a| (angle - a).abs() <= RX_TOLERANCE)
}

/// Wraps an angle into `[-pi, pi]`. Values already in range are untouched.
pub fn normalize_rz(angle: f64) -> f64 {
    if (-PI..=PI).contains(&angle) {
        angle
    } else {
        (angle + PI).rem_euclid(2.0 * PI) - PI
    }
}

fn instruction_approx_eq(a: &Instruction, b: &Instruction, tol: f64) -> bool {
    match (a, b) {
        (Instruction::Gate(x), Instruction::Gate(y)) => {
            x.kind == y.kind
                && x.qubits == y.qubits
                && x.params.len() == y.params.len()
                && x.params.iter().zip(&y.params).all(|(p, q)| (p - q).abs() <= tol)
        }
        (Instruction::BranchProbability(p), Instruction::BranchProbability(q)) => {
            (p - q).abs() <= tol
        }
        _ => a == b,
    }
}
