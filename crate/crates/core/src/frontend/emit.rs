use std::fmt::Write as _;

use super::{parse_angle, Instruction, Program};

/// Renders a program as text, one instruction per line.
pub fn emit_program(p: &Program) -> String {
    let mut out = String::new();
    for instr in p.instructions() {
        emit_instruction(&mut out, instr);
        out.push('\n');
    }
    out
}

fn emit_instruction(out: &mut String, instr: &Instruction) {
    match instr {
        Instruction::Gate(g) => {
            out.push_str(g.kind.name());
            if g.kind.param_count() > 0 {
                let params: Vec<String> = g.params.iter().map(|&a| format_angle(a)).collect();
                let _ = write!(out, "({})", params.join(", "));
            }
            for q in &g.qubits {
                let _ = write!(out, " {q}");
            }
        }
        Instruction::Measure { qubit, target } => {
            let _ = write!(out, "MEASURE {qubit} {target}");
        }
        Instruction::Label(name) => {
            let _ = write!(out, "LABEL @{name}");
        }
        Instruction::Jump(target) => {
            let _ = write!(out, "JUMP @{target}");
        }
        Instruction::CondJump {
            condition,
            target,
            bit,
        } => {
            let _ = write!(out, "{} @{target} {bit}", condition.keyword());
        }
        Instruction::Halt => out.push_str("HALT"),
        Instruction::Declare { name, size } => {
            let _ = write!(out, "DECLARE {name} BIT[{size}]");
        }
        Instruction::BranchProbability(p) => {
            let _ = write!(out, "PRAGMA BRANCH_PROBABILITY {p}");
        }
    }
}

/// Formats an angle, preferring a symbolic multiple of `pi` whenever it
/// parses back to exactly the same value; falls back to the shortest
/// round-tripping decimal.
pub fn format_angle(angle: f64) -> String {
    if angle == 0.0 {
        return "0".to_string();
    }
    let ratio = angle / std::f64::consts::PI;
    for den in [1i64, 2, 3, 4, 6, 8, 12, 16] {
        let num = (ratio * den as f64).round() as i64;
        if num == 0 {
            continue;
        }
        let sign = if num < 0 { "-" } else { "" };
        let abs = num.abs();
        let text = match (abs, den) {
            (1, 1) => format!("{sign}pi"),
            (n, 1) => format!("{sign}{n}*pi"),
            (1, d) => format!("{sign}pi/{d}"),
            (n, d) => format!("{sign}{n}*pi/{d}"),
        };
        if parse_angle(&text) == Ok(angle) {
            return text;
        }
    }
    format!("{angle}")
}
