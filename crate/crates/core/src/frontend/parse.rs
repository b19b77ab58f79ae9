use std::f64::consts::PI;

use super::{
    normalize_rz, snap_rx, Gate, GateKind, Instruction, JumpCondition, MemoryRef, ParseError,
    Program, Qubit,
};

/// Keywords of full Quil that this fragment deliberately does not accept.
const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "DEFGATE", "DEFCIRCUIT", "DEFFRAME", "DEFWAVEFORM", "DEFCAL", "RESET", "WAIT", "NOP",
    "MOVE", "EXCHANGE", "CONVERT", "LOAD", "STORE", "ADD", "SUB", "MUL", "DIV", "NEG", "NOT",
    "AND", "IOR", "XOR", "EQ", "GT", "GE", "LT", "LE", "INCLUDE", "PULSE", "CAPTURE",
    "DELAY", "FENCE",
];

pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    parse_program_named("<input>", text)
}

pub fn parse_program_named(source_name: &str, text: &str) -> Result<Program, ParseError> {
    let mut instructions = Vec::new();
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        instructions.push(parse_line(content, line_no)?);
        lines.push(line_no);
    }
    Program::with_lines(instructions, lines, source_name.to_string())
}

fn syntax(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        message: message.into(),
    }
}

fn parse_line(content: &str, line: usize) -> Result<Instruction, ParseError> {
    let head_end = content
        .find(|c: char| c.is_whitespace() || c == '(')
        .unwrap_or(content.len());
    let head = &content[..head_end];
    let rest = &content[head_end..];

    if let Some(kind) = GateKind::from_name(head) {
        return parse_gate(kind, rest, line);
    }

    let args: Vec<&str> = rest.split_whitespace().collect();
    match head {
        "HALT" => {
            expect_args(&args, 0, "HALT", line)?;
            Ok(Instruction::Halt)
        }
        "LABEL" => {
            expect_args(&args, 1, "LABEL", line)?;
            Ok(Instruction::Label(parse_label(args[0], line)?))
        }
        "JUMP" => {
            expect_args(&args, 1, "JUMP", line)?;
            Ok(Instruction::Jump(parse_label(args[0], line)?))
        }
        "JUMP-WHEN" | "JUMP-UNLESS" => {
            expect_args(&args, 2, head, line)?;
            let condition = if head == "JUMP-WHEN" {
                JumpCondition::When
            } else {
                JumpCondition::Unless
            };
            Ok(Instruction::CondJump {
                condition,
                target: parse_label(args[0], line)?,
                bit: parse_memory_ref(args[1], line)?,
            })
        }
        "MEASURE" => {
            if args.len() == 1 {
                return Err(syntax(line, "MEASURE requires a classical target"));
            }
            expect_args(&args, 2, "MEASURE", line)?;
            Ok(Instruction::Measure {
                qubit: parse_qubit(args[0], line)?,
                target: parse_memory_ref(args[1], line)?,
            })
        }
        "DECLARE" => {
            expect_args(&args, 2, "DECLARE", line)?;
            let name = args[0];
            if !is_identifier(name) {
                return Err(syntax(line, format!("invalid memory name `{name}`")));
            }
            Ok(Instruction::Declare {
                name: name.to_string(),
                size: parse_bit_type(args[1], line)?,
            })
        }
        "PRAGMA" => parse_pragma(&args, content, line),
        _ if UNSUPPORTED_KEYWORDS.contains(&head) || is_identifier(head) => {
            Err(ParseError::Unsupported {
                line,
                instruction: head.to_string(),
            })
        }
        _ => Err(syntax(line, format!("unexpected token `{head}`"))),
    }
}

fn expect_args(args: &[&str], n: usize, what: &str, line: usize) -> Result<(), ParseError> {
    if args.len() != n {
        return Err(syntax(
            line,
            format!("{what} expects {n} operand(s), got {}", args.len()),
        ));
    }
    Ok(())
}

fn parse_gate(kind: GateKind, rest: &str, line: usize) -> Result<Instruction, ParseError> {
    let rest = rest.trim_start();
    let (params, operands) = if let Some(after) = rest.strip_prefix('(') {
        let close = after
            .find(')')
            .ok_or_else(|| syntax(line, "unterminated parameter list"))?;
        let params = after[..close]
            .split(',')
            .map(|s| parse_angle(s).map_err(|m| syntax(line, m)))
            .collect::<Result<Vec<_>, _>>()?;
        (params, &after[close + 1..])
    } else {
        (Vec::new(), rest)
    };
    if params.len() != kind.param_count() {
        return Err(syntax(
            line,
            format!(
                "{} takes {} parameter(s), got {}",
                kind.name(),
                kind.param_count(),
                params.len()
            ),
        ));
    }
    let qubits = operands
        .split_whitespace()
        .map(|s| parse_qubit(s, line))
        .collect::<Result<Vec<Qubit>, _>>()?;
    if qubits.len() != kind.arity() {
        return Err(syntax(
            line,
            format!(
                "{} takes {} qubit(s), got {}",
                kind.name(),
                kind.arity(),
                qubits.len()
            ),
        ));
    }
    let gate = match kind {
        GateKind::Rx => {
            let angle = snap_rx(params[0]).ok_or(ParseError::InvalidRxAngle {
                line,
                angle: params[0],
            })?;
            Gate::rx(angle, qubits[0])
        }
        GateKind::Rz => Gate::rz(normalize_rz(params[0]), qubits[0]),
        GateKind::Cz => Gate::cz(qubits[0], qubits[1]),
        GateKind::Swap => Gate::swap(qubits[0], qubits[1]),
    };
    Ok(Instruction::Gate(gate))
}

fn parse_pragma(args: &[&str], content: &str, line: usize) -> Result<Instruction, ParseError> {
    match args.first() {
        Some(&"BRANCH_PROBABILITY") => {
            expect_args(&args[1..], 1, "PRAGMA BRANCH_PROBABILITY", line)?;
            let value: f64 = args[1]
                .parse()
                .map_err(|_| syntax(line, format!("invalid probability `{}`", args[1])))?;
            if !(0.0..=1.0).contains(&value) {
                return Err(ParseError::ProbabilityOutOfRange { line, value });
            }
            Ok(Instruction::BranchProbability(value))
        }
        Some(_) => Err(ParseError::Unsupported {
            line,
            instruction: content.to_string(),
        }),
        None => Err(syntax(line, "empty PRAGMA")),
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn parse_label(token: &str, line: usize) -> Result<String, ParseError> {
    match token.strip_prefix('@') {
        Some(name) if is_identifier(name) => Ok(name.to_string()),
        _ => Err(syntax(line, format!("invalid label `{token}`"))),
    }
}

fn parse_qubit(token: &str, line: usize) -> Result<Qubit, ParseError> {
    if !token.bytes().all(|b| b.is_ascii_digit()) {
        return Err(syntax(line, format!("invalid qubit index `{token}`")));
    }
    token
        .parse()
        .map_err(|_| syntax(line, format!("invalid qubit index `{token}`")))
}

fn parse_memory_ref(token: &str, line: usize) -> Result<MemoryRef, ParseError> {
    let invalid = || syntax(line, format!("invalid memory reference `{token}`"));
    match token.find('[') {
        Some(open) => {
            let name = &token[..open];
            let index = token[open + 1..]
                .strip_suffix(']')
                .ok_or_else(invalid)?;
            if !is_identifier(name) || !index.bytes().all(|b| b.is_ascii_digit()) {
                return Err(invalid());
            }
            Ok(MemoryRef::new(name, index.parse().map_err(|_| invalid())?))
        }
        None if is_identifier(token) => Ok(MemoryRef::new(token, 0)),
        None => Err(invalid()),
    }
}

fn parse_bit_type(token: &str, line: usize) -> Result<usize, ParseError> {
    if token == "BIT" {
        return Ok(1);
    }
    let size = token
        .strip_prefix("BIT[")
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| match token.find('[').map(|i| &token[..i]).unwrap_or(token) {
            "OCTET" | "INTEGER" | "REAL" => ParseError::Unsupported {
                line,
                instruction: format!("DECLARE of type {token}"),
            },
            _ => syntax(line, format!("invalid memory type `{token}`")),
        })?;
    let size: usize = size
        .parse()
        .map_err(|_| syntax(line, format!("invalid memory size `{size}`")))?;
    if size == 0 {
        return Err(syntax(line, "memory region must have positive size"));
    }
    Ok(size)
}

/// Parses an angle expression: decimal literals, `pi`, unary minus, and
/// left-associative `*` and `/`, e.g. `-3*pi/4`.
pub fn parse_angle(text: &str) -> Result<f64, String> {
    let text = text.trim();
    let (negative, body) = match text.strip_prefix('-') {
        Some(b) => (true, b.trim_start()),
        None => (false, text),
    };
    if body.is_empty() {
        return Err(format!("empty angle expression `{text}`"));
    }
    let mut value = None;
    let mut op = '*';
    let mut rest = body;
    loop {
        let end = rest.find(['*', '/']).unwrap_or(rest.len());
        let factor = parse_factor(rest[..end].trim())
            .ok_or_else(|| format!("invalid angle expression `{text}`"))?;
        value = Some(match (value, op) {
            (None, _) => factor,
            (Some(v), '*') => v * factor,
            (Some(v), _) => v / factor,
        });
        if end == rest.len() {
            break;
        }
        op = rest.as_bytes()[end] as char;
        rest = &rest[end + 1..];
    }
    let value = value.unwrap_or_default();
    let value = if negative { -value } else { value };
    if !value.is_finite() {
        return Err(format!("angle `{text}` is not finite"));
    }
    Ok(value)
}

fn parse_factor(token: &str) -> Option<f64> {
    if token == "pi" {
        return Some(PI);
    }
    let valid = !token.is_empty()
        && token
            .bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'+' | b'-'))
        && token.as_bytes()[0].is_ascii_digit();
    if !valid {
        return None;
    }
    token.parse().ok()
}
