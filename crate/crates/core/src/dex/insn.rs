//! Dalvik instruction decoding by format.

use super::DexError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    F10x,
    F12x,
    F11n,
    F11x,
    F10t,
    F20t,
    F22x,
    F21t,
    F21s,
    F21h,
    F21c,
    F23x,
    F22b,
    F22t,
    F22s,
    F22c,
    F30t,
    F32x,
    F31i,
    F31t,
    F31c,
    F35c,
    F3rc,
    F45cc,
    F4rcc,
    F51l,
}

impl Format {
    pub fn units(self) -> usize {
        use Format::*;
        match self {
            F10x | F12x | F11n | F11x | F10t => 1,
            F20t | F22x | F21t | F21s | F21h | F21c | F23x | F22b | F22t | F22s | F22c => 2,
            F30t | F32x | F31i | F31t | F31c | F35c | F3rc => 3,
            F45cc | F4rcc => 4,
            F51l => 5,
        }
    }
}

pub fn format_of(op: u8) -> Format {
    use Format::*;
    match op {
        0x00 => F10x,
        0x01 | 0x04 | 0x07 => F12x,
        0x02 | 0x05 | 0x08 => F22x,
        0x03 | 0x06 | 0x09 => F32x,
        0x0a..=0x0d => F11x,
        0x0e => F10x,
        0x0f..=0x11 => F11x,
        0x12 => F11n,
        0x13 | 0x16 => F21s,
        0x14 | 0x17 => F31i,
        0x15 | 0x19 => F21h,
        0x18 => F51l,
        0x1a | 0x1c | 0x1f | 0x22 => F21c,
        0x1b => F31c,
        0x1d | 0x1e => F11x,
        0x20 | 0x23 => F22c,
        0x21 => F12x,
        0x24 => F35c,
        0x25 => F3rc,
        0x26 => F31t,
        0x27 => F11x,
        0x28 => F10t,
        0x29 => F20t,
        0x2a => F30t,
        0x2b | 0x2c => F31t,
        0x2d..=0x31 => F23x,
        0x32..=0x37 => F22t,
        0x38..=0x3d => F21t,
        0x3e..=0x43 => F10x,
        0x44..=0x51 => F23x,
        0x52..=0x5f => F22c,
        0x60..=0x6d => F21c,
        0x6e..=0x72 => F35c,
        0x73 => F10x,
        0x74..=0x78 => F3rc,
        0x79 | 0x7a => F10x,
        0x7b..=0x8f => F12x,
        0x90..=0xaf => F23x,
        0xb0..=0xcf => F12x,
        0xd0..=0xd7 => F22s,
        0xd8..=0xe2 => F22b,
        0xe3..=0xf9 => F10x,
        0xfa => F45cc,
        0xfb => F4rcc,
        0xfc => F35c,
        0xfd => F3rc,
        0xfe | 0xff => F21c,
    }
}

/// One decoded instruction. Operand slots follow the format naming:
/// `a`/`b`/`c` are registers (or counts), `index` a pool index, `literal`
/// an immediate and `target` a branch offset relative to this instruction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Insn {
    pub offset: u32,
    pub opcode: u8,
    pub units: u32,
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub index: u32,
    pub literal: i64,
    pub target: i32,
    pub args: Vec<u32>,
}

impl Insn {
    pub fn is_invoke(&self) -> bool {
        matches!(self.opcode, 0x6e..=0x72 | 0x74..=0x78)
    }

    pub fn branch_target(&self) -> Option<u32> {
        match format_of(self.opcode) {
            Format::F10t | Format::F20t | Format::F30t | Format::F21t | Format::F22t => {
                Some((self.offset as i64 + self.target as i64) as u32)
            }
            _ => None,
        }
    }

    /// True when control never falls through to the next instruction.
    pub fn ends_flow(&self) -> bool {
        matches!(self.opcode, 0x0e..=0x11 | 0x27 | 0x28..=0x2a)
    }
}

const PACKED_SWITCH_PAYLOAD: u16 = 0x0100;
const SPARSE_SWITCH_PAYLOAD: u16 = 0x0200;
const FILL_ARRAY_DATA_PAYLOAD: u16 = 0x0300;

/// Length in code units of a payload pseudo-instruction at `at`, if any.
fn payload_units(code: &[u16], at: usize) -> Result<Option<usize>, DexError> {
    let ident = code[at];
    let field = |i: usize| -> Result<u16, DexError> {
        code.get(at + i)
            .copied()
            .ok_or_else(|| DexError::Malformed(format!("payload at {at} truncated")))
    };
    let units = match ident {
        PACKED_SWITCH_PAYLOAD => usize::from(field(1)?) * 2 + 4,
        SPARSE_SWITCH_PAYLOAD => usize::from(field(1)?) * 4 + 2,
        FILL_ARRAY_DATA_PAYLOAD => {
            let width = usize::from(field(1)?);
            let size = usize::from(field(2)?) | (usize::from(field(3)?) << 16);
            (size * width + 1) / 2 + 4
        }
        _ => return Ok(None),
    };
    Ok(Some(units))
}

/// Branch targets (relative offsets) listed in a switch payload.
pub fn switch_targets(code: &[u16], payload_at: usize) -> Vec<i32> {
    let word = |i: usize| -> Option<i32> {
        let lo = *code.get(payload_at + i)? as u32;
        let hi = *code.get(payload_at + i + 1)? as u32;
        Some((lo | (hi << 16)) as i32)
    };
    let Some(&ident) = code.get(payload_at) else {
        return Vec::new();
    };
    let Some(&size) = code.get(payload_at + 1) else {
        return Vec::new();
    };
    let size = usize::from(size);
    match ident {
        PACKED_SWITCH_PAYLOAD => (0..size).filter_map(|i| word(4 + i * 2)).collect(),
        SPARSE_SWITCH_PAYLOAD => (0..size).filter_map(|i| word(2 + size * 2 + i * 2)).collect(),
        _ => Vec::new(),
    }
}

/// Decodes a method body, skipping payload tables.
pub fn decode(code: &[u16]) -> Result<Vec<Insn>, DexError> {
    let mut out = Vec::new();
    let mut at = 0usize;
    while at < code.len() {
        let w0 = code[at];
        let op = (w0 & 0xff) as u8;
        if op == 0x00 {
            if let Some(units) = payload_units(code, at)? {
                at += units;
                continue;
            }
        }
        let fmt = format_of(op);
        let units = fmt.units();
        if at + units > code.len() {
            return Err(DexError::Malformed(format!("instruction at {at} runs past code end")));
        }
        let w = &code[at..at + units];
        let hi = u32::from(w0 >> 8);
        let mut insn = Insn {
            offset: at as u32,
            opcode: op,
            units: units as u32,
            ..Default::default()
        };
        let u32_at = |i: usize| u32::from(w[i]) | (u32::from(w[i + 1]) << 16);
        use Format::*;
        match fmt {
            F10x => {}
            F12x => {
                insn.a = hi & 0xf;
                insn.b = hi >> 4;
            }
            F11n => {
                insn.a = hi & 0xf;
                insn.literal = i64::from(((hi >> 4) as i8) << 4 >> 4);
            }
            F11x => insn.a = hi,
            F10t => insn.target = i32::from(hi as u8 as i8),
            F20t => insn.target = i32::from(w[1] as i16),
            F22x => {
                insn.a = hi;
                insn.b = u32::from(w[1]);
            }
            F21t => {
                insn.a = hi;
                insn.target = i32::from(w[1] as i16);
            }
            F21s => {
                insn.a = hi;
                insn.literal = i64::from(w[1] as i16);
            }
            F21h => {
                insn.a = hi;
                let shift = if op == 0x19 { 48 } else { 16 };
                insn.literal = i64::from(w[1] as i16) << shift;
            }
            F21c => {
                insn.a = hi;
                insn.index = u32::from(w[1]);
            }
            F23x => {
                insn.a = hi;
                insn.b = u32::from(w[1] & 0xff);
                insn.c = u32::from(w[1] >> 8);
            }
            F22b => {
                insn.a = hi;
                insn.b = u32::from(w[1] & 0xff);
                insn.literal = i64::from((w[1] >> 8) as u8 as i8);
            }
            F22t | F22s | F22c => {
                insn.a = hi & 0xf;
                insn.b = hi >> 4;
                match fmt {
                    F22t => insn.target = i32::from(w[1] as i16),
                    F22s => insn.literal = i64::from(w[1] as i16),
                    _ => insn.index = u32::from(w[1]),
                }
            }
            F30t => insn.target = u32_at(1) as i32,
            F32x => {
                insn.a = u32::from(w[1]);
                insn.b = u32::from(w[2]);
            }
            F31i => {
                insn.a = hi;
                insn.literal = i64::from(u32_at(1) as i32);
            }
            F31t => {
                insn.a = hi;
                insn.target = u32_at(1) as i32;
            }
            F31c => {
                insn.a = hi;
                insn.index = u32_at(1);
            }
            F35c | F45cc => {
                let count = (hi >> 4) as usize;
                if count > 5 {
                    return Err(DexError::Malformed(format!("invoke at {at} has {count} arguments")));
                }
                let g = hi & 0xf;
                let regs = [
                    u32::from(w[2] & 0xf),
                    u32::from((w[2] >> 4) & 0xf),
                    u32::from((w[2] >> 8) & 0xf),
                    u32::from(w[2] >> 12),
                    g,
                ];
                insn.a = count as u32;
                insn.index = u32::from(w[1]);
                insn.args = regs[..count].to_vec();
            }
            F3rc | F4rcc => {
                let first = u32::from(w[2]);
                insn.a = hi;
                insn.index = u32::from(w[1]);
                insn.args = (first..first + hi).collect();
            }
            F51l => {
                insn.a = hi;
                insn.literal = (u64::from(w[1])
                    | (u64::from(w[2]) << 16)
                    | (u64::from(w[3]) << 32)
                    | (u64::from(w[4]) << 48)) as i64;
            }
        }
        out.push(insn);
        at += units;
    }
    Ok(out)
}

/// Register written by an instruction, with a flag for wide pairs.
pub fn written_register(insn: &Insn) -> Option<(u32, bool)> {
    let op = insn.opcode;
    let wide = matches!(
        op,
        0x04..=0x06
            | 0x0b
            | 0x16..=0x19
            | 0x45
            | 0x53
            | 0x61
            | 0x7d | 0x7e | 0x80 | 0x81 | 0x83 | 0x86 | 0x88 | 0x89 | 0x8b
            | 0x9b..=0xa5
            | 0xab..=0xaf
            | 0xbb..=0xc5
            | 0xcb..=0xcf
    );
    let writes = matches!(
        op,
        0x01..=0x0d | 0x12..=0x1c | 0x1f..=0x23 | 0x2d..=0x31 | 0x44..=0x4a | 0x52..=0x58 | 0x60..=0x66
            | 0x7b..=0xe2 | 0xfe | 0xff
    );
    writes.then_some((insn.a, wide))
}
