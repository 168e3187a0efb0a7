//! Dalvik instruction widths and the opcode groups the extractors care about.

pub const NOP: u8 = 0x00;
pub const MOVE_RESULT_OBJECT: u8 = 0x0c;
pub const RETURN_VOID: u8 = 0x0e;
pub const RETURN_OBJECT: u8 = 0x11;
pub const CONST_4: u8 = 0x12;
pub const CONST_16: u8 = 0x13;
pub const CONST_STRING: u8 = 0x1a;
pub const CONST_STRING_JUMBO: u8 = 0x1b;
pub const CONST_CLASS: u8 = 0x1c;
pub const NEW_INSTANCE: u8 = 0x22;
pub const GOTO: u8 = 0x28;
pub const GOTO_16: u8 = 0x29;
pub const GOTO_32: u8 = 0x2a;
pub const IF_EQZ: u8 = 0x38;
pub const INVOKE_VIRTUAL: u8 = 0x6e;
pub const INVOKE_SUPER: u8 = 0x6f;
pub const INVOKE_DIRECT: u8 = 0x70;
pub const INVOKE_STATIC: u8 = 0x71;
pub const INVOKE_INTERFACE: u8 = 0x72;
pub const ADD_INT_2ADDR: u8 = 0xb0;
pub const ADD_INT_LIT8: u8 = 0xd8;

pub const PACKED_SWITCH_PAYLOAD: u16 = 0x0100;
pub const SPARSE_SWITCH_PAYLOAD: u16 = 0x0200;
pub const FILL_ARRAY_DATA_PAYLOAD: u16 = 0x0300;

/// Width in 16-bit code units of a regular instruction, `None` for opcodes
/// that are unassigned in DEX 035-039.
pub const fn width(op: u8) -> Option<usize> {
    let w = match op {
        0x00 => 1,
        0x01 => 1,
        0x02 => 2,
        0x03 => 3,
        0x04 => 1,
        0x05 => 2,
        0x06 => 3,
        0x07 => 1,
        0x08 => 2,
        0x09 => 3,
        0x0a..=0x11 => 1,
        0x12 => 1,
        0x13 => 2,
        0x14 => 3,
        0x15 => 2,
        0x16 => 2,
        0x17 => 3,
        0x18 => 5,
        0x19 => 2,
        0x1a => 2,
        0x1b => 3,
        0x1c => 2,
        0x1d | 0x1e => 1,
        0x1f | 0x20 => 2,
        0x21 => 1,
        0x22 | 0x23 => 2,
        0x24 | 0x25 | 0x26 => 3,
        0x27 | 0x28 => 1,
        0x29 => 2,
        0x2a..=0x2c => 3,
        0x2d..=0x3d => 2,
        0x3e..=0x43 => return None,
        0x44..=0x6d => 2,
        0x6e..=0x72 => 3,
        0x73 => return None,
        0x74..=0x78 => 3,
        0x79 | 0x7a => return None,
        0x7b..=0x8f => 1,
        0x90..=0xaf => 2,
        0xb0..=0xcf => 1,
        0xd0..=0xe2 => 2,
        0xe3..=0xf9 => return None,
        0xfa | 0xfb => 4,
        0xfc | 0xfd => 3,
        0xfe | 0xff => 2,
    };
    Some(w)
}

/// Invoke-family opcodes whose second code unit is a method index.
pub const fn is_method_invoke(op: u8) -> bool {
    matches!(op, 0x6e..=0x72 | 0x74..=0x78 | 0xfa | 0xfb)
}

pub const fn is_const_string(op: u8) -> bool {
    op == CONST_STRING || op == CONST_STRING_JUMBO
}

pub const fn is_goto(op: u8) -> bool {
    matches!(op, GOTO | GOTO_16 | GOTO_32)
}

/// Width of a payload pseudo-instruction starting with `ident`, given the
/// code units that follow it. `None` if the header itself is truncated.
pub fn payload_width(units: &[u16]) -> Option<usize> {
    let ident = *units.first()?;
    match ident {
        PACKED_SWITCH_PAYLOAD => {
            let size = *units.get(1)? as usize;
            Some(4 + size * 2)
        }
        SPARSE_SWITCH_PAYLOAD => {
            let size = *units.get(1)? as usize;
            Some(2 + size * 4)
        }
        FILL_ARRAY_DATA_PAYLOAD => {
            let elem = *units.get(1)? as usize;
            let count = (*units.get(2)? as usize) | ((*units.get(3)? as usize) << 16);
            Some(4 + (elem * count).div_ceil(2))
        }
        _ => None,
    }
}

pub const fn is_payload_ident(unit: u16) -> bool {
    matches!(
        unit,
        PACKED_SWITCH_PAYLOAD | SPARSE_SWITCH_PAYLOAD | FILL_ARRAY_DATA_PAYLOAD
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assigned_opcode_count() {
        // 0x3e-0x43, 0x73, 0x79-0x7a and 0xe3-0xf9 are unassigned
        let assigned = (0..=255u8).filter(|&op| width(op).is_some()).count();
        assert_eq!(assigned, 256 - 6 - 1 - 2 - 23);
    }

    #[test]
    fn payload_sizes() {
        assert_eq!(payload_width(&[0x0100, 3]), Some(10));
        assert_eq!(payload_width(&[0x0200, 2]), Some(10));
        assert_eq!(payload_width(&[0x0300, 1, 3, 0]), Some(6));
        assert_eq!(payload_width(&[0x0300, 4, 2, 0]), Some(8));
        assert_eq!(payload_width(&[0x0100]), None);
    }
}
