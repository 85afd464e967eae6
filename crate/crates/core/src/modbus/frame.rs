//! MODBUS/TCP application header (MBAP) framing and PDU helpers.

use std::io::{self, Read};

use super::ModbusError;

pub const HEADER_LEN: usize = 7;
pub const MAX_PDU_LEN: usize = 253;
pub const MAX_READ_COUNT: u16 = 125;
pub const MAX_WRITE_COUNT: u16 = 123;

pub const FN_READ_HOLDING: u8 = 0x03;
pub const FN_WRITE_SINGLE: u8 = 0x06;
pub const FN_WRITE_MULTIPLE: u8 = 0x10;

pub const EX_ILLEGAL_FUNCTION: u8 = 0x01;
pub const EX_ILLEGAL_ADDRESS: u8 = 0x02;
pub const EX_ILLEGAL_VALUE: u8 = 0x03;
pub const EX_GATEWAY_TARGET: u8 = 0x0B;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MbapFrame {
    pub transaction_id: u16,
    pub protocol_id: u16,
    pub unit_id: u8,
    /// Function code followed by its payload.
    pub pdu: Vec<u8>,
}

impl MbapFrame {
    pub fn new(transaction_id: u16, unit_id: u8, pdu: Vec<u8>) -> Self {
        Self {
            transaction_id,
            protocol_id: 0,
            unit_id,
            pdu,
        }
    }

    /// Value of the MBAP length field: unit id plus PDU bytes.
    pub fn length(&self) -> u16 {
        (self.pdu.len() + 1) as u16
    }

    pub fn function(&self) -> Option<u8> {
        self.pdu.first().copied()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.pdu.len());
        out.extend_from_slice(&self.transaction_id.to_be_bytes());
        out.extend_from_slice(&self.protocol_id.to_be_bytes());
        out.extend_from_slice(&self.length().to_be_bytes());
        out.push(self.unit_id);
        out.extend_from_slice(&self.pdu);
        out
    }

    /// Validates a header, returning (transaction id, unit id, pdu length).
    pub fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(u16, u8, usize), ModbusError> {
        let tid = u16::from_be_bytes([h[0], h[1]]);
        let proto = u16::from_be_bytes([h[2], h[3]]);
        let len = u16::from_be_bytes([h[4], h[5]]) as usize;
        if proto != 0 {
            return Err(ModbusError::Frame(format!("protocol id {proto} != 0")));
        }
        if !(2..=MAX_PDU_LEN + 1).contains(&len) {
            return Err(ModbusError::Frame(format!(
                "length field {len} out of range"
            )));
        }
        Ok((tid, h[6], len - 1))
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ModbusError> {
        let header: &[u8; HEADER_LEN] = bytes
            .get(..HEADER_LEN)
            .and_then(|h| h.try_into().ok())
            .ok_or_else(|| {
                ModbusError::Frame(format!("{} bytes is shorter than a header", bytes.len()))
            })?;
        let (tid, unit, pdu_len) = Self::parse_header(header)?;
        let pdu = &bytes[HEADER_LEN..];
        if pdu.len() != pdu_len {
            return Err(ModbusError::Frame(format!(
                "length field says {pdu_len} pdu bytes, got {}",
                pdu.len()
            )));
        }
        Ok(Self::new(tid, unit, pdu.to_vec()))
    }

    /// Blocking read of one complete frame.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ModbusError> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header).map_err(transport)?;
        let (tid, unit, pdu_len) = Self::parse_header(&header)?;
        let mut pdu = vec![0u8; pdu_len];
        r.read_exact(&mut pdu).map_err(transport)?;
        Ok(Self::new(tid, unit, pdu))
    }
}

pub(crate) fn transport(e: io::Error) -> ModbusError {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ModbusError::Timeout,
        _ => ModbusError::Transport(e.to_string()),
    }
}

pub fn exception_pdu(function: u8, code: u8) -> Vec<u8> {
    vec![function | 0x80, code]
}

pub fn read_holding_pdu(address: u16, count: u16) -> Vec<u8> {
    let mut p = vec![FN_READ_HOLDING];
    p.extend_from_slice(&address.to_be_bytes());
    p.extend_from_slice(&count.to_be_bytes());
    p
}

pub fn write_single_pdu(address: u16, raw: u16) -> Vec<u8> {
    let mut p = vec![FN_WRITE_SINGLE];
    p.extend_from_slice(&address.to_be_bytes());
    p.extend_from_slice(&raw.to_be_bytes());
    p
}

pub fn write_multiple_pdu(address: u16, raws: &[u16]) -> Vec<u8> {
    let mut p = vec![FN_WRITE_MULTIPLE];
    p.extend_from_slice(&address.to_be_bytes());
    p.extend_from_slice(&(raws.len() as u16).to_be_bytes());
    p.push((raws.len() * 2) as u8);
    for r in raws {
        p.extend_from_slice(&r.to_be_bytes());
    }
    p
}

pub(crate) fn be_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([bytes[at], bytes[at + 1]])
}
