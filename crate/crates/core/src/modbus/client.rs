use std::io::Write;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::frame::{
    be_u16, read_holding_pdu, transport, write_multiple_pdu, write_single_pdu, MbapFrame,
    FN_READ_HOLDING, FN_WRITE_MULTIPLE, FN_WRITE_SINGLE, MAX_READ_COUNT, MAX_WRITE_COUNT,
};
use super::ModbusError;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

/// Blocking MODBUS/TCP client. One request in flight at a time.
#[derive(Debug)]
pub struct ModbusClient {
    stream: TcpStream,
    unit_id: u8,
    next_tid: u16,
}

impl ModbusClient {
    pub fn connect<A: ToSocketAddrs>(addr: A, unit_id: u8) -> Result<Self, ModbusError> {
        Self::connect_timeout(addr, unit_id, DEFAULT_TIMEOUT)
    }

    pub fn connect_timeout<A: ToSocketAddrs>(
        addr: A,
        unit_id: u8,
        timeout: Duration,
    ) -> Result<Self, ModbusError> {
        let addrs: Vec<SocketAddr> = addr
            .to_socket_addrs()
            .map_err(|e| ModbusError::Transport(e.to_string()))?
            .collect();
        let mut last = ModbusError::Transport("no address to connect to".into());
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(timeout)).map_err(transport)?;
                    stream.set_write_timeout(Some(timeout)).map_err(transport)?;
                    stream.set_nodelay(true).map_err(transport)?;
                    return Ok(Self {
                        stream,
                        unit_id,
                        next_tid: 1,
                    });
                }
                Err(e) => last = ModbusError::Transport(format!("{a}: {e}")),
            }
        }
        Err(last)
    }

    pub fn peer_addr(&self) -> Option<SocketAddr> {
        self.stream.peer_addr().ok()
    }

    fn transact(&mut self, pdu: Vec<u8>) -> Result<Vec<u8>, ModbusError> {
        let tid = self.next_tid;
        self.next_tid = self.next_tid.wrapping_add(1);
        let function = pdu[0];
        let req = MbapFrame::new(tid, self.unit_id, pdu);
        self.stream.write_all(&req.to_bytes()).map_err(transport)?;
        let resp = MbapFrame::read_from(&mut self.stream)?;
        if resp.transaction_id != tid {
            return Err(ModbusError::TransactionMismatch {
                expected: tid,
                got: resp.transaction_id,
            });
        }
        match resp.function() {
            Some(f) if f == function | 0x80 => Err(ModbusError::Exception {
                function,
                code: resp.pdu.get(1).copied().unwrap_or(0),
            }),
            Some(f) if f == function => Ok(resp.pdu),
            other => Err(ModbusError::Protocol(format!(
                "response function {other:?} to request {function:#04x}"
            ))),
        }
    }

    /// Function 0x03.
    pub fn read_holding(&mut self, address: u16, count: u16) -> Result<Vec<u16>, ModbusError> {
        if count == 0 || count > MAX_READ_COUNT {
            return Err(ModbusError::Argument(format!(
                "count {count} outside 1..={MAX_READ_COUNT}"
            )));
        }
        let pdu = self.transact(read_holding_pdu(address, count))?;
        let byte_count = *pdu
            .get(1)
            .ok_or_else(|| ModbusError::Protocol("short response".into()))?
            as usize;
        if byte_count != 2 * count as usize || pdu.len() != 2 + byte_count {
            return Err(ModbusError::Protocol(format!(
                "expected {} data bytes, got {byte_count}",
                2 * count
            )));
        }
        debug_assert_eq!(pdu[0], FN_READ_HOLDING);
        Ok((0..count as usize)
            .map(|i| be_u16(&pdu, 2 + 2 * i))
            .collect())
    }

    /// Function 0x06; the echoed response is validated.
    pub fn write_register(&mut self, address: u16, raw: u16) -> Result<(), ModbusError> {
        let req = write_single_pdu(address, raw);
        let resp = self.transact(req.clone())?;
        if resp != req {
            return Err(ModbusError::Protocol(
                "write echo does not match request".into(),
            ));
        }
        debug_assert_eq!(resp[0], FN_WRITE_SINGLE);
        Ok(())
    }

    /// Function 0x10.
    pub fn write_registers(&mut self, address: u16, raws: &[u16]) -> Result<(), ModbusError> {
        if raws.is_empty() || raws.len() > MAX_WRITE_COUNT as usize {
            return Err(ModbusError::Argument(format!(
                "count {} outside 1..={MAX_WRITE_COUNT}",
                raws.len()
            )));
        }
        let resp = self.transact(write_multiple_pdu(address, raws))?;
        if resp.len() != 5 || be_u16(&resp, 1) != address || be_u16(&resp, 3) as usize != raws.len()
        {
            return Err(ModbusError::Protocol(
                "malformed write-multiple response".into(),
            ));
        }
        debug_assert_eq!(resp[0], FN_WRITE_MULTIPLE);
        Ok(())
    }

    /// Sends an arbitrary PDU; used to probe unsupported function codes.
    pub fn raw_request(&mut self, pdu: Vec<u8>) -> Result<Vec<u8>, ModbusError> {
        if pdu.is_empty() {
            return Err(ModbusError::Argument("empty pdu".into()));
        }
        self.transact(pdu)
    }
}
