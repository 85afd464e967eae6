//! MODBUS/TCP bridge: register codec, MBAP framing, a blocking client and
//! the hardware emulator server.

mod client;
mod codec;
mod emulator;
mod frame;
mod regmap;

pub use client::{ModbusClient, DEFAULT_TIMEOUT};
pub use codec::{
    decode_value, encode_saturating, encode_value, Access, RegisterKind, RegisterSpec,
};
pub use emulator::{
    emulator_serve, EmulatedDevice, EmulatorConfig, EmulatorHandle, TickRow, DEFAULT_PORT,
    DEFAULT_TICK_S, DEFAULT_TIME_SCALE,
};
pub use frame::{
    MbapFrame, EX_GATEWAY_TARGET, EX_ILLEGAL_ADDRESS, EX_ILLEGAL_FUNCTION, EX_ILLEGAL_VALUE,
    FN_READ_HOLDING, FN_WRITE_MULTIPLE, FN_WRITE_SINGLE,
};
pub use regmap::{names, RegisterMap};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModbusError {
    #[error("cannot encode {value} into register {register}")]
    Encode { register: String, value: f64 },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("device exception {code:#04x} for function {function:#04x}")]
    Exception { function: u8, code: u8 },
    #[error("transaction id mismatch: sent {expected}, got {got}")]
    TransactionMismatch { expected: u16, got: u16 },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("request timed out")]
    Timeout,
    #[error("transport: {0}")]
    Transport(String),
    #[error("startup: {0}")]
    Startup(String),
    #[error("config: {0}")]
    Config(String),
}

impl ModbusError {
    /// Exception code carried by a device exception response.
    pub fn exception_code(&self) -> Option<u8> {
        match self {
            ModbusError::Exception { code, .. } => Some(*code),
            _ => None,
        }
    }

    /// True for errors of the link rather than of the device.
    pub fn is_transport(&self) -> bool {
        matches!(self, ModbusError::Timeout | ModbusError::Transport(_))
    }

    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            ModbusError::Exception { .. }
                | ModbusError::TransactionMismatch { .. }
                | ModbusError::Protocol(_)
                | ModbusError::Frame(_)
        )
    }
}
