use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::codec::{is_decimal_scale, Access, RegisterKind, RegisterSpec};
use super::ModbusError;

/// Register names the emulator and the hardware backend bind to.
pub mod names {
    pub const SOC: &str = "soc_pct";
    pub const BATTERY_POWER: &str = "battery_power_kw";
    pub const BATTERY_SETPOINT: &str = "battery_setpoint_kw";
    pub const ROOM_TEMP: &str = "room_temp_c";
    pub const THERMOSTAT_SETPOINT: &str = "thermostat_setpoint_c";
    pub const PV_POWER: &str = "pv_power_kw";
    pub const LOAD_POWER: &str = "load_power_kw";
    pub const GRID_POWER: &str = "grid_power_kw";
    pub const HEARTBEAT: &str = "heartbeat";

    pub const ALL: [&str; 9] = [
        SOC,
        BATTERY_POWER,
        BATTERY_SETPOINT,
        ROOM_TEMP,
        THERMOSTAT_SETPOINT,
        PV_POWER,
        LOAD_POWER,
        GRID_POWER,
        HEARTBEAT,
    ];
}

/// Declarative holding-register layout of a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterMap {
    #[serde(default = "default_unit_id")]
    pub unit_id: u8,
    #[serde(rename = "register")]
    pub registers: Vec<RegisterSpec>,
}

fn default_unit_id() -> u8 {
    1
}

impl Default for RegisterMap {
    /// The documented single-register-per-quantity device map.
    fn default() -> Self {
        use names::*;
        use Access::{Read, ReadWrite};
        use RegisterKind::{I16, U16};
        Self {
            unit_id: 1,
            registers: vec![
                RegisterSpec::new(0, SOC, U16, 0.01, "%", Read),
                RegisterSpec::new(1, BATTERY_POWER, I16, 0.01, "kW", Read),
                RegisterSpec::new(2, BATTERY_SETPOINT, I16, 0.01, "kW", ReadWrite),
                RegisterSpec::new(3, ROOM_TEMP, I16, 0.01, "°C", Read),
                RegisterSpec::new(4, THERMOSTAT_SETPOINT, I16, 0.01, "°C", ReadWrite),
                RegisterSpec::new(5, PV_POWER, I16, 0.01, "kW", Read),
                RegisterSpec::new(6, LOAD_POWER, U16, 0.01, "kW", Read),
                RegisterSpec::new(7, GRID_POWER, I16, 0.01, "kW", Read),
                RegisterSpec::new(8, HEARTBEAT, U16, 1.0, "ticks", Read),
            ],
        }
    }
}

impl RegisterMap {
    pub fn validate(&self) -> Result<(), ModbusError> {
        let mut seen = HashSet::new();
        let mut names_seen = HashSet::new();
        for r in &self.registers {
            if !seen.insert(r.address) {
                return Err(ModbusError::Config(format!(
                    "duplicate address {}",
                    r.address
                )));
            }
            if !names_seen.insert(r.name.as_str()) {
                return Err(ModbusError::Config(format!("duplicate name {}", r.name)));
            }
            if !is_decimal_scale(r.scale) {
                return Err(ModbusError::Config(format!(
                    "register {}: scale {} is not a decimal power",
                    r.name, r.scale
                )));
            }
        }
        Ok(())
    }

    /// Validates and additionally checks that every bound name is present.
    pub fn validate_for_device(&self) -> Result<(), ModbusError> {
        self.validate()?;
        for n in names::ALL {
            if self.by_name(n).is_none() {
                return Err(ModbusError::Config(format!("register map lacks {n}")));
            }
        }
        for n in [names::BATTERY_SETPOINT, names::THERMOSTAT_SETPOINT] {
            if !self.by_name(n).is_some_and(RegisterSpec::writable) {
                return Err(ModbusError::Config(format!("{n} must be read_write")));
            }
        }
        Ok(())
    }

    pub fn by_name(&self, name: &str) -> Option<&RegisterSpec> {
        self.registers.iter().find(|r| r.name == name)
    }

    pub fn by_address(&self, address: u16) -> Option<&RegisterSpec> {
        self.registers.iter().find(|r| r.address == address)
    }

    /// Smallest contiguous address block covering all registers.
    pub fn span(&self) -> (u16, u16) {
        let lo = self.registers.iter().map(|r| r.address).min().unwrap_or(0);
        let hi = self.registers.iter().map(|r| r.address).max().unwrap_or(0);
        (lo, hi - lo + 1)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ModbusError> {
        let map: Self = toml::from_str(text).map_err(|e| ModbusError::Config(e.to_string()))?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, ModbusError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModbusError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("register map serializes")
    }
}

impl fmt::Display for RegisterMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "unit id {}", self.unit_id)?;
        writeln!(
            f,
            "{:>5}  {:<22} {:<4} {:>6}  {:<6} access",
            "addr", "name", "kind", "scale", "unit"
        )?;
        for r in &self.registers {
            let kind = match r.kind {
                RegisterKind::U16 => "u16",
                RegisterKind::I16 => "i16",
            };
            let access = match r.access {
                Access::Read => "read",
                Access::ReadWrite => "read_write",
            };
            writeln!(
                f,
                "{:>5}  {:<22} {:<4} {:>6}  {:<6} {}",
                r.address, r.name, kind, r.scale, r.unit, access
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_map_is_valid() {
        let m = RegisterMap::default();
        m.validate_for_device().unwrap();
        assert_eq!(m.span(), (0, 9));
        assert_eq!(m.by_name(names::BATTERY_SETPOINT).unwrap().address, 2);
    }

    #[test]
    fn toml_round_trip() {
        let m = RegisterMap::default();
        let back = RegisterMap::from_toml_str(&m.to_toml_string()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_duplicates_and_unknown_keys() {
        let dup = r#"
            [[register]]
            address = 0
            name = "a"
            kind = "u16"
            scale = 1.0
            unit = ""
            access = "read"
            [[register]]
            address = 0
            name = "b"
            kind = "i16"
            scale = 0.1
            unit = ""
            access = "read"
        "#;
        assert!(matches!(
            RegisterMap::from_toml_str(dup),
            Err(ModbusError::Config(_))
        ));
        let unknown = r#"
            [[register]]
            address = 0
            name = "a"
            kind = "u16"
            scale = 1.0
            unit = ""
            access = "read"
            colour = "red"
        "#;
        assert!(RegisterMap::from_toml_str(unknown).is_err());
    }

    #[test]
    fn device_binding_requires_all_names() {
        let mut m = RegisterMap::default();
        m.registers.retain(|r| r.name != names::HEARTBEAT);
        assert!(m.validate_for_device().is_err());
    }
}
