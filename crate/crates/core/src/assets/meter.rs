use crate::domain::PowerKw;

/// Net power at the grid connection point.
pub fn meter_net_kw(load: PowerKw, pv: PowerKw, battery_ac: PowerKw) -> PowerKw {
    PowerKw(load.0 + pv.0 + battery_ac.0)
}
