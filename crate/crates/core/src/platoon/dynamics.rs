use rand::Rng;
use serde::Serialize;

use crate::net::{Lane, Position, HIGHWAY_LENGTH_M};
use crate::packets::{VehicleInfo, WireMode};

pub const LEAD_LENGTH_M: f64 = 10.0;
pub const CRUISE_MPS: f64 = 30.0;
pub const SLOW_ZONE_MPS: f64 = 20.0;
pub const SLOW_ZONE_START_M: f64 = 4000.0;
pub const SLOW_ZONE_END_M: f64 = 5000.0;
/// Bound on the lead truck's deviation from the nominal zone speed.
pub const PERTURBATION_MPS: f64 = 0.5;
/// Acceleration that maps to full throttle or full brake.
const FULL_ACTUATION_MPS2: f64 = 5.0;

/// Nominal speed at highway position `x`.
pub fn speed_zone(x: f64) -> f64 {
    if (SLOW_ZONE_START_M..SLOW_ZONE_END_M).contains(&x) {
        SLOW_ZONE_MPS
    } else {
        CRUISE_MPS
    }
}

/// Kinematic state. `pos.x` is the front bumper; the body spans `[x - length, x]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehicleDynamics {
    pub pos: Position,
    pub velocity: f64,
    pub acceleration: f64,
    pub brake: f64,
    pub throttle: f64,
    pub length: f64,
}

impl VehicleDynamics {
    pub fn new(x: f64, lane: Lane, velocity: f64, length: f64) -> VehicleDynamics {
        VehicleDynamics {
            pos: Position::new(x, lane),
            velocity: velocity.max(0.0),
            acceleration: 0.0,
            brake: 0.0,
            throttle: 0.0,
            length,
        }
    }

    pub fn rear(&self) -> f64 {
        self.pos.x - self.length
    }

    /// Instantaneous speed change; actuation reflects the implied acceleration.
    pub fn set_velocity(&mut self, v: f64, dt: f64) {
        let v = v.max(0.0);
        self.acceleration = if dt > 0.0 { (v - self.velocity) / dt } else { 0.0 };
        let level = (self.acceleration.abs() / FULL_ACTUATION_MPS2).min(1.0);
        if self.acceleration > 0.0 {
            self.throttle = level;
            self.brake = 0.0;
        } else {
            self.throttle = 0.0;
            self.brake = level;
        }
        self.velocity = v;
    }

    pub fn advance(&mut self, dt: f64) {
        self.pos.x = (self.pos.x + self.velocity * dt).clamp(0.0, HIGHWAY_LENGTH_M);
    }

    pub fn info(&self, mode: WireMode) -> VehicleInfo {
        VehicleInfo {
            x: self.pos.x,
            lane: self.pos.lane,
            velocity: self.velocity,
            acceleration: self.acceleration,
            brake: self.brake,
            throttle: self.throttle,
            length: self.length,
            mode,
        }
    }
}

/// Whether two same-lane bodies share any stretch of road.
pub fn overlaps(a: &VehicleDynamics, b: &VehicleDynamics) -> bool {
    a.pos.lane == b.pos.lane && a.rear() < b.pos.x && b.rear() < a.pos.x
}

/// Lead truck speed: zone nominal plus a bounded random walk that restarts at
/// every zone boundary.
#[derive(Debug, Clone, Default)]
pub struct LeadDriver {
    offset: f64,
    last_nominal: Option<f64>,
}

impl LeadDriver {
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn next_velocity<R: Rng + ?Sized>(&mut self, x: f64, dt: f64, rng: &mut R) -> f64 {
        let nominal = speed_zone(x);
        if self.last_nominal != Some(nominal) {
            self.offset = 0.0;
            self.last_nominal = Some(nominal);
        } else {
            let a: f64 = rng.gen_range(-1.0..=1.0);
            self.offset = (self.offset + a * dt).clamp(-PERTURBATION_MPS, PERTURBATION_MPS);
        }
        nominal + self.offset
    }
}
