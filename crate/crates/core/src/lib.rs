pub mod config;
pub mod control;
pub mod metrics;
pub mod net;
pub mod netgraph;
pub mod node;
pub mod olsr;
pub mod packets;
pub mod platoon;
pub mod rba;
pub mod sim;
pub mod udp;
