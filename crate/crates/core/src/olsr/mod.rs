//! Neighbor sensing, MPR selection, topology control and unicast routing.

pub mod forward;
pub mod neighbor;
pub mod routing;
pub mod topology;

pub use forward::{forward_decision, DupCache, ForwardDecision};
pub use neighbor::{select_mprs, HelloError, MprSelectorTable, NeighborTable, OneHopEntry, TieBreak};
pub use routing::{compute_routes, relay_edges, route_unicast, RouteEntry, RoutingTable, UnicastDecision};
pub use topology::{generate_tc, TcUpdate, TopologyEntry, TopologyTable};
