//! Running several identical agents: host assignment, URL exchange and the
//! runtime control endpoint.

pub mod control;
pub mod net;
pub mod ring;
pub mod wire;

pub use control::{ControlError, ControlServer, ControlTarget};
pub use net::{bind_udp, NetStats, UrlReceiver, UrlSender};
pub use ring::{AgentRing, RingError};
