pub mod mac_sim;
pub mod scenario;
pub mod spatiotemporal;
pub mod stats;
pub mod topology;
pub mod traceback;
