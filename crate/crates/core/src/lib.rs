pub mod campaign;
pub mod degree_dist;
pub mod density;
pub mod error;
pub mod mac_sim;
pub mod opt;
pub mod par;
pub mod params;
pub mod phy_sim;
pub mod slot_models;
pub mod tables;
