//! Simulation and analysis of tunable ion-photon entanglement generated by a
//! bichromatic cavity-mediated Raman transition.

pub mod analysis;
pub mod budget;
pub mod dynamics;
pub mod linalg;
pub mod measurement;
pub mod tomography;
