//! Federated malware family classification over system call dependency
//! graphs.

pub mod channel;
pub mod explorer;
pub mod fedproto;
pub mod harness;
pub mod he;
pub mod neuralnet;
pub mod scdg;
