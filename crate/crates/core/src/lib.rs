// Licensed under the Apache-2.0 license

pub mod attack;
pub mod bench;
pub mod crtm;
pub mod device;
pub mod memory;
pub mod pmp;
pub mod protocol;
pub mod provisioning;
pub mod quote;
pub mod runner;
pub mod transport;
pub mod world;
