pub mod reference;
pub mod setup;
