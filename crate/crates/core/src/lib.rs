//! Successor maps, twist certificates and periodic-orbit search for planar
//! non-autonomous systems `x' = f(t,x,y)`, `-y' = g(t,x,y)`.

pub mod angle_domain;
pub mod cli;
pub mod curves;
pub mod error;
pub mod expr;
pub mod finder;
pub mod hypotheses;
pub mod integrator;
pub mod numeric;
pub mod successor;
pub mod system;
pub mod twist;

pub use error::{Error, Result};
