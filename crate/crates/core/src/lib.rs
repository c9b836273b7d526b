//! State-contingent day-ahead electricity auctions.
//!
//! The crate covers the two halves of the auction: defining the states of
//! the world as minimal-size centroidal Voronoi partitions of a forecast
//! measure ([`scenario`], [`quantizer`]), and clearing a market in
//! state-contingent contracts to a Walrasian equilibrium with dual prices
//! ([`market`], [`clearing`]).

pub mod quantizer;
pub mod scenario;
pub mod market;
pub mod clearing;
