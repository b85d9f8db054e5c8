//! Generative cellular automata over sparse voxel grids.
//!
//! A 3D shape is a sparse set of occupied integer cells. A learned transition
//! kernel (a small submanifold sparse-convolution network) maps a state to a
//! Bernoulli occupancy field over the state's neighborhood; repeatedly sampling
//! from it grows a shape from a seed (generation) or from a partial input
//! (completion). Training emulates the sampling chain with an infusion chain
//! that mixes the kernel's predictions with the ground-truth shape at a
//! linearly increasing rate, so every training sequence provably converges to
//! its target when the target is partially connected to the seed.
//!
//! Modules:
//! - [`grid`]: cells, states, neighborhoods, connectivity, convergence oracle
//! - [`kernel`]: the transition network, exact gradients, Adam, checkpoints
//! - [`chains`]: sampling and infusion chains plus per-step statistics
//! - [`trainer`]: buffered infusion training with adaptive stopping
//! - [`metrics`]: Chamfer-based evaluation suite (MMD, COV, 1-NNA, TMD, UHD)
//! - [`data`]: synthetic shape families, voxelization, dataset persistence

pub mod chains;
pub mod check;
pub mod data;
pub mod grid;
pub mod kernel;
pub mod metrics;
pub mod rng;
pub mod trainer;
