//! Camera view planning for 3D reconstruction in noisy scenes.
//!
//! A placement of `N` cameras is scored by a geometric reward over a point
//! cloud (triangulation angle, field of view, feature matchability). The
//! reward is treated as a black box and maximized with Gaussian-process
//! Bayesian optimization under an Expected Improvement acquisition, and
//! compared against a brute-force circular camera formation.


pub mod acquisition;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod gp;
pub mod io;
pub mod planner;


pub mod reward;
pub mod scene;

pub use error::{Error, Result};
pub use geometry::{CameraPose, Placement, SearchSpace, Vec3};
pub use gp::{GpModel, KernelFamily, KernelSpec, Posterior};
pub use reward::{noisy_reward, reward, PointCloud, RewardParams};
pub use scene::{Layout, NoiseModel, Scene, SceneSpec};
