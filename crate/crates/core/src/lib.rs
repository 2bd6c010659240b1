//! Strawberry-arena simulator and autonomy stack.
//!
//! The world owns ground truth; sensors, the bridge and the mission loop only
//! see it through renders, pose fixes and wire commands.

pub mod arm;
pub mod behavior;
pub mod bridge;
pub mod drive;
pub mod geometry;
pub mod harness;
pub mod navigation;
pub mod perception;
pub mod sensor;
pub mod world;

pub use behavior::{flower_trim_plan, next_action, run_mission, MissionConfig, MissionPhase};
pub use bridge::{SimHost, WireRequest, WireResponse};
pub use drive::BodyTwist;
pub use geometry::{Pose2, Pose3, Transform, Vec3};
pub use harness::{MissionReport, Thresholds};
pub use world::{ScenarioDoc, World, WorldError};
