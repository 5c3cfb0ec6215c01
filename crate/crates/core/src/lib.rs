pub mod ik;
pub mod kinematics;
pub mod model;
pub mod pipeline;
pub mod retarget;
pub mod so3;
