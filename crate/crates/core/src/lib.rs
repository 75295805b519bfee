//! Point-level affordance learning for articulated-object manipulation with
//! rotation-equivariant vector-neuron networks.

pub mod baseline;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod gradcheck;
pub mod heads;
pub mod nn;
pub mod primitive;
pub mod real;
pub mod sim;
pub mod tensor;
pub mod trainer;
pub mod vn;

pub use error::{Error, Result};
pub use geometry::{PartLabel, PointCloud, RigidTransform, Rotation};
pub use primitive::PrimitiveType;
pub use real::{Precision, Real};
