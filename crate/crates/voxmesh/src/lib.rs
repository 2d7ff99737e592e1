//! voxmesh: differentiable template-mesh reconstruction from 3D volumes.
//!
//! The toolkit deforms sphere-template meshes onto structures of a volumetric
//! image with a graph-convolutional network conditioned on a 3D convolutional
//! encoder, trains the whole model with geometric and occupancy losses, and
//! evaluates the reconstructions with surface and overlap metrics. Everything
//! runs on the CPU at desk scale over synthetically generated scenes.
//!
//! Coordinate convention, shared by every module: `world = origin +
//! index * spacing`; the continuous voxel coordinate `v = 0` is the center of
//! voxel 0.

pub mod error;
pub mod sparse;
pub mod tensor;
pub mod volume;
pub mod geom;
pub mod gnn;
pub mod mesh;
pub mod rng;
