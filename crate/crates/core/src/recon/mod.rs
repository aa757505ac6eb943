//! Gradient-based reconstruction through the reparameterized sampler.

mod fit;
mod hierarchical;
mod model;

pub use fit::{
    fit_ray, loss_and_grad, model_estimate, FitConfig, LossKind, DIVERGENCE_FACTOR,
    DIVERGENCE_FLOOR,
};
pub use hierarchical::{
    FinePointPolicy, HierarchicalConfig, HierarchicalToy, RayRender, ToyRay, ToyScene, TARGET_BINS,
    WALL_CENTER, WALL_WIDTH,
};
pub use model::{locate, sigmoid, softplus, softplus_inv, Adam, ModelGrad, TrainableRayModel};
