//! Virtual stage: parametric scenes with analytic ground truth, rendered
//! under every capture condition with crosstalk, bounce and optional noise.

mod render;
mod scene;

pub use render::{
    chart_region, multiplexed_time, render_bounce_plate, render_capture, render_capture_at,
    render_chart, render_multiplexed, render_plate, render_truth, render_truth_at, Truth,
    SUPERSAMPLE,
};
pub use scene::{random_scene, Layer, Lighting, Shape, StageScene};
