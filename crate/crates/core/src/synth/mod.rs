//! Synthetic stand-in for the satellite archives: 3D cloud scenes, imagery
//! from a simple forward model, and profiling tracks.

pub mod noise;
mod render;
mod scene;
mod track;

pub use render::{
    column_radiance, render_imagery, response, ChannelResponse, Imagery, RenderConfig, REFERENCE_RESPONSES,
};
pub use scene::{generate_scene, Scene, SceneConfig, Vortex, CLEAR_IWC, CLEAR_RE, CLEAR_Z};
pub use track::{
    random_track, sample_track, Footprint, ProfileCurtain, TrackSpec, DEFAULT_INTERVAL, FOOTPRINT_SECONDS,
};
