pub mod align;
pub mod camera;
pub mod imaging;
pub mod ldi;
pub mod pipeline;
pub mod render;
pub mod sceneflow;
pub mod synthetic;
