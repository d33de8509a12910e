pub mod data;
pub mod image;
pub mod layout;
pub mod mask;
pub mod model;
pub mod script;
pub mod tensor;
pub mod train;
