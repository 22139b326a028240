#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod analysis;
pub mod controller;
pub mod data_model;
pub mod detect;
pub mod error;
pub mod informativity;
pub mod io;
pub mod linalg;
pub mod sdp;
pub mod sim;

pub use error::{Error, Result};
