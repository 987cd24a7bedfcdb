pub mod annotate;
pub mod autodiff;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod genctrl;
pub mod kaap;
pub mod simeval;
pub mod tensor;

pub use error::{Error, Result};
