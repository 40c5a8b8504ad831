#![allow(dead_code)]

pub mod grids;
pub mod ted_oracle;
