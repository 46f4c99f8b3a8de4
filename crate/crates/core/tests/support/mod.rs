#![allow(dead_code)]

pub mod blocks;
pub mod pde;
