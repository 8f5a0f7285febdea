#![allow(dead_code)]

pub mod ddqn;
pub mod gradcases;
