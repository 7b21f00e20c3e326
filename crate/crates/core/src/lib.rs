pub mod bench;
pub mod admm;
pub mod gauge;
pub mod model;
pub mod qp;
pub mod scenario;
pub mod train;
