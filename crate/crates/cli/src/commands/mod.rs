pub mod bench;
pub mod gen;
pub mod restarts;
pub mod run;
pub mod verify;
