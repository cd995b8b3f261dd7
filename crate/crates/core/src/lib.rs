pub mod alist;
pub mod bp;
pub mod catalog;
pub mod channel;
pub mod code;
pub mod decoder;
pub mod eigen;
pub mod exec;
pub mod experiment;
pub mod gf2;
pub mod library;
pub mod lora;
pub mod mask;
pub mod numfmt;
pub mod pruning;
pub mod report;
pub mod spectrum;
