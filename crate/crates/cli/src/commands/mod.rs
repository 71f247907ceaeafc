pub mod eval;
pub mod extract;
pub mod gradcam;
pub mod ribbon;
pub mod synth;
pub mod train_cnn;
pub mod train_rnn;
