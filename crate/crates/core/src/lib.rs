//! Polar codes with residual neural network decoders.
//!
//! * [`polar`]: code construction, encoding, BPSK over AWGN and the SC decoder.
//! * [`nn`]: a minimal network engine with hand-written backward passes.
//! * [`models`]: the MLP/CNN/RNN decoders with and without a residual denoiser.
//! * [`training`]: codeword-set training with the multi-task loss.
//! * [`checkpoint`]: JSON model snapshots.
//! * [`eval`]: BER, SNR gain, histograms and timing.

pub mod checkpoint;
pub mod eval;
pub mod models;
pub mod nn;
pub mod polar;
pub mod training;
