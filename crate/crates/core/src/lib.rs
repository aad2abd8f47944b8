//! Closed-loop synthesis of standard tapped-delay-line channel models inside a
//! reverberation-chamber channel: sound the chamber, derive an equalizer that
//! cancels its response, cascade it with a fading channel emulator and check
//! the end-to-end power delay profile against the target model.

pub mod baseline;
pub mod emulator;
pub mod equalizer;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rc_model;
pub mod seed;
pub mod signal;
pub mod sounder;
pub mod stats;

pub use error::{Error, ErrorClass, Result};
pub use num_complex::Complex64;
pub use rc_model::{Cir, RcConfig};
pub use signal::{ComplexSignal, ConvMode, PnSequence, RrcFilter};
