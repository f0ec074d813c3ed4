//! Fingerprinted peer-to-peer content distribution.
//!
//! The crate is split along the lines of the system it simulates:
//!
//! * [`codes`] generates collusion-resistant binary codewords and traces
//!   colluders from a pirated codeword by score thresholding.
//! * [`transform`] splits content into a small base file (fingerprint-carrying
//!   approximation coefficients) and a large supplementary file (details only).
//! * [`watermark`] embeds and blindly extracts bits with dithered QIM and
//!   provides the BER / NC / PSNR metrics.
//! * [`crypto`] holds pseudonyms, certificates, signatures, sealing and
//!   block permutations.
//! * [`protocol`] runs the merchant / monitor / buyer / proxy exchange over a
//!   deterministic in-process message bus and records transcripts.
//! * [`attacks`] is the adversarial harness.
//! * [`harness`] drives whole scenarios and holds the independent oracles.
//! * [`io`] reads and writes the on-disk containers.

pub mod attacks;
pub mod codes;
pub mod crypto;
pub mod harness;
pub mod io;
pub mod protocol;
pub mod rng;
pub mod transform;
pub mod watermark;

pub use codes::{CodeBook, CodeParams, PirateBit, PiratedCodeword, TraceResult};
pub use transform::{AudioContent, Content, FrameContent};
