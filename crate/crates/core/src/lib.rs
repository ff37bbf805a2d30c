//! rarch: a workbench for robust CNN architecture design.
//!
//! The crate models convolutional network architectures as declarative
//! specs (stem / stages / block / activation / head), provides analytic
//! validators over them (width-depth ratio, parameter counts, robustify
//! transforms, design-space sampling), and realizes any spec into an
//! executable toy-scale network backed by a reverse-mode differentiation
//! engine so that FGSM/PGD attacks and adversarial training loops can be
//! run end to end on a CPU.

pub mod adversarial;
pub mod archspec;
pub mod cli;
pub mod dataset;
pub mod designspace;
pub mod netbuild;
pub mod tensor;
