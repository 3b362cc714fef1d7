//! Extended dynamic mode decomposition over a monomial dictionary.

mod dictionary;
mod koopman;

pub use dictionary::MonomialDictionary;
pub use koopman::{build_gram, fit_koopman, spectrum, KoopmanFile, KoopmanModel, Spectrum};
