//! Synthetic fNIRS recordings with planted, recoverable sentence content.

pub mod dataset;
pub mod hrf;
pub mod montage;
pub mod optics;
pub mod render;
pub mod semantic;

pub use hrf::{canonical_hrf, response_kernel, HrfParams};
pub use montage::{Channel, Montage, PairIndex, N_HAEMO, N_LONG_CHANNELS, N_LONG_PAIRS, N_SHORT_CHANNELS, WAVELENGTHS};
pub use optics::ExtinctionTable;
pub use render::{injected_haemo, render_run, InjectedHaemo, NoiseConfig, RawRecording, RenderSpec, RunIds};
pub use semantic::{CentredVectorizer, HashedVectorizer, SemanticMap, SentenceVectorizer};
