//! Signal processing: STFT, mel analysis, pitch tracking, WAV IO and
//! iterative phase retrieval for listening to predicted mels.

pub mod griffin_lim;
pub mod mel;
pub mod pitch;
pub mod stft;
pub mod wav;

pub use griffin_lim::invert_mel;
pub use mel::{extract_mel, MelExtractor, MelSpectrogram};
pub use pitch::PitchTracker;
pub use wav::{read_wav, write_wav_i16};
