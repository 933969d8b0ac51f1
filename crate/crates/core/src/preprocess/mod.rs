//! Text cleaning, TF-IDF vectorization, tokenization and image preparation.

mod image;
mod text;
mod tfidf;
mod tokenize;

pub use self::image::{prepare_image, ImageSpec, ImageTensor, IMAGE_SIZE};
pub use self::text::{clean_text, CleanText, CLEANING_RULES_VERSION};
pub use self::tfidf::{fit_tfidf, tfidf_transform, SparseVector, TfidfVocabulary};
pub use self::tokenize::{TextTokenizer, TokenSequence, WordVocabulary, MAX_POSITIONS};
