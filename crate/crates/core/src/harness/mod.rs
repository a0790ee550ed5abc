//! Synthetic student/teacher experiment on moving shapes.

mod model;
mod probe;
mod sequence;
mod teacher;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use model::ToyModel;
pub use probe::linear_probe_accuracy;
pub use sequence::{gen_sequence, Sequence, SequenceConfig, ShapeKind, FEATURE_DIM, FEATURE_NAMES};
pub use teacher::{teacher_embed, Teacher, TeacherMode};
pub use train::{
    steps_to_threshold, train, train_model, Experiment, LossParts, SamplingStrategy, SoupMetric, TrainHistory,
    TrainRecord, CSV_HEADER,
};

/// Independent stream `stream` of the generator seeded by `seed`.
pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}
