//! Ground-truth functions, generators and the synthetic benchmark harness.

mod functions;
mod glm;
mod harness;
mod large_p;
mod toy_text;

pub use functions::{QuadraticForm, SyntheticFunction};
pub use glm::{glm_pairwise_baseline, GlmConfig, GlmFit};
pub use harness::{
    min_train_r2, run_synthetic, std_mse, train_base_model, BaseModelConfig, BenchConfig, BenchReport, BenchResult,
    BenchRuntimes, MeanStd, StdMse, TrialInfo,
};
pub use large_p::{gen_large_p, generate_form, large_p_detection, large_p_detector_config, LargePDataset, LargePDetection};
pub use toy_text::{toy_corpus, toy_sentences, toy_text_model, toy_text_network, toy_vocabulary, TOY_PATTERN};
