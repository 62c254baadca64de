//! Model files, scene manifests, images, synthetic scenes and metrics export.

mod manifest;
mod metrics;
mod model_file;
mod png;
mod synth;

pub use manifest::{check_view_size, ManifestView, SceneManifest, Split};
pub use metrics::{write_metrics_csv, EvalRecord, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use model_file::{decode_model, encode_model, load_model, save_model, MAGIC, VERSION};
pub use png::{encode_rgb8, quantize, quantized, read_png, write_png};
pub use synth::{ring_cameras, synth_bounds, synth_scene, write_scene, SynthScene, SYNTH_HALF_EXTENT};
