//! Dataset construction: frame import, coarsening, normalization, power
//! aggregation, alignment, splits, samples, batches, anomaly flags and
//! synthetic data.

mod cube;
mod dataset;
mod import;
mod power;
mod synth;
mod time;

pub use cube::{
    hourly, CornerMask, WeatherCube, BAND_NAMES, BAND_UNITS, CUBE_MAGIC, CUBE_VERSION, WIND_DIRECTION_BAND,
};
pub use dataset::{
    align, batches, make_sample, split, split_eligible, split_sizes, AlignOptions, AlignedDataset, SampleSource,
    SampleView, SplitIndices, StackWindow, BATCH_STREAM, SPLIT_STREAM, STACK_LEADING_EXCLUSION,
};
pub use import::{
    apply_normalizer, circular_mean_deg, coarsen, fit_normalizer, import_frames, read_frame_manifest,
    write_frame_file, write_frame_manifest, FrameEntry, ImportOptions, NormalizerStats,
};
pub use power::{
    aggregate_power, aggregate_power_csv, detect_constant_runs, flag_constant_runs, ConstantRun, PowerSeries,
    QualityFlags, Source, READINGS_PER_HOUR,
};
pub use synth::{insolation, power_curve, synth_generate, SynthConfig, SynthData, CUT_IN, CUT_OUT, RATED};
pub use time::{floor_hour, format_timestamp, is_whole_hour, parse_timestamp, TIMESTAMP_FORMAT};
