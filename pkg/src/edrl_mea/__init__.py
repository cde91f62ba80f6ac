"""Emotion-disentangled embeddings (EDRL) aligned by multiblock PLS (MEA),
with the label, noise, forest and F1 machinery needed to run clean/noisy
speech-emotion experiments on feature tables."""

__version__ = "0.1.0"

from .dataio import (  # noqa: E402
    BinaryLabel,
    Dimension,
    FeatureTable,
    LabeledDataset,
    SplitSpec,
    binarize_rating,
    load_feature_table,
    make_dataset,
    map_categorical_to_av,
    undersample_majority,
)
from .edrl import EdrlConfig, EdrlModel, build_edrl, embed, train_edrl  # noqa: E402
from .evaluation import EvalReport, aggregate_noise, build_report, f1_binary  # noqa: E402
from .forest import GridSpec, RandomForestModel, fit_forest, grid_search  # noqa: E402
from .mea import MbplsConfig, MbplsModel, explained_variance, fit_mbpls, predict  # noqa: E402
from .noise import (  # noqa: E402
    SNR_LEVELS,
    NoiseSpec,
    Waveform,
    corrupt_testset,
    measure_snr,
    mix_at_snr,
    read_wav,
    write_wav,
)
from .pipeline import (  # noqa: E402
    PipelineConfig,
    cmd_corrupt,
    cmd_evaluate,
    cmd_prepare,
    cmd_report,
    cmd_train,
)

__all__ = [
    "BinaryLabel", "Dimension", "FeatureTable", "LabeledDataset", "SplitSpec",
    "binarize_rating", "load_feature_table", "make_dataset", "map_categorical_to_av",
    "undersample_majority",
    "EdrlConfig", "EdrlModel", "build_edrl", "embed", "train_edrl",
    "EvalReport", "aggregate_noise", "build_report", "f1_binary",
    "GridSpec", "RandomForestModel", "fit_forest", "grid_search",
    "MbplsConfig", "MbplsModel", "explained_variance", "fit_mbpls", "predict",
    "SNR_LEVELS", "NoiseSpec", "Waveform", "corrupt_testset", "measure_snr", "mix_at_snr",
    "read_wav", "write_wav",
    "PipelineConfig", "cmd_corrupt", "cmd_evaluate", "cmd_prepare", "cmd_report", "cmd_train",
]
