from fedfusion.data.augment import rotate, rotation_pretext_batch, strong_aug, weak_aug
from fedfusion.data.csvio import CsvSchema, load_csv, scale_dataset
from fedfusion.data.dataset import ClientDataset, ClientStatus, FullDataset, ImageBatchMeta
from fedfusion.data.partition import (
    assign_statuses,
    domain_clients,
    draw_feature_subsets,
    partition_features,
    train_test_split,
)
from fedfusion.data.synth import bayes_accuracy, synth_digits, synth_tabular

__all__ = [
    "ClientDataset",
    "ClientStatus",
    "CsvSchema",
    "FullDataset",
    "ImageBatchMeta",
    "assign_statuses",
    "bayes_accuracy",
    "domain_clients",
    "draw_feature_subsets",
    "load_csv",
    "partition_features",
    "rotate",
    "rotation_pretext_batch",
    "scale_dataset",
    "strong_aug",
    "synth_digits",
    "synth_tabular",
    "train_test_split",
    "weak_aug",
]
