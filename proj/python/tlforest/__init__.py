"""Multi-task random forests with transfer-learning architectures.

The heavy lifting lives in the C++ extension module; this package re-exports
its public surface.
"""

try:
    from . import _tlforest as _impl  # installed layout
except ImportError:  # build-tree layout: the extension sits on sys.path
    import _tlforest as _impl

Dataset = _impl.Dataset
Forest = _impl.Forest
TrainedArchitecture = _impl.TrainedArchitecture
average_duplicates = _impl.average_duplicates
classify_composite = _impl.classify_composite
collapse_classes = _impl.collapse_classes
drop_conflicting_labels = _impl.drop_conflicting_labels
evaluate_config = _impl.evaluate_config
generate = _impl.generate
load_delimited = _impl.load_delimited
make_fold_plan = _impl.make_fold_plan
min_duplicates = _impl.min_duplicates
rmse = _impl.rmse
subsample = _impl.subsample
train_architecture = _impl.train_architecture
train_forest = _impl.train_forest
weighted_f1 = _impl.weighted_f1
write_delimited = _impl.write_delimited
__version__ = _impl.__version__

__all__ = [
    "Dataset",
    "Forest",
    "TrainedArchitecture",
    "average_duplicates",
    "classify_composite",
    "collapse_classes",
    "drop_conflicting_labels",
    "evaluate_config",
    "generate",
    "load_delimited",
    "make_fold_plan",
    "min_duplicates",
    "rmse",
    "subsample",
    "train_architecture",
    "train_forest",
    "weighted_f1",
    "write_delimited",
]
