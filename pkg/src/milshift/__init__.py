"""Domain-shift quantification for attention-based multiple-instance learning."""

from .baselines import (ShiftMeasureResult, de_entropy, doc_entropy, doc_softmax, entropy,
                        representation_shift, shift_measure, wasserstein1)
from .evidence import (FeatureConfig, FeatureMatrix, aggregate, build_feature_matrix,
                       select_evidence, selection_indices)
from .frechet import (GaussianSummary, fdd, frechet_distance, gaussian_fit, load_summary,
                      save_summary, sqrtm_psd)
from .metrics import (ConfusionCounts, CorrelationSummary, EvaluationRecord, evaluate_measure,
                      mcc, pearson, roc_auc, select_threshold)
from .store import (Dataset, ManifestError, PatchBag, load_manifest, validate_dataset,
                    write_dataset)
from .synth import SynthConfig, generate_dataset, run_benchmark

__version__ = "0.1.0"

__all__ = [
    "ConfusionCounts", "CorrelationSummary", "Dataset", "EvaluationRecord", "FeatureConfig",
    "FeatureMatrix", "GaussianSummary", "ManifestError", "PatchBag", "ShiftMeasureResult",
    "SynthConfig", "aggregate", "build_feature_matrix", "de_entropy", "doc_entropy",
    "doc_softmax", "entropy", "evaluate_measure", "fdd", "frechet_distance", "gaussian_fit",
    "generate_dataset", "load_manifest", "load_summary", "mcc", "pearson",
    "representation_shift", "roc_auc", "run_benchmark", "save_summary", "select_evidence",
    "select_threshold", "selection_indices", "shift_measure", "sqrtm_psd", "validate_dataset",
    "wasserstein1", "write_dataset",
]
