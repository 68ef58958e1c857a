from .attributes import LASHER, RGBT234, SCHEMAS, SchemaError
from .metrics import (BoundingBox, EmptyEvaluationError, Evaluation, MetricCurve, SequenceRecord,
                      attribute_breakdown, center_error, evaluate, iou, max_fuse, norm_center_error,
                      norm_precision_curve, precision_curve, success_curve)
from .report import export_report, read_curves

__all__ = [
    "LASHER", "RGBT234", "SCHEMAS", "SchemaError", "BoundingBox", "EmptyEvaluationError", "Evaluation",
    "MetricCurve", "SequenceRecord", "attribute_breakdown", "center_error", "evaluate", "iou", "max_fuse",
    "norm_center_error", "norm_precision_curve", "precision_curve", "success_curve", "export_report",
    "read_curves",
]
