"""
Models package for the library's data types.
"""
from models.embedding import Embedding, ReferenceParams
from models.gp import GPModel, PredictionResult
from models.kernel import KERNEL_FAMILIES, GramMatrix, KernelSpec, PSDReport
from models.measure import AffineMap, DiscreteMeasure, LabeledDataset
from models.optimize import HyperState, OptimizeConfig, OptimizeResult, TraceRecord
from models.transport import DualPotentials, SinkhornConfig, TransportPlan

__all__ = [
    'AffineMap',
    'DiscreteMeasure',
    'DualPotentials',
    'Embedding',
    'GPModel',
    'GramMatrix',
    'HyperState',
    'KERNEL_FAMILIES',
    'KernelSpec',
    'LabeledDataset',
    'OptimizeConfig',
    'OptimizeResult',
    'PSDReport',
    'PredictionResult',
    'ReferenceParams',
    'SinkhornConfig',
    'TraceRecord',
    'TransportPlan',
]
