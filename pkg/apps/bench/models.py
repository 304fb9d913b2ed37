from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from apps.ot_learn.models import PointCloud


@dataclass
class RegressionData:
    X: np.ndarray
    y: np.ndarray
    clean: np.ndarray


@dataclass
class TransportData:
    """Independent source and target samples; `transport_map` is None for shape pairs"""

    source: PointCloud
    target: PointCloud
    transport_map: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass
class SeedOutcome:
    """Metrics and per-epoch rows of one seed of a run"""

    seed: int
    metrics: Dict[str, float] = field(default_factory=dict)
    trace: List[Dict[str, Any]] = field(default_factory=list)
    diverged: bool = False
    passed: Optional[bool] = None
