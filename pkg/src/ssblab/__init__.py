"""ssblab: a desk-scale lab for sample selection bias in ads CTR prediction.

Simulates a two-system marketplace with known ground-truth click rates,
augments biased ad logs with recommendation impressions, trains a family
of debiasing model variants on a from-scratch float64 autodiff kernel, and
evaluates ranking/calibration stratified by impression opportunity.
"""

__version__ = "0.1.0"

from .tape import GraphNumericsError, Tape, Value                        # noqa: F401
from .optim import ParameterStore, adam_step                             # noqa: F401
from .gradcheck import finite_difference_check                           # noqa: F401
from .marketplace import (CatalogConfig, generate_catalog, true_ctr,     # noqa: F401
                          run_sessions, impression_ratio, ir_group_partition)
from .model import CTRModel, ModelConfig                                 # noqa: F401
from .metrics import MetricsReport, ScoredSet, auc, ece                  # noqa: F401
from .variants import VariantSpec, train_variant                         # noqa: F401
