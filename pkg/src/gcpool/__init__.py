"""Global covariance pooling with exact matrix square-root backpropagation."""

from .linalg import EigenPair, EigenSolverError, ShapeError, centering_matrix, sym_eig
from .pooling import (GcpContext, build_K, covariance, gap_backward, gap_forward,
                      gcp_backward, gcp_backward_trimmed, gcp_context, gcp_forward,
                      matrix_sqrt, preconditioner_factor, vectorize_sym)
from .net import Batch, LayerSpec, Network, backward, forward, forward_from
from .optim import PRESETS, ScheduleSpec, SgdState, emit_schedule, lr_at, sgd_step
from .probes import ProbeRecord, ProbeSeries, StepGrid, probe_record
from .robustness import corrupt, corruption_error, flip_probability, flip_rate, perturb_sequence
from .data import Dataset, SyntheticCovTaskSpec, gen_cov_task, read_cifar10_bin, read_idx

__version__ = "0.1.0"
