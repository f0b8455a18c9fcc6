"""Certification toolkit for regularized ReLU loss surfaces."""

__version__ = "0.1.0"

from .errors import (BoundaryWarning, ConvexityLabError, DivergenceError, FormatError, InvalidInputError,
                     MonotonicityError, NotCriticalError, ParseError, ResourceError)
from .net import (Architecture, Dataset, Params, RegionKind, SwitchSignature, fixture_t1, forward,
                  forward_batch, frozen_forward, init_params, region_classify, star_norm, switch_signature)
from .loss import (LossConfig, directional_second, full_hessian, gradient, hvp, laplacian, loss,
                   min_eigenvalue, reg_loss)
from .region import (Certificate, RegionSpec, certify, curvature_floor, global_min_capture, isolation_probe,
                     u_membership, u_threshold, audit_curvature_floor)
from .trajectory import (SgdConfig, TrajectoryRecord, detect_t0, gamma_second, gradient_flow, gronwall_check,
                         loss_change_fraction, loss_fraction, normalized_second, percentile_stat, sgd_train)
from .linear import RotationPlan, critical_search, degeneracy_audit, rotate_weights
from .data import TeacherSpec, gen_teacher, load_csv, load_idx, normalize_radius, teacher_params

__all__ = [n for n in dir() if not n.startswith("_")]
