"""Flows, Besov-type norms, trace and extension operators for step-2 vector fields."""

from .domains import Box, DomainSpec, ScalarField, SupportError, admissible_delta, bump, test_corpus
from .expr import Expression, parse
from .fieldspec import (Basis, StepTwoError, VectorField, check_step2, complete_basis, lie_bracket,
                        parse_field, restrict_to_slice)
from .flows import (FlowSolverConfig, commutator_flow, defect_residual, flow, flow_batch, flow_compose,
                    reconstruct, residual_exponent, straighten)
from .kernels import BACKEND
from .manifest import Manifest, load_manifest, parse_manifest
from .norms import (NormParams, classical_besov_seminorm, flow_besov_norm, flow_modulus,
                    hardy_littlewood_check, lp_norm, sobolev_norm)
from .traceops import (ExtensionConfig, extend_E, extend_H, full_extension, hardy_average, restrict,
                       seeley_extend)

__version__ = "0.1.0"
