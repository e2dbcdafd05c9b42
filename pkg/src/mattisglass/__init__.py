"""Vector spin glasses with a Mattis interaction: variational formulas and a finite-N oracle."""
from __future__ import annotations

__version__ = "0.1.0"

from .expr import ExprDomainError, ExprError, ExprSyntaxError, UnknownIdentifierError, parse_expr, to_source
from .model import (
    QUADRATIC_MATRIX, SCALAR_MIXTURE, DiscretePath, DisorderLaw, GeneralizedSpinMap, MattisFunction, MixtureXi,
    ModelSpec, PathError, SpecError, SpinPrior, basic_model_spec, dump_spec, ising_spec, load_spec, spec_hash,
    validate_spec,
)
from .parisi import QuadratureRule, effective_path, parisi_P, psi_eval
from .variational import (
    PhiFunction, RateFunctionTable, conjugate_table, legendre_dual, limit_free_energy, phi_of_x,
    rate_function_IG, rate_function_J_basic,
)
