"""Optimal information design with a receiver who takes a continuous action.

The discretised problem is solved as a linear program with an in-house
revised simplex; dual prices give a contact-set certificate; structural
tests classify the optimum; a boundary shooter handles continuous priors.
"""

from .contact import (
    DualCertificate,
    certificate,
    compute_Q,
    contact_set,
    d1_residuals,
    fixed_certificate,
    foc_residual,
    q_closed_form,
    select_q,
    verify_support_optimality,
)
from .exceptions import PersuasionError
from .fixtures import FIXTURE_IDS, fixture, run_fixture
from .lp import DiscreteProblem, LpSolution, Outcome, build_primal, make_problem, solve_lp, value_under
from .model import (
    Posterior,
    PreferenceModel,
    Prior,
    atoms_prior,
    contest,
    density_prior,
    linear_in_action,
    quantile,
    receiver_best_response,
    simple,
    simple_receiver,
    simple_sender,
    tabulated,
    theta_star,
    translation_invariant,
)
from .nad import NadSolution, nad_shoot, nad_verify, sand_lever_assign
from .structure import (
    classify_dippedness,
    full_disclosure_test,
    improving_direction,
    local_ndSDD_test,
    pairs_nested,
    pairwise_split,
    pooling_test,
    r_matrix,
    remove_single_peaked_triples,
    sdpd_verdict,
    twist_check,
    twist_determinant,
)

__version__ = "0.1.0"

__all__ = [
    "DiscreteProblem",
    "DualCertificate",
    "FIXTURE_IDS",
    "LpSolution",
    "NadSolution",
    "Outcome",
    "PersuasionError",
    "Posterior",
    "PreferenceModel",
    "Prior",
    "atoms_prior",
    "build_primal",
    "certificate",
    "classify_dippedness",
    "compute_Q",
    "contact_set",
    "contest",
    "d1_residuals",
    "density_prior",
    "fixed_certificate",
    "fixture",
    "foc_residual",
    "full_disclosure_test",
    "improving_direction",
    "linear_in_action",
    "local_ndSDD_test",
    "make_problem",
    "nad_shoot",
    "nad_verify",
    "pairs_nested",
    "pairwise_split",
    "pooling_test",
    "q_closed_form",
    "quantile",
    "r_matrix",
    "receiver_best_response",
    "remove_single_peaked_triples",
    "run_fixture",
    "sand_lever_assign",
    "sdpd_verdict",
    "select_q",
    "simple",
    "simple_receiver",
    "simple_sender",
    "solve_lp",
    "tabulated",
    "theta_star",
    "translation_invariant",
    "twist_check",
    "twist_determinant",
    "value_under",
    "verify_support_optimality",
]
