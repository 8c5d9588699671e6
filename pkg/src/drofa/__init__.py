"""Distributionally robust federated averaging at desk scale.

Simulates DRFA, DRFA-Prox, DRFA-GA and FedAvg on small synthetic or CSV
federations, with the geometry, metrics and brute-force references needed to
check them.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .algorithms import (
    AlgoConfig,
    RunResult,
    StageTranscript,
    run_algorithm,
    run_drfa,
    run_drfa_ga,
    run_drfa_prox,
    run_fedavg,
    theorem1_preset,
    theorem2_preset,
)
from .domain import IterateAverager, PrimalDomainSpec, uniform_mixture, validate_mixture
from .geometry import ProxProblem, project_primal, project_simplex, prox_simplex
from .metrics import (
    classification_metrics,
    gradient_dissimilarity_at,
    phi_linear,
    phi_regularized,
    primal_dual_gap,
)
from .objectives import (
    ClientShard,
    Federation,
    ObjectiveSpec,
    RegularizerSpec,
    eval_grad,
    eval_loss,
    load_csv_federation,
    make_quadratic_federation,
    make_synthetic_federation,
)
