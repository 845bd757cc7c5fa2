"""Source-rate estimation from measured singles and coincidence rates."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass


class InconsistentInputsError(ValueError):
    """Measured rates imply a negative background."""


@dataclass(frozen=True)
class ParameterEstimate:
    P: float
    B: float
    eta: float
    tau: float  # ns
    Ctime_pred: float
    Ctime_measured: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def estimate_parameters(singles_S: float, spatio_temporal_Cst: float, eta: float, tau: float,
                        ctime_measured: float | None = None) -> ParameterEstimate:
    """Pair rate and background from ``S = eta (P + B)`` and ``Cst = eta^2 P``.

    ``eta`` must come from outside: the temporal coincidence rate
    ``Ctime = Cst + tau S^2`` is implied by the other two and adds no
    information, which the returned prediction makes visible.  ``tau`` in ns.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    if singles_S < 0 or spatio_temporal_Cst < 0 or tau < 0:
        raise ValueError("rates and tau must be non-negative")
    P = spatio_temporal_Cst / eta**2
    total = singles_S / eta
    B = total - P
    if B < 0:
        if -B <= 1e-9 * max(total, P):
            B = 0.0
        else:
            raise InconsistentInputsError(
                f"singles {singles_S} are too low for coincidences {spatio_temporal_Cst} at eta={eta}"
            )
    ctime = spatio_temporal_Cst + tau * 1e-9 * singles_S**2
    return ParameterEstimate(P, B, eta, tau, ctime, ctime_measured)
