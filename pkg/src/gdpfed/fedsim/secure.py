"""Exact-sum secure-aggregation abstraction.

Models the aggregation protocol as an access-control contract: once an
update is sealed, server-side code can only obtain group sums through
`aggregate`, never individual payloads.  The sum is numerically identical to
adding the unsealed vectors in client order.  No cryptography is involved;
the contract is enforced by interface shape.
"""

import numpy as np

__all__ = ["PrivacyViolationError", "SealedUpdate", "seal", "aggregate"]


class PrivacyViolationError(RuntimeError):
    """An update tried to cross the aggregation boundary unprotected."""


class SealedUpdate:
    """Opaque envelope around one client's update vector."""

    __slots__ = ("group_id", "__payload")

    def __init__(self, group_id: int, payload: np.ndarray):
        self.group_id = group_id
        # Name-mangled; only this module's aggregate() reads it back.
        self.__payload = np.array(payload, dtype=float, copy=True)

    @property
    def payload(self):
        raise PrivacyViolationError(
            "sealed payloads are only readable through aggregate()"
        )

    def __repr__(self) -> str:
        return f"SealedUpdate(group_id={self.group_id}, payload=<sealed>)"


def seal(update, require_dp: bool = True) -> SealedUpdate:
    """Seal a ClientUpdate for transport; DP paths must be noised first."""
    if require_dp and not update.noised:
        raise PrivacyViolationError(
            f"client update for group {update.group_id} reached the "
            "aggregation boundary without perturbation"
        )
    return SealedUpdate(update.group_id, update.delta.coords)


def aggregate(sealed: "list[SealedUpdate]", expected_count: "int | None" = None) -> np.ndarray:
    """Coordinate-wise sum of one group's sealed updates, in list order."""
    if not sealed:
        raise ValueError("cannot aggregate an empty group")
    if expected_count is not None and len(sealed) != expected_count:
        raise ValueError(f"expected {expected_count} sealed updates, got {len(sealed)}")
    group_ids = {s.group_id for s in sealed}
    if len(group_ids) != 1:
        raise ValueError(f"sealed updates span multiple groups: {sorted(group_ids)}")
    total = np.zeros_like(sealed[0]._SealedUpdate__payload)
    for s in sealed:
        total += s._SealedUpdate__payload
    return total
