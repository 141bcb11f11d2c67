"""Damage taxonomy and the four mechanism groups used for evaluation."""

from __future__ import annotations

from enum import Enum
from typing import Iterable

# Order and spelling are load-bearing: this tuple is rendered into the prompt verbatim.
DAMAGE_TYPES: tuple[str, ...] = (
    "Missing Teeth of Vortex generators",
    "Lightning Receptors",
    "Crack",
    "Corrosion",
    "Erosion",
    "Rust",
    "Delamination",
    "Fracture",
    "Dent",
    "Ice",
    "Snow",
    "Surface Peeling",
    "Wear",
    "Lightning Strike/Burning",
)

_CANONICAL = {name.lower(): name for name in DAMAGE_TYPES}


class MechanismGroup(str, Enum):
    HEALTHY = "Healthy"
    SURFACE = "Surface"
    ENVIRONMENTAL = "Environmental"
    STRUCTURAL = "Structural"


GROUP_ORDER: tuple[MechanismGroup, ...] = (
    MechanismGroup.HEALTHY,
    MechanismGroup.SURFACE,
    MechanismGroup.ENVIRONMENTAL,
    MechanismGroup.STRUCTURAL,
)

GROUP_OF_TYPE: dict[str, MechanismGroup] = {
    "Corrosion": MechanismGroup.SURFACE,
    "Erosion": MechanismGroup.SURFACE,
    "Surface Peeling": MechanismGroup.SURFACE,
    "Rust": MechanismGroup.SURFACE,
    "Wear": MechanismGroup.SURFACE,
    "Dent": MechanismGroup.SURFACE,
    "Ice": MechanismGroup.ENVIRONMENTAL,
    "Snow": MechanismGroup.ENVIRONMENTAL,
    "Lightning Strike/Burning": MechanismGroup.ENVIRONMENTAL,
    "Lightning Receptors": MechanismGroup.ENVIRONMENTAL,
    "Fracture": MechanismGroup.STRUCTURAL,
    "Crack": MechanismGroup.STRUCTURAL,
    "Delamination": MechanismGroup.STRUCTURAL,
    "Missing Teeth of Vortex generators": MechanismGroup.STRUCTURAL,
}

# Mixed-damage images collapse to the most consequential group present.
_PRECEDENCE = (MechanismGroup.STRUCTURAL, MechanismGroup.ENVIRONMENTAL, MechanismGroup.SURFACE)


def canonical_type(name: str) -> str:
    """Map a case-insensitive damage-type name onto its taxonomy spelling."""
    try:
        return _CANONICAL[name.strip().lower()]
    except KeyError:
        raise ValueError(f"not a taxonomy damage type: {name!r}") from None


def sort_types(types: Iterable[str]) -> list[str]:
    """Order damage types by their position in the taxonomy."""
    return sorted(set(types), key=DAMAGE_TYPES.index)


def group_of(types: Iterable[str]) -> MechanismGroup:
    present = {GROUP_OF_TYPE[canonical_type(t)] for t in types}
    if not present:
        return MechanismGroup.HEALTHY
    for group in _PRECEDENCE:
        if group in present:
            return group
    raise AssertionError("unreachable")
