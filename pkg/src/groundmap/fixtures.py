"""Named test systems.

Expected values that ship with the fixtures live in ``expected.json`` next to
this module and are produced by :func:`regenerate_expected` from independent
oracles (closed-form spectra, dense diagonalisation, one-body bisection);
run ``python -m groundmap.fixtures`` to rebuild the file.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.optimize import bisect, minimize_scalar

from .discretization import (Grid, InteractionKernel, PotentialField, build_grid, laplacian_eigenvalues,
                             one_body_laplacian)
from .errors import InvalidArgument

EXPECTED_PATH = Path(__file__).with_name("expected.json")


@dataclass(frozen=True, eq=False)
class Fixture:
    name: str
    grid: Grid
    potential: PotentialField
    interaction: InteractionKernel
    n_particles: int
    meta: dict = field(default_factory=dict)


def _box_indicator(x, lo, hi):
    return ((x >= lo) & (x <= hi)).astype(float)


def double_well_values(grid: Grid, depth: float, ratio: float = 0.8,
                       wells=((0.15, 0.35), (0.65, 0.85))) -> np.ndarray:
    x = grid.nodes / grid.length
    (a, b), (c, d) = wells
    return -depth * (_box_indicator(x, a, b) + ratio * _box_indicator(x, c, d))


def box(n_sites: int = 50, length: float = 1.0, n_particles: int = 1) -> Fixture:
    g = build_grid(n_sites, length)
    return Fixture("box", g, PotentialField.zeros(g, "box"), InteractionKernel.none(), n_particles)


def deep_well(n_sites: int = 60, depth: float = 400.0, n_particles: int = 2,
              interaction: InteractionKernel | None = None) -> Fixture:
    """Square well on [0.4, 0.6] of the unit box, soft-Coulomb pair by default."""
    g = build_grid(n_sites, 1.0)
    v = -depth * _box_indicator(g.nodes, 0.4, 0.6)
    w = interaction if interaction is not None else InteractionKernel.soft_coulomb(0.1, 1.0)
    return Fixture("deep_well", g, PotentialField(v, f"deep_well({depth:g})"), w, n_particles, {"depth": depth})


def double_well(depth: float = 250.0, n_sites: int = 40, ratio: float = 0.8, n_particles: int = 2,
                interaction: InteractionKernel | None = None) -> Fixture:
    g = build_grid(n_sites, 1.0)
    v = double_well_values(g, depth, ratio)
    w = interaction if interaction is not None else InteractionKernel.none()
    return Fixture("double_well", g, PotentialField(v, f"double_well({depth:g})"), w, n_particles,
                   {"depth": depth, "ratio": ratio})


def crossing_gap(grid: Grid, depth: float, ratio: float = 0.8) -> float:
    """(e1 + e4) - (e2 + e3) of the one-body double-well spectrum (1-based orbitals)."""
    K = one_body_laplacian(grid).toarray()
    e = sla.eigvalsh(K + np.diag(double_well_values(grid, depth, ratio)), subset_by_index=[0, 3])
    return float((e[0] + e[3]) - (e[1] + e[2]))


@functools.lru_cache(maxsize=8)
def crossing_depth(n_sites: int = 40, ratio: float = 0.8, bracket=(200.0, 300.0)) -> float:
    """Well depth at which the two-fermion configurations {1,4} and {2,3} cost the same energy."""
    g = build_grid(n_sites, 1.0)
    f = lambda d: crossing_gap(g, d, ratio)
    lo, hi = bracket
    if f(lo) * f(hi) > 0:
        raise InvalidArgument(f"no sign change of the crossing gap on {bracket}")
    return float(bisect(f, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200))


def crossing(n_sites: int = 40, ratio: float = 0.8) -> Fixture:
    """Non-interacting pair in an asymmetric double well tuned to an exact two-fold crossing.

    Levels 2 and 3 (0-based) coincide; they are the determinants of orbitals
    {1,4} and {2,3}.
    """
    depth = crossing_depth(n_sites, ratio)
    fx = double_well(depth, n_sites, ratio, 2, InteractionKernel.none())
    return Fixture("crossing", fx.grid, PotentialField(fx.potential.values, "crossing"), fx.interaction, 2,
                   {"depth": depth, "ratio": ratio, "levels": (2, 3)})


def interacting_pair(n_sites: int = 60, depth: float = 350.0, ratio: float = 0.8) -> Fixture:
    """Soft-Coulomb pair in an asymmetric double well (second binding fixture)."""
    g = build_grid(n_sites, 1.0)
    v = double_well_values(g, depth, ratio, wells=((0.25, 0.42), (0.58, 0.75)))
    return Fixture("interacting_pair", g, PotentialField(v, "interacting_pair"),
                   InteractionKernel.soft_coulomb(0.1, 1.0), 2, {"depth": depth, "ratio": ratio})


_POL_WELLS = ((0.8, 0.95), (0.05, 0.22), (0.45, 0.62))


def polarizable_values(grid: Grid, ratio: float, depths=(800.0, 400.0)) -> np.ndarray:
    """Deep anchor well plus two shallower wells; ``ratio`` scales the right one."""
    x = grid.nodes / grid.length
    (a, b), (c, d), (e, f) = _POL_WELLS
    return -(depths[0] * _box_indicator(x, a, b) + depths[1] * _box_indicator(x, c, d)
             + ratio * depths[1] * _box_indicator(x, e, f))


@functools.lru_cache(maxsize=4)
def polarizable_ratio(n_sites: int = 127, bracket=(0.7, 1.3)) -> float:
    """Ratio at the avoided crossing of the two lowest interacting pair levels (smallest gap)."""
    from .spectra import solve

    g = build_grid(n_sites, 1.0)
    w = InteractionKernel.soft_coulomb(0.1, 1.0)

    def gap(r):
        sol = solve(g, polarizable_values(g, r), 2, w, k_levels=2)
        return float(sol.energies[1] - sol.energies[0])

    res = minimize_scalar(gap, bounds=bracket, method="bounded", options={"xatol": 1e-8})
    return float(res.x)


def polarizable_pair(n_sites: int = 127) -> Fixture:
    """Soft-Coulomb pair whose second particle sits at a tunnelling avoided crossing.

    One particle is held by the deep right-hand well, the other is shared by
    two wells placed asymmetrically in the box, tuned to their smallest gap.
    The ground state stays non-degenerate but reacts strongly to slowly
    varying fields, which makes it the reference for the oscillation sweep.
    """
    ratio = polarizable_ratio(n_sites)
    g = build_grid(n_sites, 1.0)
    return Fixture("polarizable_pair", g, PotentialField(polarizable_values(g, ratio), "polarizable_pair"),
                   InteractionKernel.soft_coulomb(0.1, 1.0), 2, {"ratio": ratio})


REGISTRY = {
    "box": box,
    "deep_well": deep_well,
    "double_well": double_well,
    "crossing": crossing,
    "interacting_pair": interacting_pair,
    "polarizable_pair": polarizable_pair,
}


def get_fixture(name: str, **kwargs) -> Fixture:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise InvalidArgument(f"unknown fixture {name!r}; available: {', '.join(sorted(REGISTRY))}") from None
    return factory(**kwargs)


def regenerate_expected(path: Path = EXPECTED_PATH) -> dict:
    """Recompute stored fixture values from oracles that do not use the many-body solver."""
    out = {}
    fx = box()
    lam = laplacian_eigenvalues(fx.grid)
    out["box"] = {"n_sites": fx.grid.n_sites, "E0": float(lam[0]), "E1": float(lam[1])}
    cx = crossing()
    K = one_body_laplacian(cx.grid).toarray()
    eps = sla.eigvalsh(K + np.diag(cx.potential.values))
    pairs = np.sort([eps[i] + eps[j] for i in range(len(eps)) for j in range(i + 1, len(eps))])
    out["crossing"] = {"depth": cx.meta["depth"], "levels": [float(e) for e in pairs[:6]]}
    out["polarizable_pair"] = {"ratio": polarizable_ratio()}
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def expected_values() -> dict:
    with open(EXPECTED_PATH) as fh:
        return json.load(fh)


if __name__ == "__main__":
    print(json.dumps(regenerate_expected(), indent=2))
