"""Fit a grid of (components, knots) models and pick one by PSIS-LOO."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import build_basis, place_knots
from .data import LongitudinalDataset
from .fit import FitResult, PreparedData, fit_sfpca, prepare
from .nuts import SamplerConfig
from .psis import compare_models

logger = logging.getLogger(__name__)

RHAT_FAIL = 1.1


class GridError(ValueError):
    pass


def parse_range(text) -> list[int]:
    """``"2"`` -> [2]; ``"1:3"`` -> [1, 2, 3] (inclusive)."""
    if isinstance(text, int):
        return [text]
    parts = str(text).split(":")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise GridError(f"expected an integer or A:B range, got {text!r}") from None
    if len(vals) == 1:
        return vals
    if len(vals) != 2 or vals[1] < vals[0]:
        raise GridError(f"bad range {text!r}")
    return list(range(vals[0], vals[1] + 1))


def validate_grid(pcs, knots) -> list[tuple[int, int]]:
    cells = []
    for k in pcs:
        if k < 1:
            raise GridError(f"pcs must be >= 1, got {k}")
        for m in knots:
            if m < 0:
                raise GridError(f"knots must be >= 0, got {m}")
            if k >= m + 4:
                raise GridError(f"need pcs < knots + 4 (k < q): pcs={k}, knots={m} gives q={m + 4}")
            cells.append((k, m))
    return cells


@dataclass
class CellResult:
    k: int
    n_knots: int
    fit: FitResult | None
    seed: int
    failed: bool = False
    reason: str = ""

    @property
    def name(self) -> str:
        return f"pcs={self.k},knots={self.n_knots}"


@dataclass
class Selection:
    cells: list
    table: list = field(default_factory=list)
    recommended: CellResult | None = None
    best: CellResult | None = None

    def cell(self, k: int, n_knots: int) -> CellResult:
        for c in self.cells:
            if (c.k, c.n_knots) == (k, n_knots):
                return c
        raise KeyError((k, n_knots))


def cell_seed(seed: int, k: int, n_knots: int) -> int:
    return int(np.random.SeedSequence([seed, k, n_knots]).generate_state(1, np.uint64)[0])


def select_models(data: LongitudinalDataset | PreparedData, pcs, knots, config: SamplerConfig | None = None,
                  knot_method: str = "quantile", time_range=None, rhat_fail: float = RHAT_FAIL,
                  on_cell=None, **fit_kwargs) -> Selection:
    """Fit every (k, knots) cell and recommend a model.

    All cells share one standardization, and cells with the same knot count
    share one basis. A cell whose identified quantities have R-hat above
    ``rhat_fail``, or whose fit raises, is marked failed and left out of
    the comparison. ``on_cell(cell)`` is called after each fit.
    """
    config = config or SamplerConfig()
    cells_kn = validate_grid(list(pcs), list(knots))
    prepared = data if isinstance(data, PreparedData) else prepare(data, time_range)
    bases = {m: build_basis(place_knots(prepared.data.all_times(), m, method=knot_method))
             for m in sorted({m for _, m in cells_kn})}
    cells = []
    for k, m in cells_kn:
        seed = cell_seed(config.seed, k, m)
        try:
            fit = fit_sfpca(prepared, k, basis=bases[m], config=replace(config, seed=seed), **fit_kwargs)
        except Exception as exc:  # a failed cell must not stop the grid
            logger.warning("cell pcs=%d knots=%d failed: %s", k, m, exc)
            cell = CellResult(k, m, None, seed, True, f"{type(exc).__name__}: {exc}")
        else:
            worst = fit.convergence.get("max_rhat")
            bad = worst is not None and worst > rhat_fail
            cell = CellResult(k, m, fit, seed, bool(bad), f"max R-hat {worst:.3f} > {rhat_fail}" if bad else "")
        cells.append(cell)
        if on_cell is not None:
            on_cell(cell)
    ok = [c for c in cells if not c.failed]
    sel = Selection(cells)
    if not ok:
        return sel
    cmp = compare_models([c.fit.loo for c in ok], names=[c.name for c in ok],
                         complexity=[(c.k, c.n_knots) for c in ok])
    for row in cmp["table"]:
        c = ok[row["index"]]
        row.update({"pcs": c.k, "knots": c.n_knots})
    sel.table = cmp["table"]
    sel.recommended = ok[cmp["recommended_index"]]
    sel.best = ok[cmp["table"][0]["index"]]
    return sel
