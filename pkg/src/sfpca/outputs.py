"""Artifact files: atomic writes, CSV exports, deterministic SVG plots, fit directories."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .basis import build_basis
from .data import Standardization, TimeScale, load_csv, write_csv
from .fit import FitResult, PreparedData, identify, prepare
from .model import ModelSpec
from .predict import CurveSet, PpcBundle, Trajectory
from .psis import KHAT_BAD, LooReport
from .rotate import RotatedDraws

SCHEMA_VERSION = 1
FIT_JSON = "fit.json"
DRAWS_FILE = "draws.npy"
DATA_COPY = "data.csv"


class ArtifactError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# atomic writing


def atomic_write_bytes(path, payload: bytes) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=False) + "\n")


def write_rows(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return atomic_write_text(path, buf.getvalue())


def write_npy(path, arr) -> Path:
    buf = io.BytesIO()
    np.save(buf, np.asarray(arr), allow_pickle=False)
    return atomic_write_bytes(path, buf.getvalue())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


# ---------------------------------------------------------------------------
# CSV exports


def ppc_rows(ppc: PpcBundle):
    header = ["grid", "observed"] + [f"rep_{r + 1}" for r in range(ppc.R)]
    rows = [[ppc.grid[g], ppc.observed_density[g], *ppc.replicate_densities[:, g]]
            for g in range(ppc.grid.size)]
    return header, rows


def mean_curve_rows(cs: CurveSet):
    header = ["t", "time", "lower", "median", "upper", "mean"]
    rows = [[cs.grid[g], cs.time[g], *cs.mean[:, g], cs.mean_estimate[g]] for g in range(cs.grid.size)]
    return header, rows


def pc_curve_rows(cs: CurveSet):
    header = ["component", "t", "time", "lower", "median", "upper", "estimate", "plus_1sd", "minus_1sd", "score_sd"]
    rows = []
    for j in range(cs.k):
        for g in range(cs.grid.size):
            rows.append([j + 1, cs.grid[g], cs.time[g], *cs.components[j, :, g], cs.component_estimate[j, g],
                         cs.plus[j, g], cs.minus[j, g], cs.score_sd[j]])
    return header, rows


def trajectory_rows(tr: Trajectory):
    header = ["kind", "time", "lower", "median", "upper", "observed"]
    rows = [["curve", tr.time[g], tr.lower[g], tr.median[g], tr.upper[g], ""] for g in range(tr.grid.size)]
    rows += [["observation", t, "", "", "", y] for t, y in zip(tr.obs_times, tr.obs_values)]
    return header, rows


def khat_rows(loo: LooReport):
    ids = loo.unit_ids or list(range(loo.N))
    return ["index", "subject_id", "khat", "flagged"], [
        [i + 1, ids[i], loo.khat[i], int(loo.khat[i] > KHAT_BAD)] for i in range(loo.N)]


def score_rows(rotated: RotatedDraws, subject_ids):
    mean = rotated.alpha_star.mean(axis=0)
    sd = rotated.alpha_star.std(axis=0, ddof=1) if rotated.S > 1 else np.zeros_like(mean)
    rows = [[sid, j + 1, mean[i, j], sd[i, j]] for i, sid in enumerate(subject_ids) for j in range(rotated.k)]
    return ["subject", "component", "mean", "sd"], rows


def safe_name(subject_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in str(subject_id))


# ---------------------------------------------------------------------------
# SVG


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "sfpca"
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    return plt, fig, ax


def _save_svg(plt, fig, path) -> Path:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return atomic_write_text(path, buf.getvalue())


def svg_ppc(ppc: PpcBundle, path) -> Path:
    plt, fig, ax = _figure()
    for r in ppc.replicate_densities:
        ax.plot(ppc.grid, r, color="0.75", lw=0.5)
    ax.plot(ppc.grid, ppc.observed_density, color="black", lw=1.5, label="observed")
    ax.set_xlabel("standardized outcome")
    ax.set_ylabel("density")
    ax.legend(frameon=False)
    return _save_svg(plt, fig, path)


def svg_mean_curve(cs: CurveSet, path) -> Path:
    plt, fig, ax = _figure()
    ax.plot(cs.time, cs.mean[1], color="black")
    ax.plot(cs.time, cs.mean[0], color="black", ls="--", lw=0.8)
    ax.plot(cs.time, cs.mean[2], color="black", ls="--", lw=0.8)
    ax.set_xlabel("time")
    ax.set_ylabel("mean")
    return _save_svg(plt, fig, path)


def svg_pc_curves(cs: CurveSet, path) -> Path:
    plt, fig, ax = _figure()
    for j in range(cs.k):
        ax.plot(cs.time, cs.components[j, 1], label=f"PC {j + 1}")
    ax.axhline(0.0, color="0.6", lw=0.5)
    ax.set_xlabel("time")
    ax.set_ylabel("component")
    ax.legend(frameon=False)
    return _save_svg(plt, fig, path)


def svg_khat(loo: LooReport, path) -> Path:
    plt, fig, ax = _figure()
    ax.scatter(np.arange(1, loo.N + 1), loo.khat, s=10, color="black")
    ax.axhline(KHAT_BAD, color="red", ls="--", lw=0.8)
    ax.set_xlabel("subject index")
    ax.set_ylabel("Pareto k-hat")
    return _save_svg(plt, fig, path)


def svg_trajectory(tr: Trajectory, path) -> Path:
    plt, fig, ax = _figure()
    ax.plot(tr.time, tr.median, color="red")
    ax.plot(tr.time, tr.lower, color="red", ls="--", lw=0.8)
    ax.plot(tr.time, tr.upper, color="red", ls="--", lw=0.8)
    ax.plot(tr.obs_times, tr.obs_values, "o-", color="black", ms=3)
    ax.set_xlabel("time")
    ax.set_title(f"subject {tr.subject_id}")
    return _save_svg(plt, fig, path)


# ---------------------------------------------------------------------------
# fit directories


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def fit_summary(fit: FitResult, seed: int, extra: dict | None = None) -> dict:
    """JSON-ready description of a fit (everything except the draws)."""
    spec = fit.spec
    p = fit.prepared
    ve = fit.variance_explained()
    sig = fit.rotated.sigma * p.standardization.sd
    doc = {
        "schema_version": SCHEMA_VERSION,
        "timestamp": utc_timestamp(),
        "seed": int(seed),
        "status": fit.status,
        "model": {
            "k": spec.k, "q": spec.q, "n_knots": fit.n_knots,
            "internal_knots": [float(v) for v in fit.basis.internal_knots],
            "quad_points": int(fit.basis.quad_nodes.size),
        },
        "data": {
            "n_subjects": spec.N, "n_observations": int(spec.y.size),
            "standardization": {"mean": p.standardization.mean, "sd": p.standardization.sd,
                                 "applied": p.standardization.applied},
            "time_scale": {"t_min": p.time_scale.t_min, "t_max": p.time_scale.t_max},
        },
        "sampler": fit.sampler.config.as_dict(),
        "draws": {
            "file": DRAWS_FILE, "shape": list(fit.sampler.draws.shape),
            "layout": "chains x iterations x parameters",
            "parameter_order": "theta_mu[q], Theta[q,k] row-major, alpha[N,k] row-major, log_sigma",
            "step_size": [float(v) for v in fit.sampler.step_size],
        },
        "variance_explained": {"score_share": [float(v) for v in ve["mean"]],
                               "eigen_share": [float(v) for v in ve["eigen_mean"]]},
        "sigma": {"mean": float(sig.mean()), "lower": float(np.percentile(sig, 2.5)),
                  "upper": float(np.percentile(sig, 97.5))},
        "rank_deficient_draws": int(fit.rotated.excluded.size),
        "convergence": _jsonable(fit.convergence),
        "loo": fit.loo.to_dict(),
        "warnings": list(fit.warnings),
        "loo_warnings": list(fit.loo_warnings),
    }
    if extra:
        doc.update(extra)
    return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def save_fit(fit: FitResult, out_dir, seed: int, extra: dict | None = None) -> dict:
    """Write draws, a copy of the input data and fit.json (written last)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_npy(out / DRAWS_FILE, fit.sampler.draws)
    buf_path = out / DATA_COPY
    tmp = out / f".{DATA_COPY}.tmp"
    write_csv(fit.prepared.raw, tmp)
    os.replace(tmp, buf_path)
    doc = fit_summary(fit, seed, extra)
    write_json(out / FIT_JSON, doc)
    return doc


@dataclass
class LoadedFit:
    """A fit reconstructed from its directory."""

    path: Path
    meta: dict
    prepared: PreparedData
    spec: ModelSpec
    draws: np.ndarray  # (chains, iters, dim)
    loo: LooReport

    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    def rotated(self) -> RotatedDraws:
        return identify(self.spec, self.flat())


def load_fit(fit_dir) -> LoadedFit:
    fit_dir = Path(fit_dir)
    for name in (FIT_JSON, DRAWS_FILE, DATA_COPY):
        if not (fit_dir / name).is_file():
            raise ArtifactError(f"missing fit artifact: {fit_dir / name}")
    meta = json.loads((fit_dir / FIT_JSON).read_text())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ArtifactError(f"unsupported fit.json schema_version {meta.get('schema_version')!r}")
    raw = load_csv(fit_dir / DATA_COPY)
    ts = meta["data"]["time_scale"]
    st = meta["data"]["standardization"]
    prepared = prepare(raw, (ts["t_min"], ts["t_max"]), do_standardize=st["applied"])
    if st["applied"] and (abs(prepared.standardization.mean - st["mean"]) > 1e-12 * max(1.0, abs(st["mean"]))
                          or abs(prepared.standardization.sd - st["sd"]) > 1e-12 * st["sd"]):
        raise ArtifactError("data.csv does not match the standardization recorded in fit.json")
    basis = build_basis(meta["model"]["internal_knots"], quad_points=meta["model"]["quad_points"])
    spec = ModelSpec.from_data(prepared.data, basis, meta["model"]["k"])
    draws = np.load(fit_dir / DRAWS_FILE, allow_pickle=False)
    if draws.ndim != 3 or draws.shape[2] != spec.dim:
        raise ArtifactError(f"draws have shape {draws.shape}, expected (chains, iters, {spec.dim})")
    return LoadedFit(fit_dir, meta, prepared, spec, draws, LooReport.from_dict(meta["loo"]))


def restore_standardization(meta: dict) -> tuple[Standardization, TimeScale]:
    st, ts = meta["data"]["standardization"], meta["data"]["time_scale"]
    return Standardization(st["mean"], st["sd"], st["applied"]), TimeScale(ts["t_min"], ts["t_max"])
