"""Monte Carlo verification harness.

Probes are CI-based: every verdict compares estimates with a three-standard-
error cushion so Monte Carlo noise cannot flip an acceptance decision, and
every probe is a pure function of (spec, parameters, master seed).  Suprema
over unbounded time are truncated to an explicit horizon, which each report
states in its notes.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .lyapunov import LyapunovSpec, _segment_times
from .simulate import IntegratorConfig, RngPolicy, simulate_ensemble, simulate_window
from .system import SystemSpec, derive_constants

_AUX_OUTER = 3
_Z95 = 1.959963984540054


class ConstantsUnavailable(ValueError):
    """Closed-form constants needed by the bound are not finite/available."""


def _json(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf")
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, np.ndarray):
        return [_json(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_json(x) for x in v]
    if isinstance(v, dict):
        return {k: _json(x) for k, x in v.items()}
    return v


# ---------------------------------------------------------------------------
# per-segment second-moment bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundCheckResult:
    """Comparison of the estimated segment sup-moment with its closed-form cap.

    ``lhs_*`` estimate ``E sup |x|^2`` over the segment (jump at the right
    end included); ``rhs`` is ``9 e^{5C} (1 + 2 L_{k+1}) [E|x(t_k)|^2 +
    5C (t_{k+1} - t_k)]`` computed from derived constants, never estimated.
    The verdict compares the 95% CI upper bound of the left side.
    """

    segment: int
    t_lo: float
    t_hi: float
    lhs_mean: float
    lhs_stderr: float
    lhs_ci_upper: float
    rhs: float
    start_sq: float
    n_paths: int
    ok: bool

    def as_dict(self) -> dict:
        return _json(dataclasses.asdict(self))


def verify_segment_moment_bound(
    spec: SystemSpec,
    k: int,
    n_paths: int,
    policy: RngPolicy,
    cfg: IntegratorConfig | None = None,
) -> BoundCheckResult:
    """Estimate ``E sup |x|^2`` on segment ``k`` and check its moment cap.

    Paths start from the configured initial condition placed at the segment
    start, so the right side's ``E|x(t_k)|^2`` is the same ensemble's value
    there.
    """
    cfg = cfg or IntegratorConfig()
    consts = derive_constants(spec)
    if not math.isfinite(consts.c_growth):
        raise ConstantsUnavailable("growth constant is infinite for this family")
    l_next = spec.jump.lipschitz_sq(k + 1)
    if not math.isfinite(l_next):
        raise ConstantsUnavailable(f"impulse Lipschitz constant L_{k + 1} is infinite")
    t_lo, t_hi = _segment_times(spec, k)

    sups = np.empty(n_paths)
    for i in range(n_paths):
        streams = policy.aux_streams(_AUX_OUTER, k, i)
        res = simulate_window(spec, cfg, t_lo, t_hi, spec.x0, spec.y0, spec.h0, streams)
        sups[i] = res.sup_norm ** 2
    lhs = float(sups.mean())
    se = float(sups.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    upper = lhs + _Z95 * se
    start_sq = float(spec.x0 @ spec.x0)
    c = consts.c_growth
    rhs = 9.0 * math.exp(5.0 * c) * (1.0 + 2.0 * l_next) * (start_sq + 5.0 * c * (t_hi - t_lo))
    return BoundCheckResult(
        segment=k, t_lo=t_lo, t_hi=t_hi,
        lhs_mean=lhs, lhs_stderr=se, lhs_ci_upper=upper,
        rhs=rhs, start_sq=start_sq, n_paths=n_paths,
        ok=bool(upper <= rhs),
    )


# ---------------------------------------------------------------------------
# stability probes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityProbeResult:
    """Generic probe outcome: estimates with CIs plus a trend verdict."""

    kind: str
    params: dict
    rows: tuple
    verdict: bool
    notes: str

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": _json(self.params),
            "rows": [_json(r) for r in self.rows],
            "verdict": self.verdict,
            "notes": self.notes,
        }


def probe_stability_in_probability(
    spec: SystemSpec,
    eps1: float,
    horizon: float,
    n_paths: int,
    delta_grid,
    policy: RngPolicy,
    cfg: IntegratorConfig | None = None,
    threads: int = 1,
) -> StabilityProbeResult:
    """Exceedance probability of the running sup from shrinking starts.

    For each ``delta`` the ensemble starts from ``|x0| = delta`` (same
    direction as the configured start) and reports the empirical probability
    that ``sup |x(t)|`` over the truncated horizon exceeds ``eps1``.
    Verdict: the exceedance is nonincreasing as ``delta`` decreases, within
    a three-standard-error cushion.
    """
    cfg = cfg or IntegratorConfig()
    if eps1 <= 0:
        raise ValueError("eps1 must be positive")
    deltas = sorted((float(d) for d in delta_grid), reverse=True)
    direction = spec.x0 / np.linalg.norm(spec.x0)
    rows = []
    for i, d in enumerate(deltas):
        sub = dataclasses.replace(spec, x0=d * direction)
        sub_policy = policy.derive(10, i)
        summary = simulate_ensemble(sub, cfg, horizon, n_paths, sub_policy,
                                    record_times=np.asarray([horizon]), threads=threads)
        p = float(np.mean(summary.sup_norms > eps1))
        se = math.sqrt(max(p * (1 - p), 1.0 / n_paths) / n_paths)
        rows.append({"delta": d, "exceedance": p, "stderr": se, "n_paths": n_paths})
    ok = all(
        rows[i + 1]["exceedance"]
        <= rows[i]["exceedance"] + 3.0 * math.hypot(rows[i]["stderr"], rows[i + 1]["stderr"])
        for i in range(len(rows) - 1)
    )
    return StabilityProbeResult(
        kind="prob-sup",
        params={"eps1": eps1, "horizon": horizon, "delta_grid": deltas, "n_paths": n_paths},
        rows=tuple(rows),
        verdict=ok,
        notes=f"sup over t >= 0 truncated to [0, {horizon:g}]",
    )


def probe_mean_square(
    spec: SystemSpec,
    time_grid,
    n_paths: int,
    policy: RngPolicy,
    cfg: IntegratorConfig | None = None,
    threads: int = 1,
) -> StabilityProbeResult:
    """Mean-squared-norm curve over a time grid with a decay verdict.

    The verdict compares the last grid point against the first with a
    three-standard-error separation.  The rows also carry the median squared
    norm, which is informative when the mean is dominated by rare paths.
    """
    cfg = cfg or IntegratorConfig()
    grid = np.asarray(sorted(float(t) for t in time_grid))
    if grid.size < 2 or (np.diff(grid) <= 0).any():
        raise ValueError("time grid must be increasing with at least two points")
    horizon = float(grid[-1])
    summary = simulate_ensemble(spec, cfg, horizon, n_paths, policy,
                                record_times=grid, threads=threads)
    rows = tuple(
        {
            "t": float(grid[i]),
            "mean_sq": float(summary.mean_sq[i]),
            "stderr": float(summary.stderr[i]),
            "median_sq": float(summary.median_sq[i]),
            "explosion_fraction": float(summary.explosion_fraction[i]),
        }
        for i in range(grid.size)
    )
    first, last = rows[0], rows[-1]
    sep = 3.0 * math.hypot(first["stderr"], last["stderr"])
    verdict = bool(last["mean_sq"] < first["mean_sq"] - sep)
    return StabilityProbeResult(
        kind="mean-square",
        params={"time_grid": grid.tolist(), "n_paths": n_paths},
        rows=rows,
        verdict=verdict,
        notes=f"decay verdict compares t={grid[-1]:g} against t={grid[0]:g} with 3 SE separation",
    )


# ---------------------------------------------------------------------------
# supermartingale probe along the jump skeleton
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SupermartingaleReport:
    """Per-segment comparison of skeleton expectations of a Lyapunov function.

    Row ``k`` holds the paired nested estimate of ``E v_{k+1} - E v_k``; the
    segment passes when the difference does not exceed three combined
    standard errors.
    """

    rows: tuple
    verdict: bool
    n_outer: int
    n_inner: int

    def as_dict(self) -> dict:
        return {
            "rows": [_json(r) for r in self.rows],
            "verdict": self.verdict,
            "n_outer": self.n_outer,
            "n_inner": self.n_inner,
        }


def probe_supermartingale(
    spec: SystemSpec,
    v: LyapunovSpec,
    k_range,
    n_outer: int,
    n_inner: int,
    policy: RngPolicy,
    cfg: IntegratorConfig | None = None,
) -> SupermartingaleReport:
    """Nested Monte Carlo check that skeleton expectations do not increase.

    Outer paths evolve from the configured start through the jump skeleton;
    at each requested segment the inner level continues every outer state to
    the next skeleton point.  The paired difference per outer path keeps the
    comparison on one probability space.
    """
    cfg = cfg or IntegratorConfig()
    ks = sorted(int(k) for k in k_range)
    if not ks:
        raise ValueError("k_range must be nonempty")
    entries = dict(spec.realization().entries)
    needed = ks + [ks[-1] + 1]
    for k in needed:
        if k not in entries:
            raise ValueError(f"skeleton index {k} is not realized")
    skeleton = sorted({entries[k] for k in needed})

    # outer sweep: states at each needed skeleton time, evolved incrementally
    states: dict = {t: [None] * n_outer for t in skeleton}
    for i in range(n_outer):
        streams = policy.aux_streams(_AUX_OUTER, 0, i)
        x, y, h = spec.x0, spec.y0, spec.h0
        t_prev = 0.0
        dead = False
        for t in skeleton:
            if not dead:
                res = simulate_window(spec, cfg, t_prev, t, x, y, h, streams)
                x, y, h = res.x_end, res.y_end, res.h_end
                dead = res.exploded
            states[t][i] = None if dead else (x, y, h)
            t_prev = t

    rows = []
    for k in ks:
        t_lo, t_hi = entries[k], entries[k + 1]
        diffs = []
        v_now = []
        v_next = []
        for i in range(n_outer):
            st = states[t_lo][i]
            if st is None:
                continue
            x, y, h = st
            v0 = float(v.value(t_lo, y, h, x))
            inner = np.empty(n_inner)
            for j in range(n_inner):
                streams = policy.aux_streams(_AUX_OUTER, k, i, j)
                res = simulate_window(spec, cfg, t_lo, t_hi, x, y, h, streams)
                inner[j] = float(v.value(t_hi, res.y_end, res.h_end, res.x_end))
            v_now.append(v0)
            v_next.append(float(inner.mean()))
            diffs.append(v_next[-1] - v0)
        diffs = np.asarray(diffs)
        if diffs.size == 0:
            rows.append({
                "k": k, "t_lo": t_lo, "t_hi": t_hi,
                "ev_k": float("nan"), "ev_next": float("nan"),
                "diff": float("nan"), "diff_stderr": float("nan"),
                "n_alive": 0, "ok": False,
            })
            continue
        d_mean = float(diffs.mean())
        d_se = float(diffs.std(ddof=1) / math.sqrt(diffs.size)) if diffs.size > 1 else 0.0
        rows.append({
            "k": k,
            "t_lo": t_lo,
            "t_hi": t_hi,
            "ev_k": float(np.mean(v_now)),
            "ev_next": float(np.mean(v_next)),
            "diff": d_mean,
            "diff_stderr": d_se,
            "n_alive": int(diffs.size),
            "ok": bool(d_mean <= 3.0 * d_se),
        })
    return SupermartingaleReport(
        rows=tuple(rows),
        verdict=all(r["ok"] for r in rows),
        n_outer=n_outer,
        n_inner=n_inner,
    )


# ---------------------------------------------------------------------------
# blow-up characterization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlowupReport:
    """Growth of the running sup as the impulse truncation is lifted."""

    rows: tuple
    verdict: bool          # median sup nondecreasing across the k_max grid
    notes: str

    def as_dict(self) -> dict:
        return {"rows": [_json(r) for r in self.rows], "verdict": self.verdict, "notes": self.notes}


def detect_blowup(
    spec: SystemSpec,
    k_max_grid,
    horizon: float,
    n_paths: int,
    policy: RngPolicy,
    cfg: IntegratorConfig | None = None,
    threads: int = 1,
) -> BlowupReport:
    """Sup-norm statistics as a function of the schedule truncation depth."""
    cfg = cfg or IntegratorConfig()
    if spec.schedule.concentration_point is None:
        raise ValueError("blow-up detection applies to accumulating schedules")
    rows = []
    for idx, km in enumerate(sorted(int(k) for k in k_max_grid)):
        sub = dataclasses.replace(spec, schedule=dataclasses.replace(spec.schedule, k_max=km))
        sub_policy = policy.derive(20, idx)
        summary = simulate_ensemble(sub, cfg, horizon, n_paths, sub_policy,
                                    record_times=np.asarray([horizon]), threads=threads)
        rows.append({
            "k_max": km,
            "median_sup": summary.sup_median,
            "max_sup": summary.sup_max,
            "exploded_fraction": summary.n_exploded / summary.n_paths,
        })
    # strict growth, so a flat table (no blow-up) gives a negative verdict
    verdict = all(b["median_sup"] > a["median_sup"] for a, b in zip(rows, rows[1:]))
    return BlowupReport(
        rows=tuple(rows),
        verdict=verdict,
        notes=f"sup over [0, {horizon:g}], {n_paths} paths per truncation depth",
    )
