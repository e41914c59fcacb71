"""Hybrid Euler-Maruyama integrator producing cadlag trajectories.

The regime path is sampled first with exact holding times, and every switch
time and every scheduled jump time becomes a step boundary, so no event is
straddled by a step.  Within a step the regime is constant and the update is

    x <- x + a(t, y, x) dt + b(t, y, x) sqrt(dt) Z,   Z standard normal.

For the declarative coefficient families this update is affine in ``x``,
which lets a whole inter-jump segment be evaluated with cumulative
products/sums instead of a Python time loop; a sequential fallback handles
the (vanishingly rare) case of a degenerate cumulative product.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .markov import sample_ctmc, sample_dtmc_step
from .system import SystemSpec

_CASCADE_LIMIT = 1e250


class ConfigInvalid(ValueError):
    """Integrator configuration failed validation."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Step-size policy and explosion threshold.

    ``refine_near_star`` caps the step at half the remaining distance to the
    next jump (down to a floor of ``1e-6 * dt_max``) so the impulses piling
    up before a concentration point are each hit exactly with locally
    refined resolution.  ``overflow_threshold`` marks a path as exploded,
    which stops it cleanly instead of overflowing floats.
    """

    dt_max: float = 1e-3
    refine_near_star: bool = True
    record_stride: int = 10
    overflow_threshold: float = 1e12

    def __post_init__(self):
        if self.dt_max <= 0:
            raise ConfigInvalid("dt_max must be positive")
        if self.overflow_threshold <= 0:
            raise ConfigInvalid("overflow_threshold must be positive")
        if self.record_stride < 1:
            raise ConfigInvalid("record_stride must be >= 1")


@dataclass(frozen=True)
class RngPolicy:
    """Deterministic stream derivation from one master seed.

    Path ``i`` of a plain ensemble draws from three child streams (regime
    chain, marks, Wiener increments) derived from ``(master_seed, i)``;
    auxiliary consumers (nested Monte Carlo, oracles) use longer keys.  The
    derivation is independent of execution order, so any degree of
    parallelism yields identical results.
    """

    master_seed: int = 0

    def path_streams(self, path_index: int) -> "StreamBundle":
        seq = np.random.SeedSequence((self.master_seed, path_index))
        return StreamBundle(*[np.random.default_rng(s) for s in seq.spawn(3)])

    def aux_streams(self, tag: int, *key: int) -> "StreamBundle":
        # auxiliary windows are one-shot; a single shared stream suffices and
        # is much cheaper to derive than three spawned children
        rng = np.random.default_rng(np.random.SeedSequence((self.master_seed, tag, *key)))
        return StreamBundle(rng, rng, rng)

    def aux_generator(self, tag: int, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence((self.master_seed, tag, *key)))

    def derive(self, *key: int) -> "RngPolicy":
        """Deterministically derived sub-policy for an auxiliary ensemble."""
        state = np.random.SeedSequence((self.master_seed, *key)).generate_state(1, np.uint64)
        return RngPolicy(master_seed=int(state[0]))


@dataclass
class StreamBundle:
    chain: np.random.Generator
    mark: np.random.Generator
    wiener: np.random.Generator


@dataclass
class JumpEventRecord:
    k: int
    time: float
    mark: int
    x_before: np.ndarray
    x_after: np.ndarray


@dataclass
class Trajectory:
    """Cadlag sample path: decimated samples plus the full jump event log.

    The sample recorded at a jump time is the post-jump value; the pre-jump
    state lives in ``jump_events``.  ``status`` is ``"completed"`` or
    ``"exploded"`` (with ``explosion_time`` set and samples ending there).
    """

    times: np.ndarray
    states: np.ndarray            # (n_samples, dim)
    regimes: np.ndarray
    events: list
    jump_events: list
    status: str
    explosion_time: float | None
    sup_norm: float

    def state_at_end(self) -> np.ndarray:
        return self.states[-1]


# ---------------------------------------------------------------------------
# step boundary construction
# ---------------------------------------------------------------------------

def _segment_interior(s: float, e: float, dt_max: float, refine: bool) -> list:
    """Interior step boundaries strictly between ``s`` and ``e``."""
    pts = []
    floor = dt_max * 1e-6
    t = s
    while True:
        rem = e - t
        if refine:
            if rem <= 2.0 * floor:
                break
            dt = min(dt_max, max(rem / 2.0, floor))
        else:
            if rem <= dt_max * (1.0 + 1e-9):
                break
            dt = dt_max
        t = t + dt
        if t >= e:
            break
        pts.append(t)
    return pts


def _base_boundaries(realization, t0: float, t1: float, dt_max: float, refine: bool):
    """Shared (path-independent) boundaries: jumps plus macro/refined steps.

    Cached on the realization object keyed by the window parameters (the
    nested probes revisit the same windows millions of times).
    """
    cache = realization.__dict__.setdefault("_boundary_cache", {})
    key = (t0, t1, dt_max, refine)
    hit = cache.get(key)
    if hit is not None:
        return hit
    jumps = realization.jumps_in(t0, t1)
    pts = [t0]
    cur = t0
    for _, tau in jumps:
        pts.extend(_segment_interior(cur, tau, dt_max, refine))
        pts.append(tau)
        cur = tau
    if cur < t1:
        pts.extend(_segment_interior(cur, t1, dt_max, False))
        pts.append(t1)
    base = np.asarray(pts, dtype=float)
    jump_times = np.asarray([tau for _, tau in jumps], dtype=float)
    jump_ks = np.asarray([k for k, _ in jumps], dtype=np.int64)
    if len(cache) < 4096:
        cache[key] = (base, jump_times, jump_ks)
    return base, jump_times, jump_ks


def _coeff_tables(spec: SystemSpec):
    """Per-regime (a_lin, b_lin, a_con, b_con) lookup arrays, cached on the spec."""
    tables = spec.__dict__.get("_coeff_tables")
    if tables is None:
        rng_ids = range(1, spec.n_regimes + 1)
        tables = (
            np.asarray([spec.drift.linear_rate(r) for r in rng_ids]),
            np.asarray([spec.diffusion.linear_rate(r) for r in rng_ids]),
            np.asarray([spec.drift.constant_part(r) for r in rng_ids]),
            np.asarray([spec.diffusion.constant_part(r) for r in rng_ids]),
        )
        object.__setattr__(spec, "_coeff_tables", tables)
    return tables


@dataclass
class WindowResult:
    x_end: np.ndarray
    y_end: int
    h_end: int
    exploded: bool
    explosion_time: float | None
    sup_norm: float
    jump_events: list
    record_values: np.ndarray | None      # (n_record, dim); rows after explosion are NaN
    record_alive: np.ndarray | None       # bool per record time
    path: tuple | None                    # (times, X, regimes, event labels) when collected


def simulate_window(
    spec: SystemSpec,
    cfg: IntegratorConfig,
    t0: float,
    t1: float,
    x: np.ndarray,
    y: int,
    h: int,
    streams: StreamBundle,
    record_times: np.ndarray | None = None,
    collect_path: bool = False,
    force_sequential: bool = False,
) -> WindowResult:
    """Integrate one path over ``(t0, t1]`` from state ``(x, y, h)``.

    ``h`` is the mark after the last jump at or before ``t0``; every
    scheduled jump inside the window steps the mark chain and applies the
    impulse map at the pre-jump state.
    """
    if t1 <= t0:
        raise ConfigInvalid("window must have positive length")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dim = spec.dim
    realization = spec.realization()
    base, jump_times, jump_ks = _base_boundaries(
        realization, float(t0), float(t1), cfg.dt_max, cfg.refine_near_star
    )

    chain = sample_ctmc(spec.xi_chain, y, t1 - t0, streams.chain)
    switch_abs = t0 + chain.switch_times

    if switch_abs.size == 0 and record_times is None:
        bounds = base
    else:
        parts = [base, switch_abs]
        if record_times is not None:
            parts.append(np.asarray(record_times, dtype=float))
        bounds = np.unique(np.concatenate(parts))
    n = bounds.size - 1

    regimes = np.asarray(chain.state_at(bounds[:-1] - t0))

    dt = bounds[1:] - bounds[:-1]
    sq = np.sqrt(dt)
    z = streams.wiener.standard_normal((n, dim))

    tab_a_lin, tab_b_lin, tab_a_con, tab_b_con = _coeff_tables(spec)
    a_lin = tab_a_lin[regimes - 1]
    b_lin = tab_b_lin[regimes - 1]

    m_fac = 1.0 + (a_lin * dt)[:, None] + (b_lin * sq)[:, None] * z
    has_add = spec.drift.kind == "constant" or spec.diffusion.kind == "constant"
    if has_add:
        u_add = (tab_a_con[regimes - 1] * dt)[:, None] + (tab_b_con[regimes - 1] * sq)[:, None] * z
    else:
        u_add = None

    P = S = None
    use_seq = force_sequential
    if not use_seq:
        P = np.empty((n + 1, dim))
        P[0] = 1.0
        np.cumprod(m_fac, axis=0, out=P[1:])
        absP = np.abs(P)
        if absP.min() < 1.0 / _CASCADE_LIMIT or absP.max() > _CASCADE_LIMIT:
            use_seq = True
        elif has_add:
            S = np.empty((n + 1, dim))
            S[0] = 0.0
            np.cumsum(u_add / P[1:], axis=0, out=S[1:])

    jump_idx = np.searchsorted(bounds, jump_times)
    X = np.empty((n + 1, dim))

    # walk the segments applying impulses, explosion checks and the mark chain
    seg_edges = [0] + [int(j) for j in jump_idx] + [n]
    thr = cfg.overflow_threshold
    events: list = []
    exploded = False
    t_explode = None
    stop_idx = n
    sup = 0.0
    x_cur = x.copy()
    h_cur = h
    for s in range(len(seg_edges) - 1):
        lo, hi = seg_edges[s], seg_edges[s + 1]
        if use_seq:
            X[lo] = x_cur
            if u_add is None:
                for j in range(lo, hi):
                    X[j + 1] = m_fac[j] * X[j]
            else:
                for j in range(lo, hi):
                    X[j + 1] = m_fac[j] * X[j] + u_add[j]
        else:
            seg = (P[lo : hi + 1] / P[lo]) * x_cur
            if S is not None:
                seg += P[lo : hi + 1] * (S[lo : hi + 1] - S[lo])
            seg[0] = x_cur
            X[lo : hi + 1] = seg
        block = X[lo : hi + 1]
        norms = np.abs(block[:, 0]) if dim == 1 else np.linalg.norm(block, axis=1)
        over = norms > thr
        if over.any():
            j = int(np.argmax(over))
            sup = max(sup, float(norms[: j + 1].max()))
            exploded = True
            stop_idx = lo + j
            t_explode = float(bounds[stop_idx])
            x_cur = block[j].copy()
            break
        sup = max(sup, float(norms.max()))
        x_pre = block[-1].copy()
        if s < len(jump_idx):
            k = int(jump_ks[s])
            y_pre = int(regimes[hi - 1])
            h_cur = sample_dtmc_step(spec.eta_chain, h_cur, k, streams.mark)
            g = spec.jump.evaluate(k, y_pre, h_cur, x_pre)
            x_after = x_pre + g
            events.append(JumpEventRecord(k=k, time=float(bounds[hi]), mark=h_cur,
                                          x_before=x_pre, x_after=x_after.copy()))
            X[hi] = x_after
            nrm = abs(float(x_after[0])) if dim == 1 else float(np.linalg.norm(x_after))
            sup = max(sup, nrm)
            x_cur = x_after
            if nrm > thr:
                exploded = True
                stop_idx = hi
                t_explode = float(bounds[hi])
                break
        else:
            x_cur = x_pre

    end_t = bounds[stop_idx] if exploded else t1
    y_end = int(chain.state_at(end_t - t0))

    rec_values = rec_alive = None
    if record_times is not None:
        rec = np.asarray(record_times, dtype=float)
        ridx = np.searchsorted(bounds, rec)
        # an exploded path contributes no statistics at or past its stop
        limit = stop_idx - 1 if exploded else stop_idx
        rec_alive = ridx <= limit
        rec_values = np.full((rec.size, dim), np.nan)
        rec_values[rec_alive] = X[ridx[rec_alive]]

    path = None
    if collect_path:
        extra = () if record_times is None else np.searchsorted(bounds, np.asarray(record_times, dtype=float))
        path = _collect_path(bounds, X, regimes, jump_idx, jump_ks, switch_abs,
                             stop_idx, cfg.record_stride, extra)

    return WindowResult(
        x_end=x_cur,
        y_end=y_end,
        h_end=h_cur,
        exploded=exploded,
        explosion_time=t_explode,
        sup_norm=sup,
        jump_events=events,
        record_values=rec_values,
        record_alive=rec_alive,
        path=path,
    )


def _collect_path(bounds, X, regimes, jump_idx, jump_ks, switch_abs, stop_idx, stride, extra=()):
    n = bounds.size - 1
    keep = set(range(0, stop_idx + 1, stride))
    keep.add(stop_idx)
    keep.update(int(i) for i in extra if i <= stop_idx)
    labels = {}
    for ji, k in zip(jump_idx, jump_ks):
        ji = int(ji)
        if ji <= stop_idx:
            keep.add(ji)
            labels[ji] = f"jump:{int(k)}"
    for si in np.searchsorted(bounds, switch_abs):
        si = int(si)
        if si <= stop_idx:
            keep.add(si)
            labels.setdefault(si, "switch")
    order = sorted(keep)
    times = bounds[order]
    states = X[order]
    # regime at a boundary is the regime of the step starting there (cadlag)
    regs = np.asarray([int(regimes[min(i, n - 1)]) for i in order])
    events = [labels.get(i, "") for i in order]
    return times, states, regs, events


# ---------------------------------------------------------------------------
# public path / ensemble API
# ---------------------------------------------------------------------------

def simulate_path(
    spec: SystemSpec,
    cfg: IntegratorConfig,
    horizon: float,
    path_index: int,
    policy: RngPolicy,
    record_times: np.ndarray | None = None,
) -> Trajectory:
    """Simulate one cadlag trajectory on ``[0, horizon]``.

    ``(policy.master_seed, path_index)`` fully determines the result.
    """
    if horizon <= 0:
        raise ConfigInvalid("horizon must be positive")
    streams = policy.path_streams(path_index)
    res = simulate_window(
        spec, cfg, 0.0, horizon, spec.x0, spec.y0, spec.h0, streams,
        record_times=record_times, collect_path=True,
    )
    times, states, regimes, events = res.path
    return Trajectory(
        times=times,
        states=states,
        regimes=regimes,
        events=events,
        jump_events=res.jump_events,
        status="exploded" if res.exploded else "completed",
        explosion_time=res.explosion_time,
        sup_norm=res.sup_norm,
    )


@dataclass
class EnsembleSummary:
    """Per-time-grid statistics over an ensemble of paths.

    ``mean_sq`` is the mean squared norm over paths still alive at each grid
    time (exploded paths leave the average and are counted in
    ``explosion_fraction``); ``sup_norms`` holds each path's running sup of
    the norm up to its stopping time.
    """

    times: np.ndarray
    mean_sq: np.ndarray
    stderr: np.ndarray
    median_sq: np.ndarray
    explosion_fraction: np.ndarray
    sup_norms: np.ndarray
    n_paths: int
    n_exploded: int

    @property
    def sup_median(self) -> float:
        return float(np.median(self.sup_norms))

    @property
    def sup_max(self) -> float:
        return float(self.sup_norms.max())


def simulate_ensemble(
    spec: SystemSpec,
    cfg: IntegratorConfig,
    horizon: float,
    n_paths: int,
    policy: RngPolicy,
    record_times: np.ndarray | None = None,
    threads: int = 1,
) -> EnsembleSummary:
    """Simulate ``n_paths`` independent paths and aggregate statistics.

    Results are identical for any ``threads`` value: each path derives its
    own streams from its index and partial results merge in index order.
    """
    if n_paths < 1:
        raise ConfigInvalid("n_paths must be >= 1")
    if record_times is None:
        record_times = np.linspace(0.0, horizon, 201)
    rec = np.asarray(record_times, dtype=float)

    blocks = [(lo, min(lo + 256, n_paths)) for lo in range(0, n_paths, 256)]

    def run_block(block):
        lo, hi = block
        sups = np.empty(hi - lo)
        exploded = 0
        block_sq = np.full((hi - lo, rec.size), np.nan)
        for i in range(lo, hi):
            streams = policy.path_streams(i)
            res = simulate_window(spec, cfg, 0.0, horizon, spec.x0, spec.y0, spec.h0,
                                  streams, record_times=rec)
            sqv = np.einsum("ij,ij->i", res.record_values, res.record_values)
            block_sq[i - lo, res.record_alive] = sqv[res.record_alive]
            sups[i - lo] = res.sup_norm
            exploded += res.exploded
        return block_sq, sups, exploded

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_block, blocks))
    else:
        results = [run_block(b) for b in blocks]

    per_path_sq = np.empty((n_paths, rec.size))
    sups_all = np.empty(n_paths)
    n_exploded = 0
    for (lo, hi), (block_sq, sups, exploded) in zip(blocks, results):
        per_path_sq[lo:hi] = block_sq
        sups_all[lo:hi] = sups
        n_exploded += int(exploded)

    alive = ~np.isnan(per_path_sq)
    counts = alive.sum(axis=0)
    safe = np.maximum(counts, 1)
    mean_sq = np.nansum(per_path_sq, axis=0) / safe
    dev = per_path_sq - mean_sq
    var = np.nansum(np.where(alive, dev * dev, 0.0), axis=0) / np.maximum(counts - 1, 1)
    stderr = np.sqrt(var / safe)
    median_sq = np.full(rec.size, np.nan)
    nonempty = counts > 0
    if nonempty.any():
        median_sq[nonempty] = np.nanmedian(per_path_sq[:, nonempty], axis=0)
    mean_sq = np.where(counts == 0, np.nan, mean_sq)
    stderr = np.where(counts == 0, np.nan, stderr)
    explosion_fraction = 1.0 - counts / n_paths

    return EnsembleSummary(
        times=rec,
        mean_sq=mean_sq,
        stderr=stderr,
        median_sq=median_sq,
        explosion_fraction=explosion_fraction,
        sup_norms=sups_all,
        n_paths=n_paths,
        n_exploded=n_exploded,
    )


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Write ``t,x_1..x_m,regime,event`` rows."""
    dim = traj.states.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{d + 1}" for d in range(dim)] + ["regime", "event"])
        for i in range(traj.times.size):
            row = [repr(float(traj.times[i]))]
            row += [repr(float(v)) for v in traj.states[i]]
            row += [int(traj.regimes[i]), traj.events[i]]
            w.writerow(row)


def ensemble_to_csv(summary: EnsembleSummary, path) -> None:
    """Write ``t,mean_sq_norm,stderr,explosion_fraction`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean_sq_norm", "stderr", "explosion_fraction"])
        for i in range(summary.times.size):
            w.writerow([
                repr(float(summary.times[i])),
                repr(float(summary.mean_sq[i])),
                repr(float(summary.stderr[i])),
                repr(float(summary.explosion_fraction[i])),
            ])
