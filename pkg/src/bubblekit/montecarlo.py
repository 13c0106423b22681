"""Path simulation, drawdown extraction, and mass-loss estimators.

Randomness contract: path i consumes uniforms from its own counter-based
stream, Philox keyed by (master_seed, i) — the splitting rule is simply
"stream id = path index".  Batches are therefore bitwise reproducible
given (model, x0, n, N, master_seed), and the first paths of a batch do
not change when more paths are appended.  Lanes the model reports as
absorbed stop consuming randomness, so a path's consumption pattern
depends only on its own history.

Estimators return :class:`DrawdownEstimate` records carrying the point
estimate, its standard error, and censoring counts.  The horizon-ladder
variants exhibit the trend that distinguishes mass loss from mass
conservation as the cap grows: E[S at the first drop, capped at n] is
approximated from below because capped (censored) paths contribute their
terminal value, which still carries the mass that eventually escapes.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PathStreams", "PathBatch", "DrawdownRecord", "DrawdownEstimate",
    "simulate", "drawdowns", "estimate_mass_loss", "mass_loss_ladder",
    "estimate_monotone_run", "horizon_ladder",
]


class PathStreams:
    """Per-path uniform streams with chunked buffering.

    ``take(lanes)`` hands one uniform to each requested lane (lane ids
    must be unique within a call) and advances those lanes' cursors.
    Buffering is an internal detail: the uniforms seen by a lane are
    exactly the sequential output of Generator(Philox(key=[master_seed,
    lane])), independent of chunk size and of which other lanes run.
    """

    def __init__(self, master_seed, n_paths, chunk=64):
        self.master_seed = int(master_seed)
        self.n_paths = int(n_paths)
        self.chunk = int(chunk)
        self._gens = [
            np.random.Generator(np.random.Philox(key=[self.master_seed, i]))
            for i in range(self.n_paths)
        ]
        self._buf = np.empty((self.n_paths, self.chunk))
        self._cur = np.full(self.n_paths, self.chunk, dtype=np.int64)

    def take(self, lanes):
        lanes = np.asarray(lanes, dtype=np.int64)
        cur = self._cur[lanes]
        dry = lanes[cur >= self.chunk]
        if dry.size:
            for i in dry:
                self._buf[i] = self._gens[i].random(self.chunk)
            self._cur[dry] = 0
            cur = self._cur[lanes]
        vals = self._buf[lanes, cur]
        self._cur[lanes] = cur + 1
        return vals


@dataclass
class PathBatch:
    """Simulated trajectories: row i is path i, column j is step j."""

    paths: np.ndarray
    x0: float
    master_seed: int
    model_ref: str

    @property
    def n_paths(self):
        return self.paths.shape[0]

    @property
    def horizon(self):
        return self.paths.shape[1] - 1


def simulate(model, x0, n, N, master_seed):
    """Simulate N trajectories of n one-step transitions from x0.

    ``model`` implements ``step_values(step_index, x, streams, lanes)``
    (Markov kernels ignore the step index; independent-factor models
    ignore the state except multiplicatively) and may expose
    ``absorbed_mask(x)`` so stuck lanes are short-circuited exactly.
    """
    if x0 <= 0:
        raise ValueError("x0 must be positive")
    n = int(n)
    N = int(N)
    if n < 1 or N < 1:
        raise ValueError("need n >= 1 steps and N >= 1 paths")
    chunk = int(np.clip(n + 2, 32, 192))
    streams = PathStreams(master_seed, N, chunk=chunk)
    paths = np.empty((N, n + 1))
    paths[:, 0] = x0
    x = np.full(N, float(x0))
    lanes_all = np.arange(N, dtype=np.int64)
    absorbed_fn = getattr(model, "absorbed_mask", None)
    for j in range(1, n + 1):
        idx = lanes_all
        if absorbed_fn is not None:
            mask = absorbed_fn(x)
            if mask is not None:
                idx = lanes_all[~mask]
        if idx.size:
            x = x.copy()
            x[idx] = model.step_values(j, x[idx], streams, idx)
        paths[:, j] = x
    return PathBatch(paths=paths, x0=float(x0), master_seed=int(master_seed),
                     model_ref=getattr(model, "kind", type(model).__name__))


@dataclass
class DrawdownRecord:
    """Drawdown indices and monotone-run bookkeeping per path.

    ``times[i, k-1]`` is the step index of the k-th strict drop of path
    i, or -1 when fewer than k drops occur within the horizon (explicit
    censoring).  ``run_break[i]`` is the first drop strictly after step
    ``run_start`` (-1 if none), and ``threshold_ok[i]`` records whether
    the path cleared the threshold at ``run_start`` — together they give
    the monotone-run indicator at any horizon via :meth:`run_flags`.
    """

    times: np.ndarray
    run_start: int = 0
    run_break: np.ndarray | None = None
    threshold: float | None = None
    threshold_ok: np.ndarray | None = None
    k_max: int = field(init=False)

    def __post_init__(self):
        self.k_max = self.times.shape[1]

    def censored(self, k=1):
        return self.times[:, k - 1] < 0

    def run_flags(self, horizon):
        """Indicator of ``S_{run_start} <= ... <= S_horizon`` (and
        ``S_{run_start} >= threshold`` when one was configured)."""
        if self.run_break is None:
            raise ValueError("record was built without run tracking")
        flags = (self.run_break < 0) | (self.run_break > horizon)
        if self.threshold_ok is not None:
            flags = flags & self.threshold_ok
        return flags


def _first_drops(paths, start, k_max):
    """Indices of the first k_max strict drops after column ``start``."""
    n_paths = paths.shape[0]
    down = paths[:, start + 1:] < paths[:, start:-1]
    width = down.shape[1]
    cdtype = np.uint16 if width < 65000 else np.int64
    cnt = np.cumsum(down, axis=1, dtype=cdtype)
    times = np.full((n_paths, k_max), -1, dtype=np.int64)
    if width == 0:
        return times
    total = cnt[:, -1]
    for k in range(1, k_max + 1):
        seen = total >= k
        first = np.argmax(cnt >= k, axis=1)
        times[seen, k - 1] = first[seen] + start + 1
    return times


def drawdowns(batch, k_max=1, run_start=0, threshold=None):
    """Locate strict drops and the monotone-run data of every path.

    A drop at step j means ``paths[:, j] < paths[:, j-1]`` strictly; flat
    moves do not count.  ``times`` collects the first ``k_max`` drops
    (counted from step 1).  The run tracking starts at ``run_start``:
    ``run_break`` holds the first drop strictly after it, and
    ``threshold`` (optional) additionally requires the path to sit at or
    above that level when the run starts.
    """
    n = batch.horizon
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if not (0 <= run_start <= n):
        raise ValueError("run_start outside the horizon")
    times = _first_drops(batch.paths, 0, k_max)
    if run_start == 0:
        run_break = times[:, 0].copy()
    else:
        run_break = _first_drops(batch.paths, run_start, 1)[:, 0]
    threshold_ok = None
    if threshold is not None:
        threshold_ok = batch.paths[:, run_start] >= threshold
    return DrawdownRecord(times=times, run_start=run_start,
                          run_break=run_break, threshold=threshold,
                          threshold_ok=threshold_ok)


@dataclass(frozen=True)
class DrawdownEstimate:
    """Point estimate with sampling error and censoring bookkeeping."""

    estimand: str
    estimate: float
    std_error: float
    n_paths: int
    horizon: int
    seed: int
    n_censored: int = 0
    n_event: int = -1

    def to_json_dict(self):
        out = {
            "estimand": self.estimand,
            "value": self.estimate,
            "std_error": self.std_error,
            "n": self.horizon,
            "N": self.n_paths,
            "seed": self.seed,
            "n_censored": self.n_censored,
        }
        if self.n_event >= 0:
            out["n_event"] = self.n_event
        return out


def stopped_values(batch, record, k=1, horizon=None):
    """Per-path values S_{tau_k ^ horizon}; censored paths give S_horizon."""
    if record.k_max < k:
        raise ValueError(f"record only holds {record.k_max} drawdown times")
    horizon = batch.horizon if horizon is None else int(horizon)
    if not (0 <= horizon <= batch.horizon):
        raise ValueError("horizon outside the batch")
    t = record.times[:, k - 1]
    capped = (t < 0) | (t > horizon)
    eff = np.where(capped, horizon, t)
    vals = batch.paths[np.arange(batch.n_paths), eff]
    return vals, int(np.count_nonzero(capped))


def estimate_mass_loss(batch, record=None, k=1, horizon=None):
    """Estimate x0 - E[S at the k-th drawdown, capped at the horizon].

    Positive estimates beyond noise are the Monte-Carlo signature of a
    bubble; a process that keeps its mass at the drawdown estimates 0.
    The standard error is that of the sample mean of the stopped values.
    """
    if record is None:
        record = drawdowns(batch, k_max=k)
    horizon = batch.horizon if horizon is None else int(horizon)
    vals, censored = stopped_values(batch, record, k=k, horizon=horizon)
    n = batch.n_paths
    se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return DrawdownEstimate(
        estimand=f"mass_loss_at_drawdown_{k}",
        estimate=float(batch.x0 - vals.mean()), std_error=se,
        n_paths=n, horizon=horizon, seed=batch.master_seed,
        n_censored=censored)


def horizon_ladder(n, rungs=12):
    """Geometric ladder of horizons 1 <= n' <= n for trend diagnostics."""
    if n < 1:
        raise ValueError("need a positive horizon")
    raw = np.unique(np.round(np.geomspace(1, n, rungs)).astype(int))
    return [int(v) for v in raw]


def mass_loss_ladder(batch, record=None, k=1, horizons=None):
    """Mass-loss estimates along a horizon ladder.

    The stopped value of a path stabilizes once its k-th drop is inside
    the cap, so the ladder converges to the drawdown mass loss; along the
    way it shows how much mass still rides the censored paths.
    """
    if record is None:
        record = drawdowns(batch, k_max=k)
    if horizons is None:
        horizons = horizon_ladder(batch.horizon)
    return [estimate_mass_loss(batch, record, k=k, horizon=h)
            for h in horizons]


def estimate_monotone_run(batch, record=None, run_start=0, threshold=None,
                          horizons=None):
    """Mean of S_{n'} restricted to paths still on a monotone run.

    Estimates E[S_{n'} 1{S_k <= ... <= S_{n'}}] (k = run_start; the run
    also requires S_k >= threshold when one is set) for each ladder
    horizon n' <= n.  When the model keeps no mass at infinity on run
    paths, the values converge to the mass retained on never-falling
    paths — strictly positive exactly in the bubble regime.
    """
    if record is None or record.run_break is None or (
            record.run_start != run_start or record.threshold != threshold):
        record = drawdowns(batch, k_max=1, run_start=run_start,
                           threshold=threshold)
    n = batch.horizon
    if horizons is None:
        horizons = [h for h in horizon_ladder(n) if h > record.run_start]
    horizons = sorted(set(int(h) for h in horizons))
    if not horizons or horizons[0] <= record.run_start or horizons[-1] > n:
        raise ValueError("ladder horizons must lie in (run_start, n]")
    out = []
    root_n = np.sqrt(batch.n_paths)
    for h in horizons:
        flags = record.run_flags(h)
        vals = batch.paths[:, h] * flags
        out.append(DrawdownEstimate(
            estimand=f"monotone_run_mass_from_{record.run_start}",
            estimate=float(vals.mean()),
            std_error=float(vals.std(ddof=1) / root_n),
            n_paths=batch.n_paths, horizon=h, seed=batch.master_seed,
            n_event=int(np.count_nonzero(flags))))
    return out
