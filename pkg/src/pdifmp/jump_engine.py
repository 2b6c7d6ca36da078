"""Thinning-based jump simulation on a jump-adapted grid.

Jump times are generated by acceptance-rejection against a dominating
homogeneous Poisson process with rate ``rate_bound``: proposal ``k`` at
time ``T*_k`` is accepted when ``U_k * rate_bound <= rate(state)``.  Every
proposal time becomes a permanent grid point whether accepted or not; the
flow advanced to test acceptance is kept.  Between consecutive events
(start, proposals, horizon) the segment of length ``L`` is subdivided into
``max(1, floor(L / h))`` equal cells, so cells never exceed ``2 h``, the
segment's right endpoint is hit exactly, and two consumers sharing one
driver stream walk identical grids.

Randomness consumption per path (see drivers): proposal waiting times in
order; the acceptance uniform for proposal ``k`` at index ``k``; kernel
uniforms in per-proposal pairs (mode, magnitude); one Wiener increment per
grid cell in time order.  A path rerun with the same (seed, path_id) is
bitwise identical on any thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import HybridState, PathStats, PDifMPModel, Trajectory, _sample_mode_raw, sample_mode
from .drivers import DriverStream, fork_for_path
from .errors import RateBoundError, RunawayRateError, SimulationDivergedError

DEFAULT_PROPOSAL_CAP = 10_000_000


def _count_excursions(values: np.ndarray, hint: tuple) -> list[int]:
    # values[0] is the initial state, not a step output
    return [
        int(np.count_nonzero((values[1:, j] < lo) | (values[1:, j] > hi)))
        for j, (lo, hi) in enumerate(hint)
    ]


# Recorded points are staged in plain lists and flushed to numpy chunks once
# they grow past this; keeping millions of long-lived tuples alive makes the
# cyclic collector rescan them and dominates long-horizon runs.
_FLUSH_THRESHOLD = 4096


class _GridRecorder:
    """Staged grid recording for one or more state columns sharing times.

    Segment lists are swapped out on flush, so per-segment loops must
    rebind their append methods after every ``maybe_flush``.
    """

    __slots__ = ("t_chunks", "v_chunks", "seg_t", "seg_v")

    def __init__(self, t0: float, y0s: tuple) -> None:
        self.t_chunks: list[np.ndarray] = []
        self.v_chunks: list[list[np.ndarray]] = [[] for _ in y0s]
        self.seg_t: list[float] = [t0]
        self.seg_v: list[list[tuple]] = [[y0] for y0 in y0s]

    def maybe_flush(self) -> None:
        if len(self.seg_t) >= _FLUSH_THRESHOLD:
            self.t_chunks.append(np.asarray(self.seg_t))
            self.seg_t = []
            for chunks, seg in zip(self.v_chunks, self.seg_v):
                chunks.append(np.asarray(seg))
            self.seg_v = [[] for _ in self.seg_v]

    def finish(self, dim: int) -> tuple[np.ndarray, list[np.ndarray]]:
        if self.seg_t:
            self.t_chunks.append(np.asarray(self.seg_t))
            for chunks, seg in zip(self.v_chunks, self.seg_v):
                chunks.append(np.asarray(seg).reshape(len(seg), dim))
        times = np.concatenate(self.t_chunks) if len(self.t_chunks) > 1 else self.t_chunks[0]
        columns = []
        for chunks in self.v_chunks:
            if len(chunks) > 1:
                columns.append(np.concatenate([c.reshape(len(c), dim) for c in chunks]))
            else:
                columns.append(chunks[0].reshape(len(chunks[0]), dim))
        return times, columns


@dataclass(frozen=True)
class JumpAdaptedGrid:
    """Equal-cell subdivision of one inter-event interval.

    ``n_cells = max(1, floor((right - left) / nominal_h))`` and the local
    step is ``(right - left) / n_cells``; the last point equals ``right``
    exactly.
    """

    left: float
    right: float
    nominal_h: float
    n_cells: int = field(init=False)
    h_local: float = field(init=False)

    def __post_init__(self) -> None:
        if not self.nominal_h > 0.0:
            raise ValueError(f"nominal step must be positive, got {self.nominal_h!r}")
        if not self.right > self.left:
            raise ValueError(f"empty interval [{self.left!r}, {self.right!r}]")
        length = self.right - self.left
        n = int(length / self.nominal_h)
        if n < 1:
            n = 1
        object.__setattr__(self, "n_cells", n)
        object.__setattr__(self, "h_local", length / n)

    def points(self) -> np.ndarray:
        pts = self.left + self.h_local * np.arange(self.n_cells + 1)
        pts[-1] = self.right
        return pts


def _apply_jump_transform(jump_update, y: tuple, v_new: int, u_mag: float, t: float) -> tuple:
    try:
        out = jump_update(y, v_new, u_mag)
    except OverflowError:
        raise SimulationDivergedError(t, y, "overflow in the continuous-state jump transform") from None
    for c in out:
        if not math.isfinite(c):
            raise SimulationDivergedError(t, out, "jump transform left the finite range")
    return out


def accept_candidate(model: PDifMPModel, y_at_candidate: tuple, v: int, u: float) -> bool:
    """Thinning test: accept iff ``u * rate_bound <= rate(y, v)``."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"thinning uniform must lie in [0, 1], got {u!r}")
    lam = model.rate(y_at_candidate, v)
    if lam > model.rate_bound and model.bound_policy == "error":
        raise RateBoundError(lam, model.rate_bound, y_at_candidate, v)
    return u * model.rate_bound <= lam


def apply_jump(
    model: PDifMPModel,
    x_pre: HybridState,
    mode_uniform: float,
    magnitude_uniform: float | None = None,
) -> HybridState:
    """Resample the mode at an accepted jump; y and t are preserved unless
    the model installs a continuous-state jump transform."""
    v_new = sample_mode(model.kernel, x_pre, mode_uniform)
    y_new = x_pre.y
    if model.jump_update is not None:
        if magnitude_uniform is None:
            raise ValueError("model rescales y at jumps; magnitude_uniform is required")
        y_new = _apply_jump_transform(model.jump_update, x_pre.y, v_new, magnitude_uniform, x_pre.t)
    return HybridState(y_new, v_new, x_pre.t)


@dataclass
class NextJumpResult:
    time: float
    y: tuple
    accepted: bool
    grid_times: list[float]
    grid_values: list[tuple]
    n_proposals: int


def next_jump(
    model: PDifMPModel,
    integrator,
    stream: DriverStream,
    state: HybridState,
    h: float | None = None,
    T: float | None = None,
    proposal_cap: int = DEFAULT_PROPOSAL_CAP,
) -> NextJumpResult:
    """Advance the flow to the first accepted proposal, or to the horizon.

    Proposal waiting times continue the stream's exponential clock relative
    to ``state.t``.  Rejected proposals still advance the flow and appear in
    the returned grid samples.  The jump itself is not applied; pair with
    ``apply_jump``.
    """
    h = h if h is not None else integrator.step_hint
    if h is None or not h > 0.0:
        raise ValueError(f"positive step size required, got {h!r}")
    T = T if T is not None else model.horizon
    if not state.t < T:
        raise ValueError(f"state time {state.t!r} must precede the horizon {T!r}")
    bound = model.rate_bound
    strict = model.bound_policy == "error"
    t_cur = state.t
    y = state.y
    v = state.v
    times: list[float] = []
    values: list[tuple] = []
    n_prop = 0
    while True:
        if n_prop >= proposal_cap:
            raise RunawayRateError(
                f"no accepted jump after {proposal_cap} proposals; rate_bound is likely far above the rate"
            )
        t_star = t_cur + stream.next_proposal(bound)
        target = t_star if t_star < T else T
        y = _advance_segment(model, integrator, y, v, t_cur, target, h, stream, times, values)
        t_cur = target
        if t_star > T:
            return NextJumpResult(T, y, False, times, values, n_prop)
        n_prop += 1
        lam = model.rate(y, v)
        if lam > bound and strict:
            raise RateBoundError(lam, bound, y, v)
        if stream.next_uniform("thinning") * bound <= lam:
            return NextJumpResult(t_cur, y, True, times, values, n_prop)


def _advance_segment(model, integrator, y, v, t0, t1, nominal_h, stream, times, values) -> tuple:
    if not t1 > t0:
        return y
    grid = JumpAdaptedGrid(t0, t1, nominal_h)
    n, h_loc = grid.n_cells, grid.h_local
    step = integrator.step
    constrain = model.constrain
    dws = stream.wiener_block(n, h_loc)
    try:
        for i in range(n):
            y = step(model, y, v, h_loc, dws[i])
            if constrain is not None:
                y = constrain(y)
            times.append(t1 if i == n - 1 else t0 + (i + 1) * h_loc)
            values.append(y)
    except SimulationDivergedError as err:
        raise SimulationDivergedError(t0, err.y, str(err)) from None
    return y


def simulate_path(
    model: PDifMPModel,
    integrator,
    stream: DriverStream,
    h: float | None = None,
    T: float | None = None,
    stride: int | None = 1,
    proposal_cap: int = DEFAULT_PROPOSAL_CAP,
) -> Trajectory:
    """Simulate one full path on the jump-adapted grid.

    ``stride`` controls interior grid recording: 1 keeps every cell, k
    keeps every k-th cell, None keeps only segment endpoints (proposal and
    jump times, and the horizon); endpoints are always recorded so every
    jump time is a grid time.
    """
    h = h if h is not None else integrator.step_hint
    if h is None or not h > 0.0:
        raise ValueError(f"positive step size required, got {h!r}")
    T = T if T is not None else model.horizon
    if not T > 0.0:
        raise ValueError(f"positive horizon required, got {T!r}")
    if stride is not None and stride < 1:
        raise ValueError(f"stride must be a positive integer or None, got {stride!r}")

    y = model.initial_state.y
    v = model.initial_state.v
    bound = model.rate_bound
    strict = model.bound_policy == "error"
    kernel = model.kernel
    jump_update = model.jump_update
    constrain = model.constrain
    hint = model.state_space_hint
    # at stride 1 every post-step state is recorded, so excursions are
    # counted vectorised afterwards instead of per cell
    exc = [0] * len(hint) if hint is not None and stride != 1 else None
    step = integrator.step
    # Segments whose interior is neither recorded nor inspected can run in
    # one call; run_cells implementations perform cell-identical arithmetic.
    fast_cells = (
        stride is None and constrain is None and hint is None and hasattr(integrator, "run_cells")
    )
    run_cells = integrator.run_cells if fast_cells else None

    rec = _GridRecorder(0.0, (y,))
    jump_times: list[float] = [0.0]
    modes: list[int] = [v]
    post_jumps: list[tuple] = []

    n_prop = 0
    n_acc = 0
    n_cells = 0
    violations = 0
    rmin = math.inf
    rmax = -math.inf

    t_cur = 0.0
    k = 0
    while True:
        k += 1
        if k > proposal_cap:
            raise RunawayRateError(
                f"proposal cap {proposal_cap} exceeded; rate_bound is likely far above the rate"
            )
        t_star = stream.proposal_time(k, bound)
        target = t_star if t_star < T else T
        if target > t_cur:
            length = target - t_cur
            n = int(length / h)
            if n < 1:
                n = 1
            h_loc = length / n
            dws = stream.wiener_block(n, h_loc)
            t_ap = rec.seg_t.append
            v_ap = rec.seg_v[0].append
            try:
                if run_cells is not None:
                    y = run_cells(model, y, v, h_loc, dws)
                    t_ap(target)
                    v_ap(y)
                elif stride == 1:
                    for i in range(n):
                        y = step(model, y, v, h_loc, dws[i])
                        if constrain is not None:
                            y = constrain(y)
                        if exc is not None:
                            for j, (lo, hi) in enumerate(hint):
                                c = y[j]
                                if c < lo or c > hi:
                                    exc[j] += 1
                        t_ap(target if i == n - 1 else t_cur + (i + 1) * h_loc)
                        v_ap(y)
                else:
                    for i in range(n):
                        y = step(model, y, v, h_loc, dws[i])
                        if constrain is not None:
                            y = constrain(y)
                        if exc is not None:
                            for j, (lo, hi) in enumerate(hint):
                                c = y[j]
                                if c < lo or c > hi:
                                    exc[j] += 1
                        if i == n - 1:
                            t_ap(target)
                            v_ap(y)
                        elif stride is not None and (n_cells + i + 1) % stride == 0:
                            t_ap(t_cur + (i + 1) * h_loc)
                            v_ap(y)
            except SimulationDivergedError as err:
                raise SimulationDivergedError(t_cur, err.y, str(err)) from None
            n_cells += n
            t_cur = target
            rec.maybe_flush()
        if t_star > T:
            break
        n_prop += 1
        lam = model.rate(y, v)
        if lam < rmin:
            rmin = lam
        if lam > rmax:
            rmax = lam
        if lam > bound:
            if strict:
                raise RateBoundError(lam, bound, y, v)
            violations += 1
        if stream.thinning_uniform(k) * bound <= lam:
            n_acc += 1
            u_mode, u_mag = stream.kernel_slots(k)
            v = _sample_mode_raw(kernel, y, v, u_mode)
            if jump_update is not None:
                y = _apply_jump_transform(jump_update, y, v, u_mag, t_cur)
            jump_times.append(t_cur)
            modes.append(v)
            post_jumps.append(y)
        if t_cur >= T:
            break

    dim = len(y)
    times_arr, (values_arr,) = rec.finish(dim)
    if hint is not None and stride == 1:
        exc = _count_excursions(values_arr, hint)
    stats = PathStats(
        n_proposals=n_prop,
        n_accepted=n_acc,
        n_cells=n_cells,
        bound_violations=violations,
        rate_min=rmin if n_prop else math.nan,
        rate_max=rmax if n_prop else math.nan,
        hint_excursions=tuple(exc) if exc is not None else (),
    )
    return Trajectory(
        times=times_arr,
        values=values_arr,
        jump_times=np.asarray(jump_times),
        interval_modes=np.asarray(modes, dtype=np.int64),
        post_jump_values=np.asarray(post_jumps).reshape(len(post_jumps), dim),
        stats=stats,
    )


def simulate_coupled_pair(
    model: PDifMPModel,
    integrator_a,
    integrator_b,
    stream: DriverStream,
    h: float | None = None,
    T: float | None = None,
    stride: int | None = 1,
    proposal_cap: int = DEFAULT_PROPOSAL_CAP,
) -> tuple[Trajectory, Trajectory]:
    """Two discretisations of one model on identical stochastic drivers.

    Both sides see the same proposal times, acceptance uniforms, kernel
    uniforms and Wiener increments, and walk the same grid; each side tests
    acceptance against its own state, so when the rate and kernel depend
    only on the mode the jump times and mode sequences coincide exactly.
    Each returned trajectory is bitwise identical to a single simulation of
    its integrator with the same stream.
    """
    h = h if h is not None else (integrator_a.step_hint or integrator_b.step_hint)
    if h is None or not h > 0.0:
        raise ValueError(f"positive step size required, got {h!r}")
    T = T if T is not None else model.horizon
    if not T > 0.0:
        raise ValueError(f"positive horizon required, got {T!r}")
    if stride is not None and stride < 1:
        raise ValueError(f"stride must be a positive integer or None, got {stride!r}")

    ya = yb = model.initial_state.y
    va = vb = model.initial_state.v
    bound = model.rate_bound
    strict = model.bound_policy == "error"
    kernel = model.kernel
    jump_update = model.jump_update
    constrain = model.constrain
    hint = model.state_space_hint
    count_inline = hint is not None and stride != 1
    exc_a = [0] * len(hint) if count_inline else None
    exc_b = [0] * len(hint) if count_inline else None
    step_a = integrator_a.step
    step_b = integrator_b.step
    fast_cells = (
        stride is None
        and constrain is None
        and hint is None
        and hasattr(integrator_a, "run_cells")
        and hasattr(integrator_b, "run_cells")
    )
    run_a = integrator_a.run_cells if fast_cells else None
    run_b = integrator_b.run_cells if fast_cells else None

    rec = _GridRecorder(0.0, (ya, yb))
    jumps_a: list[float] = [0.0]
    jumps_b: list[float] = [0.0]
    modes_a: list[int] = [va]
    modes_b: list[int] = [vb]
    post_a: list[tuple] = []
    post_b: list[tuple] = []

    sa = PathStats()
    sb = PathStats()
    n_cells = 0

    t_cur = 0.0
    k = 0
    while True:
        k += 1
        if k > proposal_cap:
            raise RunawayRateError(
                f"proposal cap {proposal_cap} exceeded; rate_bound is likely far above the rate"
            )
        t_star = stream.proposal_time(k, bound)
        target = t_star if t_star < T else T
        if target > t_cur:
            length = target - t_cur
            n = int(length / h)
            if n < 1:
                n = 1
            h_loc = length / n
            dws = stream.wiener_block(n, h_loc)
            t_ap = rec.seg_t.append
            va_ap = rec.seg_v[0].append
            vb_ap = rec.seg_v[1].append
            try:
                if run_a is not None:
                    ya = run_a(model, ya, va, h_loc, dws)
                    yb = run_b(model, yb, vb, h_loc, dws)
                    t_ap(target)
                    va_ap(ya)
                    vb_ap(yb)
                else:
                    for i in range(n):
                        dw = dws[i]
                        ya = step_a(model, ya, va, h_loc, dw)
                        yb = step_b(model, yb, vb, h_loc, dw)
                        if constrain is not None:
                            ya = constrain(ya)
                            yb = constrain(yb)
                        if exc_a is not None:
                            for j, (lo, hi) in enumerate(hint):
                                if not lo <= ya[j] <= hi:
                                    exc_a[j] += 1
                                if not lo <= yb[j] <= hi:
                                    exc_b[j] += 1
                        last = i == n - 1
                        if last or stride == 1 or (stride is not None and (n_cells + i + 1) % stride == 0):
                            t_ap(target if last else t_cur + (i + 1) * h_loc)
                            va_ap(ya)
                            vb_ap(yb)
            except SimulationDivergedError as err:
                raise SimulationDivergedError(t_cur, err.y, str(err)) from None
            n_cells += n
            t_cur = target
            rec.maybe_flush()
        if t_star > T:
            break
        u = stream.thinning_uniform(k)
        u_mode = u_mag = None
        for side in (0, 1):
            y, v, st = (ya, va, sa) if side == 0 else (yb, vb, sb)
            st.n_proposals += 1
            lam = model.rate(y, v)
            if lam < st.rate_min:
                st.rate_min = lam
            if lam > st.rate_max:
                st.rate_max = lam
            if lam > bound:
                if strict:
                    raise RateBoundError(lam, bound, y, v)
                st.bound_violations += 1
            if u * bound <= lam:
                st.n_accepted += 1
                if u_mode is None:
                    u_mode, u_mag = stream.kernel_slots(k)
                v = _sample_mode_raw(kernel, y, v, u_mode)
                if jump_update is not None:
                    y = _apply_jump_transform(jump_update, y, v, u_mag, t_cur)
                if side == 0:
                    ya, va = y, v
                    jumps_a.append(t_cur)
                    modes_a.append(v)
                    post_a.append(y)
                else:
                    yb, vb = y, v
                    jumps_b.append(t_cur)
                    modes_b.append(v)
                    post_b.append(y)
        if t_cur >= T:
            break

    sa.n_cells = sb.n_cells = n_cells
    if not sa.n_proposals:
        sa.rate_min = sa.rate_max = math.nan
    if not sb.n_proposals:
        sb.rate_min = sb.rate_max = math.nan

    dim = len(ya)
    t_arr, (values_a, values_b) = rec.finish(dim)
    if hint is not None and stride == 1:
        exc_a = _count_excursions(values_a, hint)
        exc_b = _count_excursions(values_b, hint)
    sa.hint_excursions = tuple(exc_a) if exc_a is not None else ()
    sb.hint_excursions = tuple(exc_b) if exc_b is not None else ()

    traj_a = Trajectory(
        times=t_arr,
        values=values_a,
        jump_times=np.asarray(jumps_a),
        interval_modes=np.asarray(modes_a, dtype=np.int64),
        post_jump_values=np.asarray(post_a).reshape(len(post_a), dim),
        stats=sa,
    )
    traj_b = Trajectory(
        times=t_arr.copy(),
        values=values_b,
        jump_times=np.asarray(jumps_b),
        interval_modes=np.asarray(modes_b, dtype=np.int64),
        post_jump_values=np.asarray(post_b).reshape(len(post_b), dim),
        stats=sb,
    )
    return traj_a, traj_b


def simulate_batch(
    model: PDifMPModel,
    integrator,
    seed: int,
    n_paths: int,
    h: float | None = None,
    T: float | None = None,
    stride: int | None = 1,
    threads: int = 1,
    path_offset: int = 0,
) -> list[Trajectory]:
    """Simulate ``n_paths`` independent paths, ordered by path index.

    Path ``i`` uses the stream forked for ``path_offset + i``; results are
    identical for any thread count.
    """

    def one(i: int) -> Trajectory:
        stream = fork_for_path(seed, path_offset + i)
        return simulate_path(model, integrator, stream, h=h, T=T, stride=stride)

    if threads <= 1:
        return [one(i) for i in range(n_paths)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n_paths)))
