"""Built-in model configurations.

Three families are provided: geometric Brownian motion with constant-rate
jumps and exponential multiplicative magnitudes ("example1"), geometric
Brownian motion with a state-proportional jump rate and a fixed 0.9 rescale
at jumps ("example2", plus a constant-rate variant "weak_test" used for
weak-error studies), and a two-component microscale cell-migration system
whose velocity mode flips through a fiber-distribution kernel ("glioma").

The jump-counter mode of the GBM family is capped: the mode set must stay
finite, expected jump counts in the studied configurations are far below
the default capacity of 64, and overflow raises instead of wrapping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .core import CumulativeKernel, HybridState, ModeSet, PDifMPModel
from .errors import ConfigError, CounterOverflowError
from .flows import (
    EulerMaruyama,
    ExactGBMFlow,
    GbmEulerMaruyama,
    GliomaEulerMaruyama,
    GliomaSplitting,
)


# -- GBM with jumps ----------------------------------------------------------


@dataclass(frozen=True)
class GbmJumpParams:
    """Geometric Brownian motion with mode-counting jumps.

    ``rate_kind`` is "constant" (rate_value is the jump rate, which also
    serves as the dominating bound) or "linear" (rate is rate_value * y;
    unbounded in general, so a dominating bound must come from
    ``rate_bound`` or ``y_max``).  ``jump_kind`` selects the jump transform
    of the continuous state: "exp_magnitude" multiplies y by e^eta with
    eta exponential of rate ``magnitude_rate``, "scale" multiplies by
    ``jump_scale``, "none" leaves y untouched.
    """

    mu: float
    sigma: float
    y0: float
    rate_kind: str = "constant"
    rate_value: float = 0.0001
    rate_bound: float | None = None
    jump_kind: str = "exp_magnitude"
    jump_scale: float = 0.9
    magnitude_rate: float | None = None
    counter_capacity: int = 64
    horizon: float = 1.0
    y_max: float | None = None
    as_published: bool = False

    def __post_init__(self) -> None:
        if self.sigma < 0.0:
            raise ConfigError(f"sigma must be nonnegative, got {self.sigma!r}")
        if not self.y0 > 0.0:
            raise ConfigError(f"y0 must be positive, got {self.y0!r}")
        if self.rate_kind not in ("constant", "linear"):
            raise ConfigError(f"unknown rate_kind {self.rate_kind!r}")
        if self.jump_kind not in ("exp_magnitude", "scale", "none"):
            raise ConfigError(f"unknown jump_kind {self.jump_kind!r}")
        if self.rate_value < 0.0:
            raise ConfigError(f"rate_value must be nonnegative, got {self.rate_value!r}")
        if self.rate_kind == "linear" and not self.rate_value > 0.0:
            raise ConfigError("linear rate needs a positive slope")
        if self.counter_capacity < 1:
            raise ConfigError(f"counter_capacity must be >= 1, got {self.counter_capacity!r}")
        if not self.horizon > 0.0:
            raise ConfigError(f"horizon must be positive, got {self.horizon!r}")


def _counter_weights(capacity: int) -> Callable[[tuple, int], list[float]]:
    # Mandatory increment: all kernel mass sits on the next counter value.
    def weights(y: tuple, v: int) -> list[float]:
        if v >= capacity:
            raise CounterOverflowError(
                f"jump counter reached capacity {capacity}; raise counter_capacity"
            )
        return [0.0] * (v + 2) + [1.0] * (capacity - v)

    return weights


def make_gbm_jump(params: GbmJumpParams) -> tuple[PDifMPModel, ExactGBMFlow]:
    """Generic GBM-with-jumps builder; returns the model and its exact flow."""
    mu, sigma, y0 = params.mu, params.sigma, params.y0

    def drift(y: tuple, v: int) -> tuple:
        return (mu * y[0],)

    def diffusion(y: tuple, v: int) -> tuple:
        return (sigma * y[0],)

    if params.rate_kind == "constant":
        lam = params.rate_value

        def rate(y: tuple, v: int) -> float:
            return lam

        bound = params.rate_bound
        if bound is None:
            bound = lam if lam > 0.0 else 1.0
    else:
        slope = params.rate_value

        def rate(y: tuple, v: int) -> float:
            return slope * y[0]

        bound = params.rate_bound
        if bound is None:
            y_max = params.y_max if params.y_max is not None else 4.0 * y0
            bound = slope * y_max

    if not bound > 0.0:
        raise ConfigError(f"dominating rate bound must be positive, got {bound!r}")

    if params.jump_kind == "exp_magnitude":
        mag_rate = params.magnitude_rate
        if mag_rate is None:
            mag_rate = params.rate_value if params.rate_value > 0.0 else 1.0
        if not mag_rate > 0.0:
            raise ConfigError(f"magnitude_rate must be positive, got {mag_rate!r}")

        def jump_update(y: tuple, v_new: int, u: float) -> tuple:
            return (y[0] * math.exp(-math.log1p(-u) / mag_rate),)

    elif params.jump_kind == "scale":
        scale = params.jump_scale

        def jump_update(y: tuple, v_new: int, u: float) -> tuple:
            return (y[0] * scale,)

    else:
        jump_update = None

    capacity = params.counter_capacity
    model = PDifMPModel(
        modes=ModeSet(tuple(range(capacity + 1))),
        drift=drift,
        diffusion=diffusion,
        rate=rate,
        rate_bound=bound,
        kernel=CumulativeKernel(_counter_weights(capacity)),
        horizon=params.horizon,
        initial_state=HybridState((y0,), 0, 0.0),
        jump_update=jump_update,
        bound_policy="count" if params.as_published else "error",
        name="gbm_jump",
    )
    return model, ExactGBMFlow(mu, sigma)


def make_example1(params: GbmJumpParams) -> tuple[PDifMPModel, ExactGBMFlow]:
    """Constant-rate jumps with exponential multiplicative magnitudes."""
    if params.rate_kind != "constant" or params.jump_kind != "exp_magnitude":
        raise ConfigError("example1 requires rate_kind='constant' and jump_kind='exp_magnitude'")
    model, flow = make_gbm_jump(params)
    object.__setattr__(model, "name", "example1")
    return model, flow


def make_example2(params: GbmJumpParams) -> tuple[PDifMPModel, ExactGBMFlow]:
    """State-proportional jump rate with a fixed 0.9 rescale at jumps.

    The linear rate is unbounded on an unbounded domain, so the dominating
    bound is taken from ``rate_bound``/``y_max`` and checked at runtime;
    with ``as_published`` the published bound of 0.001 is kept verbatim and
    violations are counted instead of raised (the published configuration
    has rate(y0) = 0.5 above its own bound, which makes every proposal an
    accepted jump).
    """
    if params.rate_kind != "linear" or params.jump_kind != "scale":
        raise ConfigError("example2 requires rate_kind='linear' and jump_kind='scale'")
    model, flow = make_gbm_jump(params)
    object.__setattr__(model, "name", "example2")
    return model, flow


# -- microscale cell migration ------------------------------------------------


def ecm_concentration(x: float) -> float:
    """Sigmoidal local concentration of extracellular binding sites."""
    return 1.0 / (1.0 + math.exp(-x))


def ecm_concentration_dx(x: float) -> float:
    e = math.exp(-x)
    s = 1.0 / (1.0 + e)
    return e * s * s


def bound_receptor_fraction(conc: float, k_plus: float, k_minus: float) -> float:
    """Equilibrium fraction of receptors bound at local concentration ``conc``."""
    return k_plus * conc / (k_plus * conc + k_minus)


def bound_receptor_fraction_dconc(conc: float, k_plus: float, k_minus: float) -> float:
    denom = k_plus * conc + k_minus
    return k_plus * k_minus / (denom * denom)


@dataclass(frozen=True)
class GliomaParams:
    """Parameters of the 1D microscale cell-migration system.

    The turning rate is ``lambda0 - lambda1 * z`` with the bound-receptor
    fraction z in [0, 1], so ``lambda1 <= lambda0`` keeps it nonnegative
    and ``lambda0`` itself is the tightest valid dominating bound; a
    user-supplied ``lambda_star`` below ``lambda0`` is rejected.
    """

    k_plus: float = 0.01
    k_minus: float = 0.01
    alpha: float = 0.21e-3
    lambda0: float = 0.2
    lambda1: float = 0.08
    a: float = 0.5
    b: float = 0.2
    lambda_star: float | None = None
    diffusivity: Callable[[float], float] | None = None
    x0: float = 0.0
    z0: float = 0.5
    initial_velocity_sign: int = 1
    clamp_state: bool = False
    # sensitivity switch for the splitting scheme: evaluate the receptor
    # relaxation coefficients at the cell's starting position instead of the
    # position already advanced within the step
    relax_at_step_start: bool = False
    horizon: float = 360.0

    def __post_init__(self) -> None:
        for name in ("k_plus", "k_minus", "lambda0", "lambda1", "a", "b"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)!r}")
        if not self.alpha > 0.0:
            raise ConfigError(f"alpha must be positive, got {self.alpha!r}")
        if self.lambda1 > self.lambda0:
            raise ConfigError(
                f"lambda1={self.lambda1!r} must not exceed lambda0={self.lambda0!r}; "
                "the turning rate lambda0 - lambda1*z would go negative on z in [0, 1]"
            )
        if self.lambda_star is not None and self.lambda_star < self.lambda0:
            raise ConfigError(
                f"lambda_star={self.lambda_star!r} is below lambda0={self.lambda0!r}; the "
                "turning rate reaches lambda0 at z=0, so any valid dominating bound is >= lambda0"
            )
        if not 0.0 <= self.z0 <= 1.0:
            raise ConfigError(f"z0 must lie in [0, 1], got {self.z0!r}")
        if self.initial_velocity_sign not in (-1, 1):
            raise ConfigError("initial_velocity_sign must be -1 or +1")
        if not self.horizon > 0.0:
            raise ConfigError(f"horizon must be positive, got {self.horizon!r}")

    @property
    def resolved_lambda_star(self) -> float:
        return self.lambda0 if self.lambda_star is None else self.lambda_star


def make_glioma(params: GliomaParams) -> PDifMPModel:
    """Build the microscale migration model.

    Continuous state (position x, bound-receptor fraction z); velocity mode
    in {-alpha, +alpha}.  The turning rate evaluates z clipped to [0, 1]:
    the model is defined on that band and small numerical excursions must
    not break the dominating bound (excursions are counted separately via
    the state-space hint).  The mode kernel weights each candidate velocity
    by fiber density over speed cubed, zeroes the current mode and
    renormalises; with scalar diffusivity and two symmetric speeds this is
    a deterministic velocity flip.
    """
    kp, km = params.k_plus, params.k_minus
    a, b = params.a, params.b
    lam0, lam1 = params.lambda0, params.lambda1
    modes = ModeSet((-params.alpha, params.alpha))
    mode_values = modes.values
    diffusivity = params.diffusivity

    def drift(y: tuple, v: int) -> tuple:
        x, z = y
        vel = mode_values[v]
        e = math.exp(-x)
        conc = 1.0 / (1.0 + e)
        kappa = kp * conc + km
        dx = z * x * (0.5 * z + a - b) + vel
        dz = -kappa * z + (kp * km / (kappa * kappa)) * vel * (e * conc * conc)
        return (dx, dz)

    def diffusion(y: tuple, v: int) -> tuple:
        return (y[1] * y[0], 0.0)

    def rate(y: tuple, v: int) -> float:
        z = y[1]
        if z < 0.0:
            z = 0.0
        elif z > 1.0:
            z = 1.0
        return lam0 - lam1 * z

    def kernel_weights(y: tuple, v: int) -> list[float]:
        d = diffusivity(y[0]) if diffusivity is not None else 1.0
        raw = [d / abs(m) ** 3 for m in mode_values]
        raw[v] = 0.0
        total = sum(raw)
        out = [0.0]
        acc = 0.0
        for r in raw:
            acc += r
            out.append(acc / total)
        out[-1] = 1.0
        return out

    constrain = None
    if params.clamp_state:

        def constrain(y: tuple) -> tuple:
            x, z = y
            return (min(max(x, -1.0), 1.0), min(max(z, 0.0), 1.0))

    v0 = modes.index(params.initial_velocity_sign * params.alpha)
    return PDifMPModel(
        modes=modes,
        drift=drift,
        diffusion=diffusion,
        rate=rate,
        rate_bound=params.resolved_lambda_star,
        kernel=CumulativeKernel(kernel_weights),
        horizon=params.horizon,
        initial_state=HybridState((params.x0, params.z0), v0, 0.0),
        state_space_hint=((-1.0, 1.0), (0.0, 1.0)),
        constrain=constrain,
        name="glioma",
    )


# -- catalog -------------------------------------------------------------------


@dataclass
class BuiltModel:
    """A catalog entry: the model plus the integrators that fit it."""

    model: PDifMPModel
    em: EulerMaruyama
    exact: ExactGBMFlow | None = None
    splitting: GliomaSplitting | None = None
    params: object | None = None


def _build_example1(**cfg) -> BuiltModel:
    defaults = dict(mu=0.001, sigma=0.002, y0=50.0, rate_value=0.0001, horizon=1.0)
    defaults.update(cfg)
    params = GbmJumpParams(rate_kind="constant", jump_kind="exp_magnitude", **defaults)
    model, exact = make_example1(params)
    em = GbmEulerMaruyama(mu=params.mu, sigma=params.sigma)
    return BuiltModel(model=model, em=em, exact=exact, params=params)


def _build_example2(**cfg) -> BuiltModel:
    defaults = dict(mu=0.01, sigma=0.2, y0=50.0, rate_value=0.01, horizon=1.0)
    defaults.update(cfg)
    if defaults.get("as_published") and "rate_bound" not in defaults:
        defaults["rate_bound"] = 0.001
    params = GbmJumpParams(rate_kind="linear", jump_kind="scale", **defaults)
    model, exact = make_example2(params)
    em = GbmEulerMaruyama(mu=params.mu, sigma=params.sigma)
    return BuiltModel(model=model, em=em, exact=exact, params=params)


def _build_weak_test(**cfg) -> BuiltModel:
    # Capacity 16 is ample for a unit-rate counter over a unit horizon
    # (overflow would still raise, observably).
    defaults = dict(
        mu=0.05, sigma=0.2, y0=1.0, rate_value=1.0, rate_bound=1.0, jump_scale=0.9,
        horizon=1.0, counter_capacity=16,
    )
    defaults.update(cfg)
    params = GbmJumpParams(rate_kind="constant", jump_kind="scale", **defaults)
    model, exact = make_gbm_jump(params)
    object.__setattr__(model, "name", "weak_test")
    em = GbmEulerMaruyama(mu=params.mu, sigma=params.sigma)
    return BuiltModel(model=model, em=em, exact=exact, params=params)


def _build_glioma(**cfg) -> BuiltModel:
    params = GliomaParams(**cfg)
    model = make_glioma(params)
    em = GliomaEulerMaruyama(
        k_plus=params.k_plus,
        k_minus=params.k_minus,
        a=params.a,
        b=params.b,
        mode_values=model.modes.values,
    )
    return BuiltModel(
        model=model,
        em=em,
        splitting=GliomaSplitting(params, freeze_at_updated_x=not params.relax_at_step_start),
        params=params,
    )


_CATALOG: dict[str, Callable[..., BuiltModel]] = {
    "example1": _build_example1,
    "example2": _build_example2,
    "weak_test": _build_weak_test,
    "glioma": _build_glioma,
}


def list_model_ids() -> list[str]:
    return sorted(_CATALOG)


def build_model(model_id: str, **cfg) -> BuiltModel:
    """Instantiate a catalog model by string id with config overrides."""
    try:
        builder = _CATALOG[model_id]
    except KeyError:
        raise ConfigError(f"unknown model id {model_id!r}; known: {list_model_ids()}") from None
    try:
        return builder(**cfg)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for model {model_id!r}: {exc}") from None
