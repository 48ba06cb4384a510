import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from mfgpy.bases.Grid import MatrixField, ScalarField, TorusGrid, make_grid
from mfgpy.common.errors import ValidationError


logger = logging.getLogger(__name__)

RealFn = Callable[[np.ndarray], np.ndarray]

FD_STEP = 1e-7
COERCIVITY_SLACK = 1e-12
MIN_THETA0_ANISOTROPIC = 0.5


@dataclass(frozen=True)
class CouplingSpec:
    g: RealFn
    g_prime: RealFn | None
    c_g: float
    name: str = "custom"

    def __post_init__(self):
        if not self.c_g > 0:
            raise ValidationError(f"C_g must be positive, got {self.c_g}")

    def __call__(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(self.g(np.asarray(s, dtype=float)), dtype=float)

    def derivative(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.g_prime is not None:
            return np.asarray(self.g_prime(s), dtype=float) * np.ones_like(s)
        return (self(s + FD_STEP) - self(s - FD_STEP)) / (2 * FD_STEP)

    def truncated(self, k0: float) -> "CouplingSpec":
        """g on [-k0, k0], continued linearly with slope C_g outside."""
        g, dg, c_g = self.__call__, self.derivative, self.c_g
        lo, hi = float(g(-k0)), float(g(k0))

        def g_bar(s):
            s = np.asarray(s, dtype=float)
            inner = g(np.clip(s, -k0, k0))
            return np.where(s > k0, hi + c_g * (s - k0), np.where(s < -k0, lo + c_g * (s + k0), inner))

        def g_bar_prime(s):
            s = np.asarray(s, dtype=float)
            return np.where(np.abs(s) > k0, c_g, dg(np.clip(s, -k0, k0)))

        return CouplingSpec(g=g_bar, g_prime=g_bar_prime, c_g=c_g, name=f"{self.name}|k0={k0:g}")


def _coupling_linear(c_g: float | None) -> CouplingSpec:
    return CouplingSpec(g=lambda s: s, g_prime=lambda s: np.ones_like(s), c_g=c_g or 1.0, name="linear")


def _coupling_cubic(c_g: float | None) -> CouplingSpec:
    return CouplingSpec(g=lambda s: s ** 3 + s, g_prime=lambda s: 3 * s ** 2 + 1, c_g=c_g or 1.0, name="cubic")


def _coupling_arctan(c_g: float | None) -> CouplingSpec:
    # bounded by π/2 but strictly increasing in float64 over every sampled range
    return CouplingSpec(g=np.arctan, g_prime=lambda s: 1 / (1 + s ** 2), c_g=c_g or 0.1, name="arctan")


def _coupling_decreasing(c_g: float | None) -> CouplingSpec:
    return CouplingSpec(g=lambda s: -s, g_prime=lambda s: -np.ones_like(s), c_g=c_g or 1.0, name="decreasing")


COUPLINGS: dict[str, Callable[[float | None], CouplingSpec]] = {
    "linear": _coupling_linear,
    "cubic": _coupling_cubic,
    "arctan": _coupling_arctan,
    "decreasing": _coupling_decreasing,
}


def builtin_coupling(name: str = "linear", c_g: float | None = None) -> CouplingSpec:
    try:
        return COUPLINGS[name](c_g)
    except KeyError:
        raise ValidationError(f"unknown coupling '{name}' (allowed: {tuple(COUPLINGS)})") from None


@dataclass(frozen=True)
class CouplingViolation:
    kind: str
    sample: float
    detail: str


@dataclass(frozen=True)
class CouplingReport:
    violations: tuple[CouplingViolation, ...] = ()

    @property
    def passed(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        return "; ".join(f"{v.kind} at s={v.sample:g}: {v.detail}" for v in self.violations[:5])


def k0_bound(V: ScalarField, hbar: float, c_g: float, c_h: float = 0.0) -> float:
    c_v = float(np.max(np.abs(V.values - hbar)))
    return (c_h + c_v + 1.0 / c_g) / c_g + 1.0


def coupling_samples(k0: float, count: int = 401) -> np.ndarray:
    return np.union1d(np.linspace(-k0 - 1.0, k0 + 1.0, count), [0.0])


def validate_coupling(c: CouplingSpec, samples: np.ndarray) -> CouplingReport:
    s = np.unique(np.asarray(samples, dtype=float))
    g = c(s)
    violations = []

    lhs = g * np.sign(s)
    rhs = c.c_g * np.abs(s) - 1.0 / c.c_g
    for i in np.flatnonzero(lhs < rhs - COERCIVITY_SLACK):
        violations.append(CouplingViolation(
            kind="coercivity", sample=float(s[i]),
            detail=f"g(s)sign(s)={lhs[i]:.6g} < C_g|s|-1/C_g={rhs[i]:.6g}"))

    for i in np.flatnonzero(np.diff(g) <= 0):
        violations.append(CouplingViolation(
            kind="monotonicity", sample=float(s[i]),
            detail=f"g({s[i]:.6g})={g[i]:.6g} >= g({s[i + 1]:.6g})={g[i + 1]:.6g}"))

    return CouplingReport(tuple(violations))


def validate_ellipticity(A: MatrixField) -> tuple[float, float]:
    eigs = np.linalg.eigvalsh(A.pointwise())
    theta0, theta1 = float(np.min(eigs)), float(np.max(eigs))
    if theta0 <= 0:
        raise ValidationError(f"ellipticity violated: smallest eigenvalue {theta0:.6g} <= 0")
    return theta0, theta1


def lipschitz_estimate(f: ScalarField | MatrixField) -> float:
    grid = f.grid
    values = f.values.reshape((-1, *grid.shape))
    best = 0.0
    for k in range(grid.dim):
        axis = k + 1
        best = max(best, float(np.max(np.abs(np.roll(values, -1, axis=axis) - values))) / grid.h)
    return best


@dataclass(frozen=True)
class ExactSolution:
    u: ScalarField
    hbar: float


@dataclass(frozen=True, eq=False)
class MFGProblem:
    grid: TorusGrid
    A: MatrixField
    V: ScalarField
    coupling: CouplingSpec
    name: str = "custom"
    exact: ExactSolution | None = None
    params: dict[str, Any] = field(default_factory=dict)
    theta0: float = field(init=False)
    theta1: float = field(init=False)
    lip_A: float = field(init=False)
    lip_V: float = field(init=False)

    def __post_init__(self):
        if not (self.A.grid == self.V.grid == self.grid):
            raise ValidationError("A, V and the problem grid must coincide")
        theta0, theta1 = validate_ellipticity(self.A)
        report = validate_coupling(self.coupling, coupling_samples(self.k0(hbar=0.0)))
        if not report.passed:
            raise ValidationError(f"coupling '{self.coupling.name}' violates the assumptions: {report.summary()}")
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "theta1", theta1)
        object.__setattr__(self, "lip_A", lipschitz_estimate(self.A))
        object.__setattr__(self, "lip_V", lipschitz_estimate(self.V))
        logger.debug("problem %s validated: theta0=%.6g theta1=%.6g lip_A=%.6g lip_V=%.6g",
                     self.name, theta0, theta1, self.lip_A, self.lip_V)

    def k0(self, hbar: float, c_h: float = 0.0) -> float:
        return k0_bound(self.V, hbar, self.coupling.c_g, c_h)


TWO_PI = 2 * np.pi


def _log_mass(u0: Callable[..., np.ndarray], dim: int, points: int = 512) -> float:
    """log ∫ exp(-u0) by the periodic midpoint rule on a fine grid."""
    axis = np.arange(points) / points
    coords = np.meshgrid(*(axis,) * dim, indexing="ij")
    return float(np.log(np.mean(np.exp(-u0(*coords)))))


def _manufactured_potential(
    grid: TorusGrid,
    coupling: CouplingSpec,
    hbar: float,
    u: np.ndarray,
    du: list[np.ndarray],
    d2u: list[list[np.ndarray]],
    a: list[list[np.ndarray]],
    da: list[list[list[np.ndarray]]],
) -> np.ndarray:
    """V = hbar + g(-u) + div(A Du) - ½ Du A Du from closed-form derivatives."""
    dim = grid.dim
    div = np.zeros(grid.shape)
    quad = np.zeros(grid.shape)
    for i in range(dim):
        for j in range(dim):
            div = div + da[i][j][i] * du[j] + a[i][j] * d2u[i][j]
            quad = quad + du[i] * a[i][j] * du[j]
    return hbar + coupling(-u) + div - 0.5 * quad


def _trivial(grid: TorusGrid, coupling: CouplingSpec) -> MFGProblem:
    # u ≡ 0 has unit mass and solves the equation with hbar = -g(0)
    exact = ExactSolution(ScalarField.constant(grid, 0.0), -float(coupling(np.zeros(1))[0]))
    return MFGProblem(grid=grid, A=MatrixField.identity(grid), V=ScalarField.constant(grid, 0.0),
                      coupling=coupling, name="trivial", exact=exact)


def _manufactured_1d(grid: TorusGrid, coupling: CouplingSpec, amplitude: float = 0.1,
                     a_amplitude: float = 0.25) -> MFGProblem:
    if grid.dim != 1:
        raise ValidationError("manufactured_1d requires dim=1")
    (x,) = grid.coordinates()
    c0 = _log_mass(lambda y: amplitude * np.cos(TWO_PI * y), 1)
    u = amplitude * np.cos(TWO_PI * x) + c0
    du = [-amplitude * TWO_PI * np.sin(TWO_PI * x)]
    d2u = [[-amplitude * TWO_PI ** 2 * np.cos(TWO_PI * x)]]
    a = [[1.0 + a_amplitude * np.sin(TWO_PI * x)]]
    da = [[[a_amplitude * TWO_PI * np.cos(TWO_PI * x)]]]
    V = _manufactured_potential(grid, coupling, 0.0, u, du, d2u, a, da)
    return MFGProblem(grid=grid, A=MatrixField(grid, a[0][0]), V=ScalarField(grid, V), coupling=coupling,
                      name="manufactured_1d", exact=ExactSolution(ScalarField(grid, u), 0.0),
                      params=dict(amplitude=amplitude, a_amplitude=a_amplitude, c0=c0))


def _manufactured_2d(grid: TorusGrid, coupling: CouplingSpec, amplitude: float = 0.1,
                     a_amplitude: float = 0.2, a_cross: float = 0.1) -> MFGProblem:
    if grid.dim != 2:
        raise ValidationError("manufactured_2d requires dim=2")
    x1, x2 = grid.coordinates()
    c1, s1 = np.cos(TWO_PI * x1), np.sin(TWO_PI * x1)
    c2, s2 = np.cos(TWO_PI * x2), np.sin(TWO_PI * x2)
    c0 = _log_mass(lambda y1, y2: amplitude * np.cos(TWO_PI * y1) * np.cos(TWO_PI * y2), 2, points=256)

    u = amplitude * c1 * c2 + c0
    du = [-amplitude * TWO_PI * s1 * c2, -amplitude * TWO_PI * c1 * s2]
    u_diag = -amplitude * TWO_PI ** 2 * c1 * c2
    u_mixed = amplitude * TWO_PI ** 2 * s1 * s2
    d2u = [[u_diag, u_mixed], [u_mixed, u_diag]]

    zero = np.zeros(grid.shape)
    a11 = 1.0 + a_amplitude * s1
    a22 = 1.0 + a_amplitude * s2
    a12 = a_cross * c1 * c2
    a = [[a11, a12], [a12, a22]]
    d_a11 = [a_amplitude * TWO_PI * c1, zero]
    d_a22 = [zero, a_amplitude * TWO_PI * c2]
    d_a12 = [-a_cross * TWO_PI * s1 * c2, -a_cross * TWO_PI * c1 * s2]
    da = [[d_a11, d_a12], [d_a12, d_a22]]

    V = _manufactured_potential(grid, coupling, 0.0, u, du, d2u, a, da)
    return MFGProblem(grid=grid, A=MatrixField(grid, np.array(a)), V=ScalarField(grid, V), coupling=coupling,
                      name="manufactured_2d", exact=ExactSolution(ScalarField(grid, u), 0.0),
                      params=dict(amplitude=amplitude, a_amplitude=a_amplitude, a_cross=a_cross, c0=c0))


def _anisotropic_2d(grid: TorusGrid, coupling: CouplingSpec, strength: float = 0.4,
                    v_amplitude: float = 0.3) -> MFGProblem:
    if grid.dim != 2:
        raise ValidationError("anisotropic_2d requires dim=2")
    x1, x2 = grid.coordinates()
    off = 0.2 * np.sin(TWO_PI * x2)
    perturbation = np.array([[np.cos(TWO_PI * x1) ** 2, off], [off, np.sin(TWO_PI * x1) ** 2]])
    values = np.eye(2)[:, :, None, None] + strength * perturbation
    theta0, _ = validate_ellipticity(MatrixField(grid, values))
    if theta0 < MIN_THETA0_ANISOTROPIC:
        values = values + (MIN_THETA0_ANISOTROPIC - theta0) * np.eye(2)[:, :, None, None]
    V = v_amplitude * np.cos(TWO_PI * x1) * np.cos(TWO_PI * x2)
    return MFGProblem(grid=grid, A=MatrixField(grid, values), V=ScalarField(grid, V), coupling=coupling,
                      name="anisotropic_2d", params=dict(strength=strength, v_amplitude=v_amplitude))


BUILTINS: dict[str, tuple[int | None, Callable[..., MFGProblem]]] = {
    "trivial": (None, _trivial),
    "manufactured_1d": (1, _manufactured_1d),
    "manufactured_2d": (2, _manufactured_2d),
    "anisotropic_2d": (2, _anisotropic_2d),
}


def builtin_problem(name: str, n: int, dim: int | None = None, coupling: str = "linear",
                    c_g: float | None = None, **params) -> MFGProblem:
    if name not in BUILTINS:
        raise ValidationError(f"unknown problem '{name}' (allowed: {tuple(BUILTINS)})")
    fixed_dim, builder = BUILTINS[name]
    if dim is None:
        dim = fixed_dim or 1
    elif fixed_dim is not None and dim != fixed_dim:
        raise ValidationError(f"problem '{name}' requires dim={fixed_dim}, got {dim}")
    grid, spec = make_grid(dim, n), builtin_coupling(coupling, c_g)
    try:
        return builder(grid, spec, **params)
    except TypeError as e:
        raise ValidationError(f"invalid parameters for problem '{name}': {e}") from e
