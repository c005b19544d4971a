import math
from typing import Any, Callable, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import sparse

import config

ROW_SUM_TOL = 1e-12
PI_SUM_TOL = 1e-12
DETAILED_BALANCE_TOL = 1e-10

PValue = Union[Literal["inf"], float]


def as_p(value: PValue) -> float:
    """Map the JSON-friendly "inf" sentinel onto math.inf"""
    return math.inf if value == "inf" else float(value)


def _readonly(value: Any) -> Any:
    if sparse.issparse(value):
        return sparse.csr_matrix(value, dtype=float)
    arr = np.array(value, dtype=float)
    arr.setflags(write=False)
    return arr


class ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ---------------------------------------------------------------------------
# Finite chains
# ---------------------------------------------------------------------------

class StochasticMatrix(ArrayModel):
    """Row-stochastic |D| x |D| matrix, dense or CSR"""
    entries: Any

    @field_validator("entries", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _readonly(value)

    @field_validator("entries")
    @classmethod
    def _check_stochastic(cls, value):
        if value.ndim != 2 or value.shape[0] != value.shape[1] or value.shape[0] == 0:
            raise ValueError("transition matrix must be square and non-empty")
        data = value.data if sparse.issparse(value) else value
        if not np.all(np.isfinite(data)):
            raise ValueError("transition matrix has non-finite entries")
        if np.any(data < 0):
            raise ValueError("transition matrix has negative entries")
        row_sums = np.asarray(value.sum(axis=1)).ravel()
        if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOL:
            raise ValueError("every row must sum to 1")
        return value

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.entries)

    def dense(self) -> np.ndarray:
        if self.is_sparse:
            if self.size > config.MAX_DENSE_STATES:
                from models.errors import TooLarge
                raise TooLarge(f"{self.size} states exceed the dense cap {config.MAX_DENSE_STATES}")
            return self.entries.toarray()
        return self.entries

    def apply(self, h: np.ndarray) -> np.ndarray:
        """(P h)(x) = sum_y p(x,y) h(y)"""
        return self.entries @ h


class ReversibleChain(ArrayModel):
    matrix: StochasticMatrix
    pi: Any

    @field_validator("pi", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _readonly(value)

    @model_validator(mode="after")
    def _check_detailed_balance(self):
        pi = self.pi
        if pi.ndim != 1 or pi.shape[0] != self.matrix.size:
            raise ValueError("pi must be a vector over the state space")
        if np.any(pi <= 0):
            raise ValueError("pi must be strictly positive")
        if abs(math.fsum(pi) - 1.0) > PI_SUM_TOL:
            raise ValueError("pi must sum to 1")
        P = self.matrix.entries
        if sparse.issparse(P):
            flows = sparse.diags(pi) @ P
            gap = abs(flows - flows.T)
            worst = gap.max() if gap.nnz else 0.0
        else:
            flows = pi[:, None] * P
            worst = np.max(np.abs(flows - flows.T))
        if worst > DETAILED_BALANCE_TOL:
            raise ValueError(f"detailed balance violated by {worst:.3e}")
        return self

    @property
    def size(self) -> int:
        return self.matrix.size

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        """<f, g>_pi"""
        return float(np.dot(self.pi * f, g))


class SpectralData(ArrayModel):
    eigenvalues: Any
    eigenvectors: Any  # column k is u_k
    pi: Any
    beta1: float
    beta: float

    @field_validator("eigenvalues", "eigenvectors", "pi", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _readonly(value)

    @model_validator(mode="after")
    def _check_spectrum(self):
        ev = self.eigenvalues
        if np.any(np.diff(ev) > 1e-12):
            raise ValueError("eigenvalues must be sorted descending")
        if abs(ev[0] - 1.0) > 1e-10:
            raise ValueError("leading eigenvalue must be 1")
        if np.any(ev < -1.0 - 1e-10) or np.any(ev > 1.0 + 1e-10):
            raise ValueError("eigenvalues must lie in [-1, 1]")
        # the trace is non-negative, so the second eigenvalue cannot sit below -1/(|D| - 1)
        if len(ev) > 1 and self.beta1 < -1.0 / (len(ev) - 1) - 1e-10:
            raise ValueError(f"beta1 = {self.beta1} lies below -1/(|D| - 1)")
        return self

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        """a_k = <f, u_k>_pi"""
        return self.eigenvectors.T @ (self.pi * np.asarray(f, dtype=float))


class InitialDistribution(ArrayModel):
    nu: Any
    density: Any  # nu / pi

    @field_validator("nu", "density", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _readonly(value)

    @model_validator(mode="after")
    def _check(self):
        if self.nu.shape != self.density.shape:
            raise ValueError("nu and its density must have the same shape")
        if np.any(self.nu < 0) or abs(math.fsum(self.nu) - 1.0) > PI_SUM_TOL:
            raise ValueError("nu must be a probability vector")
        return self

    @classmethod
    def from_nu(cls, nu, pi) -> "InitialDistribution":
        nu = np.asarray(nu, dtype=float)
        return cls(nu=nu, density=nu / np.asarray(pi, dtype=float))

    @classmethod
    def point_mass(cls, state: int, pi) -> "InitialDistribution":
        nu = np.zeros(len(pi))
        nu[state] = 1.0
        return cls.from_nu(nu, pi)


class ToySpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    family: Literal["circle", "hypercube", "star"]
    T: Optional[int] = None
    d: Optional[int] = None
    theta: Optional[float] = None

    @model_validator(mode="after")
    def _check_parameters(self):
        if self.family == "circle":
            if self.T is None or self.T < 3 or self.T % 2 == 0:
                raise ValueError("circle needs an odd T >= 3")
        elif self.family == "hypercube":
            if self.d is None or self.d < 1:
                raise ValueError("hypercube needs d >= 1")
        else:
            if self.T is None or self.T < 2 or self.T % 2 == 1:
                raise ValueError("star needs an even T >= 2")
            if self.theta is None or not 0.0 < self.theta < 1.0:
                raise ValueError("star needs theta in (0, 1)")
        return self

    @property
    def num_states(self) -> int:
        if self.family == "circle":
            return self.T
        if self.family == "hypercube":
            return 2 ** self.d
        return self.T + 1


# ---------------------------------------------------------------------------
# Bound calculus
# ---------------------------------------------------------------------------

class GapParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta: float = Field(ge=0.0, lt=1.0)
    lambda_max: Optional[float] = Field(default=None, ge=-1.0, lt=1.0)
    alpha: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    M: Optional[float] = Field(default=None, ge=0.0)
    reversible: bool = True
    normal_op: bool = False

    @model_validator(mode="after")
    def _check_relations(self):
        if self.lambda_max is not None and self.lambda_max > self.beta + 1e-15:
            raise ValueError("lambda_max cannot exceed beta")
        if (self.alpha is None) != (self.M is None):
            raise ValueError("alpha and M come as a pair")
        if self.alpha is not None and self.reversible and self.beta > self.alpha + 1e-12:
            raise ValueError("for reversible chains beta <= alpha")
        return self


class BurninInputs(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float
    density_norm: float = Field(ge=0.0)
    C: Optional[float] = Field(default=None, ge=0.0)

    @field_validator("p")
    @classmethod
    def _check_p(cls, value):
        if value != 2.0 and not value > 2.0:
            raise ValueError("p must be 2 or lie in (2, inf]")
        return value


class PlanRow(BaseModel):
    n0: int
    n: int
    est: float


class PlanCurve(BaseModel):
    N: int
    rows: List[PlanRow] = []
    suggested_n0: Optional[int] = None
    conditions_hold: Optional[bool] = None
    in_bracket: Optional[bool] = None
    feasible: bool = True

    @model_validator(mode="after")
    def _check_rows(self):
        for row in self.rows:
            if row.n0 + row.n != self.N:
                raise ValueError("every row must split the full budget N")
            if not math.isfinite(row.est):
                raise ValueError("est values must be finite")
        return self


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

class LogDensityOracle(ArrayModel):
    eval: Callable[[np.ndarray], np.ndarray]
    dim: int = Field(ge=1)
    lipschitz_L: Optional[float] = Field(default=None, ge=0.0)
    name: str = "custom"


class MembershipOracle(ArrayModel):
    """Body A with B(0, inner_radius) inside A inside B(0, outer_radius)"""
    contains: Callable[[np.ndarray], np.ndarray]
    dim: int = Field(ge=1)
    outer_radius: float = Field(gt=0.0)
    inner_radius: float = Field(default=1.0, gt=0.0)
    name: str = "custom"

    @model_validator(mode="after")
    def _check_radii(self):
        if self.inner_radius > self.outer_radius:
            raise ValueError("inner_radius cannot exceed outer_radius")
        axes = np.eye(self.dim)
        inner = np.vstack([np.zeros(self.dim), 0.999 * self.inner_radius * axes, -0.999 * self.inner_radius * axes])
        if not np.all(self.contains(inner)):
            raise ValueError(f"{self.name} does not contain its inner ball")
        if np.any(self.contains(1.001 * self.outer_radius * axes)):
            raise ValueError(f"{self.name} reaches beyond outer_radius")
        return self


class Chord(BaseModel):
    lambda1: float
    lambda2: float
    oracle_calls: int = 0

    @property
    def length(self) -> float:
        return self.lambda2 - self.lambda1


class BodySpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: Literal["ball", "box", "ball_box"] = "ball"
    r: float = Field(default=1.0, gt=0.0)
    half_width: Optional[float] = Field(default=None, gt=0.0)


class DensitySpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: Literal["gaussian", "uniform", "laplace"] = "uniform"
    precision: float = Field(default=1.0, gt=0.0)
    scale: float = Field(default=1.0, gt=0.0)
    center: float = 0.0


KernelKind = Literal[
    "ball_walk_metropolis", "hit_and_run", "contracting_normal", "independence_normal",
    "example1", "example2", "toy_chain", "finite_chain",
]


class KernelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: KernelKind
    lazy: bool = False
    d: Optional[int] = Field(default=None, ge=1)
    delta: Optional[float] = Field(default=None, gt=0.0)
    body: Optional[BodySpec] = None
    log_density: Optional[DensitySpec] = None
    theta: Optional[float] = None
    xi: Optional[float] = None
    eps0: Optional[float] = Field(default=None, gt=0.0)
    toy: Optional[ToySpec] = None
    matrix_path: Optional[str] = None

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind == "ball_walk_metropolis" and self.delta is None:
            raise ValueError("ball_walk_metropolis needs delta")
        if self.kind == "contracting_normal" and (self.theta is None or not -1.0 < self.theta < 1.0):
            raise ValueError("contracting_normal needs theta in (-1, 1)")
        if self.kind == "independence_normal" and (self.xi is None or self.xi <= 1.0):
            raise ValueError("independence_normal needs xi > 1")
        if self.kind == "toy_chain" and self.toy is None:
            raise ValueError("toy_chain needs a toy spec")
        if self.kind == "finite_chain" and self.toy is None and self.matrix_path is None:
            raise ValueError("finite_chain needs a toy spec or a matrix_path")
        return self


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

class InitialSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["point", "uniform_interval", "uniform_ball", "stationary", "canonical"] = "point"
    point: Optional[List[float]] = None
    state: Optional[int] = Field(default=None, ge=0)
    center: float = 0.0
    radius: Optional[float] = Field(default=None, gt=0.0)


class IntegrandSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: Literal["constant", "identity", "square", "coordinate", "example2_u", "u1", "finite_vector"]
    value: float = 0.0
    index: int = Field(default=0, ge=0)
    values: Optional[List[float]] = None


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kernel: KernelConfig
    initial: InitialSpec = Field(default_factory=InitialSpec)
    f: IntegrandSpec
    n: int = Field(ge=1)
    n0: int = Field(default=0, ge=0)
    replications: int = Field(default=config.DEFAULT_REPLICATIONS, ge=1)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    chunk_size: int = Field(default=config.CHUNK_SIZE, ge=1)
    threads: int = Field(default=config.DEFAULT_THREADS, ge=1)
    true_value: Optional[float] = None

    def config_hash(self) -> str:
        import hashlib
        payload = self.model_dump_json(exclude={"threads"})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


class OracleCalls(BaseModel):
    f: int = 0
    # one per transition step; the start-up evaluation at X_0 is kept apart in rho_init
    rho: int = 0
    rho_init: int = 0
    membership: int = 0


class EstimateReport(BaseModel):
    mean_estimate: float
    empirical_mse: float = Field(ge=0.0)
    mse_std_error: float = Field(ge=0.0)
    replications: int
    n: int
    n0: int
    seed: int
    config_hash: str
    true_value: Optional[float] = None
    bound_upper: Optional[float] = None
    bound_lower: Optional[float] = None
    oracle_calls: OracleCalls = Field(default_factory=OracleCalls)


class Verdict(BaseModel):
    passed: bool
    root_mse: float
    root_std_error: float
    lower: float
    upper: float
    sigma: float
    report: EstimateReport

    def csv_row(self) -> Dict[str, Any]:
        return {
            "config_hash": self.report.config_hash,
            "n": self.report.n,
            "n0": self.report.n0,
            "empirical_mse": self.report.empirical_mse,
            "std_error": self.report.mse_std_error,
            "lower": self.lower,
            "upper": self.upper,
            "verdict": "pass" if self.passed else "fail",
            "seed": self.report.seed,
        }


# ---------------------------------------------------------------------------
# Planning
# ---------------------------------------------------------------------------

class LogConcaveProblem(BaseModel):
    model_config = ConfigDict(frozen=True)

    d: int = Field(ge=1)
    r: float = Field(gt=0.0)
    L: float = Field(ge=0.0)
    p: float = math.inf
    eps: Optional[float] = Field(default=None, gt=0.0, lt=1.0)

    @field_validator("p")
    @classmethod
    def _check_p(cls, value):
        if not value > 2.0:
            raise ValueError("p must lie in (2, inf]")
        return value


class ConvexBodyProblem(BaseModel):
    model_config = ConfigDict(frozen=True)

    d: int = Field(ge=1)
    r: float = Field(ge=1.0)
    p: float = math.inf
    eps: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    eps0: Optional[float] = Field(default=None, gt=0.0)

    @field_validator("p")
    @classmethod
    def _check_p(cls, value):
        if not value > 2.0:
            raise ValueError("p must lie in (2, inf]")
        return value


class Plan(BaseModel):
    label: str
    n0: int = Field(ge=0)
    gap_lower: float = Field(ge=0.0)
    delta: Optional[float] = None
    n: Optional[int] = None
    error_bound: Optional[float] = None
    error_lower: Optional[float] = None
    oracle_budget: Optional[float] = None
    complexity: Optional[float] = None
    extras: Dict[str, float] = {}

    @property
    def N(self) -> Optional[int]:
        return None if self.n is None else self.n + self.n0


class NormalsPlan(Plan):
    theta: float
    c_star: float
    beta_hat: float
    density_norm: float


# ---------------------------------------------------------------------------
# Versioned config documents (strict JSON)
# ---------------------------------------------------------------------------

class VersionedDocument(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    version: Literal[1]


class ToyDocument(VersionedDocument):
    kind: Literal["toy"]
    family: Literal["circle", "hypercube", "star"]
    T: Optional[int] = None
    d: Optional[int] = None
    theta: Optional[float] = None

    def to_spec(self) -> ToySpec:
        return ToySpec(family=self.family, T=self.T, d=self.d, theta=self.theta)


class MatrixDocument(VersionedDocument):
    kind: Literal["matrix"]
    path: str
    start_state: int = Field(default=0, ge=0)


class RunDocument(VersionedDocument):
    kind: Literal["run"]
    kernel: KernelConfig
    initial: InitialSpec = Field(default_factory=InitialSpec)
    f: IntegrandSpec
    n: int = Field(ge=1)
    n0: int = Field(default=0, ge=0)
    replications: Optional[int] = Field(default=None, ge=1)
    seed: Optional[int] = Field(default=None, ge=0, lt=2 ** 64)
    true_value: Optional[float] = None

    def to_run_config(self, **overrides) -> RunConfig:
        fields = self.model_dump(exclude={"version", "kind"}, exclude_none=True)
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(**fields)


class LogConcaveDocument(VersionedDocument):
    kind: Literal["logconcave"]
    d: int
    r: float
    L: float
    p: PValue = "inf"
    eps: Optional[float] = None

    def to_problem(self) -> LogConcaveProblem:
        return LogConcaveProblem(d=self.d, r=self.r, L=self.L, p=as_p(self.p), eps=self.eps)


class ConvexBodyDocument(VersionedDocument):
    kind: Literal["convex_body"]
    d: int
    r: float
    p: PValue = "inf"
    eps: Optional[float] = None
    eps0: Optional[float] = None

    def to_problem(self) -> ConvexBodyProblem:
        return ConvexBodyProblem(d=self.d, r=self.r, p=as_p(self.p), eps=self.eps, eps0=self.eps0)


class ContractingNormalsDocument(VersionedDocument):
    kind: Literal["contracting_normals"]
    theta: float = Field(gt=0.0, lt=1.0)
    x0: float = 0.0
    delta_init: float = Field(default=0.1, gt=0.0)
    p: PValue = 2.1
    eps: float = Field(default=0.01, gt=0.0, lt=1.0)


class WorkedExampleDocument(VersionedDocument):
    kind: Literal["worked_example"]
    which: Literal["example1", "example2", "independence_normal"]
    delta: float = Field(default=1e-3, gt=0.0)
    xi: Optional[float] = None
    x0: float = 0.0
    n: Optional[int] = Field(default=None, ge=1)


class BurninTableDocument(VersionedDocument):
    kind: Literal["burnin_table"]
    N_list: List[int] = [100000, 1000000]
    beta_list: List[float] = [0.9, 0.99, 0.999]
    C: float = 1e30
    p: float = 2.1


DOCUMENT_KINDS = {
    "toy": ToyDocument,
    "matrix": MatrixDocument,
    "run": RunDocument,
    "logconcave": LogConcaveDocument,
    "convex_body": ConvexBodyDocument,
    "contracting_normals": ContractingNormalsDocument,
    "worked_example": WorkedExampleDocument,
    "burnin_table": BurninTableDocument,
}
