"""Agent model (A, B, C): validation and the imaginary-axis frequency bound."""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput

#: relative threshold for deciding an eigenvalue sits on the imaginary axis
AXIS_RTOL = 1e-8
#: smallest accepted sigma_min / sigma_max in PBH rank tests
RANK_RTOL = 1e-8
#: ratios within this factor of RANK_RTOL are reported as ambiguous
AMBIGUITY_FACTOR = 100.0
#: eigenvectors this aligned are treated as one defective eigenvalue
PARALLEL_COS = 0.999


def _as_matrix(M, name):
    M = np.array(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(-1, 1) if name == "B" else M.reshape(1, -1)
    if M.ndim != 2:
        raise InvalidInput(f"{name} must be a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return M


@dataclass(frozen=True)
class AgentModel:
    """Identical agent dynamics; the exosystem reuses ``A`` and ``C``.

    A 1-D ``B`` is read as a column and a 1-D ``C`` as a row.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    n: int = field(init=False)
    m: int = field(init=False)
    q: int = field(init=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        n = A.shape[0]
        if A.shape != (n, n):
            raise InvalidInput(f"A must be square, got shape {A.shape}")
        if B.shape[0] != n:
            raise InvalidInput(f"B must have {n} rows, got shape {B.shape}")
        if C.shape[1] != n:
            raise InvalidInput(f"C must have {n} columns, got shape {C.shape}")
        for name, M in (("A", A), ("B", B), ("C", C)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", B.shape[1])
        object.__setattr__(self, "q", C.shape[0])

    @property
    def full_state(self):
        """True when the output is the whole state (C = I)."""
        return self.q == self.n and np.array_equal(self.C, np.eye(self.n))


@dataclass
class ValidationReport:
    stabilizable: bool
    detectable: bool
    closed_left_half_plane: bool
    warnings: list = field(default_factory=list)

    @property
    def ok(self):
        return self.stabilizable and self.detectable and self.closed_left_half_plane

    def failures(self):
        out = []
        if not self.stabilizable:
            out.append("(A, B) is not stabilizable")
        if not self.detectable:
            out.append("(C, A) is not detectable")
        if not self.closed_left_half_plane:
            out.append("A has an eigenvalue in the open right half plane")
        return out


def _axis_tol(A):
    return AXIS_RTOL * (1.0 + np.linalg.norm(A, 2))


def eigen_clusters(A):
    """Group eigenvalues of ``A`` that a rounding perturbation may have split.

    A defective eigenvalue of multiplicity k is returned by LAPACK as k values
    scattered on a circle of radius ~ eps**(1/k) around the true value, while
    their mean stays accurate to ~eps. Such a split also leaves the computed
    eigenvectors nearly parallel, so two eigenvalues are merged only when
    they are close AND their eigenvectors align; distinct eigenvalues are
    computed accurately and stay apart. Returns (center, multiplicity) pairs.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 0:
        return []
    lam, V = np.linalg.eig(A)
    V = V / np.linalg.norm(V, axis=0)
    radius = max(1e-6, 1e-13 ** (1.0 / n)) * (1.0 + np.linalg.norm(A, 2))
    # single-linkage grouping
    labels = list(range(n))

    def find(i):
        while labels[i] != i:
            labels[i] = labels[labels[i]]
            i = labels[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(lam[i] - lam[j]) <= radius and abs(np.vdot(V[:, i], V[:, j])) > PARALLEL_COS:
                labels[find(i)] = find(j)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(lam[i])
    return [(complex(np.mean(g)), len(g)) for g in groups.values()]


def _classify(A):
    tol = _axis_tol(A)
    stable, axis, unstable = [], [], []
    for center, mult in eigen_clusters(A):
        if center.real < -tol:
            stable.append(center)
        elif center.real <= tol:
            axis.append(complex(0.0, center.imag))
        else:
            unstable.append(center)
    return stable, axis, unstable


def _pbh_ratio(M):
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0.0
    return s[-1] / s[0]


def _pbh(A, B, lams, warnings, label):
    """True if [A - lam I, B] has full row rank for every lam in ``lams``."""
    n = A.shape[0]
    ok = True
    for lam in lams:
        ratio = _pbh_ratio(np.hstack([A - lam * np.eye(n), B]))
        if ratio < RANK_RTOL:
            ok = False
        if RANK_RTOL / AMBIGUITY_FACTOR <= ratio < RANK_RTOL * AMBIGUITY_FACTOR:
            warnings.append(
                f"{label} rank test at eigenvalue {lam:.6g} is numerically ambiguous "
                f"(sigma ratio {ratio:.3e} near threshold {RANK_RTOL:.0e})"
            )
    return ok


def validate(model):
    """Check the standing assumptions on an :class:`AgentModel`.

    Runs PBH stabilizability of (A, B) and detectability of (C, A) at every
    eigenvalue with nonnegative real part, and checks that A has no
    eigenvalue in the open right half plane. Rank decisions close to the
    threshold are listed in ``report.warnings`` rather than silently passed.
    """
    if not isinstance(model, AgentModel):
        raise InvalidInput("validate expects an AgentModel")
    A, B, C = model.A, model.B, model.C
    _, axis, unstable = _classify(A)
    critical = axis + unstable
    warnings = []
    stab = _pbh(A, B, critical, warnings, "stabilizability")
    det = _pbh(A.T, C.T, [np.conj(l) for l in critical], warnings, "detectability")
    return ValidationReport(
        stabilizable=stab,
        detectable=det,
        closed_left_half_plane=not unstable,
        warnings=warnings,
    )


def omega_max(A):
    """Largest frequency at which ``j*omega`` is an eigenvalue of ``A``.

    Returns 0 for Hurwitz ``A``. Raises :class:`InvalidInput` if ``A`` has an
    eigenvalue with real part above the axis tolerance.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInput(f"A must be square, got shape {A.shape}")
    _, axis, unstable = _classify(A)
    if unstable:
        raise InvalidInput(
            f"A has eigenvalue(s) {unstable} in the open right half plane"
        )
    if not axis:
        return 0.0
    return float(max(abs(l.imag) for l in axis))
