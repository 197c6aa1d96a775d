"""n-copy typicality experiments for i.i.d. channels.

Single-copy operators act on the output/reference pair B (x) R.  n-copy
operators and states live on (BR)^(x)n with copy i occupying the i-th
tensor slot (B_1 R_1 B_2 R_2 ...); explicit multi-copy channels, whose
Choi matrices naturally carry the blocked layout B^n (x) R^n, are
permuted into that interleaved layout before any contraction.

The central objects are sample-average observables (1/n) sum_i H_i built
from reference-rescaled constraint operators H = (1 (x) s^{-1/2}) C
(1 (x) s^{-1/2}), spectral window projectors onto eigenvalues outside
[q - eta, q + eta], and the tail probabilities they assign to channel
outputs on i.i.d. inputs.  Tails near zero certify that the channel
concentrates the sample mean of the constraint observable at its target
value; the reduction check compares averaged single-copy marginals of an
n-copy channel against a single-copy thermal channel in relative
entropy.
"""

from dataclasses import dataclass, field

import numpy as np

from .channels import QuantumChannel
from .entropy import relative_entropy
from .linalg import (
    assert_hermitian,
    eig_hermitian,
    hermitize,
    partial_trace,
    tensor,
)
from .thermal import ConstraintSet, ThermalSolution, _check_density

__all__ = [
    "DIMENSION_CAP",
    "SampleAverageObservable",
    "WindowProjector",
    "MicrocanonicalParams",
    "IIDChannel",
    "MixtureChannel",
    "scaled_observable",
    "sample_average",
    "window",
    "explicit_iid_channel",
    "tail_probability",
    "reduced_marginal_check",
    "iid_concentration_experiment",
    "ConcentrationTable",
]

# hard cap on materialized n-copy operator dimension (desk scale)
DIMENSION_CAP = 4096

# float ties at a window edge land inside the closed interval
_EDGE_SLACK = 1e-12


def scaled_observable(c, sigma_r, *, floor=0.0):
    """Rescale a BR constraint operator by the reference: (1 (x) s^{-1/2}) C (1 (x) s^{-1/2}).

    The rescaled operator reproduces the constraint expectation on the
    sandwiched output state: tr[H . apply_with_reference(ch, sigma)] =
    tr[C . choi] for every channel.  References with tiny eigenvalues
    blow up the norm of H, so ``floor`` rejects them early.
    """
    c = assert_hermitian(np.asarray(c, dtype=complex), name="constraint operator")
    sigma_r = _check_density(sigma_r, "sigma_R")
    d_r = sigma_r.shape[0]
    if c.shape[0] % d_r:
        raise ValueError(
            f"operator dimension {c.shape[0]} is not a multiple of the "
            f"reference dimension {d_r}")
    d_b = c.shape[0] // d_r
    w, v = np.linalg.eigh(sigma_r)
    w_min = float(w[0])
    if w_min < max(floor, 1e-14):
        raise ValueError(
            f"reference state eigenvalue {w_min:.3e} lies below the "
            f"configured floor y={floor:.3e}; the rescaled observable "
            "would have a diverging norm")
    inv_root = (v * (w ** -0.5)) @ v.conj().T
    big = tensor(np.eye(d_b), inv_root)
    return hermitize(big @ c @ big)


@dataclass(frozen=True)
class SampleAverageObservable:
    """(1/n) sum_i 1^(i-1) (x) base (x) 1^(n-i) on (BR)^(x)n."""

    base: np.ndarray
    copies: int
    operator: np.ndarray


def sample_average(base, n) -> SampleAverageObservable:
    """Materialize the n-copy sample mean of a single-copy observable."""
    base = assert_hermitian(np.asarray(base, dtype=complex),
                            name="sample-average base")
    n = int(n)
    if n < 1:
        raise ValueError("copy count must be at least 1")
    d = base.shape[0]
    if d ** n > DIMENSION_CAP:
        raise ValueError(
            f"n-copy dimension {d}^{n} exceeds the cap {DIMENSION_CAP}")
    total = np.zeros((d ** n, d ** n), dtype=complex)
    for i in range(n):
        term = tensor(np.eye(d ** i), base, np.eye(d ** (n - 1 - i)))
        total += term
    return SampleAverageObservable(base=base, copies=n,
                                   operator=hermitize(total / n))


@dataclass(frozen=True)
class WindowProjector:
    """Projector onto eigenvalues of the observable OUTSIDE [center +- half_width]."""

    observable: SampleAverageObservable
    center: float
    half_width: float
    projector: np.ndarray


def window(obs: SampleAverageObservable, q, eta) -> WindowProjector:
    """Spectral projector onto eigenvalues outside the closed window [q-eta, q+eta]."""
    q = float(q)
    eta = float(eta)
    if eta <= 0:
        raise ValueError("window half-width eta must be positive")
    spec = eig_hermitian(obs.operator)
    outside = np.abs(spec.eigenvalues - q) > eta + _EDGE_SLACK
    cols = spec.eigenvectors[:, outside]
    proj = hermitize(cols @ cols.conj().T)
    return WindowProjector(observable=obs, center=q, half_width=eta,
                           projector=proj)


# ---------------------------------------------------------------------------
# n-copy channel descriptors
# ---------------------------------------------------------------------------

def _copy_perm(n):
    """Axis order carrying b_1..b_n r_1..r_n into b_1 r_1 b_2 r_2 ..."""
    perm = []
    for i in range(n):
        perm.extend([i, n + i])
    return perm


def _interleaved_from_blocked(op, d_b, d_r, n):
    """Re-sort a B^n (x) R^n operator into the (B R)^(x)n tensor layout."""
    dims = [d_b] * n + [d_r] * n
    perm = _copy_perm(n)
    arr = op.reshape(dims + dims)
    arr = arr.transpose(perm + [2 * n + p for p in perm])
    full = d_b ** n * d_r ** n
    return np.ascontiguousarray(arr.reshape(full, full))


def _blocked_from_interleaved(op, d_b, d_r, n):
    """Inverse of `_interleaved_from_blocked`."""
    dims = []
    for _ in range(n):
        dims.extend([d_b, d_r])
    perm = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
    arr = op.reshape(dims + dims)
    arr = arr.transpose(perm + [2 * n + p for p in perm])
    full = d_b ** n * d_r ** n
    return np.ascontiguousarray(arr.reshape(full, full))


def _kron_power(m, n):
    out = np.array([[1.0 + 0j]])
    for _ in range(n):
        out = np.kron(out, m)
    return out


@dataclass(frozen=True)
class IIDChannel:
    """n independent copies of one channel, kept in factorized form."""

    base: QuantumChannel
    copies: int

    def __post_init__(self):
        if int(self.copies) < 1:
            raise ValueError("copy count must be at least 1")

    @property
    def dims(self):
        return self.base.d_out, self.base.d_in

    def sandwiched_state(self, sigma_r):
        """Output-reference state on (BR)^(x)n for the input sigma^(x)n."""
        tau = self.base.apply_with_reference(sigma_r)
        return _kron_power(tau, self.copies)

    def averaged_marginal(self, phi_r):
        """Mean single-copy BR marginal of the sandwiched n-copy output."""
        return self.base.apply_with_reference(phi_r)


@dataclass(frozen=True)
class MixtureChannel:
    """Convex combination of n-copy channel descriptors."""

    components: tuple = field(default=())

    def __post_init__(self):
        comps = tuple((float(w), ch) for w, ch in self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        weights = np.array([w for w, _ in comps])
        if np.any(weights < -1e-12) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        copies = {ch.copies for _, ch in comps}
        if len(copies) != 1:
            raise ValueError("all mixture components must share the copy count")
        object.__setattr__(self, "components", comps)

    @property
    def copies(self):
        return self.components[0][1].copies

    @property
    def dims(self):
        return self.components[0][1].dims

    def sandwiched_state(self, sigma_r):
        return sum(w * ch.sandwiched_state(sigma_r)
                   for w, ch in self.components)

    def averaged_marginal(self, phi_r):
        return sum(w * ch.averaged_marginal(phi_r)
                   for w, ch in self.components)


def explicit_iid_channel(ch: QuantumChannel, n) -> QuantumChannel:
    """Materialize ch^(x)n as one channel on A^n -> B^n (blocked Choi layout)."""
    n = int(n)
    d_b, d_r = ch.d_out, ch.d_in
    if (d_b * d_r) ** n > DIMENSION_CAP:
        raise ValueError(
            f"n-copy dimension ({d_b * d_r})^{n} exceeds the cap {DIMENSION_CAP}")
    interleaved = _kron_power(ch.choi, n)
    blocked = _blocked_from_interleaved(interleaved, d_b, d_r, n)
    return QuantumChannel(blocked, d_in=d_r ** n, d_out=d_b ** n)


def _n_copy_sandwiched_state(ch_n, sigma_r, n, d_b, d_r):
    """Interleaved (BR)^(x)n output state for the i.i.d. input sigma^(x)n."""
    if isinstance(ch_n, (IIDChannel, MixtureChannel)):
        if ch_n.copies != n:
            raise ValueError(
                f"channel holds {ch_n.copies} copies, expected {n}")
        if ch_n.dims != (d_b, d_r):
            raise ValueError(
                f"channel copy dimensions {ch_n.dims} mismatch ({d_b}, {d_r})")
        return ch_n.sandwiched_state(sigma_r)
    if isinstance(ch_n, QuantumChannel):
        if (ch_n.d_in, ch_n.d_out) != (d_r ** n, d_b ** n):
            raise ValueError(
                f"explicit channel acts on {ch_n.d_in}->{ch_n.d_out}, "
                f"expected {d_r ** n}->{d_b ** n}")
        blocked = ch_n.apply_with_reference(_kron_power(sigma_r, n))
        return _interleaved_from_blocked(blocked, d_b, d_r, n)
    raise TypeError(f"unsupported n-copy channel type {type(ch_n).__name__}")


def tail_probability(ch_n, sigma_r, wp: WindowProjector):
    """Weight the channel output places outside the observable's window.

    Computes tr[wp . ch_n(sigma^(x)n-sandwiched input)] for the sample-
    average observable the window was built from.
    """
    sigma_r = _check_density(sigma_r, "sigma_R")
    n = wp.observable.copies
    d_br = wp.observable.base.shape[0]
    d_r = sigma_r.shape[0]
    if d_br % d_r:
        raise ValueError(
            f"observable dimension {d_br} is not a multiple of the "
            f"reference dimension {d_r}")
    d_b = d_br // d_r
    state = _n_copy_sandwiched_state(ch_n, sigma_r, n, d_b, d_r)
    val = float(np.real(np.trace(wp.projector @ state)))
    if val < -1e-10 or val > 1 + 1e-10:
        raise ArithmeticError(f"tail probability {val} escapes [0, 1]")
    return min(max(val, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Reduction to a single copy
# ---------------------------------------------------------------------------

def reduced_marginal_check(ch_n, phi_r, n, th: ThermalSolution):
    """Relative entropy of the averaged single-copy marginal to the thermal output.

    Builds w_BR = (1/n) sum_i tr_{all copies but i}[ch_n(phi^(x)n)] and
    returns D(w_BR || T(phi_AR)) for the thermal channel in ``th``;
    support failures report +inf.
    """
    phi_r = _check_density(phi_r, "phi_R")
    n = int(n)
    d_b, d_r = th.channel.d_out, th.channel.d_in
    if isinstance(ch_n, (IIDChannel, MixtureChannel)):
        if ch_n.copies != n:
            raise ValueError(f"channel holds {ch_n.copies} copies, expected {n}")
        omega = ch_n.averaged_marginal(phi_r)
    else:
        state = _n_copy_sandwiched_state(ch_n, phi_r, n, d_b, d_r)
        d = d_b * d_r
        omega = np.zeros((d, d), dtype=complex)
        for i in range(n):
            omega += partial_trace(state, [d] * n, keep=[i])
        omega = hermitize(omega / n)
    target = th.channel.apply_with_reference(phi_r)
    return relative_entropy(omega, target)


# ---------------------------------------------------------------------------
# Parameters and the concentration experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MicrocanonicalParams:
    """Window and floor parameters for n-copy typicality statements.

    eta is the spectral window half-width, y the eigenvalue floor imposed
    on reference states, nu the slack factor appearing in the floor
    comparisons, n the copy count.  Primed variants and the tolerance
    levels epsilon/delta_prime are optional; `preset` fills them from the
    asymptotic schedule eta = c_min n^{-gamma}, y ~ n^{-gamma} rescaled
    to respect y < 1/(nu d_R) at every n >= 1.
    """

    eta: float
    y: float
    nu: float
    n: int
    d_r: int = 2
    eta_prime: float = None
    y_prime: float = None
    nu_prime: float = None
    epsilon: float = None
    delta_prime: float = None

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("window half-width eta must be positive")
        if not 0 < self.y < 1.0 / (self.nu * self.d_r):
            raise ValueError(
                f"floor y={self.y} must lie in (0, 1/(nu d_R)) = "
                f"(0, {1.0 / (self.nu * self.d_r):.6g})")
        if int(self.n) < 1:
            raise ValueError("copy count must be at least 1")
        if self.eta_prime is not None and self.eta_prime <= 0:
            raise ValueError("eta_prime must be positive when given")
        if self.y_prime is not None:
            nu_p = self.nu_prime if self.nu_prime is not None else self.nu
            if not 0 < self.y_prime < 1.0 / (nu_p * self.d_r):
                raise ValueError("y_prime must lie in (0, 1/(nu' d_R))")

    @classmethod
    def preset(cls, n, c_min, *, d_r=2, gamma=0.05, nu=1.5):
        """Desk-scale instance of the asymptotic parameter schedule.

        Exponents follow the published regime (gamma = beta_1 = beta_2,
        0 < gamma < 1/16, eta = c_min n^{-gamma}, eta' = eta/2, nu = nu'
        = 3/2); the floors y = y' = n^{-gamma}/(2 nu d_R) carry the same
        power of n but are rescaled so the invariant y < 1/(nu d_R)
        holds for every n >= 1 rather than only asymptotically.
        """
        n = int(n)
        if not 0 < gamma < 1.0 / 16.0:
            raise ValueError("gamma must lie in (0, 1/16)")
        if c_min <= 0:
            raise ValueError("c_min must be positive")
        y = float(n) ** (-gamma) / (2.0 * nu * d_r)
        eta = float(c_min) * float(n) ** (-gamma)
        return cls(
            eta=eta, y=y, nu=nu, n=n, d_r=d_r,
            eta_prime=eta / 2.0, y_prime=y, nu_prime=nu,
            epsilon=float(np.exp(-float(n) ** (1.0 - 17.0 * gamma))),
            delta_prime=float(np.exp(-float(n) ** (1.0 - 5.0 * gamma))),
        )


@dataclass(frozen=True)
class ConcentrationTable:
    """Rows of the i.i.d. concentration experiment, in deterministic grid order."""

    columns: tuple
    rows: tuple

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("# format=1\n")
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                cells = []
                for name, val in zip(self.columns, row):
                    if name in ("j", "sigma_id", "n"):
                        cells.append(str(int(val)))
                    elif isinstance(val, float) and np.isnan(val):
                        cells.append("nan")
                    else:
                        cells.append(format(float(val), ".12g"))
                fh.write(",".join(cells) + "\n")

    def by_group(self):
        """Rows grouped by (constraint index, reference index)."""
        groups = {}
        for row in self.rows:
            groups.setdefault((int(row[0]), int(row[1])), []).append(row)
        return groups


def iid_concentration_experiment(th: ThermalSolution, cs: ConstraintSet,
                                 sigmas, n_range,
                                 params: MicrocanonicalParams) -> ConcentrationTable:
    """Tail probabilities of T^(x)n across constraints, references, and n.

    For every constraint (index j), reference state (index sigma_id), and
    copy count n, the window of half-width params.eta around the
    constraint target is tested on the i.i.d. thermal channel; the same
    eta and floor y apply to every n so the decay of the tails isolates
    the concentration effect.  Each (j, sigma) group gets a least-squares
    slope of log(tail) against n over the strictly positive tails; if the
    tail at the smallest n exceeds 1e-14 the slope must be negative.
    """
    sigmas = [(k, _check_density(s, f"sigma[{k}]")) for k, s in enumerate(sigmas)]
    n_list = sorted(int(n) for n in n_range)
    if not n_list:
        raise ValueError("n_range must contain at least one copy count")
    sol_residuals = cs.check(th.channel)
    worst = float(np.max(np.abs(sol_residuals))) if len(cs) else 0.0
    if worst > 1e-6:
        raise ValueError(
            f"thermal channel violates its constraints (residual {worst:.3e})")

    columns = ("j", "sigma_id", "n", "eta", "y", "tail", "fitted_slope")
    rows = []
    for j, (c_op, q_j) in enumerate(zip(cs.operators, cs.values)):
        for sigma_id, sigma in sigmas:
            group = []
            for n in n_list:
                h = scaled_observable(c_op, sigma, floor=params.y)
                obs = sample_average(h, n)
                wp = window(obs, q_j, params.eta)
                tail = tail_probability(IIDChannel(th.channel, n), sigma, wp)
                group.append([j, sigma_id, n, params.eta, params.y, tail])
            tails = np.array([g[-1] for g in group])
            positive = tails > 0.0
            if positive.sum() >= 2:
                slope = float(np.polyfit(np.array(n_list, dtype=float)[positive],
                                         np.log(tails[positive]), 1)[0])
            else:
                slope = float("nan")
            if tails[0] > 1e-14 and not slope < 0.0:
                raise ArithmeticError(
                    f"constraint {j}, reference {sigma_id}: fitted log-tail "
                    f"slope {slope} is not negative")
            for g in group:
                rows.append(tuple(g + [slope]))
    return ConcentrationTable(columns=columns, rows=tuple(rows))
