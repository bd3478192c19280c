"""Eigenbases of the forward-process generator.

Two families are supported:

* Hermite functions ``phi_n = He_n / sqrt(n!)`` for the Ornstein-Uhlenbeck
  process on R^d (univariate in each coordinate), with eigenvalue ``-n``.
* Trigonometric functions ``sqrt(2) cos(xi.x)`` / ``sqrt(2) sin(xi.x)`` for
  Brownian motion wrapped onto the torus [-pi, pi]^d, with eigenvalue
  ``-|xi|^2``.

Bases carry an *extended* list, a superset large enough that any product of
two basis members expands exactly; the expansion coefficients are cached in a
:class:`ProductTable`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import CapacityError, InvalidInputError

SQRT2 = math.sqrt(2.0)

OU = "OU"
TRUNCATED_BM = "truncatedBM"

KIND_CONSTANT = "constant"
KIND_HERMITE = "hermite"
KIND_COS = "trig-cos"
KIND_SIN = "trig-sin"


@dataclass(frozen=True)
class EigenFunction:
    """One eigenfunction: a multi-index, its family, and its eigenvalue."""

    index: tuple
    kind: str
    eigenvalue: float

    @property
    def dimension(self):
        return len(self.index)


# ---------------------------------------------------------------------------
# Hermite recurrences
# ---------------------------------------------------------------------------

def hermite_eval(max_order, x):
    """Normalized probabilist Hermite values phi_0(x) .. phi_max_order(x).

    Uses the three-term recurrence
    ``phi_{l+1} = (x phi_l - sqrt(l) phi_{l-1}) / sqrt(l+1)``
    so no monomial coefficients are ever formed. `x` may be a scalar or an
    ndarray; the order axis is appended last.
    """
    if max_order < 0:
        raise InvalidInputError("max_order must be >= 0")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("hermite_eval requires finite x")
    out = np.empty(x.shape + (max_order + 1,))
    out[..., 0] = 1.0
    if max_order >= 1:
        out[..., 1] = x
    for l in range(1, max_order):
        out[..., l + 1] = (x * out[..., l] - math.sqrt(l) * out[..., l - 1]) / math.sqrt(l + 1)
    return out


def hermite_grad(max_order, x):
    """Derivatives phi_n'(x) = sqrt(n) phi_{n-1}(x) for n = 0..max_order."""
    vals = hermite_eval(max_order, x)
    out = np.zeros_like(vals)
    if max_order >= 1:
        n = np.arange(1, max_order + 1, dtype=float)
        out[..., 1:] = np.sqrt(n) * vals[..., :-1]
    return out


def hermite_laplacian_1d(max_order, x):
    """Second derivatives phi_n''(x) = sqrt(n(n-1)) phi_{n-2}(x)."""
    vals = hermite_eval(max_order, x)
    out = np.zeros_like(vals)
    if max_order >= 2:
        n = np.arange(2, max_order + 1, dtype=float)
        out[..., 2:] = np.sqrt(n * (n - 1)) * vals[..., :-2]
    return out


def hermite_order_expansion(basis_max, extended_max):
    """Expansion coefficients of phi_k * phi_l over orders 0..extended_max.

    Returns an array ``B`` with ``B[k, l, h] = beta_h^{(k, l)}`` for
    ``k, l <= basis_max``, built by the order-raising dynamic program
    ``beta^{(k, l+1)} = sqrt((k+1)/(l+1)) beta^{(k+1, l)}
    + sqrt(k/(l+1)) beta^{(k-1, l)} - sqrt(l/(l+1)) beta^{(k, l-1)}``
    started from the one-hot vectors ``beta^{(k, 0)}``.
    """
    if extended_max < 2 * basis_max:
        raise CapacityError(
            f"extended_max={extended_max} cannot hold products of order "
            f"{basis_max} functions; need at least {2 * basis_max}"
        )
    n_ext = extended_max + 1
    # levels[l] holds beta^{(k, l)} for k = 0..(2*basis_max - l)
    prev2 = None
    prev = np.eye(2 * basis_max + 1, n_ext)
    levels = [prev]
    for l in range(basis_max):
        kmax = 2 * basis_max - (l + 1)
        cur = np.zeros((kmax + 1, n_ext))
        k = np.arange(kmax + 1, dtype=float)[:, None]
        cur += np.sqrt((k + 1.0) / (l + 1.0)) * prev[1 : kmax + 2]
        cur[1:] += np.sqrt(k[1:] / (l + 1.0)) * prev[0:kmax]
        if l >= 1:
            cur -= math.sqrt(l / (l + 1.0)) * prev2[: kmax + 1]
        prev2, prev = prev, cur
        levels.append(cur)
    B = np.zeros((basis_max + 1, basis_max + 1, n_ext))
    for l in range(basis_max + 1):
        B[:, l, :] = levels[l][: basis_max + 1]
    return B


# ---------------------------------------------------------------------------
# Product tables
# ---------------------------------------------------------------------------

@dataclass
class ProductTable:
    """Sparse expansion of pairwise products back into the extended basis.

    ``entries`` maps an index pair ``(k, l)`` with ``k <= l`` to
    ``(h_indices, coefficients)`` such that
    ``phi_k(x) phi_l(x) = sum_h coef_h phi_h(x)`` over the extended basis.
    Pairs in ``gamma_zero`` act on disjoint coordinates: their carre-du-champ
    vanishes identically and no expansion is stored.
    """

    entries: dict
    n_basis: int
    n_extended: int
    gamma_zero: frozenset = frozenset()

    def is_gamma_zero(self, k, l):
        return (min(k, l), max(k, l)) in self.gamma_zero

    def get(self, k, l):
        key = (min(k, l), max(k, l))
        try:
            return self.entries[key]
        except KeyError:
            raise CapacityError(f"no product expansion stored for pair {key}") from None


def hermite_product_table(basis_max, extended_max):
    """ProductTable over Hermite orders 0..basis_max in one coordinate."""
    B = hermite_order_expansion(basis_max, extended_max)
    entries = {}
    for k in range(basis_max + 1):
        for l in range(k, basis_max + 1):
            vec = B[k, l]
            h = np.nonzero(np.abs(vec) > 1e-14 * max(1.0, np.abs(vec).max()))[0]
            entries[(k, l)] = (h, vec[h].copy())
    return ProductTable(entries=entries, n_basis=basis_max + 1, n_extended=extended_max + 1)


def _canonical_freq(xi):
    """Map a frequency vector to half-lattice canonical form.

    Returns ``(canonical_tuple, sign)`` where ``sign`` is -1 when the vector
    was negated (which flips the sign of the sine variant).
    """
    for c in xi:
        if c > 0:
            return tuple(xi), 1
        if c < 0:
            return tuple(-c_ for c_ in xi), -1
    return tuple(xi), 1


def _trig_fn(freq, kind):
    lam = -float(sum(c * c for c in freq))
    return EigenFunction(index=tuple(freq), kind=kind, eigenvalue=lam)


def constant_function(dimension):
    return EigenFunction(index=(0,) * dimension, kind=KIND_CONSTANT, eigenvalue=0.0)


def trig_product(a, b):
    """Expand the product of two (sqrt2-normalized) trig eigenfunctions.

    Product-to-sum identities give at most two terms; frequencies are
    canonicalized into the half lattice, with sign flips absorbed for sines.
    """
    for f in (a, b):
        if f.kind not in (KIND_CONSTANT, KIND_COS, KIND_SIN):
            raise InvalidInputError(f"trig_product got a non-trig function: {f.kind}")
    if a.dimension != b.dimension:
        raise InvalidInputError("trig_product requires matching dimensions")
    if a.kind == KIND_CONSTANT:
        return [(b, 1.0)]
    if b.kind == KIND_CONSTANT:
        return [(a, 1.0)]

    fa = np.array(a.index, dtype=int)
    fb = np.array(b.index, dtype=int)
    # raw terms as (frequency, "cos"/"sin", coefficient) of the *unnormalized*
    # expansion of 2 * trig(A) * trig(B)
    if a.kind == KIND_COS and b.kind == KIND_COS:
        raw = [(fa - fb, KIND_COS, 1.0), (fa + fb, KIND_COS, 1.0)]
    elif a.kind == KIND_SIN and b.kind == KIND_SIN:
        raw = [(fa - fb, KIND_COS, 1.0), (fa + fb, KIND_COS, -1.0)]
    else:
        if a.kind == KIND_SIN:
            s, c = fa, fb
        else:
            s, c = fb, fa
        raw = [(s + c, KIND_SIN, 1.0), (s - c, KIND_SIN, 1.0)]

    out = []
    for freq, kind, coef in raw:
        if not freq.any():
            if kind == KIND_COS:
                out.append((constant_function(a.dimension), coef))
            continue  # sin(0) == 0
        canon, sign = _canonical_freq(freq)
        if kind == KIND_SIN:
            coef *= sign
        out.append((_trig_fn(canon, kind), coef / SQRT2))
    return out


# ---------------------------------------------------------------------------
# EigenBasis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenBasis:
    """Ordered eigenfunctions plus the extended superset closing products."""

    process: str
    dimension: int
    functions: tuple
    extended: tuple
    descriptor: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        keys = [(f.kind, f.index) for f in self.functions]
        if len(set(keys)) != len(keys):
            raise InvalidInputError("duplicate eigenfunctions in basis")

    @property
    def n_active(self):
        """Number of non-constant basis functions (the solve dimension)."""
        return len(self.functions) - 1

    @cached_property
    def eigenvalues(self):
        return np.array([f.eigenvalue for f in self.functions])

    @cached_property
    def extended_eigenvalues(self):
        return np.array([f.eigenvalue for f in self.extended])

    @cached_property
    def _ext_lookup(self):
        return {(f.kind, f.index): h for h, f in enumerate(self.extended)}

    def extended_index(self, fn):
        try:
            return self._ext_lookup[(fn.kind, fn.index)]
        except KeyError:
            raise CapacityError(
                f"extended basis does not contain {fn.kind} {fn.index}"
            ) from None

    @cached_property
    def basis_to_extended(self):
        return np.array([self.extended_index(f) for f in self.functions])

    # -- evaluation plans ---------------------------------------------------

    def _trig_plan(self, funcs):
        # Unique frequency rows; each function points at one row + sin flag.
        rows, row_of = [], {}
        urow = np.zeros(len(funcs), dtype=int)
        is_sin = np.zeros(len(funcs), dtype=bool)
        is_const = np.zeros(len(funcs), dtype=bool)
        for j, f in enumerate(funcs):
            if f.kind == KIND_CONSTANT:
                is_const[j] = True
                continue
            if f.index not in row_of:
                row_of[f.index] = len(rows)
                rows.append(f.index)
            urow[j] = row_of[f.index]
            is_sin[j] = f.kind == KIND_SIN
        U = np.array(rows, dtype=float).reshape(len(rows), self.dimension)
        lam = np.array([f.eigenvalue for f in funcs])
        return U, urow, is_sin, is_const, lam

    @cached_property
    def _plan_functions(self):
        return self._build_plan(self.functions)

    @cached_property
    def _plan_extended(self):
        return self._build_plan(self.extended)

    def _build_plan(self, funcs):
        if self.process == TRUNCATED_BM:
            return ("trig",) + self._trig_plan(funcs)
        dims = np.zeros(len(funcs), dtype=int)
        orders = np.zeros(len(funcs), dtype=int)
        for j, f in enumerate(funcs):
            if f.kind == KIND_CONSTANT:
                continue
            nz = [i for i, c in enumerate(f.index) if c != 0]
            dims[j] = nz[0]
            orders[j] = f.index[nz[0]]
        return ("hermite", dims, orders, int(orders.max(initial=0)))

    # -- evaluation ---------------------------------------------------------

    def eval_batch(self, X, extended=False):
        """Values, gradients and Laplacians at points X (N x d).

        Returns ``(values (N,n), gradients (N,d,n), laplacians (N,n))`` over
        ``functions`` (or ``extended``).
        """
        X = self._check_points(X)
        funcs = self.extended if extended else self.functions
        plan = self._plan_extended if extended else self._plan_functions
        N, n = X.shape[0], len(funcs)
        if plan[0] == "trig":
            _, U, urow, is_sin, is_const, lam = plan
            P = X @ U.T
            C, S = np.cos(P), np.sin(P)
            vals = SQRT2 * np.where(is_sin, S[:, urow], C[:, urow])
            dfac = SQRT2 * np.where(is_sin, C[:, urow], -S[:, urow])
            grads = dfac[:, None, :] * U.T[None, :, urow]
            vals[:, is_const] = 1.0
            grads[:, :, is_const] = 0.0
            laps = lam * vals
            return vals, grads, laps
        _, dims, orders, max_order = plan
        H = hermite_eval(max_order, X)  # (N, d, max_order+1)
        vals = np.ones((N, n))
        grads = np.zeros((N, self.dimension, n))
        laps = np.zeros((N, n))
        for j, f in enumerate(funcs):
            if f.kind == KIND_CONSTANT:
                continue
            i, k = dims[j], orders[j]
            vals[:, j] = H[:, i, k]
            grads[:, i, j] = math.sqrt(k) * H[:, i, k - 1]
            if k >= 2:
                laps[:, j] = math.sqrt(k * (k - 1)) * H[:, i, k - 2]
        return vals, grads, laps

    def eval_values(self, X, extended=False):
        """Values only (used for moment estimation over the extended set)."""
        X = self._check_points(X)
        funcs = self.extended if extended else self.functions
        plan = self._plan_extended if extended else self._plan_functions
        if plan[0] == "trig":
            _, U, urow, is_sin, is_const, _ = plan
            P = X @ U.T
            C, S = np.cos(P), np.sin(P)
            vals = SQRT2 * np.where(is_sin, S[:, urow], C[:, urow])
            vals[:, is_const] = 1.0
            return vals
        _, dims, orders, max_order = plan
        H = hermite_eval(max_order, X)
        vals = np.ones((X.shape[0], len(funcs)))
        active = np.nonzero(orders > 0)[0]
        vals[:, active] = H[:, dims[active], orders[active]]
        return vals

    def weighted_eval(self, X, alpha, dtype=None):
        """Energy, score and Laplacian of ``f = sum_k alpha_k phi_k``.

        ``alpha`` runs over the active (non-constant) basis functions.
        Returns ``(energy (N,), score (N,d), laplacian (N,))`` without
        materializing the full gradient tensor. With ``dtype=np.float32``
        the trig transcendentals run in single precision (SIMD, roughly an
        order of magnitude faster) — appropriate inside ODE integration
        where tolerances dwarf the ~1e-6 evaluation error.
        """
        X = self._check_points(X)
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (self.n_active,):
            raise InvalidInputError(
                f"alpha has length {alpha.shape}, expected ({self.n_active},)"
            )
        plan = self._plan_functions
        if plan[0] == "trig":
            _, U, urow, is_sin, _, lam = plan
            a_cos = np.zeros(U.shape[0])
            a_sin = np.zeros(U.shape[0])
            l_cos = np.zeros(U.shape[0])
            l_sin = np.zeros(U.shape[0])
            for j in range(1, len(self.functions)):
                a, lj, r = alpha[j - 1], lam[j], urow[j]
                if is_sin[j]:
                    a_sin[r] += a
                    l_sin[r] += a * lj
                else:
                    a_cos[r] += a
                    l_cos[r] += a * lj
            if dtype is not None and np.dtype(dtype) == np.float32:
                P = (X @ U.T).astype(np.float32)
                C, S = np.cos(P), np.sin(P)
                a_cos, a_sin = a_cos.astype(np.float32), a_sin.astype(np.float32)
                l_cos, l_sin = l_cos.astype(np.float32), l_sin.astype(np.float32)
                Uw = U.astype(np.float32)
            else:
                P = X @ U.T
                C, S = np.cos(P), np.sin(P)
                Uw = U
            energy = SQRT2 * (C @ a_cos + S @ a_sin)
            score = SQRT2 * ((C * a_sin - S * a_cos) @ Uw)
            lap = SQRT2 * (C @ l_cos + S @ l_sin)
            return (energy.astype(float), score.astype(float), lap.astype(float))
        _, dims, orders, max_order = plan
        H = hermite_eval(max_order, X)
        N = X.shape[0]
        energy = np.zeros(N)
        score = np.zeros((N, self.dimension))
        lap = np.zeros(N)
        for j in range(1, len(self.functions)):
            a, i, k = alpha[j - 1], dims[j], orders[j]
            energy += a * H[:, i, k]
            score[:, i] += a * math.sqrt(k) * H[:, i, k - 1]
            if k >= 2:
                lap += a * math.sqrt(k * (k - 1)) * H[:, i, k - 2]
        return energy, score, lap

    def _check_points(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[-1] != self.dimension:
            raise InvalidInputError(
                f"points have dimension {X.shape[-1]}, basis expects {self.dimension}"
            )
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("evaluation points must be finite")
        return X


def basis_eval(basis, x):
    """Values, per-coordinate gradients, and Laplacians at one point."""
    vals, grads, laps = basis.eval_batch(np.atleast_2d(np.asarray(x, dtype=float)))
    return vals[0], grads[0], laps[0]


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _trig_1d_functions(max_frequency):
    funcs = [constant_function(1)]
    for k in range(1, max_frequency + 1):
        funcs.append(_trig_fn((k,), KIND_COS))
        funcs.append(_trig_fn((k,), KIND_SIN))
    return tuple(funcs)


def trig_basis_1d(max_frequency):
    """Torus basis {1, sqrt2 cos(kx), sqrt2 sin(kx) : k <= max_frequency}."""
    if max_frequency < 1:
        raise InvalidInputError("max_frequency must be >= 1")
    return EigenBasis(
        process=TRUNCATED_BM,
        dimension=1,
        functions=_trig_1d_functions(max_frequency),
        extended=_trig_1d_functions(2 * max_frequency),
        descriptor={"family": "trig_1d", "max_frequency": max_frequency},
    )


def _half_lattice(d, norm_sq_max):
    """Canonical half-lattice frequencies with |xi|^2 <= norm_sq_max.

    The first nonzero coordinate is positive, removing the cos(x) = cos(-x)
    redundancy; sorted by |xi|^2 then lexicographically.
    """
    r = int(math.isqrt(int(norm_sq_max)))
    grids = np.meshgrid(*([np.arange(-r, r + 1)] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    nsq = (pts * pts).sum(axis=1)
    pts = pts[(nsq > 0) & (nsq <= norm_sq_max)]
    keep = []
    for row in pts:
        nz = row[row != 0]
        if nz[0] > 0:
            keep.append(tuple(int(c) for c in row))
    keep.sort(key=lambda t: (sum(c * c for c in t), t))
    return keep


def _trig_nd_functions(d, norm_sq_max):
    funcs = [constant_function(d)]
    for xi in _half_lattice(d, norm_sq_max):
        funcs.append(_trig_fn(xi, KIND_COS))
        funcs.append(_trig_fn(xi, KIND_SIN))
    return tuple(funcs)


def trig_basis_nd(d, eigenvalue_floor):
    """Torus basis in d dimensions keeping eigenvalues >= eigenvalue_floor.

    The extended set uses four times the floor so that sum and difference
    frequencies of any two basis members are covered.
    """
    if d < 1:
        raise InvalidInputError("d must be >= 1")
    if eigenvalue_floor >= 0:
        raise InvalidInputError("eigenvalue_floor must be negative")
    k = abs(float(eigenvalue_floor))
    return EigenBasis(
        process=TRUNCATED_BM,
        dimension=d,
        functions=_trig_nd_functions(d, k),
        extended=_trig_nd_functions(d, 4.0 * k),
        descriptor={"family": "trig_nd", "dimension": d, "eigenvalue_floor": float(eigenvalue_floor)},
    )


def _hermite_univariate_functions(d, n):
    funcs = [constant_function(d)]
    for k in range(1, n + 1):
        for i in range(d):
            idx = [0] * d
            idx[i] = k
            funcs.append(EigenFunction(index=tuple(idx), kind=KIND_HERMITE, eigenvalue=-float(k)))
    return tuple(funcs)


def hermite_univariate_basis(d, n):
    """OU basis of univariate Hermite functions, orders 1..n per coordinate."""
    if d < 1 or n < 1:
        raise InvalidInputError("d and n must be >= 1")
    return EigenBasis(
        process=OU,
        dimension=d,
        functions=_hermite_univariate_functions(d, n),
        extended=_hermite_univariate_functions(d, 2 * n),
        descriptor={"family": "hermite_univariate", "dimension": d, "max_order": n},
    )


# ---------------------------------------------------------------------------
# Basis-level product table
# ---------------------------------------------------------------------------

def product_table(basis):
    """Expansion of all pairwise basis products into the extended basis.

    For Hermite univariate bases, pairs acting on different coordinates are
    flagged gamma-zero (their carre-du-champ vanishes identically) instead of
    being expanded; everything else is stored exactly and immutably.
    """
    n = len(basis.functions)
    entries = {}
    gamma_zero = set()
    if basis.process == TRUNCATED_BM:
        for k in range(n):
            fk = basis.functions[k]
            for l in range(k, n):
                terms = trig_product(fk, basis.functions[l])
                h = np.array([basis.extended_index(fn) for fn, _ in terms], dtype=int)
                coefs = np.array([c for _, c in terms])
                entries[(k, l)] = (h, coefs)
    else:
        max_order = max(int(max(f.index)) for f in basis.functions)
        order_table = hermite_product_table(max_order, 2 * max_order)
        plan = basis._plan_functions
        _, dims, orders, _ = plan
        # extended index of (coordinate i, order h); order 0 is the constant
        ext_of = {}
        for hidx, f in enumerate(basis.extended):
            if f.kind == KIND_CONSTANT:
                const_idx = hidx
            else:
                nz = [i for i, c in enumerate(f.index) if c != 0]
                ext_of[(nz[0], f.index[nz[0]])] = hidx
        for k in range(n):
            for l in range(k, n):
                ik, ok = dims[k], orders[k]
                il, ol = dims[l], orders[l]
                if ok > 0 and ol > 0 and ik != il:
                    gamma_zero.add((k, l))
                    continue
                coord = ik if ok > 0 else il
                h_orders, coefs = order_table.get(ok, ol)
                h = np.array(
                    [const_idx if ho == 0 else ext_of[(coord, ho)] for ho in h_orders],
                    dtype=int,
                )
                entries[(k, l)] = (h, coefs.copy())
    return ProductTable(
        entries=entries,
        n_basis=n,
        n_extended=len(basis.extended),
        gamma_zero=frozenset(gamma_zero),
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_BUILDERS = {
    "trig_1d": lambda desc: trig_basis_1d(desc["max_frequency"]),
    "trig_nd": lambda desc: trig_basis_nd(desc["dimension"], desc["eigenvalue_floor"]),
    "hermite_univariate": lambda desc: hermite_univariate_basis(desc["dimension"], desc["max_order"]),
}


def basis_to_dict(basis):
    return {
        "process": basis.process,
        "dimension": basis.dimension,
        "descriptor": dict(basis.descriptor),
        "indices": [[f.kind, list(f.index)] for f in basis.functions],
    }


def basis_from_dict(d):
    family = d["descriptor"].get("family")
    if family not in _BUILDERS:
        raise InvalidInputError(f"unknown basis family: {family!r}")
    basis = _BUILDERS[family](d["descriptor"])
    if "indices" in d and len(d["indices"]) != len(basis.functions):
        raise InvalidInputError("serialized basis does not match its descriptor")
    return basis
