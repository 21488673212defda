"""Feynman diagrams, cycle integrals and exact moments of the limit processes.

A diagram on ``n`` nodes with ``r`` hands each is a set of links between
hands of distinct nodes.  Complete ``r = 2`` diagrams index the terms of
the moment expansion of a product of double Wiener integrals; each of
their connected components is a cycle, and the time integral of a cycle
of length ``n`` is

    I_cycle(n) = C^n int prod_j psi(t_j) |t_j - t_{j+1}|^{H-1} dt,   t_{n+1} = t_1.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
from scipy import special
from scipy.stats import qmc

from .spectrum_core import ParameterError, SpectrumParams, scaling_exponents, sphere_area
from .seeding import purpose_stream

__all__ = [
    "Diagram",
    "MomentSpec",
    "enumerate_complete",
    "iter_complete",
    "count_complete_formula",
    "connected_components",
    "cycle_census",
    "cycle_order",
    "cycle_constant_C",
    "CycleIntegral",
    "eval_IG_cycle",
    "nested_cycle_nodes",
    "iter_cycle_nodes",
    "galerkin_cycle",
    "moment_Z",
    "moment_X",
    "validate_product_formula",
]


@dataclass(frozen=True)
class Diagram:
    """Links between hands ``(node, hand)`` of distinct nodes."""

    n: int
    r: int
    links: frozenset
    free: frozenset = frozenset()

    def __post_init__(self):
        used = []
        for a, b in self.links:
            if a[0] == b[0]:
                raise ValueError("a link must join distinct nodes")
            used += [a, b]
        if len(used) != len(set(used)):
            raise ValueError("a hand appears in more than one link")
        allv = {(l, h) for l in range(self.n) for h in range(self.r)}
        if set(used) | set(self.free) != allv or set(used) & set(self.free):
            raise ValueError("links and free hands must partition the vertices")

    @property
    def complete(self) -> bool:
        return not self.free


@dataclass(frozen=True)
class MomentSpec:
    """``psi(t) = sum_m b_m 1_[0, r_m](t)`` and the moment order.

    ``components`` lists the field component per node for mixed moments;
    ``node_times`` (optional) gives each node its own indicator
    ``1_[0, t_l]`` instead of ``psi``.
    """

    coefficients: tuple = ((1.0, 1.0),)
    order: int = 2
    components: tuple | None = None
    node_times: tuple | None = None

    def __post_init__(self):
        if self.order < 1:
            raise ParameterError("order must be >= 1")
        for b, r in self.coefficients:
            if not r > 0:
                raise ParameterError("indicator ends r_m must be positive")
        if self.node_times is not None and len(self.node_times) != self.order:
            raise ParameterError("node_times must have one entry per node")
        if self.components is not None and len(self.components) != self.order:
            raise ParameterError("components must have one entry per node")

    def node_psi(self, l: int) -> tuple:
        if self.node_times is not None:
            return ((1.0, float(self.node_times[l])),)
        return tuple((float(b), float(r)) for b, r in self.coefficients)


# ---------------------------------------------------------------------------
# enumeration


def iter_complete(n: int, r: int = 2):
    """Yield complete diagrams by recursive matching in canonical order."""
    verts = [(l, h) for l in range(n) for h in range(r)]

    def rec(remaining, acc):
        if not remaining:
            yield Diagram(n, r, frozenset(acc))
            return
        a = remaining[0]
        for i in range(1, len(remaining)):
            b = remaining[i]
            if b[0] == a[0]:
                continue
            rest = remaining[1:i] + remaining[i + 1:]
            yield from rec(rest, acc + [(a, b)])

    if len(verts) % 2:
        return
    yield from rec(verts, [])


def enumerate_complete(n: int, r: int = 2):
    """All complete diagrams on ``n`` nodes with ``r`` hands.

    Returns a list for ``n <= 6`` and a generator for ``n = 7, 8``.
    """
    if n < 1 or n > 8:
        raise ParameterError("enumeration supports 1 <= n <= 8")
    if n <= 6:
        return _complete_cached(n, r)
    return iter_complete(n, r)


@lru_cache(maxsize=None)
def _complete_cached(n, r):
    return list(iter_complete(n, r))


def count_complete_formula(n: int) -> int:
    """Inclusion-exclusion count of complete ``r=2`` diagrams."""
    def dfact(m):
        return 1 if m <= 0 else math.prod(range(m, 0, -2))
    return sum((-1) ** j * math.comb(n, j) * dfact(2 * n - 2 * j - 1) for j in range(n + 1))


def connected_components(g: Diagram) -> list:
    """Partition of the nodes of a complete diagram into linked classes."""
    if not g.complete:
        raise ParameterError("connected components are defined for complete diagrams")
    parent = list(range(g.n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in g.links:
        ra, rb = find(a[0]), find(b[0])
        if ra != rb:
            parent[ra] = rb
    comps = {}
    for l in range(g.n):
        comps.setdefault(find(l), []).append(l)
    return sorted(comps.values())


def cycle_order(g: Diagram, comp) -> list:
    """Nodes of a component in cyclic order following the links (``r = 2``)."""
    adj = {}
    for a, b in g.links:
        if a[0] in comp:
            adj.setdefault(a, b)
            adj.setdefault(b, a)
    start = min(comp)
    order = [start]
    hand = (start, 0)
    while True:
        nxt = adj[hand]
        if nxt[0] == start:
            break
        order.append(nxt[0])
        hand = (nxt[0], 1 - nxt[1])
    return order


@lru_cache(maxsize=None)
def cycle_census(n: int) -> dict:
    """Map sorted component-size tuples to diagram counts for ``r = 2``."""
    c = Counter()
    for g in enumerate_complete(n):
        c[tuple(sorted(len(x) for x in connected_components(g)))] += 1
    return dict(c)


# ---------------------------------------------------------------------------
# cycle constant and cycle integrals


def cycle_constant_C(params: SpectrumParams) -> float:
    """``C`` with ``int a0 |k|^{1-alpha-d} e^{-r0 |k|^{2beta} tau/2} dk = C tau^{H-1}``.

    ``C = a0 r0^{H-1} S_{d-1} (2beta)^{-1} 2^{(1-alpha)/(2beta)} Gamma((1-alpha)/(2beta))``.
    """
    if params.alpha >= 1:
        raise ParameterError("alpha must be < 1")
    H = scaling_exponents(params).hurst
    g = (1.0 - params.alpha) / (2.0 * params.beta)
    return (params.a0 * params.r0 ** (H - 1.0) * sphere_area(params.d) / (2.0 * params.beta)
            * 2.0 ** g * special.gamma(g))


@dataclass(frozen=True)
class CycleIntegral:
    value: float
    error: float
    method: str = "nested"
    flagged: bool = False


def _psi_eval(psi, x):
    out = np.zeros_like(x)
    for b, r in psi:
        out += b * (x <= r)
    return out * (x >= 0)


def _level_rule(ends, e_ends, p, H, q_break):
    """Graded Gauss-Legendre rule on panels between sorted ``ends``.

    Every panel is halved; each half is mapped with ``x = c + L v^q``
    toward its outer end ``c`` with ``q = 1/(1+e)`` for a kernel
    singularity of exponent ``e`` and ``q_break`` otherwise.
    """
    xg, wg = np.polynomial.legendre.leggauss(p)
    v = 0.5 * (xg + 1.0)
    wv = 0.5 * wg
    a = ends[:, :-1]
    b = ends[:, 1:]
    L = 0.5 * (b - a)
    qa = np.where(e_ends[:, :-1] < 0, 1.0 / (1.0 + e_ends[:, :-1]), q_break)
    qb = np.where(e_ends[:, 1:] < 0, 1.0 / (1.0 + e_ends[:, 1:]), q_break)
    # left halves: x = a + L v^qa ; right halves: x = b - L v^qb
    vq_a = v[None, None, :] ** qa[..., None]
    vq_b = v[None, None, :] ** qb[..., None]
    xl = a[..., None] + L[..., None] * vq_a
    xr = b[..., None] - L[..., None] * vq_b
    wl = L[..., None] * qa[..., None] * v ** (qa[..., None] - 1.0) * wv
    wr = L[..., None] * qb[..., None] * v ** (qb[..., None] - 1.0) * wv
    x = np.concatenate([xl, xr], axis=-1).reshape(ends.shape[0], -1)
    w = np.concatenate([wl, wr], axis=-1).reshape(ends.shape[0], -1)
    w = np.where(np.repeat(L > 0, 2 * p, axis=1), w, 0.0)
    return x, w


def _level(psis, H, p, q_break, pts, wts, j):
    n = len(psis)
    psi = psis[j]
    bp = np.unique(np.concatenate([[0.0], [r for _, r in psi]]))
    M = pts.shape[0]
    sing, expo = [], []
    if j >= 1:
        if n == 2:
            sing.append(pts[:, 0])
            expo.append(2.0 * (H - 1.0))
        else:
            sing.append(pts[:, j - 1])
            expo.append(H - 1.0)
            if j == n - 1:
                sing.append(pts[:, 0])
                expo.append(H - 1.0)
    ends = np.concatenate([np.broadcast_to(bp, (M, bp.size))]
                          + [np.clip(s, bp[0], bp[-1])[:, None] for s in sing], axis=1)
    e = np.concatenate([np.zeros((M, bp.size))]
                       + [np.full((M, 1), ex) for ex in expo], axis=1)
    order = np.argsort(ends, axis=1, kind="stable")
    ends = np.take_along_axis(ends, order, axis=1)
    e = np.take_along_axis(e, order, axis=1)
    x, w = _level_rule(ends, e, p, H, q_break)
    fac = w * _psi_eval(psi, x)
    for s, ex in zip(sing, expo):
        dist = np.abs(x - s[:, None])
        fac = fac * np.where(dist > 0, dist, np.inf) ** ex
    k = x.shape[1]
    keep = (fac != 0).ravel()
    pts = np.concatenate([np.repeat(pts, k, axis=0), x.reshape(-1, 1)], axis=1)[keep]
    wts = (wts[:, None] * fac).ravel()[keep]
    return pts, wts


def iter_cycle_nodes(psis, H: float, p: int, q_break: float | None = None,
                     max_nodes: int = 2_000_000):
    """Yield ``(pts, wts)`` chunks of the nested rule (see ``nested_cycle_nodes``)."""
    n = len(psis)
    if n < 2:
        raise ParameterError("a cycle has at least two nodes")
    q_break = q_break if q_break is not None else 1.0 / H
    est = 2 * p * (len(psis[0]) + n + 1)

    def rec(pts, wts, j):
        if j == n:
            yield pts, wts
            return
        step = max(1, max_nodes // est)
        for lo in range(0, pts.shape[0], step):
            P, W = _level(psis, H, p, q_break, pts[lo:lo + step], wts[lo:lo + step], j)
            yield from rec(P, W, j + 1)

    yield from rec(np.zeros((1, 0)), np.ones(1), 0)


def nested_cycle_nodes(psis, H: float, p: int, q_break: float | None = None):
    """Nodes and weights of the nested rule for one cycle.

    Parameters
    ----------
    psis : sequence of psi specs, one per cycle position
        Each spec is a tuple of ``(b_m, r_m)``.
    H : float
    p : int
        Gauss-Legendre points per half panel.

    Returns
    -------
    pts : ndarray, shape (M, n)
    wts : ndarray, shape (M,)
        ``sum(wts * f(pts))`` approximates
        ``int f prod psi_l(t_l) prod |t_l - t_{l+1}|^{H-1} dt`` (cyclic).
    """
    chunks = list(iter_cycle_nodes(psis, H, p, q_break))
    return (np.concatenate([c[0] for c in chunks]), np.concatenate([c[1] for c in chunks]))


def _nested_sum(psis, H, p, q_break=None):
    return float(sum(w.sum() for _, w in iter_cycle_nodes(psis, H, p, q_break)))


def galerkin_cycle(psis, H: float, n_cells: int) -> float:
    """Trace of the Galerkin-discretized cycle operator on uniform cells.

    ``tr(prod_l Psi_l K)`` with ``K`` the cell-averaged kernel
    ``|t-s|^{H-1}`` in the orthonormal piecewise-constant basis.
    Converges from below for nonnegative ``psi``; slow for ``n = 2``.
    """
    rmax = max(r for psi in psis for _, r in psi)
    bps = sorted({0.0, rmax} | {r for psi in psis for _, r in psi})
    edges = [0.0]
    for a, b in zip(bps[:-1], bps[1:]):
        m = max(1, int(round(n_cells * (b - a) / rmax)))
        edges += list(np.linspace(a, b, m + 1)[1:])
    e = np.array(edges)
    G = lambda x: np.abs(x) ** (H + 1.0) / (H * (H + 1.0))
    a0, a1 = e[:-1, None], e[1:, None]
    b0, b1 = e[None, :-1], e[None, 1:]
    A = G(a1 - b0) + G(a0 - b1) - G(a1 - b1) - G(a0 - b0)
    h = np.diff(e)
    K = A / np.sqrt(h[:, None] * h[None, :])
    mid = 0.5 * (e[:-1] + e[1:])
    M = np.eye(len(h))
    for psi in psis:
        M = M @ (_psi_eval(psi, mid)[:, None] * K)
    return float(np.trace(M))


def eval_IG_cycle(n: int, psi: MomentSpec | tuple, H: float, quad_points: int = 16,
                  C: float = 1.0, method: str = "auto", tol: float = 1e-3) -> CycleIntegral:
    """Cycle integral ``C^n int prod psi(t_j) |t_j - t_{j+1}|^{H-1} dt``.

    ``method="nested"`` uses the graded iterated Gauss-Legendre rule with
    ``quad_points`` per half panel and reports ``|I_p - I_{p/2}|`` as the
    error; ``"galerkin"`` uses a cell trace with ``64 * quad_points`` cells
    and reports the change from half as many cells.  ``"auto"`` selects
    nested for ``n <= 4``.  Results with relative error above ``tol`` are
    flagged.
    """
    if not (0.5 < H < 1.0):
        raise ParameterError("H must lie in (1/2, 1)")
    if n < 2:
        raise ParameterError("cycle length must be >= 2")
    if isinstance(psi, MomentSpec):
        psis = [psi.node_psi(l) for l in range(n)] if psi.node_times is not None \
            else [psi.node_psi(0)] * n
    else:
        psis = [tuple(psi)] * n
    if method == "auto":
        method = "nested" if n <= 4 else "galerkin"
    if method == "nested":
        p = int(quad_points)
        v1 = _nested_sum(psis, H, p)
        v0 = _nested_sum(psis, H, max(p // 2, 2))
    elif method == "galerkin":
        nc = 64 * int(quad_points)
        v1 = galerkin_cycle(psis, H, nc)
        v0 = galerkin_cycle(psis, H, nc // 2)
    else:
        raise ParameterError(f"unknown method {method!r}")
    err = abs(v1 - v0)
    scale = C ** n
    flagged = err > tol * max(abs(v1), 1e-300)
    return CycleIntegral(float(scale * v1), float(abs(scale) * err), method, bool(flagged))


@dataclass
class MomentResult:
    value: float
    error: float
    terms: dict = field(default_factory=dict)


def moment_Z(psi: MomentSpec, n: int, params: SpectrumParams, quad_points: int = 16,
             method: str = "auto") -> MomentResult:
    """``E (sum_m b_m Z_j(r_m))^n`` as a sum over complete diagrams.

    Each diagram contributes the product of its cycle integrals; diagrams
    are grouped by their cycle-size census.
    """
    if n > 6 or n < 1:
        raise ParameterError("moment_Z supports 1 <= n <= 6")
    H = scaling_exponents(params).hurst
    C = cycle_constant_C(params)
    spec = MomentSpec(tuple(psi.coefficients), n)
    cache = {}
    total = 0.0
    deriv = Counter()
    terms = {}
    for sizes, count in cycle_census(n).items():
        for s in sizes:
            if s not in cache:
                cache[s] = eval_IG_cycle(s, spec, H, quad_points, C, method)
        vals = [cache[s].value for s in sizes]
        total += count * math.prod(vals)
        for i, s in enumerate(sizes):
            deriv[s] += count * math.prod(vals[:i] + vals[i + 1:])
        terms[sizes] = count
    # cached cycle values are shared between diagrams: propagate linearly
    err = sum(abs(deriv[s]) * cache[s].error for s in deriv)
    return MomentResult(total, err, terms)


# ---------------------------------------------------------------------------
# moments of X with the projector structure


def _unit_vectors(U, d):
    if d == 2:
        phi = 2.0 * np.pi * U[..., 0]
        return np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    z = 2.0 * U[..., 0] - 1.0
    phi = 2.0 * np.pi * U[..., 1]
    s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def _nu_sample(U, params):
    """Map uniforms to draws from ``nu ∝ |k|^{1-alpha-d} e^{-|k|^{2beta}/2}``."""
    a = (1.0 - params.alpha) / (2.0 * params.beta)
    y = special.gammaincinv(a, np.clip(U[..., 0], 1e-15, 1 - 1e-15))
    rho = (2.0 * y) ** (1.0 / (2.0 * params.beta))
    return rho[..., None] * _unit_vectors(U[..., 1:], params.d)


def _factor_matrix(kind, K):
    from .velocity_field import middle_factor
    return middle_factor(kind, K)


def moment_X(spec: MomentSpec, n: int, params: SpectrumParams, budget: int = 2 ** 22,
             quad_points: int = 8, kinds=None, seed: int = 0, n_scrambles: int = 8,
             rel_tol: float = 0.05) -> MomentResult:
    """Mixed moment ``E prod_l X^{(l)}_{j_l}(t_l)`` of the projected limit processes.

    ``kinds`` selects per node the middle factor: ``"gamma"`` (X),
    ``"complement"`` (X-tilde) or ``"identity"`` (Z).  For every complete
    diagram and every cycle the time integral uses the nested rule and the
    link wavevectors are sampled after the per-link substitution
    ``p = p_hat (r0 |dt|)^{-1/(2 beta)}``, which makes ``p_hat`` follow
    the fixed law ``nu`` and leaves only the projector product to be
    averaged by randomized QMC.
    """
    if n > 4 or n < 1:
        raise ParameterError("moment_X supports n <= 4")
    if spec.order != n:
        spec = MomentSpec(spec.coefficients, n, spec.components, spec.node_times)
    comps = spec.components or (0,) * n
    kinds = tuple(kinds) if kinds is not None else ("gamma",) * n
    H = scaling_exponents(params).hurst
    C = cycle_constant_C(params)
    d = params.d
    beta = params.beta
    cycle_cache = {}

    def cycle_value(order):
        key = tuple((comps[l], kinds[l], spec.node_psi(l)) for l in order)
        # cyclic relabeling does not change the value
        if key in cycle_cache:
            return cycle_cache[key]
        c = len(order)
        psis = [spec.node_psi(l) for l in order]
        pts, wts = nested_cycle_nodes(psis, H, quad_points)
        _, wts_half = nested_cycle_nodes(psis, H, max(quad_points // 2, 2))
        quad_err = abs(wts.sum() - wts_half.sum())
        dt = np.abs(pts - np.roll(pts, -1, axis=1))  # link s joins positions s, s+1
        lam = (params.r0 * np.maximum(dt, 1e-300)) ** (-1.0 / (2.0 * beta))
        M = pts.shape[0]
        m = max(int(budget // (M * n_scrambles)), 1)
        m2 = 2 ** max(int(math.floor(math.log2(m))), 0)
        dim = c * d
        ests = []
        for rep in range(n_scrambles):
            sob = qmc.Sobol(dim, scramble=True, seed=purpose_stream(seed, "aux", 1000 + rep))
            U = sob.random(m2).reshape(m2, c, d)
            ph = _nu_sample(U, params)  # (m2, c, d)
            acc = np.zeros(M)
            chunk = max(1, int(4e6 // (m2 * c * d * d)))
            for lo in range(0, M, chunk):
                sl = slice(lo, min(lo + chunk, M))
                p_ = ph[None] * lam[sl, None, :, None]  # (Mc, m2, c, d)
                K = p_ - np.roll(p_, 1, axis=2)  # node s: p_s - p_{s-1}
                prod = None
                for s in range(c):
                    Fm = _factor_matrix(kinds[order[s]], K[:, :, s, :])[..., comps[order[s]], :]
                    prod = Fm if prod is None else prod * Fm
                acc[sl] = prod.sum(axis=-1).mean(axis=1)
            ests.append((wts * acc).sum())
        ests = np.array(ests)
        val = ests.mean()
        se = ests.std(ddof=1) / math.sqrt(n_scrambles) if n_scrambles > 1 else 0.0
        res = (C ** c * val, C ** c * math.hypot(se, quad_err * max(abs(acc).max(), 1.0)))
        cycle_cache[key] = res
        return res

    total = 0.0
    deriv = {}
    errs = {}
    for g in enumerate_complete(n):
        keys, vals = [], []
        for comp in connected_components(g):
            order = cycle_order(g, comp)
            v, e = cycle_value(order)
            key = tuple((comps[l], kinds[l], spec.node_psi(l)) for l in order)
            keys.append(key)
            vals.append(v)
            errs[key] = e
        total += math.prod(vals)
        for i, k in enumerate(keys):
            deriv[k] = deriv.get(k, 0.0) + math.prod(vals[:i] + vals[i + 1:])
    err = sum(abs(deriv[k]) * errs[k] for k in deriv)
    out = MomentResult(total, err)
    out.terms["flagged"] = bool(out.error > rel_tol * max(abs(out.value), 1e-300)
                                and abs(out.value) > 1e-12)
    return out


# ---------------------------------------------------------------------------
# product formula oracle on a finite noise


def _diagram_sum(g: Diagram, kernels):
    """Exact ``I_G`` for kernels on a finite cell set via one einsum."""
    letters = {}
    for i, (a, b) in enumerate(sorted(g.links)):
        letters[a] = letters[b] = chr(ord("a") + i)
    subs = ",".join("".join(letters[(l, h)] for h in range(g.r)) for l in range(g.n))
    return float(np.einsum(subs + "->", *kernels))


def validate_product_formula(n: int, grid_cells: int = 6, seed: int = 0, r: int = 2,
                             n_samples: int = 100_000) -> dict:
    """Compare MC moments of products of discrete Wiener integrals to diagram sums.

    ``r = 2`` uses off-diagonal double sums ``sum_{a != b} f(a,b) xi_a xi_b``
    with random symmetric kernels; ``r = 1`` uses single sums (Gaussian
    control, pairings only).
    """
    if n < 1 or n > 3 and r == 2:
        raise ParameterError("validate_product_formula supports n <= 3 for r = 2")
    if grid_cells > 8:
        raise ParameterError("at most 8 noise cells")
    rng = purpose_stream(seed, "aux", 77)
    if r == 2:
        ks = []
        for _ in range(n):
            f = rng.standard_normal((grid_cells, grid_cells)) / grid_cells
            f = 0.5 * (f + f.T)
            np.fill_diagonal(f, 0.0)
            ks.append(f)
    elif r == 1:
        ks = [rng.standard_normal(grid_cells) / math.sqrt(grid_cells) for _ in range(n)]
    else:
        raise ParameterError("r must be 1 or 2")
    exact = sum(_diagram_sum(g, ks) for g in iter_complete(n, r))
    prods = np.ones(n_samples)
    done = 0
    while done < n_samples:
        m = min(20000, n_samples - done)
        xi = rng.standard_normal((m, grid_cells))
        p = np.ones(m)
        for f in ks:
            p *= np.einsum("sa,ab,sb->s", xi, f, xi) if r == 2 else xi @ f
        prods[done:done + m] = p
        done += m
    mc = prods.mean()
    se = prods.std(ddof=1) / math.sqrt(n_samples)
    z = abs(mc - exact) / se if se > 0 else (0.0 if mc == exact else math.inf)
    return {"n": n, "r": r, "grid_cells": grid_cells, "mc": float(mc), "stderr": float(se),
            "exact": float(exact), "n_diagrams": sum(1 for _ in iter_complete(n, r)),
            "z": float(z), "passed": bool(z < 3.0)}
