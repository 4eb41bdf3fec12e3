"""Structured marginal projections of the scaled coupling tensor.

The coupling tensor is ``K (x) U``: the product of edge kernels times the
outer product of per-node scalings.  Because the structures are trees (or, for
series-parallel, trees of chains glued at two terminals), any single-node or
supported pairwise marginal folds into a short sequence of matrix-vector
products along the graph.  :class:`ProjectionWorkspace` owns the scalings,
caches partial products between calls, and counts matrix-vector products and
floating-point work so complexity claims are testable.

Cache layout per variant:

* path — prefix vectors (everything left of sigma folded) valid for
  ``sigma <= _pf_hi`` and suffix vectors valid for ``sigma >= _sf_lo``;
  updating the scaling at tau truncates both pointers.
* barycentric — per-spoke products ``K^{j,sigma} u^{j,sigma}`` cached per
  node, plus the same prefix/suffix scheme along the barycenter chain with
  the bundled vectors ``p_sigma`` in place of plain scalings.
* series-parallel — the per-core transfer matrix ``A_k`` (the core's kernel
  chain with interior scalings folded in, an entry-terminal by exit-terminal
  matrix) is materialized and cached per core.  Because the cores couple the
  *same* two terminal nodes, marginalizing a core out of the tensor leaves an
  entrywise factor ``A_k`` over the terminal pair, so cores combine by
  Hadamard products, not matrix products.  Hadamard prefix/suffix products
  over cores and within-core partial chains (``F``/``R`` matrices) are cached
  with the same validity-pointer scheme as the path chains.
"""

from __future__ import annotations

import numpy as np

from .core import (
    BARYCENTRIC,
    PATH,
    SERIES_PARALLEL,
    Axis,
    KernelSet,
    ScalingFamily,
)


class ProjectionWorkspace:
    """Holds kernels and current scalings; evaluates structured projections."""

    def __init__(self, kernels: KernelSet,
                 scalings: ScalingFamily | dict[Axis, np.ndarray] | None = None):
        self.kernels = kernels
        self.structure = kernels.structure
        self._sizes = kernels.node_sizes()
        self._keys = self.structure.index_set()
        if scalings is None:
            u = {key: np.ones(self._sizes[key]) for key in self._keys}
        else:
            raw = scalings.u if isinstance(scalings, ScalingFamily) else scalings
            if set(raw) != set(self._keys):
                raise ValueError("scaling keys do not match the structure")
            u = {}
            for key in self._keys:
                vec = np.asarray(raw[key], dtype=np.float64)
                if vec.shape != (self._sizes[key],):
                    raise ValueError(f"scaling at {key} has wrong length")
                if np.any(vec <= 0.0) or not np.all(np.isfinite(vec)):
                    raise ValueError(f"scaling at {key} must be positive and finite")
                u[key] = vec.copy()
        self._u = u
        self.matvecs = 0
        self.ops = 0
        self._init_caches()

    # ------------------------------------------------------------------
    # counters and low-level helpers

    def reset_counters(self) -> None:
        self.matvecs = 0
        self.ops = 0

    def _mv(self, mat: np.ndarray, vec: np.ndarray, transpose: bool = False):
        self.matvecs += 1
        self.ops += mat.shape[0] * mat.shape[1]
        return (mat.T @ vec) if transpose else (mat @ vec)

    def _ew(self, *vecs: np.ndarray) -> np.ndarray:
        out = vecs[0]
        for v in vecs[1:]:
            self.ops += out.size
            out = out * v
        return out

    # ------------------------------------------------------------------
    # scalings

    def scaling(self, key: Axis) -> np.ndarray:
        return self._u[key]

    def set_scaling(self, key: Axis, value: np.ndarray) -> None:
        vec = np.asarray(value, dtype=np.float64)
        if vec.shape != (self._sizes[key],):
            raise ValueError(f"scaling at {key} has wrong length")
        if np.any(vec <= 0.0) or not np.all(np.isfinite(vec)):
            raise ValueError(f"scaling at {key} must be positive and finite")
        self._u[key] = vec
        self._invalidate(key)

    def scaling_family(self) -> ScalingFamily:
        return ScalingFamily(self.structure,
                             {k: v.copy() for k, v in self._u.items()})

    # ------------------------------------------------------------------
    # caches

    def _init_caches(self) -> None:
        s = self.structure.s
        variant = self.structure.variant
        if variant in (PATH, BARYCENTRIC):
            # chain prefix/suffix, 1-based; prefix[1] and suffix[s] stay all-ones
            j = 1 if variant == PATH else 0
            self._pf = [None] * (s + 1)
            self._sf = [None] * (s + 2)
            self._pf[1] = np.ones(self._sizes[(j, 1)])
            self._sf[s] = np.ones(self._sizes[(j, s)])
            self._pf_hi = 1
            self._sf_lo = s
        if variant == BARYCENTRIC:
            self._q: dict[Axis, np.ndarray | None] = {
                (j, sig): None
                for j in range(1, self.structure.J + 1)
                for sig in range(1, s + 1)
            }
        if variant == SERIES_PARALLEL:
            J = self.structure.J
            self._amat: list[np.ndarray | None] = [None] * (J + 1)
            # Hadamard prefix/suffix over core matrices, all terminal-shaped:
            # _hp[j] = A_1 (.) ... (.) A_{j-1}, _hs[j] = A_{j+1} (.) ... (.) A_J.
            ones = np.ones((self._sizes[(1, 1)], self._sizes[(1, s)]))
            self._hp: list[np.ndarray | None] = [None] * (J + 2)
            self._hs: list[np.ndarray | None] = [None] * (J + 1)
            self._hp[1] = ones
            self._hs[J] = ones
            self._hp_hi = 1
            self._hs_lo = J
            # terminal-pair weight seen by core j, with terminal scalings folded
            self._gmat: list[np.ndarray | None] = [None] * (J + 1)
            # within-core partial chains: _fm[j][sig] carries the chain from the
            # entry terminal to (j, sig) contracted against _gmat[j]; _rm[j][sig]
            # carries the bare chain from (j, sig) to the exit terminal.
            self._fm = [[None] * (s + 1) for _ in range(J + 1)]
            self._rm = [[None] * (s + 1) for _ in range(J + 1)]
            self._fm_hi = [1] * (J + 1)   # _fm[j][sig] valid for 2 <= sig <= hi
            self._rm_lo = [s] * (J + 1)   # _rm[j][sig] valid for lo <= sig <= s-1

    def _invalidate(self, key: Axis) -> None:
        variant = self.structure.variant
        j, sig = key
        s = self.structure.s
        if variant in (PATH, BARYCENTRIC):
            self._pf_hi = min(self._pf_hi, sig)
            self._sf_lo = max(self._sf_lo, sig)
        if variant == BARYCENTRIC and j > 0:
            self._q[key] = None
        if variant == SERIES_PARALLEL:
            J = self.structure.J
            if key in ((1, 1), (1, s)):
                # terminal scalings enter every _gmat and hence every _fm chain
                self._gmat = [None] * (J + 1)
                self._fm_hi = [1] * (J + 1)
            else:
                self._amat[j] = None
                self._hp_hi = min(self._hp_hi, j)
                self._hs_lo = max(self._hs_lo, j)
                for k in range(1, J + 1):
                    if k == j:
                        # own-core chains survive up to the changed node;
                        # _gmat[j] excludes A_j, so it stays valid
                        self._fm_hi[k] = min(self._fm_hi[k], sig)
                        self._rm_lo[k] = max(self._rm_lo[k], sig)
                    else:
                        self._gmat[k] = None
                        self._fm_hi[k] = 1

    # ------------------------------------------------------------------
    # dispatch

    def project(self, key: Axis) -> np.ndarray:
        """Single-node marginal of K (x) U at ``key``."""
        if key not in self._u:
            raise KeyError(f"{key} is not a constrained node")
        variant = self.structure.variant
        if variant == PATH:
            return self._path_proj(key[1])
        if variant == BARYCENTRIC:
            return self._bc_proj(key)
        return self._sp_proj(key)

    def project_pair(self, key1: Axis, key2: Axis) -> np.ndarray:
        """Pairwise marginal with ``key1`` on rows; supported pairs only."""
        if key1 not in self._u or key2 not in self._u:
            raise KeyError(f"({key1}, {key2}) includes an unconstrained node")
        variant = self.structure.variant
        if variant == PATH:
            s1, s2 = key1[1], key2[1]
            if s1 == s2:
                raise ValueError("pairwise projection needs two distinct nodes")
            out = self._path_proj2(min(s1, s2), max(s1, s2))
            return out if s1 < s2 else out.T
        if variant == BARYCENTRIC:
            return self._bc_proj2(key1, key2)
        return self._sp_proj2(key1, key2)

    def total_mass(self) -> float:
        key = self._keys[0]
        proj = self.project(key)
        self.ops += proj.size
        return float(proj.sum())

    # ------------------------------------------------------------------
    # path / barycenter chain machinery

    def _chain_kernel(self, sig: int) -> np.ndarray:
        return self.kernels.kernels[("chain", sig)]

    def _chain_vec(self, sig: int) -> np.ndarray:
        """Scaling bundle at chain node sigma: u itself for path, p for barycentric."""
        if self.structure.variant == PATH:
            return self._u[(1, sig)]
        return self._p(sig)

    def _prefix(self, sig: int) -> np.ndarray:
        while self._pf_hi < sig:
            k = self._pf_hi
            folded = self._ew(self._pf[k], self._chain_vec(k))
            self._pf[k + 1] = self._mv(self._chain_kernel(k), folded, transpose=True)
            self._pf_hi = k + 1
        return self._pf[sig]

    def _suffix(self, sig: int) -> np.ndarray:
        while self._sf_lo > sig:
            k = self._sf_lo
            folded = self._ew(self._chain_vec(k), self._sf[k])
            self._sf[k - 1] = self._mv(self._chain_kernel(k - 1), folded)
            self._sf_lo = k - 1
        return self._sf[sig]

    def _path_proj(self, sig: int) -> np.ndarray:
        return self._ew(self._prefix(sig), self._u[(1, sig)], self._suffix(sig))

    def _chain_transfer(self, s1: int, s2: int) -> np.ndarray:
        """Kernel product from chain node s1 to s2 with interior bundles folded in."""
        phi = self._chain_kernel(s1)
        for sig in range(s1 + 1, s2):
            mid = self._chain_vec(sig)
            self.ops += phi.size
            phi = phi * mid
            nxt = self._chain_kernel(sig)
            self.ops += phi.shape[0] * phi.shape[1] * nxt.shape[1]
            phi = phi @ nxt
        return phi

    def _path_proj2(self, s1: int, s2: int) -> np.ndarray:
        left = self._ew(self._prefix(s1), self._u[(1, s1)])
        right = self._ew(self._u[(1, s2)], self._suffix(s2))
        phi = self._chain_transfer(s1, s2)
        self.ops += 2 * phi.size
        return left[:, None] * phi * right[None, :]

    # ------------------------------------------------------------------
    # barycentric machinery

    def _spoke_kernel(self, j: int, sig: int) -> np.ndarray:
        return self.kernels.kernels[("spoke", j, sig)]

    def _q_vec(self, j: int, sig: int) -> np.ndarray:
        cached = self._q[(j, sig)]
        if cached is None:
            cached = self._mv(self._spoke_kernel(j, sig), self._u[(j, sig)])
            self._q[(j, sig)] = cached
        return cached

    def _p(self, sig: int, skip: int = 0) -> np.ndarray:
        """Bundled barycenter vector at sigma; ``skip`` omits one spoke factor."""
        out = self._u[(0, sig)]
        for j in range(1, self.structure.J + 1):
            if j != skip:
                out = self._ew(out, self._q_vec(j, sig))
        return out

    def _bc_proj(self, key: Axis) -> np.ndarray:
        j, sig = key
        if j == 0:
            return self._ew(self._prefix(sig), self._p(sig), self._suffix(sig))
        core_free = self._ew(self._prefix(sig), self._p(sig, skip=j),
                             self._suffix(sig))
        pulled = self._mv(self._spoke_kernel(j, sig), core_free, transpose=True)
        return self._ew(self._u[key], pulled)

    def _bc_proj2(self, key1: Axis, key2: Axis) -> np.ndarray:
        j1, s1 = key1
        j2, s2 = key2
        if j1 == 0 and j2 == 0:
            if s1 == s2:
                raise ValueError("pairwise projection needs two distinct nodes")
            if s1 > s2:
                return self._bc_proj2(key2, key1).T
            left = self._ew(self._prefix(s1), self._p(s1))
            right = self._ew(self._p(s2), self._suffix(s2))
            phi = self._chain_transfer(s1, s2)
            self.ops += 2 * phi.size
            return left[:, None] * phi * right[None, :]
        if j1 == 0 and j2 > 0 and s1 == s2:
            sig, j = s1, j2
            bary_side = self._ew(self._prefix(sig), self._p(sig, skip=j),
                                 self._suffix(sig))
            k = self._spoke_kernel(j, sig)
            self.ops += 2 * k.size
            return bary_side[:, None] * k * self._u[(j, sig)][None, :]
        if j2 == 0 and j1 > 0 and s1 == s2:
            return self._bc_proj2(key2, key1).T
        raise ValueError(
            f"unsupported barycentric pair ({key1}, {key2}); supported pairs are "
            "two chain nodes or a chain node with its same-snapshot spoke"
        )

    # ------------------------------------------------------------------
    # series-parallel machinery

    def _leg_kernel(self, j: int, sig: int) -> np.ndarray:
        return self.kernels.kernels[("leg", j, sig)]

    def _core_matrix(self, j: int) -> np.ndarray:
        """Transfer matrix of core j: kernel chain with interior scalings folded."""
        if self._amat[j] is None:
            s = self.structure.s
            a = self._leg_kernel(j, 1)
            for sig in range(2, s):
                nxt = self._leg_kernel(j, sig)
                self.ops += a.size + a.shape[0] * a.shape[1] * nxt.shape[1]
                a = (a * self._u[(j, sig)][None, :]) @ nxt
            self._amat[j] = a
        return self._amat[j]

    def _hp_mat(self, j: int) -> np.ndarray:
        """Entrywise product of core matrices A_k, k < j (valid for j in 1..J+1)."""
        while self._hp_hi < j:
            k = self._hp_hi
            a = self._core_matrix(k)
            self.ops += a.size
            self._hp[k + 1] = self._hp[k] * a
            self._hp_hi = k + 1
        return self._hp[j]

    def _hs_mat(self, j: int) -> np.ndarray:
        """Entrywise product of core matrices A_k, k > j (valid for j in 1..J)."""
        while self._hs_lo > j:
            k = self._hs_lo
            a = self._core_matrix(k)
            self.ops += a.size
            self._hs[k - 1] = self._hs[k] * a
            self._hs_lo = k - 1
        return self._hs[j]

    def _g_mat(self, j: int) -> np.ndarray:
        """Terminal-pair weight seen by core j: all other cores and both
        terminal scalings contracted down to an entry-by-exit matrix."""
        if self._gmat[j] is None:
            w = self._hp_mat(j) * self._hs_mat(j)
            self.ops += 3 * w.size
            self._gmat[j] = (self._u[(1, 1)][:, None] * w
                             * self._u[(1, self.structure.s)][None, :])
        return self._gmat[j]

    def _f_mat(self, j: int, sig: int) -> np.ndarray:
        """Entry-side chain of core j contracted against ``_g_mat(j)``.

        Row x, column b: kernels from the entry terminal to node (j, sig)
        with scalings strictly left of sig folded in, summed against the
        terminal-pair weight; b indexes the exit terminal.
        """
        if self._fm_hi[j] < 2:
            g = self._g_mat(j)
            k = self._leg_kernel(j, 1)
            self.ops += k.shape[0] * k.shape[1] * g.shape[1]
            self._fm[j][2] = k.T @ g
            self._fm_hi[j] = 2
        while self._fm_hi[j] < sig:
            t = self._fm_hi[j]
            k = self._leg_kernel(j, t)
            prev = self._fm[j][t]
            self.ops += prev.size + k.shape[0] * k.shape[1] * prev.shape[1]
            self._fm[j][t + 1] = k.T @ (self._u[(j, t)][:, None] * prev)
            self._fm_hi[j] = t + 1
        return self._fm[j][sig]

    def _r_mat(self, j: int, sig: int) -> np.ndarray:
        """Bare kernel chain of core j from node (j, sig) to the exit terminal,
        with scalings strictly right of sig folded in."""
        s = self.structure.s
        if self._rm_lo[j] > s - 1:
            self._rm[j][s - 1] = self._leg_kernel(j, s - 1)
            self._rm_lo[j] = s - 1
        while self._rm_lo[j] > sig:
            t = self._rm_lo[j]
            k = self._leg_kernel(j, t - 1)
            nxt = self._rm[j][t]
            self.ops += nxt.size + k.shape[0] * k.shape[1] * nxt.shape[1]
            self._rm[j][t - 1] = k @ (self._u[(j, t)][:, None] * nxt)
            self._rm_lo[j] = t - 1
        return self._rm[j][sig]

    def _sp_proj(self, key: Axis) -> np.ndarray:
        s = self.structure.s
        J = self.structure.J
        t1, ts = (1, 1), (1, s)
        if key == t1:
            return self._ew(self._u[t1], self._mv(self._hp_mat(J + 1), self._u[ts]))
        if key == ts:
            return self._ew(self._u[ts], self._mv(self._hp_mat(J + 1), self._u[t1],
                                                  transpose=True))
        j, sig = key
        f = self._f_mat(j, sig)
        r = self._r_mat(j, sig)
        self.ops += 2 * f.size
        return self._u[key] * np.einsum("xb,xb->x", f, r)

    def _sp_proj2(self, key1: Axis, key2: Axis) -> np.ndarray:
        s = self.structure.s
        t1, ts = (1, 1), (1, s)
        if s == 2:
            if {key1, key2} != {t1, ts}:
                raise ValueError("two-snapshot series-parallel only couples the terminals")
            b = self._hp_mat(self.structure.J + 1)
            self.ops += 2 * b.size
            out = self._u[t1][:, None] * b * self._u[ts][None, :]
            return out if key1 == t1 else out.T
        if key1 == t1 and key2[1] == 2 and key2 != ts:
            j = key2[0]
            g = self._g_mat(j)
            r = self._r_mat(j, 2)
            self.ops += g.shape[0] * g.shape[1] * r.shape[0]
            cross = g @ r.T
            k = self._leg_kernel(j, 1)
            self.ops += 2 * k.size
            return (k * cross) * self._u[key2][None, :]
        if key2 == ts and key1[1] == s - 1 and key1 != t1:
            j = key1[0]
            f = self._f_mat(j, s - 1)
            k = self._leg_kernel(j, s - 1)
            self.ops += 2 * k.size
            return self._u[key1][:, None] * (k * f)
        if (key1 not in (t1, ts) and key2 not in (t1, ts)
                and key1[0] == key2[0] and key2[1] == key1[1] + 1):
            j, sig = key1
            f = self._f_mat(j, sig)
            r = self._r_mat(j, sig + 1)
            self.ops += f.shape[0] * f.shape[1] * r.shape[0]
            cross = f @ r.T
            k = self._leg_kernel(j, sig)
            self.ops += 2 * k.size
            return (self._u[key1][:, None] * (k * cross)
                    * self._u[key2][None, :])
        if (key2 == t1 and key1[1] == 2 and key1 != ts) or (
                key1 == ts and key2[1] == s - 1 and key2 != t1) or (
                key1 not in (t1, ts) and key2 not in (t1, ts)
                and key1[0] == key2[0] and key1[1] == key2[1] + 1):
            return self._sp_proj2(key2, key1).T
        raise ValueError(
            f"unsupported series-parallel pair ({key1}, {key2}); supported pairs "
            "are consecutive nodes along one core chain (terminals included)"
        )


# ----------------------------------------------------------------------
# thin functional facade matching the per-structure operation names


def _expect(ws: ProjectionWorkspace, variant: str) -> None:
    if ws.structure.variant != variant:
        raise ValueError(f"workspace holds a {ws.structure.variant} structure, "
                         f"expected {variant}")


def path_proj(ws: ProjectionWorkspace, sigma: int) -> np.ndarray:
    _expect(ws, PATH)
    return ws.project((1, sigma))


def path_proj2(ws: ProjectionWorkspace, sigma1: int, sigma2: int) -> np.ndarray:
    _expect(ws, PATH)
    return ws.project_pair((1, sigma1), (1, sigma2))


def bc_proj(ws: ProjectionWorkspace, j: int, sigma: int) -> np.ndarray:
    _expect(ws, BARYCENTRIC)
    return ws.project((j, sigma))


def bc_proj2(ws: ProjectionWorkspace, key1: Axis, key2: Axis) -> np.ndarray:
    _expect(ws, BARYCENTRIC)
    return ws.project_pair(key1, key2)


def sp_proj(ws: ProjectionWorkspace, j: int, sigma: int) -> np.ndarray:
    _expect(ws, SERIES_PARALLEL)
    return ws.project((j, sigma))


def sp_proj2(ws: ProjectionWorkspace, key1: Axis, key2: Axis) -> np.ndarray:
    _expect(ws, SERIES_PARALLEL)
    return ws.project_pair(key1, key2)
