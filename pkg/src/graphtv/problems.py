"""Data terms ``G`` and the handles the solvers need from them.

PG and FISTA work on the dual and use ``grad_Gstar`` with its curvature
bounds; PDHG uses ``prox_G``. Both use ``eval_G`` / ``eval_Gstar`` for the
duality gap.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, splu

log = logging.getLogger(__name__)


class DataTerm:
    """Base class. ``grad_Gstar`` / ``prox_G`` are optional capabilities."""

    l_Gstar: float | None = None
    L_Gstar: float | None = None
    has_grad_Gstar = False
    has_prox_G = False

    @property
    def kappa_Gstar(self) -> float:
        return self.L_Gstar / self.l_Gstar

    def eval_G(self, u) -> float:
        raise NotImplementedError

    def eval_Gstar(self, w) -> float:
        raise NotImplementedError

    def grad_Gstar(self, w) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} offers no gradient of G*")

    def prox_G(self, z, s) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} offers no prox of G")


class RofDataTerm(DataTerm):
    """``G(u) = 0.5 ||u - f||^2`` (fused Lasso / ROF)."""

    l_Gstar = 1.0
    L_Gstar = 1.0
    has_grad_Gstar = True
    has_prox_G = True

    def __init__(self, f):
        f = np.array(f, dtype=np.float64)
        if f.ndim != 1 or not np.all(np.isfinite(f)):
            raise ValueError("f must be a finite 1-d vector")
        f.setflags(write=False)
        self.f = f
        self.n = f.size

    def eval_G(self, u):
        r = np.asarray(u) - self.f
        return 0.5 * float(r @ r)

    def eval_Gstar(self, w):
        w = np.asarray(w)
        return float(self.f @ w) + 0.5 * float(w @ w)

    def grad_Gstar(self, w):
        return self.f + w

    def prox_G(self, z, s):
        return (s * np.asarray(z) + self.f) / (s + 1.0)


def rof_oracle(f) -> RofDataTerm:
    return RofDataTerm(f)


# --------------------------------------------------------------------------
# deconvolution


def motion_blur_kernel(radius: int, shape: str = "horizontal") -> np.ndarray:
    """Uniform line kernel of length ``2 * radius + 1``."""
    n = 2 * int(radius) + 1
    if shape == "horizontal":
        return np.full((1, n), 1.0 / n)
    if shape == "vertical":
        return np.full((n, 1), 1.0 / n)
    if shape == "identity":
        return np.ones((1, 1))
    raise ValueError(f"unknown kernel shape {shape!r}")


def convolution_matrix(dims, kernel) -> sp.csr_matrix:
    """Sparse matrix of the full (zero padded) 2-D convolution on ``dims``."""
    H, W = dims
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    Ho, Wo = H + kh - 1, W + kw - 1
    r, c = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    src = (r * W + c).ravel()
    rows, cols, vals = [], [], []
    for a in range(kh):
        for b in range(kw):
            if kernel[a, b] == 0:
                continue
            rows.append(((r + a) * Wo + (c + b)).ravel())
            cols.append(src)
            vals.append(np.full(src.size, kernel[a, b]))
    if not rows:
        raise ValueError("kernel must have a nonzero tap")
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(Ho * Wo, H * W))


class DeconvDataTerm(DataTerm):
    """``G(u) = 0.5 ||A u - f||^2`` with ``A`` a full 2-D convolution.

    The full convolution is injective for any nonzero kernel, so ``G*`` is
    finite and evaluated through a sparse factorization of ``A^T A``. The
    prox is solved by warm-started conjugate gradients.
    """

    has_prox_G = True

    def __init__(self, kernel, f, dims, cg_tol=1e-12, cg_maxiter=10):
        self.dims = tuple(int(d) for d in dims)
        self.kernel = np.asarray(kernel, dtype=np.float64)
        self.A = convolution_matrix(self.dims, self.kernel)
        f = np.array(f, dtype=np.float64).ravel()
        if f.size != self.A.shape[0]:
            raise ValueError(f"observation has {f.size} entries, expected {self.A.shape[0]}")
        f.setflags(write=False)
        self.f = f
        self.n = self.A.shape[1]
        self.cg_tol = cg_tol
        self.cg_maxiter = cg_maxiter
        self.AtA = (self.A.T @ self.A).tocsc()
        self.Atf = self.A.T @ f
        self._lu = None
        self._warm = None
        self.cg_failures = 0

    def A_apply(self, u):
        return self.A @ u

    def AT_apply(self, y):
        return self.A.T @ y

    def eval_G(self, u):
        r = self.A @ u - self.f
        return 0.5 * float(r @ r)

    def eval_Gstar(self, w):
        if self._lu is None:
            self._lu = splu(self.AtA)
        u = self._lu.solve(np.asarray(w) + self.Atf)
        r = self.A @ u - self.f
        return float(u @ w) - 0.5 * float(r @ r)

    def prox_residual(self, u, z, s):
        return float(np.linalg.norm(self.AtA @ u + s * u - (self.Atf + s * np.asarray(z))))

    def prox_G(self, z, s):
        z = np.asarray(z, dtype=np.float64)
        rhs = self.Atf + s * z
        M = self.AtA + s * sp.identity(self.n, format="csc")
        x0 = self._warm if self._warm is not None else z
        u, info = cg(M, rhs, x0=x0, rtol=0.0, atol=self.cg_tol, maxiter=self.cg_maxiter)
        if info > 0:
            self.cg_failures += 1
        self._warm = u
        return u

    def reset_warm_start(self):
        self._warm = None
        self.cg_failures = 0


def deconv_oracle(kernel, f, dims, cg_tol=1e-12, cg_maxiter=10) -> DeconvDataTerm:
    return DeconvDataTerm(kernel, f, dims, cg_tol=cg_tol, cg_maxiter=cg_maxiter)


def random_phantom(dims, rng, n_shapes: int = 8) -> np.ndarray:
    """Piecewise-constant image: background plus random rectangles and discs."""
    H, W = dims
    img = np.full((H, W), rng.uniform(0.0, 0.3))
    rr, cc = np.mgrid[0:H, 0:W]
    for k in range(n_shapes):
        val = rng.uniform(0.0, 1.0)
        if k % 2 == 0:
            r0, r1 = np.sort(rng.integers(0, H, size=2))
            c0, c1 = np.sort(rng.integers(0, W, size=2))
            img[r0:r1 + 1, c0:c1 + 1] = val
        else:
            cr, cc0 = rng.uniform(0, H), rng.uniform(0, W)
            rad = rng.uniform(0.1, 0.3) * min(H, W)
            img[(rr - cr) ** 2 + (cc - cc0) ** 2 <= rad ** 2] = val
    return img


def synth_deconv_instance(dims=(32, 32), seed=0, noise_sigma=0.05, radius=3,
                          shape="horizontal", **kw):
    """Blurred noisy observation of a random phantom.

    Returns ``(data_term, phantom)`` with the phantom flattened row-major.
    """
    H, W = dims
    if H < 8 or W < 8:
        raise ValueError("deconvolution instances need at least 8x8 pixels")
    rng = np.random.default_rng(seed)
    phantom = random_phantom(dims, rng)
    kernel = motion_blur_kernel(radius, shape)
    A = convolution_matrix(dims, kernel)
    f = A @ phantom.ravel()
    if noise_sigma > 0:
        f = f + noise_sigma * rng.standard_normal(f.size)
    return DeconvDataTerm(kernel, f, dims, **kw), phantom.ravel()


# --------------------------------------------------------------------------
# PGM (P2) images


def write_pgm(path, img, maxval: int = 65535) -> None:
    """Write ``img`` linearly rescaled to ``0..maxval`` as plain-text PGM."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scale = (hi - lo) or 1.0
    q = np.rint((img - lo) / scale * maxval).astype(np.int64)
    lines = ["P2", f"# range {lo!r} {hi!r}", f"{img.shape[1]} {img.shape[0]}", str(maxval)]
    lines += [" ".join(map(str, row)) for row in q.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    """Read a P2 file; the ``# range`` comment, if present, restores the scale."""
    lo, hi = 0.0, 1.0
    tokens = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 3 and parts[0] == "range":
                lo, hi = float(parts[1]), float(parts[2])
            continue
        tokens += line.split()
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    q = np.array(tokens[4:4 + w * h], dtype=np.float64).reshape(h, w)
    return lo + q / maxval * ((hi - lo) or 1.0)
