"""Synthetic surfaces and known deformations for recovery experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack
from scipy.spatial.distance import cdist

from .covariance import MaternParams, matern_correlation
from .errors import CapExceededError, ConfigError, IndefiniteCovarianceError
from .pointcloud import BBox, PointCloud
from .transform import rotation_matrix

SIM_CAP = 20_000
COORDS = ("x", "y", "z", "phi")

# fixed-seed streams per purpose so the draws do not overlap
_STREAM = {"locations": 1, "surface": 2, "split": 3, "quadratic": 4, "matern": 5}


def _rng(seed, purpose):
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAM[purpose]]))


def _cov_upper_factor(xy, p: MaternParams, chunk=1024):
    """Upper Cholesky factor ``U`` (``U^T U = Sigma + tau2 I``) built in place, row block by row block."""
    n = len(xy)
    K = np.empty((n, n), order="F")
    for i in range(0, n, chunk):
        d = cdist(xy[i:i + chunk], xy)
        K[i:i + chunk] = p.sigma2 * matern_correlation(d, p.a, p.nu)
    K.flat[:: n + 1] += p.tau2
    U, info = lapack.dpotrf(K, lower=0, clean=1, overwrite_a=1)
    if info > 0:
        raise IndefiniteCovarianceError(info)
    return U


def gp_draw(xy, p: MaternParams, rng, size=1):
    """Exact draw(s) of a zero-mean Matérn process plus nugget at ``xy``; shape ``(size, n)``."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    if len(xy) > SIM_CAP:
        raise CapExceededError(f"{len(xy)} locations exceeds the dense simulation cap of {SIM_CAP}; tile the domain")
    U = _cov_upper_factor(xy, p)
    z = rng.standard_normal((size, len(xy)))
    return z @ U


def simulate_gp_cloud(n, box: BBox, p: MaternParams, seed) -> PointCloud:
    """Uniform locations in ``box`` with one exact Matérn + nugget elevation draw."""
    if n > SIM_CAP:
        raise CapExceededError(f"n={n} exceeds the dense simulation cap of {SIM_CAP}; tile the domain")
    if n < 1:
        raise ConfigError("n must be positive")
    rl = _rng(seed, "locations")
    xy = np.column_stack([rl.uniform(box.x_min, box.x_max, n), rl.uniform(box.y_min, box.y_max, n)])
    z = gp_draw(xy, p, _rng(seed, "surface"))[0]
    return PointCloud.from_arrays(xy, z)


def split_cloud(cloud: PointCloud, seed, return_indices=False):
    """Random disjoint halves ``(fixed, moving)``; the first gets ``n // 2`` points."""
    n = len(cloud)
    if n < 2:
        raise ConfigError("need at least two points to split")
    perm = _rng(seed, "split").permutation(n)
    a, b = np.sort(perm[: n // 2]), np.sort(perm[n // 2:])
    fixed, moving = cloud.take(a).with_role("fixed"), cloud.take(b).with_role("moving")
    if return_indices:
        return fixed, moving, a, b
    return fixed, moving


@dataclass(frozen=True)
class QuadraticDeform:
    """``m = alpha1 sx^2 + alpha2 sy^2 + beta1 sx + beta2 sy`` per coordinate.

    ``coeffs[c] = (alpha1, alpha2, beta1, beta2)`` for ``c`` in x, y, z, phi;
    planar coordinates are taken relative to ``origin``.
    """

    coeffs: dict
    origin: tuple = (0.0, 0.0)

    def evaluate(self, coord, xy) -> np.ndarray:
        a1, a2, b1, b2 = self.coeffs[coord]
        sx = xy[:, 0] - self.origin[0]
        sy = xy[:, 1] - self.origin[1]
        return a1 * sx * sx + a2 * sy * sy + b1 * sx + b2 * sy


def draw_quadratic(box: BBox, seed, alpha=0.002, beta=0.04) -> QuadraticDeform:
    """Independent ``U(-alpha, alpha)`` quadratic and ``U(-beta, beta)`` linear coefficients."""
    rng = _rng(seed, "quadratic")
    coeffs = {}
    for c in COORDS:
        a = rng.uniform(-alpha, alpha, 2)
        b = rng.uniform(-beta, beta, 2)
        coeffs[c] = (float(a[0]), float(a[1]), float(b[0]), float(b[1]))
    return QuadraticDeform(coeffs, (box.x_min, box.y_min))


DEFAULT_DEFORM_FIELD = MaternParams(sigma2=0.01, a=6.0, nu=2.0, tau2=1e-5)


def draw_matern_field(xy, hyper: MaternParams = DEFAULT_DEFORM_FIELD, seed=0, coords=COORDS) -> dict:
    """One independent exact Matérn field per requested coordinate, all at ``xy``."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    draws = gp_draw(xy, hyper, _rng(seed, "matern"), size=len(COORDS))
    return {c: draws[COORDS.index(c)] for c in coords}


@dataclass(frozen=True)
class DeformSpec:
    kind: str
    applied_to: tuple
    seed: int = 0
    hyper: MaternParams = DEFAULT_DEFORM_FIELD
    alpha: float = 0.002
    beta: float = 0.04
    rotation_center: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("quadratic", "matern", "none"):
            raise ConfigError(f"unknown deformation kind {self.kind!r}")
        applied = tuple(self.applied_to)
        if self.kind != "none" and not applied:
            raise ConfigError("applied_to must name at least one of x, y, z, phi")
        bad = [c for c in applied if c not in COORDS]
        if bad:
            raise ConfigError(f"unknown coordinates {bad}")
        object.__setattr__(self, "applied_to", applied)


@dataclass(frozen=True, eq=False)
class DeformTruth:
    """Exact per-point record of a de-registration.

    ``params`` holds ``m_x, m_y, m_z, m_phi`` (zeros for coordinates not
    deformed); ``displacement`` is the planar shift each point actually
    received, which includes the rotation about ``center``.
    """

    params: dict
    displacement: np.ndarray
    applied_to: tuple
    center: tuple
    kind: str = "none"
    extra: dict = field(default_factory=dict)

    def truth_matrix(self) -> np.ndarray:
        """Columns x, y, z, phi: planar displacement, elevation shift, rotation angle."""
        return np.column_stack([self.displacement[:, 0], self.displacement[:, 1],
                                self.params["z"], self.params["phi"]])

    def invert(self, deformed: PointCloud) -> PointCloud:
        xy = deformed.xy - self.displacement
        z = deformed.z - self.params["z"]
        return PointCloud.from_arrays(xy, z, role=deformed.role)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "applied_to": list(self.applied_to),
            "center": list(self.center),
            "m_x": self.params["x"].tolist(),
            "m_y": self.params["y"].tolist(),
            "m_z": self.params["z"].tolist(),
            "m_phi": self.params["phi"].tolist(),
            "dx": self.displacement[:, 0].tolist(),
            "dy": self.displacement[:, 1].tolist(),
            **self.extra,
        }


def apply_deform(cloud: PointCloud, spec: DeformSpec, box: BBox | None = None):
    """De-register ``cloud``; returns ``(deformed_cloud, DeformTruth)``.

    Each point ``u`` maps to ``c + R(m_phi)(u - c) + (m_x, m_y)`` and its
    elevation gains ``m_z``, with deformation values evaluated at ``u``.
    """
    if box is None:
        from .pointcloud import bbox

        box = bbox(cloud)
    xy, z = cloud.xy, cloud.z
    n = len(cloud)
    params = {c: np.zeros(n) for c in COORDS}
    extra = {}
    if spec.kind == "quadratic":
        q = draw_quadratic(box, spec.seed, spec.alpha, spec.beta)
        for c in spec.applied_to:
            params[c] = q.evaluate(c, xy)
        extra["coefficients"] = {c: list(q.coeffs[c]) for c in spec.applied_to}
    elif spec.kind == "matern":
        fields = draw_matern_field(xy, spec.hyper, spec.seed, coords=spec.applied_to)
        for c in spec.applied_to:
            params[c] = fields[c]

    center = np.asarray(spec.rotation_center if spec.rotation_center is not None else box.center, dtype=np.float64)
    new_xy = xy.copy()
    if "phi" in spec.applied_to:
        ph = params["phi"]
        cs, sn = np.cos(ph), np.sin(ph)
        rel = xy - center
        new_xy = center + np.column_stack([cs * rel[:, 0] + sn * rel[:, 1], -sn * rel[:, 0] + cs * rel[:, 1]])
    if "x" in spec.applied_to:
        new_xy[:, 0] = new_xy[:, 0] + params["x"]
    if "y" in spec.applied_to:
        new_xy[:, 1] = new_xy[:, 1] + params["y"]
    new_z = z + params["z"] if "z" in spec.applied_to else z.copy()
    displacement = new_xy - xy
    deformed = PointCloud.from_arrays(new_xy, new_z, role=cloud.role)
    truth = DeformTruth(params, displacement, spec.applied_to, (float(center[0]), float(center[1])), spec.kind, extra)
    return deformed, truth


def rotation_about(xy, phi, center):
    """Rotate points about ``center`` with the package's rotation convention."""
    return (np.asarray(xy) - center) @ rotation_matrix(phi).T + center
