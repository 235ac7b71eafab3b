"""Cellular geometry, propagation model and cooperation clusters.

A :class:`Scenario` holds everything needed to compute the amplitude
pathloss ``alpha[m, k]`` from every base station ``m`` to every user group
``k``.  :func:`build_cluster_problems` reduces each cooperation cluster to
the single-cell dual-uplink instance (:class:`ClusterProblem`) consumed by
the solvers: out-of-cluster transmissions are folded into a per-group
interference-plus-noise variance and the in-cluster gains are normalised by
it.

Units: distances in km, angles in degrees, powers and gains stored in dB in
the scenario (so that configuration files round-trip exactly) and converted
to linear scale on use.  ``alpha`` and ``beta`` are amplitude gains.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "BaseStation",
    "UserGroup",
    "PathlossParams",
    "AntennaParams",
    "Cluster",
    "Scenario",
    "ClusterProblem",
    "pathloss_gain",
    "antenna_gain",
    "torus_images",
    "torus_distance",
    "link_geometry",
    "channel_gains",
    "interference_variance",
    "build_cluster_problems",
    "check_symmetric_clusters",
    "two_cell_scenario",
    "hex7_scenario",
    "db_to_linear",
]

logger = logging.getLogger(__name__)

LAYOUTS = ("linear", "hex_torus")


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BaseStation:
    x: float
    y: float
    boresight_deg: float = 0.0
    gamma: int = 1


@dataclass(frozen=True)
class UserGroup:
    x: float
    y: float


@dataclass(frozen=True)
class PathlossParams:
    """Power-law pathloss ``alpha^2 = G0 * (max(d, d_min) / d0) ** -eta``.

    ``ref_gain_db`` is ``G0`` in dB.  Use :meth:`from_edge_snr` to pick
    ``G0`` so that a single base station at full power reaches a given SNR
    at the reference distance.
    """

    ref_gain_db: float = 20.0
    exponent: float = 3.76
    ref_distance_km: float = 1.0
    min_distance_km: float = 0.035

    @classmethod
    def from_edge_snr(cls, edge_snr_db: float = 20.0, per_bs_power_db: float = 0.0,
                      **kwargs) -> "PathlossParams":
        return cls(ref_gain_db=edge_snr_db - per_bs_power_db, **kwargs)

    @property
    def ref_gain(self) -> float:
        return db_to_linear(self.ref_gain_db)

    def validate(self):
        vals = (self.ref_gain_db, self.exponent, self.ref_distance_km, self.min_distance_km)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError("pathloss parameters must be finite")
        if self.exponent <= 0:
            raise InvalidInputError("pathloss exponent must be positive")
        if self.ref_distance_km <= 0 or self.min_distance_km <= 0:
            raise InvalidInputError("reference and minimum distances must be positive")


@dataclass(frozen=True)
class AntennaParams:
    """Parabolic horizontal pattern ``-min(12 (theta/theta_3dB)^2, A_m)`` dB."""

    theta_3db_deg: float = 70.0
    front_back_db: float = 20.0
    enabled: bool = False

    def validate(self):
        if not (self.theta_3db_deg > 0 and math.isfinite(self.theta_3db_deg)):
            raise InvalidInputError("theta_3db_deg must be positive")
        if not (self.front_back_db >= 0 and math.isfinite(self.front_back_db)):
            raise InvalidInputError("front_back_db must be non-negative")


@dataclass(frozen=True)
class Cluster:
    bs: tuple[int, ...]
    groups: tuple[int, ...]


@dataclass(frozen=True)
class Scenario:
    base_stations: tuple[BaseStation, ...]
    groups: tuple[UserGroup, ...]
    partition: tuple[Cluster, ...]
    per_bs_power_db: float = 0.0
    pathloss: PathlossParams = field(default_factory=PathlossParams)
    antenna: AntennaParams = field(default_factory=AntennaParams)
    layout: str = "linear"
    cell_radius_km: float = 1.0
    name: str = ""

    def __post_init__(self):
        # Accept lists from callers; store tuples so the object is hashable
        # and safely shared between workers.
        object.__setattr__(self, "base_stations", tuple(self.base_stations))
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "partition", tuple(
            Cluster(tuple(int(b) for b in c.bs), tuple(int(g) for g in c.groups))
            for c in self.partition))

    @property
    def per_bs_power(self) -> float:
        return db_to_linear(self.per_bs_power_db)

    @property
    def num_bs(self) -> int:
        return len(self.base_stations)

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @property
    def gamma(self) -> int:
        return self.base_stations[0].gamma

    def cluster_of_group(self) -> np.ndarray:
        owner = np.empty(self.num_groups, dtype=int)
        for ell, c in enumerate(self.partition):
            owner[list(c.groups)] = ell
        return owner

    def validate(self):
        """Check the structural invariants; raise :class:`InvalidInputError`."""
        if self.layout not in LAYOUTS:
            raise InvalidInputError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if not self.base_stations or not self.groups:
            raise InvalidInputError("scenario needs at least one base station and one group")
        if not math.isfinite(self.per_bs_power_db):
            raise InvalidInputError("per-BS power must be finite")
        if not (self.cell_radius_km > 0 and math.isfinite(self.cell_radius_km)):
            raise InvalidInputError("cell radius must be positive")
        self.pathloss.validate()
        self.antenna.validate()
        for b in self.base_stations:
            if not all(math.isfinite(v) for v in (b.x, b.y, b.boresight_deg)):
                raise InvalidInputError("base-station positions must be finite")
            if int(b.gamma) != b.gamma or b.gamma < 1:
                raise InvalidInputError("gamma must be a positive integer")
        if len({b.gamma for b in self.base_stations}) != 1:
            raise InvalidInputError("all base stations must share the same gamma")
        for g in self.groups:
            if not (math.isfinite(g.x) and math.isfinite(g.y)):
                raise InvalidInputError("group positions must be finite")

        _check_partition([c.bs for c in self.partition], self.num_bs, "base station")
        _check_partition([c.groups for c in self.partition], self.num_groups, "group")
        if any(not c.bs or not c.groups for c in self.partition):
            raise InvalidInputError("clusters must contain at least one BS and one group")
        return self

    # -- serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "layout": self.layout,
            "cell_radius_km": self.cell_radius_km,
            "per_bs_power_db": self.per_bs_power_db,
            "pathloss": {
                "ref_gain_db": self.pathloss.ref_gain_db,
                "exponent": self.pathloss.exponent,
                "ref_distance_km": self.pathloss.ref_distance_km,
                "min_distance_km": self.pathloss.min_distance_km,
            },
            "antenna": {
                "enabled": self.antenna.enabled,
                "theta_3db_deg": self.antenna.theta_3db_deg,
                "front_back_db": self.antenna.front_back_db,
            },
            "base_stations": [
                {"x_km": b.x, "y_km": b.y, "boresight_deg": b.boresight_deg, "gamma": b.gamma}
                for b in self.base_stations
            ],
            "groups": [{"x_km": g.x, "y_km": g.y} for g in self.groups],
            "partition": [{"bs": list(c.bs), "groups": list(c.groups)} for c in self.partition],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        """Build and validate a scenario from its JSON form.

        ``pathloss`` may give either ``ref_gain_db`` or ``edge_snr_db``; the
        latter is converted using ``per_bs_power_db``.
        """
        try:
            power_db = float(d.get("per_bs_power_db", 0.0))
            pl = dict(d.get("pathloss", {}))
            if "edge_snr_db" in pl:
                if "ref_gain_db" in pl:
                    raise InvalidInputError("give either ref_gain_db or edge_snr_db, not both")
                pl["ref_gain_db"] = float(pl.pop("edge_snr_db")) - power_db
            pathloss = PathlossParams(**{k: float(v) for k, v in pl.items()})
            ant = dict(d.get("antenna", {}))
            antenna = AntennaParams(
                theta_3db_deg=float(ant.get("theta_3db_deg", 70.0)),
                front_back_db=float(ant.get("front_back_db", 20.0)),
                enabled=bool(ant.get("enabled", False)),
            )
            bs = [BaseStation(float(b["x_km"]), float(b["y_km"]),
                              float(b.get("boresight_deg", 0.0)), int(b.get("gamma", 1)))
                  for b in d["base_stations"]]
            groups = [UserGroup(float(g["x_km"]), float(g["y_km"])) for g in d["groups"]]
            partition = d.get("partition")
            if partition is None:
                partition = [{"bs": list(range(len(bs))), "groups": list(range(len(groups)))}]
            clusters = [Cluster(tuple(c["bs"]), tuple(c["groups"])) for c in partition]
            sc = cls(
                base_stations=bs, groups=groups, partition=clusters,
                per_bs_power_db=power_db, pathloss=pathloss, antenna=antenna,
                layout=str(d.get("layout", "linear")),
                cell_radius_km=float(d.get("cell_radius_km", 1.0)),
                name=str(d.get("name", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed scenario: {exc!r}") from exc
        return sc.validate()


def _check_partition(parts: Sequence[Sequence[int]], n: int, what: str):
    flat = [i for p in parts for i in p]
    if sorted(flat) != list(range(n)):
        raise InvalidInputError(f"{what} clusters must partition 0..{n - 1} exactly once each")


@dataclass(frozen=True, eq=False)
class ClusterProblem:
    """One cluster's dual-uplink instance.

    ``beta`` has shape ``(num_bs, A)``; column ``k`` belongs to scenario
    group ``groups[k]``.
    """

    cluster_id: int
    beta: np.ndarray
    gamma: int
    Q: float
    sigma2: np.ndarray
    groups: tuple[int, ...] = ()
    bs: tuple[int, ...] = ()

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float, ndmin=2)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        sigma2 = np.array(self.sigma2, dtype=float, ndmin=1)
        sigma2.setflags(write=False)
        object.__setattr__(self, "sigma2", sigma2)
        if not self.groups:
            object.__setattr__(self, "groups", tuple(range(beta.shape[1])))
        if not self.bs:
            object.__setattr__(self, "bs", tuple(range(beta.shape[0])))
        if not np.all(np.isfinite(beta)) or np.any(beta < 0):
            raise InvalidInputError("beta must be finite and non-negative")
        if self.gamma < 1 or not (self.Q > 0):
            raise InvalidInputError("gamma >= 1 and Q > 0 required")

    @property
    def A(self) -> int:
        return self.beta.shape[1]

    @property
    def num_bs(self) -> int:
        return self.beta.shape[0]

    @property
    def B(self) -> int:
        return self.gamma * self.num_bs

    @property
    def beta2(self) -> np.ndarray:
        return self.beta ** 2

    @classmethod
    def single(cls, beta, gamma=1, Q=1.0):
        """Convenience constructor for hand-built problems (``sigma2 = 1``)."""
        beta = np.array(beta, dtype=float, ndmin=2)
        return cls(cluster_id=0, beta=beta, gamma=gamma, Q=float(Q),
                   sigma2=np.ones(beta.shape[1]))


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------
def pathloss_gain(d, params: PathlossParams):
    """Amplitude gain ``sqrt(G0 (max(d, d_min)/d0)^-eta)``; vectorised over ``d``."""
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)):
        raise InvalidInputError("distance must be finite")
    if np.any(d < 0):
        raise InvalidInputError("distance must be non-negative")
    dd = np.maximum(d, params.min_distance_km) / params.ref_distance_km
    out = np.sqrt(params.ref_gain * dd ** (-params.exponent))
    return float(out) if out.ndim == 0 else out


def _fold_deg(angle):
    return (np.asarray(angle, dtype=float) + 180.0) % 360.0 - 180.0


def antenna_gain(off_boresight_deg, params: AntennaParams):
    """Linear power gain of the parabolic sector pattern.

    Returns 1 when the pattern is disabled.
    """
    if not params.enabled:
        return 1.0 if np.ndim(off_boresight_deg) == 0 else np.ones(np.shape(off_boresight_deg))
    theta = _fold_deg(off_boresight_deg)
    att_db = np.minimum(12.0 * (theta / params.theta_3db_deg) ** 2, params.front_back_db)
    out = 10.0 ** (-att_db / 10.0)
    return float(out) if out.ndim == 0 else out


def torus_images(cell_radius_km: float) -> np.ndarray:
    """Translation vectors (identity first) of the 7-cell wrap-around.

    Cell centres sit on the hexagonal lattice with inter-site distance
    ``sqrt(3) R``; the 7-cell cluster repeats along ``2 a1 + a2`` and its
    rotations by multiples of 60 degrees.
    """
    isd = math.sqrt(3.0) * cell_radius_km
    t1 = isd * np.array([2.5, math.sqrt(3.0) / 2.0])
    shifts = [np.zeros(2)]
    for k in range(6):
        a = math.radians(60.0 * k)
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        shifts.append(rot @ t1)
    return np.array(shifts)


def torus_distance(p1, p2, layout: str = "linear", cell_radius_km: float = 1.0) -> float:
    """Distance from ``p1`` to the nearest wrap-around image of ``p2``."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if layout == "linear":
        return float(np.hypot(*(p2 - p1)))
    imgs = p2 + torus_images(cell_radius_km)
    return float(np.min(np.hypot(imgs[:, 0] - p1[0], imgs[:, 1] - p1[1])))


def _image_geometry(scenario: Scenario):
    """Distances and off-boresight angles to every wrap image, ``(M, K, images)``."""
    bs_xy = np.array([[b.x, b.y] for b in scenario.base_stations])
    g_xy = np.array([[g.x, g.y] for g in scenario.groups])
    if scenario.layout == "hex_torus":
        shifts = torus_images(scenario.cell_radius_km)
    else:
        shifts = np.zeros((1, 2))
    vec = g_xy[None, :, None, :] + shifts[None, None, :, :] - bs_xy[:, None, None, :]
    dist = np.hypot(vec[..., 0], vec[..., 1])
    bearing = np.degrees(np.arctan2(vec[..., 1], vec[..., 0]))
    boresight = np.array([b.boresight_deg for b in scenario.base_stations])[:, None, None]
    return dist, _fold_deg(bearing - boresight)


def link_geometry(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Distances (km) and off-boresight angles (deg), both shaped ``(M, K)``.

    For the torus layout the angle is taken toward the first image that
    attains the minimum distance.
    """
    dist_all, off_all = _image_geometry(scenario)
    best = np.argmin(dist_all, axis=2)[..., None]
    return (np.take_along_axis(dist_all, best, axis=2)[..., 0],
            np.take_along_axis(off_all, best, axis=2)[..., 0])


def channel_gains(scenario: Scenario) -> np.ndarray:
    """Power gains ``alpha[m, k]**2`` including the antenna pattern.

    When several wrap images are equally near, the antenna gain is averaged
    over them so that every cell of the torus sees the same environment.
    """
    dist_all, off_all = _image_geometry(scenario)
    dist = dist_all.min(axis=2)
    tied = dist_all <= dist[..., None] * (1.0 + 1e-9) + 1e-12
    ant = np.sum(antenna_gain(off_all, scenario.antenna) * tied, axis=2) / tied.sum(axis=2)
    return pathloss_gain(dist, scenario.pathloss) ** 2 * ant


def interference_variance(scenario: Scenario, alpha2: np.ndarray | None = None) -> np.ndarray:
    """Per-group ``sigma_k^2 = 1 + sum_{m outside k's cluster} alpha_{m,k}^2 P``."""
    if alpha2 is None:
        alpha2 = channel_gains(scenario)
    P = scenario.per_bs_power
    sigma2 = np.ones(scenario.num_groups)
    for c in scenario.partition:
        outside = np.ones(scenario.num_bs, dtype=bool)
        outside[list(c.bs)] = False
        g = list(c.groups)
        sigma2[g] += P * alpha2[outside][:, g].sum(axis=0)
    return sigma2


def check_symmetric_clusters(scenario: Scenario, rtol: float = 1e-9) -> bool:
    """Whether all clusters look alike (same size and distance profiles).

    Emits a warning when they do not; the cluster-wise power argument
    relies on this symmetry but the computation itself still runs.
    """
    dist, _ = link_geometry(scenario)
    profiles = []
    for c in scenario.partition:
        sub = dist[np.ix_(list(c.bs), list(c.groups))]
        rows = sorted(tuple(np.sort(sub[:, j])) for j in range(sub.shape[1]))
        profiles.append((len(c.bs), np.array(rows)))
    ref_n, ref_rows = profiles[0]
    ok = True
    for n, rows in profiles[1:]:
        if n != ref_n or rows.shape != ref_rows.shape or not np.allclose(rows, ref_rows, rtol=rtol, atol=1e-12):
            ok = False
            break
    if not ok:
        msg = "clusters are not symmetric; per-BS power equality is not guaranteed"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        logger.warning(msg)
    return ok


def build_cluster_problems(scenario: Scenario) -> list[ClusterProblem]:
    scenario.validate()
    check_symmetric_clusters(scenario)
    alpha2 = channel_gains(scenario)
    sigma2 = interference_variance(scenario, alpha2)
    problems = []
    for ell, c in enumerate(scenario.partition):
        bs, groups = list(c.bs), list(c.groups)
        beta = np.sqrt(alpha2[np.ix_(bs, groups)]) / np.sqrt(sigma2[groups])[None, :]
        problems.append(ClusterProblem(
            cluster_id=ell, beta=beta, gamma=scenario.gamma,
            Q=len(bs) * scenario.per_bs_power, sigma2=sigma2[groups],
            groups=tuple(groups), bs=tuple(bs),
        ))
    return problems


# ---------------------------------------------------------------------------
# Built-in layouts
# ---------------------------------------------------------------------------
def two_cell_scenario(cooperation: str = "full", gamma: int = 4, num_groups: int = 8,
                      edge_snr_db: float = 20.0, per_bs_power_db: float = 0.0,
                      name: str = "") -> Scenario:
    """Two one-sided cells with BSs at -1 km and +1 km.

    Groups sit at the centres of ``num_groups`` equal segments of the line
    between the BSs.  ``cooperation='none'`` gives each BS the half of the
    groups on its side.
    """
    if num_groups % 2:
        raise InvalidInputError("num_groups must be even")
    bs = [BaseStation(-1.0, 0.0, 0.0, gamma), BaseStation(1.0, 0.0, 180.0, gamma)]
    step = 2.0 / num_groups
    groups = [UserGroup(-1.0 + (k + 0.5) * step, 0.0) for k in range(num_groups)]
    half = num_groups // 2
    if cooperation == "full":
        part = [Cluster((0, 1), tuple(range(num_groups)))]
    elif cooperation == "none":
        part = [Cluster((0,), tuple(range(half))), Cluster((1,), tuple(range(half, num_groups)))]
    else:
        raise InvalidInputError(f"unknown 2-cell cooperation {cooperation!r}")
    return Scenario(
        base_stations=bs, groups=groups, partition=part, per_bs_power_db=per_bs_power_db,
        pathloss=PathlossParams.from_edge_snr(edge_snr_db, per_bs_power_db),
        antenna=AntennaParams(enabled=False), layout="linear", name=name,
    ).validate()


def hex7_scenario(cooperation: str = "none", gamma: int = 4, cell_radius_km: float = 1.0,
                  edge_snr_db: float = 20.0, per_bs_power_db: float = 0.0,
                  antenna: AntennaParams | None = None, name: str = "") -> Scenario:
    """Seven three-sectored hexagonal cells on a wrap-around torus.

    Cell centres are at the origin and its six neighbours.  Each sector is
    the rhombus spanned by two hexagon vertices 120 degrees apart and is cut
    into four equal rhombi; a group sits at each sub-rhombus centre.  BS
    index is ``3 * cell + sector`` and group index ``4 * bs + j``.
    ``cooperation`` is ``'none'`` (21 clusters), ``'sector'`` (7 clusters
    of co-located sectors) or ``'full'`` (one cluster).
    """
    R = cell_radius_km
    isd = math.sqrt(3.0) * R
    centres = [(0.0, 0.0)] + [
        (isd * math.cos(math.radians(60.0 * k)), isd * math.sin(math.radians(60.0 * k)))
        for k in range(6)
    ]
    boresights = (90.0, 210.0, 330.0)
    bs, groups = [], []
    for cx, cy in centres:
        for bore in boresights:
            bs.append(BaseStation(cx, cy, bore, gamma))
            v1 = R * np.array([math.cos(math.radians(bore - 60.0)), math.sin(math.radians(bore - 60.0))])
            v2 = R * np.array([math.cos(math.radians(bore + 60.0)), math.sin(math.radians(bore + 60.0))])
            for s, t in ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)):
                p = s * v1 + t * v2
                groups.append(UserGroup(cx + float(p[0]), cy + float(p[1])))
    if cooperation == "none":
        part = [Cluster((m,), tuple(range(4 * m, 4 * m + 4))) for m in range(21)]
    elif cooperation == "sector":
        part = [Cluster(tuple(range(3 * c, 3 * c + 3)), tuple(range(12 * c, 12 * c + 12)))
                for c in range(7)]
    elif cooperation == "full":
        part = [Cluster(tuple(range(21)), tuple(range(84)))]
    else:
        raise InvalidInputError(f"unknown 7-cell cooperation {cooperation!r}")
    return Scenario(
        base_stations=bs, groups=groups, partition=part, per_bs_power_db=per_bs_power_db,
        pathloss=PathlossParams.from_edge_snr(edge_snr_db, per_bs_power_db),
        antenna=antenna or AntennaParams(enabled=True), layout="hex_torus",
        cell_radius_km=cell_radius_km, name=name,
    ).validate()
