"""Multipath-component-distance DBSCAN grouping of estimated paths."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .mathutil import direction_unit_vectors
from .params import ClusteringParams


@dataclass
class ClusterResult:
    """Partition of a multipath set into clusters plus noise indices."""

    clusters: list = field(default_factory=list)  # list of lists of Mpc indices
    noise: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def labels(self, n: int) -> np.ndarray:
        """-1 for noise, else cluster id, for ``n`` input components."""
        lab = np.full(n, -1, dtype=int)
        for cid, members in enumerate(self.clusters):
            lab[members] = cid
        return lab

    def cluster_powers(self, mpcs) -> np.ndarray:
        return np.array(
            [sum(mpcs[i].gain ** 2 for i in members) for members in self.clusters]
        )


def mcd(a, b, zeta: float, tau_max_s: float, tau_std_s: float) -> float:
    """Joint angle-delay distance between two components.

    sqrt(|u_a - u_b|^2 / 4 + (zeta * |dtau| * tau_std / tau_max^2)^2), with u
    the arrival unit vectors. A degenerate delay range contributes zero.
    """
    ua = direction_unit_vectors(a.aoa_az_deg, a.aoa_el_deg)
    ub = direction_unit_vectors(b.aoa_az_deg, b.aoa_el_deg)
    ang2 = float(np.sum((ua - ub) ** 2)) / 4.0
    if tau_max_s > 0:
        dly = zeta * abs(a.delay_s - b.delay_s) * tau_std_s / tau_max_s**2
    else:
        dly = 0.0
    return float(np.sqrt(ang2 + dly * dly))


def _distance_matrix(mpcs, zeta):
    delays = np.array([p.delay_s for p in mpcs])
    tau_max = float(delays.max()) if delays.size else 0.0
    tau_std = float(delays.std()) if delays.size else 0.0
    u = direction_unit_vectors(
        np.array([p.aoa_az_deg for p in mpcs]), np.array([p.aoa_el_deg for p in mpcs])
    )
    diff = u[:, None, :] - u[None, :, :]
    ang2 = np.sum(diff**2, axis=-1) / 4.0
    if tau_max > 0:
        dly = zeta * np.abs(delays[:, None] - delays[None, :]) * tau_std / tau_max**2
    else:
        dly = np.zeros_like(ang2)
    return np.sqrt(ang2 + dly**2)


def dbscan(mpcs, eps: float, min_pts: int, zeta: float = 8.0) -> ClusterResult:
    """Density clustering over the MCD metric.

    Deterministic: points are visited and clusters expanded in index order.
    The delay normalization (maximum delay and delay std) is computed over
    the input set.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    n = len(mpcs)
    params = {"eps": eps, "min_pts": min_pts, "delay_weight": zeta}
    if n == 0:
        return ClusterResult(clusters=[], noise=[], params=params)

    dist = _distance_matrix(mpcs, zeta)
    neighbors = [np.nonzero(dist[i] <= eps)[0] for i in range(n)]
    labels = np.full(n, -2, dtype=int)  # -2 unvisited, -1 noise
    cluster_id = 0
    for i in range(n):
        if labels[i] != -2:
            continue
        if neighbors[i].size < min_pts:
            labels[i] = -1
            continue
        labels[i] = cluster_id
        seeds = list(neighbors[i])
        pos = 0
        while pos < len(seeds):
            j = seeds[pos]
            pos += 1
            if labels[j] == -1:
                labels[j] = cluster_id
            if labels[j] != -2:
                continue
            labels[j] = cluster_id
            if neighbors[j].size >= min_pts:
                seeds.extend(k for k in neighbors[j] if labels[k] < 0 or labels[k] == -2)
        cluster_id += 1

    clusters = [sorted(np.nonzero(labels == cid)[0].tolist()) for cid in range(cluster_id)]
    noise = sorted(np.nonzero(labels == -1)[0].tolist())
    return ClusterResult(clusters=clusters, noise=noise, params=params)


def cluster_mpcs(mpcs, params: ClusteringParams) -> ClusterResult:
    return dbscan(mpcs, params.eps, params.min_pts, params.delay_weight)


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two labelings (1.0 = identical)."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.size != b.size:
        raise ValueError("label arrays must have equal length")
    n = a.size
    if n == 0:
        return 1.0
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    contingency = np.zeros((ua.size, ub.size), dtype=np.int64)
    np.add.at(contingency, (ia, ib), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(contingency).sum()
    sum_a = comb2(contingency.sum(axis=1)).sum()
    sum_b = comb2(contingency.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def write_cluster_csv(path, result: ClusterResult, n_mpcs: int) -> None:
    labels = result.labels(n_mpcs)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mpc_index", "cluster_id"])
        for i, lab in enumerate(labels):
            writer.writerow([i, int(lab)])


def read_cluster_csv(path) -> ClusterResult:
    by_cluster = {}
    noise = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["mpc_index", "cluster_id"]:
            raise ValueError(f"{path}: unexpected cluster CSV header {header}")
        for row in reader:
            idx, cid = int(row[0]), int(row[1])
            if cid < 0:
                noise.append(idx)
            else:
                by_cluster.setdefault(cid, []).append(idx)
    clusters = [sorted(by_cluster[cid]) for cid in sorted(by_cluster)]
    return ClusterResult(clusters=clusters, noise=sorted(noise), params={})
