"""Isolation rate, algebraic connectivity and computation-count scaling."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .grouping import CommGraph, GroupAssignment

ZERO_SNAP = 1e-10

STRUCTURE_HEADER = ["algo", "iso_rate", "lambda2_mean", "lambda2_var", "snapshots"]
SCALING_HEADER = ["n", "total", "per_agent"]


def laplacian(adjacency: np.ndarray) -> np.ndarray:
    a = np.asarray(adjacency, dtype=float)
    return np.diag(a.sum(axis=1)) - a


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and column eigenvectors of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T):
        raise ValueError("matrix must be symmetric")
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.triu(a, 1) ** 2)))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                # A <- J^T A J on rows/cols p, q
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def fiedler_pair(graph: CommGraph) -> tuple[float, Optional[np.ndarray]]:
    """Second-smallest Laplacian eigenvalue and its eigenvector; ``(0, None)`` below two nodes."""
    n = len(graph.nodes)
    if n < 2:
        return 0.0, None
    w, v = jacobi_eigh(laplacian(graph.adjacency()))
    lam = float(w[1])
    if abs(lam) < ZERO_SNAP:
        lam = 0.0
    return lam, v[:, 1]


def lambda2(graph: CommGraph) -> float:
    return fiedler_pair(graph)[0]


def iso_rate(trace: Sequence[CommGraph]) -> float:
    if not trace:
        raise ValueError("iso_rate needs at least one snapshot")
    isolated = total = 0
    for g in trace:
        deg = g.degree()
        isolated += sum(1 for d in deg.values() if d == 0)
        total += len(deg)
    return isolated / total if total else 0.0


def group_lambda2(assignment: GroupAssignment, comm: CommGraph) -> list[float]:
    """lambda2 of every group with two or more members, then a 0 per unassigned agent."""
    values = []
    for leader in sorted(assignment.groups):
        members = assignment.groups[leader]
        if len(members) >= 2:
            values.append(lambda2(comm.subgraph(members)))
    values.extend(0.0 for _ in assignment.unassigned)
    return values


@dataclass
class StructureReport:
    algorithm: str
    iso_rate: float
    lambda2_values: list = field(repr=False)
    lambda2_mean: float
    lambda2_var: float
    snapshots: int

    def to_json(self) -> dict:
        return {
            "algo": self.algorithm,
            "iso_rate": self.iso_rate,
            "lambda2_mean": self.lambda2_mean,
            "lambda2_var": self.lambda2_var,
            "snapshots": self.snapshots,
            "lambda2_count": len(self.lambda2_values),
        }

    def csv_row(self) -> list:
        return [self.algorithm, repr(self.iso_rate), repr(self.lambda2_mean), repr(self.lambda2_var), self.snapshots]


def structure_report(trace: Sequence[tuple[GroupAssignment, CommGraph]], algorithm: str = "") -> StructureReport:
    if not trace:
        raise ValueError("structure_report needs at least one snapshot")
    values: list[float] = []
    for assignment, comm in trace:
        values.extend(group_lambda2(assignment, comm))
    arr = np.array(values, dtype=float)
    mean = float(arr.mean()) if arr.size else 0.0
    var = float(arr.var()) if arr.size else 0.0
    return StructureReport(algorithm, iso_rate([c for _, c in trace]), values, mean, var, len(trace))


def structure_csv(reports: Iterable[StructureReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STRUCTURE_HEADER)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


# ---------------------------------------------------------------------------
# scaling


@dataclass
class ScalingReport:
    rows: list  # (n, total, per_agent)

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SCALING_HEADER)
        for n, total, per in self.rows:
            w.writerow([n, total, repr(per)])
        return buf.getvalue()

    def per_agent(self) -> list[float]:
        return [r[2] for r in self.rows]

    def totals(self) -> list[int]:
        return [r[1] for r in self.rows]


def scaling_bench(sizes: Sequence[int], world, params=None, interference_enabled: bool = True,
                  seed: Optional[int] = None) -> ScalingReport:
    """One IA-KRC grouping pass per team size on ``world``.

    Allies are drawn as nested prefixes of a single seeded permutation of the
    free cells, so larger teams contain the smaller ones. Existing allies in
    ``world`` are ignored; its enemies supply the interference field.
    """
    from .pipeline import scaling_pass

    if not sizes:
        raise ValueError("sizes must be non-empty")
    if any(n < 1 for n in sizes):
        raise ValueError("team sizes must be positive")
    rows = []
    for n, total in scaling_pass(world, list(sizes), params, interference_enabled, seed):
        rows.append((n, total, total / n))
    return ScalingReport(rows)
