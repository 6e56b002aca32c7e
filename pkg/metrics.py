import csv
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence
import numpy as np

from flow_core import FlowField, InvalidArgumentError, OcclusionMask, check_same_shape


CSV_HEADER = ["id", "epe_all", "epe_noc", "epe_occ", "n_all", "n_noc", "n_occ"]
PAIRED_HEADER = (
    ["id"]
    + ["%s_%s" % (r, d) for d in ("forward", "backward") for r in ("epe_all", "epe_noc", "epe_occ")]
    + ["delta_all", "delta_noc", "delta_occ", "n_all", "n_noc", "n_occ"]
)
AGGREGATE_ID = "aggregate"


@dataclass(frozen=True)
class EpeReport:
    """
    End-point error split by the ground-truth occlusion mask.
    A region with no pixels reports None instead of a mean.
    """

    id: str
    epe_all: float
    epe_noc: Optional[float]
    epe_occ: Optional[float]
    n_all: int
    n_noc: int
    n_occ: int

    def to_row(self) -> List[str]:
        return [self.id] + [_fmt(x) for x in (self.epe_all, self.epe_noc, self.epe_occ)] + [
            str(self.n_all),
            str(self.n_noc),
            str(self.n_occ),
        ]


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else "%.6f" % x


def _parse(x: str) -> Optional[float]:
    return None if x == "" else float(x)


def endpoint_error(estimate: FlowField, gt: FlowField) -> np.ndarray:
    check_same_shape(estimate, gt)
    diff = estimate.data.astype(np.float64) - gt.data.astype(np.float64)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def epe(
    estimate: FlowField, gt: FlowField, occ_gt: OcclusionMask, id: str = ""
) -> EpeReport:
    check_same_shape(estimate, gt, occ_gt)
    err = endpoint_error(estimate, gt)
    occ = occ_gt.occluded
    n_occ = int(occ.sum())
    n_all = int(err.size)
    n_noc = n_all - n_occ
    return EpeReport(
        id=id,
        epe_all=float(err.mean()),
        epe_noc=float(err[~occ].mean()) if n_noc else None,
        epe_occ=float(err[occ].mean()) if n_occ else None,
        n_all=n_all,
        n_noc=n_noc,
        n_occ=n_occ,
    )


def _weighted(values: Sequence[Optional[float]], counts: Sequence[int]) -> Optional[float]:
    total = sum(c for v, c in zip(values, counts) if v is not None)
    if total == 0:
        return None
    return sum(v * c for v, c in zip(values, counts) if v is not None) / total


def aggregate(reports: Sequence[EpeReport], id: str = AGGREGATE_ID) -> EpeReport:
    """
    Pixel-weighted mean over sequences, equal to pooling every pixel of every
    sequence into one evaluation.
    """
    if not reports:
        raise InvalidArgumentError("cannot aggregate an empty list of reports")
    return EpeReport(
        id=id,
        epe_all=_weighted([r.epe_all for r in reports], [r.n_all for r in reports]),
        epe_noc=_weighted([r.epe_noc for r in reports], [r.n_noc for r in reports]),
        epe_occ=_weighted([r.epe_occ for r in reports], [r.n_occ for r in reports]),
        n_all=sum(r.n_all for r in reports),
        n_noc=sum(r.n_noc for r in reports),
        n_occ=sum(r.n_occ for r in reports),
    )


def write_csv(path: str, reports: Sequence[EpeReport]) -> EpeReport:
    """
    One row per report followed by the aggregate row.

    Returns:
        the aggregate report
    """
    total = aggregate(reports)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for r in reports:
            writer.writerow(r.to_row())
        writer.writerow(total.to_row())
    return total


def read_csv(path: str) -> List[EpeReport]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return [
        EpeReport(
            id=row["id"],
            epe_all=float(row["epe_all"]),
            epe_noc=_parse(row["epe_noc"]),
            epe_occ=_parse(row["epe_occ"]),
            n_all=int(row["n_all"]),
            n_noc=int(row["n_noc"]),
            n_occ=int(row["n_occ"]),
        )
        for row in rows
    ]


def _delta(backward: Optional[float], forward: Optional[float]) -> Optional[float]:
    if backward is None or forward is None:
        return None
    return backward - forward


def paired_rows(
    forward: Sequence[EpeReport], backward: Sequence[EpeReport]
) -> List[List[str]]:
    """
    Side-by-side rows for the same sequences evaluated after forward and
    backward accumulation; deltas are backward minus forward. The last row
    pairs the two aggregates.
    """
    fwd_by_id: Dict[str, EpeReport] = {r.id: r for r in forward}
    bwd_by_id: Dict[str, EpeReport] = {r.id: r for r in backward}
    if set(fwd_by_id) != set(bwd_by_id):
        raise InvalidArgumentError(
            "forward and backward results cover different sequences: %s"
            % ", ".join(sorted(set(fwd_by_id) ^ set(bwd_by_id)))
        )
    pairs = [(fwd_by_id[r.id], bwd_by_id[r.id]) for r in forward]
    pairs.append((aggregate(forward), aggregate(backward)))

    rows = []
    for f, b in pairs:
        rows.append(
            [f.id]
            + [_fmt(x) for x in (f.epe_all, f.epe_noc, f.epe_occ)]
            + [_fmt(x) for x in (b.epe_all, b.epe_noc, b.epe_occ)]
            + [
                _fmt(_delta(b.epe_all, f.epe_all)),
                _fmt(_delta(b.epe_noc, f.epe_noc)),
                _fmt(_delta(b.epe_occ, f.epe_occ)),
                str(f.n_all),
                str(f.n_noc),
                str(f.n_occ),
            ]
        )
    return rows


def write_paired_csv(
    path: str, forward: Sequence[EpeReport], backward: Sequence[EpeReport]
) -> None:
    rows = paired_rows(forward, backward)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(PAIRED_HEADER)
        writer.writerows(rows)


def quantiles(values: Sequence[float]) -> Dict[str, float]:
    """min, quartiles, median and max of a sample (numpy's linear interpolation)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise InvalidArgumentError("no samples")
    q1, median, q3 = np.percentile(arr, [25, 50, 75])
    return {
        "min": float(arr.min()),
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "max": float(arr.max()),
    }
