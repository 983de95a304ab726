"""Experiment sweeps, success-rate aggregation, and delimited output.

A sweep runs a grid of (method, hyperparameter) cells over an evaluation
set, producing one curve point per cell and one record per sample. The
hyperparameter axis is the perturbation budget for the baseline attacks
and the similarity threshold for the joint-objective methods; ablations
can sweep the penalty factor instead. Per-sample seeds derive from
(sweep seed, sample id), so scheduling order never changes results.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .attacks import METHODS, AttackConfig, run_attack
from .classifier import ModelParams
from .dataset import Dataset
from .pdr import PdrConfig, pdr_attack

PDR_METHODS = {
    "pdr": "ce",
    "fgsm-pdr": "ce",
    "ifgsm-pdr": "ce",
    "mifgsm-pdr": "ce",
    "ensemble-pdr": "ensemble-ce",
    "dim-pdr": "dim-ce",
    "tidim-pdr": "tidim-ce",
    "ilap-pdr": "ilap",
    "ilaf-pdr": "ilaf",
}

HYPER_AXES = ("auto", "eps", "t", "lambda0")


@dataclass
class SampleRecord:
    method: str
    hyper: float
    sample_id: int
    y: int
    predicted: int
    success: bool
    ssim: float
    linf: float
    iterations_used: int

    def __post_init__(self):
        if self.success != (self.predicted != self.y):
            raise ValueError("success flag must equal (predicted != y)")


@dataclass
class CurvePoint:
    method: str
    hyper: float
    asr: float
    mean_ssim: float
    n: int


@dataclass
class SweepError:
    method: str
    hyper: float
    sample_id: int
    message: str


@dataclass
class SweepReport:
    points: List[CurvePoint] = field(default_factory=list)
    records: List[SampleRecord] = field(default_factory=list)
    errors: List[SweepError] = field(default_factory=list)


@dataclass
class ComparisonRow:
    asr: float
    ssim_baseline: float
    ssim_pdr: float
    delta: float


@dataclass
class ParetoComparison:
    rows: List[ComparisonRow]
    incomparable: bool
    weakly_dominates: bool


def asr(records: Sequence[SampleRecord]) -> float:
    """Attack success rate: one minus the fraction still classified correctly."""
    if not records:
        raise ValueError("asr: record set is empty")
    correct = sum(1 for r in records if r.predicted == r.y)
    return 1.0 - correct / len(records)


def _sample_seed(seed: int, sample_id: int) -> int:
    stream = np.random.SeedSequence([seed, sample_id])
    return int(stream.generate_state(1, dtype=np.uint64)[0])


def _resolve_axis(method: str, hyper_axis: str) -> str:
    if hyper_axis != "auto":
        return hyper_axis
    return "t" if method in PDR_METHODS else "eps"


def _run_one(model: ModelParams, x: np.ndarray, y: int, method: str,
             hyper: float, axis: str, seed: int,
             attack_template: AttackConfig,
             pdr_template: PdrConfig) -> Tuple[int, float, float, int]:
    """One attack; returns (predicted, ssim, linf, iterations_used)."""
    if method in PDR_METHODS:
        fields = {"mis": PDR_METHODS[method], "seed": seed}
        if axis == "t":
            fields["t"] = hyper
        elif axis == "lambda0":
            fields["lambda0"] = hyper
        else:
            fields["eps"] = hyper
        result, _ = pdr_attack(model, x, y, replace(pdr_template, **fields))
    elif method in METHODS:
        if axis != "eps":
            raise ValueError(f"method {method!r} sweeps eps, not {axis!r}")
        cfg = replace(attack_template, method=method, eps=hyper, seed=seed)
        result = run_attack(model, x, y, cfg)
    else:
        known = sorted(METHODS) + sorted(PDR_METHODS)
        raise ValueError(f"unknown method {method!r}; known: {known}")
    return result.predicted, result.ssim_vs_original, result.linf_vs_original, \
        result.iterations_used


def _task(payload):
    (model, x, y, method, hyper, axis, seed, sid,
     attack_template, pdr_template) = payload
    try:
        predicted, sim, linf, iters = _run_one(
            model, x, y, method, hyper, axis, seed, attack_template, pdr_template)
        record = SampleRecord(method=method, hyper=hyper, sample_id=sid,
                              y=y, predicted=predicted,
                              success=predicted != y, ssim=sim, linf=linf,
                              iterations_used=iters)
        return sid, record, None
    except Exception as exc:  # noqa: BLE001 - itemized per sample by contract
        return sid, None, f"{type(exc).__name__}: {exc}"


def sweep(model: ModelParams, dataset: Dataset, methods: Sequence[str],
          hypers: Sequence[float], seed: int = 0, *, n: Optional[int] = None,
          workers: int = 1, hyper_axis: str = "auto",
          attack_template: Optional[AttackConfig] = None,
          pdr_template: Optional[PdrConfig] = None) -> SweepReport:
    """Run every (method, hyper) cell over the first n test samples.

    Per-sample failures are recorded and skipped; a cell where every sample
    failed raises, since its curve point would be meaningless.
    """
    if not methods or not hypers:
        raise ValueError("sweep: method and hyperparameter grids must be non-empty")
    if hyper_axis not in HYPER_AXES:
        raise ValueError(f"unknown hyper_axis {hyper_axis!r}; choose from {HYPER_AXES}")
    for method in methods:
        if method not in METHODS and method not in PDR_METHODS:
            known = sorted(METHODS) + sorted(PDR_METHODS)
            raise ValueError(f"unknown method {method!r}; known: {known}")
    attack_template = attack_template or AttackConfig()
    pdr_template = pdr_template or PdrConfig()
    count = dataset.x_test.shape[0] if n is None else min(n, dataset.x_test.shape[0])
    if count < 1:
        raise ValueError("sweep: evaluation set is empty")

    report = SweepReport()
    for method in methods:
        axis = _resolve_axis(method, hyper_axis)
        for hyper in hypers:
            payloads = []
            for sid in range(count):
                payloads.append((
                    model, dataset.x_test[sid], int(dataset.y_test[sid]),
                    method, float(hyper), axis, _sample_seed(seed, sid), sid,
                    attack_template, pdr_template))
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    outcomes = list(pool.map(_task, payloads, chunksize=8))
            else:
                outcomes = [_task(p) for p in payloads]

            cell_records = []
            for sid, record, error in outcomes:
                if record is not None:
                    cell_records.append(record)
                else:
                    report.errors.append(
                        SweepError(method, float(hyper), sid, error))
            if not cell_records:
                raise ValueError(
                    f"sweep cell ({method}, {hyper}) completed zero samples")
            report.records.extend(cell_records)
            report.points.append(CurvePoint(
                method=method, hyper=float(hyper), asr=asr(cell_records),
                mean_ssim=float(np.mean([r.ssim for r in cell_records])),
                n=len(cell_records)))
    return report


def _curve(points: Sequence[CurvePoint]) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted (asr, ssim) knots with ties averaged so asr strictly increases."""
    pairs = sorted((p.asr, p.mean_ssim) for p in points)
    xs: List[float] = []
    ys: List[float] = []
    for a, s in pairs:
        if xs and a == xs[-1]:
            seen = [v for u, v in pairs if u == a]
            ys[-1] = float(np.mean(seen))
        else:
            xs.append(a)
            ys.append(s)
    return np.asarray(xs), np.asarray(ys)


def pareto_compare(baseline: SweepReport, pdr: SweepReport,
                   asr_tolerance: float = 0.05) -> ParetoComparison:
    """SSIM gap between two tradeoff curves at matched success rates.

    Each baseline point whose success rate falls inside (or within
    asr_tolerance of) the other curve's range is matched by linear
    interpolation; delta > 0 means the second curve preserves more
    similarity at equal attack strength. Disjoint ranges yield an
    incomparable verdict rather than an error.
    """
    if not baseline.points or not pdr.points:
        raise ValueError("pareto_compare: both reports need curve points")
    base_x, base_y = _curve(baseline.points)
    pdr_x, pdr_y = _curve(pdr.points)
    rows = []
    for a, s in zip(base_x, base_y):
        if a < pdr_x[0] - asr_tolerance or a > pdr_x[-1] + asr_tolerance:
            continue
        matched = float(np.interp(np.clip(a, pdr_x[0], pdr_x[-1]), pdr_x, pdr_y))
        rows.append(ComparisonRow(asr=float(a), ssim_baseline=float(s),
                                  ssim_pdr=matched, delta=matched - float(s)))
    incomparable = not rows
    dominates = bool(rows) and all(row.delta >= -1e-9 for row in rows)
    return ParetoComparison(rows=rows, incomparable=incomparable,
                            weakly_dominates=dominates)


CURVE_HEADER = ["method", "hyper", "asr", "mean_ssim", "n"]
RECORD_HEADER = ["method", "hyper", "sample_id", "y", "predicted", "success",
                 "ssim", "linf", "iterations_used"]


def _fmt(value: float) -> str:
    return "%.6g" % value


def emit_csv(data: Union[SweepReport, Sequence[SampleRecord]], path: str) -> None:
    """Write curve points (for a report) or sample records as RFC-4180 CSV.

    Rows are sorted by method, then hyperparameter, then sample id, and
    floats carry six significant digits, so equal inputs give equal bytes.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    if isinstance(data, SweepReport):
        writer.writerow(CURVE_HEADER)
        for p in sorted(data.points, key=lambda p: (p.method, p.hyper)):
            writer.writerow([p.method, _fmt(p.hyper), _fmt(p.asr),
                             _fmt(p.mean_ssim), p.n])
    else:
        writer.writerow(RECORD_HEADER)
        for r in sorted(data, key=lambda r: (r.method, r.hyper, r.sample_id)):
            writer.writerow([r.method, _fmt(r.hyper), r.sample_id, r.y,
                             r.predicted, int(r.success), _fmt(r.ssim),
                             _fmt(r.linf), r.iterations_used])
    with open(path, "w", newline="") as handle:
        handle.write(buffer.getvalue())


def read_curve_csv(path: str) -> SweepReport:
    report = SweepReport()
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != CURVE_HEADER:
            raise ValueError(f"unexpected curve CSV header: {reader.fieldnames}")
        for row in reader:
            report.points.append(CurvePoint(
                method=row["method"], hyper=float(row["hyper"]),
                asr=float(row["asr"]), mean_ssim=float(row["mean_ssim"]),
                n=int(row["n"])))
    return report


def read_records_csv(path: str) -> List[SampleRecord]:
    records = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != RECORD_HEADER:
            raise ValueError(f"unexpected record CSV header: {reader.fieldnames}")
        for row in reader:
            records.append(SampleRecord(
                method=row["method"], hyper=float(row["hyper"]),
                sample_id=int(row["sample_id"]), y=int(row["y"]),
                predicted=int(row["predicted"]),
                success=bool(int(row["success"])), ssim=float(row["ssim"]),
                linf=float(row["linf"]),
                iterations_used=int(row["iterations_used"])))
    return records
