"""Impression-log CSV I/O and seeded synthetic inventory."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .domain import ImpressionRecord, Inventory, record_violations

CSV_COLUMNS = (
    "predicted_ctr",
    "predicted_view_prob",
    "clearing_price_cpm",
    "clicked",
    "viewable",
    "converted",
)


class InventoryFileError(ValueError):
    pass


class SchemaMismatch(InventoryFileError):
    pass


class EmptyFile(InventoryFileError):
    pass


class ParseError(InventoryFileError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class InvalidDistributionParams(ValueError):
    pass


@dataclass(frozen=True)
class SynthesisParams:
    """Joint distribution of the synthetic log.

    CTR is log-normal (``ctr_median``, ``ctr_sigma``); the latent view
    probability is Beta with mean ``view_mean`` and concentration
    ``view_concentration``, hidden from the record with probability
    ``view_missing_rate``. The clearing price in CPM is
    ``(base_cpm + ctr_price_coef*1000*ctr + view_price_coef*p_view)`` times a
    mean-one log-normal noise of log-sd ``price_noise``. Outcomes are
    Bernoulli(ctr), Bernoulli(p_view) and Bernoulli(ctr*conversion_rate).
    """

    count: int = 10_000
    seed: int = 0
    ctr_median: float = 0.002
    ctr_sigma: float = 0.5
    view_mean: float = 0.4
    view_concentration: float = 2.0
    view_missing_rate: float = 0.0
    base_cpm: float = 1.0
    ctr_price_coef: float = 1.0
    view_price_coef: float = 2.0
    price_noise: float = 0.5
    conversion_rate: float = 0.1

    def check(self) -> None:
        problems = []
        if self.count < 1:
            problems.append("count must be >= 1")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be an unsigned 64-bit integer")
        if not 0 < self.ctr_median < 1:
            problems.append("ctr_median must lie in (0, 1)")
        if not self.ctr_sigma >= 0:
            problems.append("ctr_sigma must be >= 0")
        if not 0 < self.view_mean < 1:
            problems.append("view_mean must lie in (0, 1)")
        if not self.view_concentration > 0:
            problems.append("view_concentration must be > 0")
        if not 0 <= self.view_missing_rate <= 1:
            problems.append("view_missing_rate must lie in [0, 1]")
        if not self.base_cpm > 0:
            problems.append("base_cpm must be > 0")
        if self.ctr_price_coef < 0 or self.view_price_coef < 0:
            problems.append("price coefficients must be >= 0")
        if not self.price_noise >= 0:
            problems.append("price_noise must be >= 0")
        if not 0 <= self.conversion_rate <= 1:
            problems.append("conversion_rate must lie in [0, 1]")
        if problems:
            raise InvalidDistributionParams("; ".join(problems))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SynthesisParams:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidDistributionParams(f"unknown synthesis fields: {sorted(unknown)}")
        return cls(**data)


def generate_inventory(params: SynthesisParams) -> Inventory:
    params.check()
    rng = np.random.default_rng(params.seed)
    n = params.count
    ctr = np.clip(params.ctr_median * np.exp(params.ctr_sigma * rng.standard_normal(n)), 0.0, 1.0)
    a = params.view_mean * params.view_concentration
    b = (1.0 - params.view_mean) * params.view_concentration
    p_view = rng.beta(a, b, n)
    missing = rng.random(n) < params.view_missing_rate
    noise = np.exp(params.price_noise * rng.standard_normal(n) - 0.5 * params.price_noise**2)
    price = (
        params.base_cpm + params.ctr_price_coef * 1000.0 * ctr + params.view_price_coef * p_view
    ) * noise
    clicked = rng.random(n) < ctr
    # Outcomes come from the latent probability, reported or not.
    viewable = rng.random(n) < p_view
    converted = rng.random(n) < ctr * params.conversion_rate
    return Inventory(
        predicted_ctr=ctr,
        predicted_view_prob=np.where(missing, np.nan, p_view),
        clearing_price=price,
        clicked=clicked,
        viewable=viewable,
        converted=converted,
    )


def sample_inventory(pool: Inventory, count: int, seed: int, replace: bool = False) -> Inventory:
    """Random draw of auctions from a historical pool, in draw order."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not replace and count > len(pool):
        raise ValueError(f"cannot draw {count} records without replacement from {len(pool)}")
    rng = np.random.default_rng(seed)
    return pool.take(rng.choice(len(pool), size=count, replace=replace))


def _fmt(x: float) -> str:
    return repr(float(x))


def dumps_csv(inventory: Inventory) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for ctr, vp, price, c, v, conv in zip(
        inventory.predicted_ctr,
        inventory.predicted_view_prob,
        inventory.clearing_price,
        inventory.clicked,
        inventory.viewable,
        inventory.converted,
    ):
        writer.writerow(
            [_fmt(ctr), "" if math.isnan(vp) else _fmt(vp), _fmt(price), int(c), int(v), int(conv)]
        )
    return buf.getvalue()


def write_csv(records: Inventory | list[ImpressionRecord], path: str | Path) -> None:
    Path(path).write_text(dumps_csv(Inventory.coerce(records)), encoding="utf-8")


def _float(text: str, name: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line, f"{name}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(line, f"{name}: not finite: {text!r}")
    return value


def _flag(text: str, name: str, line: int) -> bool:
    if text not in ("0", "1"):
        raise ParseError(line, f"{name}: expected 0 or 1, got {text!r}")
    return text == "1"


def loads_csv(text: str) -> Inventory:
    """Parse a whole log; any bad row rejects the file."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyFile("inventory file is empty") from None
    if tuple(h.strip() for h in header) != CSV_COLUMNS:
        raise SchemaMismatch(f"expected header {','.join(CSV_COLUMNS)}, got {','.join(header)}")
    cols: dict[str, list] = {c: [] for c in CSV_COLUMNS}
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise ParseError(line, f"expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        ctr = _float(row[0], "predicted_ctr", line)
        vp = None if row[1] == "" else _float(row[1], "predicted_view_prob", line)
        price = _float(row[2], "clearing_price_cpm", line)
        problems = record_violations(ctr, vp, price)
        if problems:
            raise ParseError(line, "; ".join(problems))
        cols["predicted_ctr"].append(ctr)
        cols["predicted_view_prob"].append(math.nan if vp is None else vp)
        cols["clearing_price_cpm"].append(price)
        cols["clicked"].append(_flag(row[3], "clicked", line))
        cols["viewable"].append(_flag(row[4], "viewable", line))
        cols["converted"].append(_flag(row[5], "converted", line))
    if not cols["predicted_ctr"]:
        raise EmptyFile("inventory file has a header but no records")
    return Inventory(
        predicted_ctr=cols["predicted_ctr"],
        predicted_view_prob=cols["predicted_view_prob"],
        clearing_price=cols["clearing_price_cpm"],
        clicked=cols["clicked"],
        viewable=cols["viewable"],
        converted=cols["converted"],
    )


def load_csv(path: str | Path) -> Inventory:
    return loads_csv(Path(path).read_text(encoding="utf-8"))
