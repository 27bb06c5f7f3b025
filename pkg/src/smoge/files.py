"""File formats: TOML mixing measures and configs, numeric CSVs, run manifests."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .data import ConfigurationError, measure_from_dict, measure_to_dict
from .model import MixingMeasure


def read_toml(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"{path}: no such file")
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def write_toml(rec: dict, path) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(_drop_none(rec), fh)


def _drop_none(obj):
    # TOML has no null
    if isinstance(obj, dict):
        return {k: _drop_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_drop_none(v) for v in obj]
    return obj


def read_measure(path) -> MixingMeasure:
    """Mixing measure from a TOML file with keys d, family and [[components]]."""
    rec = read_toml(path)
    unknown = set(rec) - {"d", "family", "components"}
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {sorted(unknown)}")
    for key in ("d", "components"):
        if key not in rec:
            raise ConfigurationError(f"{path}: missing key {key!r}")
    for i, comp in enumerate(rec["components"]):
        extra = set(comp) - {"alpha0", "alpha1", "beta", "sigma2"}
        missing = {"alpha0", "alpha1", "beta", "sigma2"} - set(comp)
        if extra or missing:
            raise ConfigurationError(f"{path}: components[{i}] has unknown {sorted(extra)} / missing {sorted(missing)}")
    try:
        return measure_from_dict(rec)
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def write_measure(G: MixingMeasure, path) -> None:
    write_toml(measure_to_dict(G), path)


def format_number(v, digits: int | None = None) -> str:
    """Full precision (17 significant digits) unless ``digits`` is given."""
    if isinstance(v, (bool, str)) or v is None:
        return "" if v is None else str(v)
    if isinstance(v, int):
        return str(v)
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.{17 if digits is None else digits}g}"


def write_rows(rows: list[dict], path, digits: int | None = None, header: list[str] | None = None) -> None:
    header = header or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_number(row.get(k), digits) for k in header])


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    tool_version: str
    subcommand: str
    config: dict
    master_seed: int | None
    started: str
    finished: str = ""
    exit_code: int = 0
    outputs: list[str] = field(default_factory=list)
    checksums: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def add_output(self, path) -> None:
        path = Path(path)
        self.outputs.append(path.name)
        self.checksums[path.name] = sha256(path)

    def to_dict(self) -> dict:
        return {
            "tool_version": self.tool_version, "subcommand": self.subcommand, "master_seed": self.master_seed,
            "started": self.started, "finished": self.finished, "exit_code": self.exit_code,
            "outputs": list(self.outputs), "checksums": dict(self.checksums), "notes": list(self.notes),
            "config": self.config,
        }

    def write(self, path) -> None:
        write_toml(self.to_dict(), path)

    @classmethod
    def read(cls, path) -> "RunManifest":
        rec = read_toml(path)
        return cls(rec["tool_version"], rec["subcommand"], rec.get("config", {}), rec.get("master_seed"),
                   rec["started"], rec.get("finished", ""), rec.get("exit_code", 0), rec.get("outputs", []),
                   rec.get("checksums", {}), rec.get("notes", []))
