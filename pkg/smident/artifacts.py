from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import joblib

from smident.errors import DataError

ARTIFACT_VERSION = 1


@dataclass(frozen=True)
class RunPaths:
    """Fixed file layout of one pipeline run under the output directory."""

    root: Path

    @property
    def ident_record(self) -> Path:
        return self.root / "data" / "identification.csv"

    @property
    def val_record(self) -> Path:
        return self.root / "data" / "validation.csv"

    @property
    def estimation(self) -> Path:
        return self.root / "estimation" / "estimation.json"

    @property
    def dbar_trace(self) -> Path:
        return self.root / "estimation" / "dbar_trace.csv"

    @property
    def order_trace(self) -> Path:
        return self.root / "estimation" / "order_trace.csv"

    @property
    def decay_fit(self) -> Path:
        return self.root / "estimation" / "decay_fit.csv"

    @property
    def model(self) -> Path:
        return self.root / "models" / "identification.pkl"

    def sample_set(self, p: int) -> Path:
        return self.root / "identification" / f"samples_p{p}.csv"

    def method_json(self, method: str) -> Path:
        return self.root / "identification" / f"{method}.json"

    def method_bounds(self, method: str) -> Path:
        return self.root / "identification" / f"{method}_bounds.csv"

    @property
    def table_csv(self) -> Path:
        return self.root / "report" / "comparison_table.csv"

    @property
    def table_pdf(self) -> Path:
        return self.root / "report" / "comparison_table.pdf"

    @property
    def curves(self) -> Path:
        return self.root / "report" / "bound_curves.csv"

    @property
    def record_plot_data(self) -> Path:
        return self.root / "report" / "identification_record.csv"

    @property
    def provenance(self) -> Path:
        return self.root / "provenance.json"


def file_sha256(path: Path) -> str:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Input file not found at {path}")
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def input_hashes(paths: list[Path], root: Path) -> dict[str, str]:
    hashes = {}
    for path in paths:
        path = Path(path)
        try:
            key = path.relative_to(root).as_posix()
        except ValueError:
            key = path.name
        hashes[key] = file_sha256(path)
    return hashes


def record_provenance(paths: RunPaths, step: str, inputs: dict[str, str]) -> None:
    """Merge one step's input hashes into provenance.json."""
    current: dict[str, Any] = {}
    if paths.provenance.exists():
        current = json.loads(paths.provenance.read_text())
    current[step] = dict(sorted(inputs.items()))
    paths.provenance.parent.mkdir(parents=True, exist_ok=True)
    paths.provenance.write_text(json.dumps(current, indent=2, sort_keys=True) + "\n")


def save_identification(bundle: dict[str, Any], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump({"version": ARTIFACT_VERSION, **bundle}, path)
    return path


def load_identification(path: Path) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Identification artifact not found at {path}; run the identify step first")
    artifact = joblib.load(path)
    if not isinstance(artifact, dict) or artifact.get("version") != ARTIFACT_VERSION:
        raise DataError(f"{path} is not an identification artifact of version {ARTIFACT_VERSION}")
    if "results" not in artifact or "estimation" not in artifact:
        raise DataError(f"{path} is missing results or estimation entries")
    return artifact
