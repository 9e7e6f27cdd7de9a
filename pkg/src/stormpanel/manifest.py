"""Run manifests: per-stage hashes, counts, and staleness checks."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

from .errors import StaleUpstreamError

ARTIFACT_VERSION = "0.1.0"


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    stage: str
    config_hash: str
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    wall_clock_s: float = 0.0
    version: str = ARTIFACT_VERSION

    def record_inputs(self, paths: dict[str, str]) -> None:
        for name, path in paths.items():
            self.inputs[name] = sha256_file(path)

    def record_output(self, path) -> None:
        self.outputs[os.path.basename(path)] = sha256_file(path)


def manifest_path(outdir: str, stage: str) -> str:
    return os.path.join(outdir, f"manifest_{stage}.json")


def write_manifest(outdir: str, m: RunManifest) -> str:
    """Write atomically (temp file + rename) at the end of a stage."""
    payload = {
        "stage": m.stage,
        "version": m.version,
        "config_hash": m.config_hash,
        "seed": m.seed,
        "inputs": dict(sorted(m.inputs.items())),
        "outputs": dict(sorted(m.outputs.items())),
        "counts": dict(sorted(m.counts.items())),
        "wall_clock_s": round(m.wall_clock_s, 6),
    }
    path = manifest_path(outdir, m.stage)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def read_manifest(outdir: str, stage: str) -> dict:
    path = manifest_path(outdir, stage)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise StaleUpstreamError(
            f"missing manifest for stage {stage!r}; run that stage first"
        ) from exc
    except json.JSONDecodeError as exc:
        raise StaleUpstreamError(f"{path}: corrupt manifest") from exc


def check_upstream(outdir: str, stage: str, artifacts: list[str], config_hash: str) -> None:
    """Refuse to consume artifacts that do not match the producing manifest."""
    recorded = read_manifest(outdir, stage)
    if recorded.get("config_hash") != config_hash:
        raise StaleUpstreamError(
            f"stage {stage!r} was produced with a different config; re-run it or use --force"
        )
    for name in artifacts:
        path = os.path.join(outdir, name)
        want = recorded.get("outputs", {}).get(name)
        if want is None or not os.path.isfile(path) or sha256_file(path) != want:
            raise StaleUpstreamError(
                f"artifact {name} does not match the {stage!r} manifest; re-run it or use --force"
            )


class StageTimer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False
