import csv
import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np

from cibsolver.managers.beliefmanager import BeliefVector, CIBState
from cibsolver.managers.configmanager import SolverConfig
from cibsolver.managers.dpmanager import (
    BeliefTree,
    EquilibriumBundle,
    StageSweep,
    Support,
    ValueTable,
    make_belief_grid,
)
from cibsolver.managers.modelmanager import GameSpec, spec_fingerprint
from cibsolver.managers.stagemanager import StrategySlice, UpdateSlice

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


class BundleMismatchError(ValueError):
    """Raised when a bundle directory does not belong to the given spec."""
    def __init__(self, expected: str, found: str) -> None:
        super().__init__(f"bundle was solved for spec {found[:12]}, not {expected[:12]}")
        self.expected = expected
        self.found = found


def _coord_header(spec: GameSpec, t: int) -> List[str]:
    header = ["cell", "c"]
    for prefix in ("pi", "pihat"):
        for n in spec.agents:
            header += [f"{prefix}{n + 1}_{x}" for x in range(spec.local_size(n, t))]
    return header


def _coord_row(cell: int, b: CIBState) -> List[Any]:
    return [cell, b.c] + [repr(float(v)) for v in np.concatenate([b.pi.coords(), b.pi_hat.coords()])]


def _profile(key: Tuple[int, ...]) -> str:
    return " ".join(str(i) for i in key)


def _unprofile(text: str) -> Tuple[int, ...]:
    return tuple(int(i) for i in text.split())


class BundleManager:
    """
    Reads and writes equilibrium bundles.

    A bundle directory holds manifest.json (config echo, spec fingerprint,
    supports and certificates) and per-time CSV tables; floats are written
    with repr so a reload is bit-exact.
    """

    def __init__(self) -> None:
        self.logger = logging.getLogger("BundleManager")

    # ------------------------------------------------------------------ #
    # Save
    # ------------------------------------------------------------------ #
    def save(self, spec: GameSpec, bundle: EquilibriumBundle, out_dir: Any) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": FORMAT_VERSION,
            "spec_name": spec.name,
            "spec_fingerprint": bundle.spec_fingerprint,
            "horizon": bundle.horizon,
            "config": asdict(bundle.config),
            "supports": {str(t): s.support.describe() for t, s in sorted(bundle.stages.items())},
            "certificates": {
                "complete": bundle.complete,
                "worst_gap": bundle.worst_gap,
                "worst_residual": bundle.worst_residual,
                "failed_cells": [list(tc) for tc in bundle.failed_cells()],
            },
        }
        with (out / MANIFEST).open("w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=1)
        for t, sweep in sorted(bundle.stages.items()):
            self._write_stage(spec, sweep, out)
        self.logger.info(f"Saved bundle to {out}")
        return out

    def _write_stage(self, spec: GameSpec, sweep: StageSweep, out: Path) -> None:
        t = sweep.t
        header = _coord_header(spec, t)
        states = list(sweep.support.cells())
        for n in spec.agents:
            with (out / f"values_t{t}_agent{n + 1}.csv").open("w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(header + ["x", "value"])
                for cell, b in enumerate(states):
                    for x, v in enumerate(sweep.values[n].values[cell]):
                        writer.writerow(_coord_row(cell, b) + [x, repr(float(v))])
            with (out / f"strategy_t{t}_agent{n + 1}.csv").open("w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(header + ["x", "action", "probability"])
                for cell, b in enumerate(states):
                    probs = sweep.strategies[cell].probs[n]
                    for x in range(probs.shape[0]):
                        for a in spec.admissible_actions(n, t, x):
                            writer.writerow(_coord_row(cell, b) + [x, a, repr(float(probs[x, a]))])
        with (out / f"updates_t{t}.csv").open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["cell", "y", "a", "kind", "agent", "x", "probability"])
            for cell, update in enumerate(sweep.updates):
                for kind, table in (("psi", update.beliefs), ("psi_hat", update.signaling_free)):
                    for (y, a), belief in table.items():
                        for n in spec.agents:
                            for x, p in enumerate(belief[n]):
                                writer.writerow([cell, _profile(y), _profile(a), kind, n + 1, x, repr(float(p))])
        with (out / f"certificates_t{t}.csv").open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["cell", "gap", "residual", "converged", "method"])
            for cell in range(len(states)):
                writer.writerow([cell, repr(float(sweep.gaps[cell])), repr(float(sweep.residuals[cell])),
                                 int(sweep.converged[cell]), sweep.methods[cell]])

    # ------------------------------------------------------------------ #
    # Load
    # ------------------------------------------------------------------ #
    def load(self, spec: GameSpec, bundle_dir: Any) -> EquilibriumBundle:
        src = Path(bundle_dir)
        if not (src / MANIFEST).exists():
            raise FileNotFoundError(f"no {MANIFEST} in {src}")
        with (src / MANIFEST).open("r", encoding="utf-8") as f:
            manifest = json.load(f)
        expected = spec_fingerprint(spec)
        if manifest["spec_fingerprint"] != expected:
            raise BundleMismatchError(expected, manifest["spec_fingerprint"])
        config = SolverConfig(**manifest["config"])
        bundle = EquilibriumBundle(expected, config, int(manifest["horizon"]), {})
        for key, desc in manifest["supports"].items():
            t = int(key)
            support = self._support(spec, t, desc)
            bundle.stages[t] = self._read_stage(spec, t, support, config, src)
        self.logger.info(f"Loaded bundle from {src} ({len(bundle.stages)} stages)")
        return bundle

    def _support(self, spec: GameSpec, t: int, desc: Dict) -> Support:
        if desc["kind"] == "grid":
            return make_belief_grid(spec, t, int(desc["m"]), desc["mode"])
        states = [CIBState(int(c), BeliefVector.of(t, pi, renormalize=False),
                           BeliefVector.of(t, pi_hat, renormalize=False))
                  for c, pi, pi_hat in desc["nodes"]]
        return BeliefTree(t, states)

    def _read_stage(self, spec: GameSpec, t: int, support: Support, config: SolverConfig,
                    src: Path) -> StageSweep:
        cells = support.num_cells
        tables, strategies = [], [[np.zeros(spec.admissible[n][t - 1].shape) for n in spec.agents]
                                  for _ in range(cells)]
        for n in spec.agents:
            values = np.zeros((cells, spec.local_size(n, t)))
            for row in self._rows(src / f"values_t{t}_agent{n + 1}.csv"):
                values[int(row["cell"]), int(row["x"])] = float(row["value"])
            values.flags.writeable = False
            tables.append(ValueTable(t, n, support, values, config.interpolation))
            for row in self._rows(src / f"strategy_t{t}_agent{n + 1}.csv"):
                strategies[int(row["cell"])][n][int(row["x"]), int(row["action"])] = float(row["probability"])

        raw: List[Dict[str, Dict]] = [{"psi": {}, "psi_hat": {}} for _ in range(cells)]
        for row in self._rows(src / f"updates_t{t}.csv"):
            key = (_unprofile(row["y"]), _unprofile(row["a"]))
            per_agent = raw[int(row["cell"])][row["kind"]].setdefault(key, {})
            per_agent.setdefault(int(row["agent"]) - 1, {})[int(row["x"])] = float(row["probability"])

        def beliefs(table: Dict) -> Dict:
            out = {}
            for key, per_agent in table.items():
                out[key] = BeliefVector.of(t + 1, [[per_agent[n][x] for x in sorted(per_agent[n])]
                                                   for n in spec.agents], renormalize=False)
            return out

        updates = [UpdateSlice(t + 1, beliefs(r["psi"]), beliefs(r["psi_hat"])) for r in raw]
        gaps, residuals, converged, methods = (np.zeros(cells), np.zeros(cells),
                                               np.zeros(cells, dtype=bool), [""] * cells)
        for row in self._rows(src / f"certificates_t{t}.csv"):
            cell = int(row["cell"])
            gaps[cell], residuals[cell] = float(row["gap"]), float(row["residual"])
            converged[cell], methods[cell] = bool(int(row["converged"])), row["method"]
        return StageSweep(t, support, [StrategySlice(tuple(s)) for s in strategies], updates,
                          tables, gaps, residuals, converged, methods)

    @staticmethod
    def _rows(path: Path):
        with path.open("r", newline="", encoding="utf-8") as f:
            yield from csv.DictReader(f)


def save_bundle(spec: GameSpec, bundle: EquilibriumBundle, out_dir: Any) -> Path:
    return BundleManager().save(spec, bundle, out_dir)


def load_bundle(spec: GameSpec, bundle_dir: Any) -> EquilibriumBundle:
    return BundleManager().load(spec, bundle_dir)
