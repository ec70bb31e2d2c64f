import json
import os
import re
from datetime import datetime, timezone
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field

from src import __version__
from src.core.config import EnsembleConfig, dump_config
from src.core.predictor import PredictionReport
from src.core.validator import CheckReport

FLOAT_FORMAT = "%.17g"

PREDICTION_COLUMNS = [
    "kappa", "expected_vartheta", "var_bound", "expected_phi1", "var_bound_phi1",
    "lattice_vartheta", "lattice_phi1", "velocity_band_coefficients", "velocity_band_domain",
    "error_budget", "flags",
]
STATS_COLUMNS = [
    "kappa", "n", "mode_count", "sample_mean", "sample_variance", "std_error", "lag1_autocorrelation",
    "expected_vartheta", "lattice_vartheta", "var_bound", "quadrature",
    "correction_0", "correction_1", "correction_2",
]
CHECK_COLUMNS = ["name", "measured", "expected", "margin", "passed", "detail"]
ANNULUS_COLUMNS = ["beta", "jx", "jy", "kappa", "lattice_sum", "integral", "error", "ratio", "cell_ratio"]


def _sanitize_filename(title: str) -> str:
    """Sanitize a run label for use as a filename (remove special chars, limit length)."""
    sanitized = re.sub(r'[<>:"/\\|?*]', '', title)
    sanitized = re.sub(r'\s+', '_', sanitized.strip())
    return sanitized[:50]


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest(BaseModel):
    command: str
    version: str = __version__
    seed: int
    config: str = Field(description="dump_config snapshot; parsing it reproduces the run")
    threads: int = 1
    started_at: str = Field(default_factory=_utc_now)
    finished_at: Optional[str] = None
    files: List[str] = Field(default_factory=list)
    verdict: Dict = Field(default_factory=dict)


class ResultAssembler:
    """Writes the result files of one run into output_dir. Every file is written then renamed into place."""

    def __init__(self, output_dir: str, label: str = ""):
        self.output_dir = output_dir
        self.prefix = f"{_sanitize_filename(label)}_" if label else ""
        self.files: List[str] = []
        os.makedirs(output_dir, exist_ok=True)

    def path_for(self, name: str) -> str:
        return os.path.join(self.output_dir, f"{self.prefix}{name}")

    def _commit(self, name: str, write) -> str:
        path = self.path_for(name)
        tmp = f"{path}.tmp"
        try:
            write(tmp)
            os.replace(tmp, path)
        except Exception:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
        if path not in self.files:
            self.files.append(path)
        logger.info(f"[Assembly] wrote {path}")
        return path

    def write_table(self, name: str, frame: pd.DataFrame) -> str:
        return self._commit(name, lambda tmp: frame.to_csv(tmp, index=False, float_format=FLOAT_FORMAT))

    def write_json(self, name: str, data: Dict) -> str:
        def write(tmp):
            with open(tmp, "w") as f:
                json.dump(data, f, indent=2, default=str)
                f.write("\n")
        return self._commit(name, write)

    def write_text(self, name: str, text: str) -> str:
        def write(tmp):
            with open(tmp, "w") as f:
                f.write(text)
        return self._commit(name, write)

    # --- Tables ---

    def write_predictions(self, prediction: PredictionReport) -> str:
        rows = []
        for b in prediction.bands:
            rows.append({
                "kappa": b.kappa,
                "expected_vartheta": b.expected_vartheta,
                "var_bound": b.var_bound_vartheta,
                "expected_phi1": b.expected_phi1,
                "var_bound_phi1": b.var_bound_phi1,
                "lattice_vartheta": b.lattice_vartheta,
                "lattice_phi1": b.lattice_phi1,
                "velocity_band_coefficients": b.velocity_band_coefficients,
                "velocity_band_domain": b.velocity_band_domain,
                "error_budget": b.error_budget,
                "flags": ";".join(b.flags),
            })
        return self.write_table("predictions.csv", pd.DataFrame(rows, columns=PREDICTION_COLUMNS))

    def write_ensemble_stats(self, result) -> str:
        rows = []
        for st in result.stats:
            band = result.prediction.band(st.kappa)
            corrections = tuple(result.corrections.get(st.kappa, ()))[:3]
            corrections += (np.nan,) * (3 - len(corrections))
            rows.append({
                "kappa": st.kappa,
                "n": st.n,
                "mode_count": st.mode_count,
                "sample_mean": st.sample_mean,
                "sample_variance": st.sample_variance,
                "std_error": st.std_error,
                "lag1_autocorrelation": st.lag1_autocorrelation,
                "expected_vartheta": band.expected_vartheta,
                "lattice_vartheta": band.lattice_vartheta,
                "var_bound": band.var_bound_vartheta,
                "quadrature": result.quadrature.get(st.kappa, np.nan),
                "correction_0": corrections[0],
                "correction_1": corrections[1],
                "correction_2": corrections[2],
            })
        return self.write_table("ensemble_stats.csv", pd.DataFrame(rows, columns=STATS_COLUMNS))

    def write_samples(self, result) -> str:
        kappas = [st.kappa for st in result.stats]
        frame = pd.DataFrame(result.band_powers, columns=[f"kappa_{k:g}" for k in kappas])
        frame.insert(0, "sample", [r.index for r in result.samples])
        return self.write_table("samples.csv", frame)

    def write_fits(self, fits) -> str:
        frame = pd.DataFrame([f.model_dump() for f in fits.values()],
                             columns=["convention", "slope", "stderr", "intercept", "bands"])
        return self.write_table("fits.csv", frame)

    def write_checks(self, report: CheckReport) -> str:
        frame = pd.DataFrame([c.model_dump() for c in report.checks], columns=CHECK_COLUMNS)
        return self.write_table("checks.csv", frame)

    def write_annulus(self, rows: List[Dict]) -> str:
        frame = pd.DataFrame(rows, columns=ANNULUS_COLUMNS)
        return self.write_table("annulus.csv", frame)

    def write_verdict(self, report: CheckReport) -> str:
        return self.write_json("verdict.json", report.to_verdict())

    # --- Plot script ---

    def write_plot_script(self, stats_file: str, title: str = "band power") -> str:
        """gnuplot script: sample means with error bars, law and lattice overlays, log-log in kappa."""
        data = os.path.basename(stats_file)
        col = {name: i + 1 for i, name in enumerate(STATS_COLUMNS)}
        script = "\n".join([
            f"# {title}",
            "set datafile separator ','",
            "set logscale xy",
            "set xlabel 'kappa'",
            "set ylabel 'E |P vartheta|^2'",
            "set key top right",
            f"set title '{title}'",
            f"plot '{data}' every ::1 using {col['kappa']}:{col['sample_mean']}:{col['std_error']} "
            "with yerrorbars title 'ensemble mean', \\",
            f"     '{data}' every ::1 using {col['kappa']}:{col['expected_vartheta']} "
            "with lines title 'continuum law', \\",
            f"     '{data}' every ::1 using {col['kappa']}:{col['lattice_vartheta']} "
            "with linespoints title 'lattice expectation'",
            "",
        ])
        return self.write_text("band_power.gp", script)

    # --- Manifest ---

    def start_manifest(self, command: str, config: EnsembleConfig, threads: int = 1) -> RunManifest:
        return RunManifest(command=command, seed=config.ensemble.seed, config=dump_config(config), threads=threads)

    def finish_manifest(self, manifest: RunManifest, report: CheckReport) -> str:
        verdict = report.to_verdict()
        manifest = manifest.model_copy(update={
            "finished_at": _utc_now(),
            "files": [os.path.basename(f) for f in self.files] + [f"{self.prefix}manifest.json"],
            "verdict": {k: verdict[k] for k in ("verdict", "passed", "total")},
        })
        return self.write_json("manifest.json", manifest.model_dump())
