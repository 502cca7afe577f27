"""Acceptance suite: every criterion runs through its shipped config.

Each test executes one configured experiment end to end (library path of
the CLI), asserts the criterion at its stated tolerance, checks the
stated runtime budget, and prints one PASS/FAIL line.  Run with
``pytest -s tests/test_acceptance.py`` to see the lines as they appear.
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from fepkit.harness import ExperimentConfig, run

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def load(name):
    return json.loads((CONFIGS / name).read_text())


def execute(name, tmp_path, **overrides):
    doc = load(name)
    doc.update(overrides)
    cfg = ExperimentConfig.from_json(doc)
    return run(cfg, out_dir=tmp_path)


def report(num, label, summary, budget_s):
    status = "PASS" if summary["passed"] else "FAIL"
    print(f"\n{status} criterion {num:2d} ({label}): "
          f"{summary['wall_seconds']:.1f} s of {budget_s:.0f} s budget")
    assert summary["passed"], summary
    assert summary["wall_seconds"] < budget_s, summary["wall_seconds"]


def test_criterion_01_window_normalization(tmp_path):
    summary = execute("normalization.json", tmp_path)
    assert summary["max_abs_err"] <= 1e-12
    report(1, "window normalization", summary, 1.0)


def test_criterion_02_combinatorics(tmp_path):
    summary = execute("combinatorics.json", tmp_path)
    report(2, "counts and recursion", summary, 10.0)


def test_criterion_03_canonical_marginals(tmp_path):
    summary = execute("canonical_marginals.json", tmp_path)
    assert summary["max_abs_err"] <= 1e-12
    report(3, "canonical marginals vs enumeration", summary, 30.0)


def test_criterion_04_equivalence_scaling(tmp_path):
    summary = execute("equivalence_sweep.json", tmp_path)
    for rho in ("0.6", "0.75", "0.9"):
        assert summary["slopes"][rho] <= -0.9
        assert summary["ratio_slopes"][rho] <= 1e-9
    report(4, "equivalence-of-ensembles scaling", summary, 120.0)


def test_criterion_05_sampler_moments(tmp_path):
    summary = execute("sampler_moments.json", tmp_path)
    assert summary["worst_z"] <= 3.0
    report(5, "stationary sampler moments", summary, 60.0)


def test_criterion_06_mapping_exactness(tmp_path):
    summary = execute("map_check.json", tmp_path)
    assert summary["n_events"] == 1_000_000
    rep = json.loads((tmp_path / "map_check.json").read_text())
    assert rep["pass"] and all(rep["checks"].values())
    report(6, "dynamic mapping exactness (1e6 events)", summary, 60.0)


def test_criterion_07_coupling_conservation(tmp_path):
    summary = execute("coupling.json", tmp_path)
    assert summary["n_events"] == 1_000_000
    report(7, "basic-coupling discrepancy conservation", summary, 60.0)


def test_criterion_08_mean_current(tmp_path):
    summary = execute("mean_current.json", tmp_path)
    assert abs(summary["z"]) <= 3.0
    report(8, "zero-range mean current", summary, 300.0)


def test_criterion_09_static_field_variance(tmp_path):
    summary = execute("field_variance.json", tmp_path)
    assert summary["rel_err"] <= 0.05
    report(9, "static field variance", summary, 120.0)


def test_criterion_10_she_covariance(tmp_path):
    summary = execute("she_covariance.json", tmp_path)
    report(10, "dynamic heat-semigroup covariance", summary, 1800.0)


def test_criterion_11_quadratic_variation(tmp_path):
    summary = execute("qv.json", tmp_path)
    assert summary["rel_err"] <= 0.05
    report(11, "quadratic variation slope", summary, 600.0)


def test_criterion_12_asymmetric_frame(tmp_path):
    summary = execute("tasep_frame.json", tmp_path)
    report(12, "totally asymmetric moving-frame covariance", summary, 1800.0)


def test_criterion_13_bg_decay(tmp_path):
    summary = execute("bg_decay.json", tmp_path)
    assert summary["fitted_slope"] < 0.0
    report(13, "Boltzmann-Gibbs decay", summary, 1800.0)


def test_criterion_14_current_scaling(tmp_path):
    summary = execute("current_scaling.json", tmp_path)
    assert summary["fitted_exponent"] <= 4.0 / 3.0 + 0.15
    report(14, "current-supremum scaling", summary, 1800.0)


def test_criterion_15_determinism(tmp_path):
    reruns = {
        "normalization.json": ["normalization.csv"],
        "coupling.json": ["coupled.csv"],
        "qv.json": ["qv.csv"],
    }
    identical = True
    for name, files in reruns.items():
        a = tmp_path / (name + ".a")
        b = tmp_path / (name + ".b")
        execute(name, a)
        execute(name, b)
        for f in files:
            if (a / f).read_bytes() != (b / f).read_bytes():
                identical = False
    print(f"\n{'PASS' if identical else 'FAIL'} criterion 15 (byte-identical reruns)")
    assert identical
