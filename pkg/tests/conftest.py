import json
import subprocess
import sys
import time

import pytest

from hscf.data import load_cohort
from hscf.synthetic import generate_synthetic_cohort


def run_cli(*args, env=None):
    """Invoke the CLI the way a user would, via the module entry point."""
    import os

    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    return subprocess.run(
        [sys.executable, "-m", "hscf", *[str(a) for a in args]],
        capture_output=True,
        text=True,
        env=full_env,
    )


@pytest.fixture(scope="session")
def toy_cohort():
    # smallest legal ROI count; enough subjects to split
    return generate_synthetic_cohort(seed=0, n_per_class=4, n_rois=6, signal=0.3)


@pytest.fixture(scope="session")
def standard_cohorts(tmp_path_factory):
    """Full-scale cohorts (N=90, 76 per class) at signal 0.4 and 0.0."""
    root = tmp_path_factory.mktemp("cohorts")
    paths = {}
    for name, signal in [("signal04", 0.4), ("signal00", 0.0)]:
        out = root / name
        proc = run_cli(
            "generate", "--out", out, "--seed", 7,
            "--subjects-per-class", 76, "--rois", 90, "--signal", signal,
        )
        assert proc.returncode == 0, proc.stderr
        paths[name] = out / "cohort.json"
    return paths


def _train_standard(data_manifest, out_dir, seed):
    """One full-length training run through the CLI; returns artifacts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "model.json"
    started = time.perf_counter()
    proc = run_cli(
        "train", "--data", data_manifest.parent, "--out", ckpt,
        "--task", "nc-emci", "--seed", seed,
    )
    elapsed = time.perf_counter() - started
    assert proc.returncode == 0, proc.stderr
    final = json.loads(proc.stdout.strip().splitlines()[-1])
    records = [
        json.loads(line)
        for line in (out_dir / "model.report.jsonl").read_text().splitlines()
    ]
    return {"ckpt": ckpt, "final": final, "records": records, "seconds": elapsed}


@pytest.fixture(scope="session")
def standard_seed1_run(standard_cohorts, tmp_path_factory):
    root = tmp_path_factory.mktemp("train_seed1")
    return _train_standard(standard_cohorts["signal04"], root, seed=1)


@pytest.fixture(scope="session")
def standard_runs(standard_cohorts, standard_seed1_run, tmp_path_factory):
    """The full learnability protocol: five seeds plus a no-signal control."""
    root = tmp_path_factory.mktemp("train_rest")
    runs = {1: standard_seed1_run}
    for seed in (2, 3, 4, 5):
        runs[seed] = _train_standard(standard_cohorts["signal04"], root / f"s{seed}", seed)
    control = _train_standard(standard_cohorts["signal00"], root / "control", seed=1)
    return {
        "runs": runs,
        "control": control,
        "cohort04": standard_cohorts["signal04"],
        "cohort00": standard_cohorts["signal00"],
    }


@pytest.fixture(scope="session")
def standard_cohort_loaded(standard_cohorts):
    return load_cohort(standard_cohorts["signal04"])
