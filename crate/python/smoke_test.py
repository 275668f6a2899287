"""Exercises the Python bindings end to end on a tiny simulated cohort.

Build the extension first:

    cargo build -p eivtraj-py --release

The script finds the shared library under target/ itself.
"""

import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        ROOT / "target" / profile / "libeivtraj_py.so"
        for profile in ("release", "debug")
    ]
    built = [p for p in candidates if p.exists()]
    if not built:
        sys.exit("no built extension found; run: cargo build -p eivtraj-py")
    newest = max(built, key=lambda p: p.stat().st_mtime)
    stage = Path(tempfile.mkdtemp(prefix="eivtraj-py-"))
    shutil.copy2(newest, stage / "eivtraj_py.so")
    sys.path.insert(0, str(stage))
    import eivtraj_py

    return eivtraj_py


def main():
    m = load_module()

    cohort = m.Cohort.simulate(json.dumps({
        "protocol": "toy",
        "n_patients": 1,
        "meals_per_patient": 4,
        "covariate_dim": 2,
        "cadence_min": 60.0,
        "horizon_days": 2,
        "seed": 5,
    }))
    assert cohort.patient_ids == ["sim00"]
    times, outcome = cohort.observations(0)
    assert len(times) == 48 and len(outcome) == 48
    assert len(cohort.events(0)) == 4
    truth = json.loads(cohort.truth_json())
    assert len(truth["beta_h"][0]) == 2
    cohort.split_days(1)
    print(repr(cohort))

    fit = m.fit(
        cohort,
        model=json.dumps({"variant": "hier"}),
        sampler=json.dumps({"chains": 2, "warmup": 80, "draws": 60,
                            "max_tree_depth": 7, "seed": 3}),
    )
    print(repr(fit))
    assert math.isfinite(fit.max_rhat)
    names = fit.parameter_names
    assert any(n.startswith("beta_h") for n in names)
    draws = fit.pooled(names[0])
    assert len(draws) == 2 * 60
    means = fit.posterior_means()
    assert set(means) == set(names)
    assert json.loads(fit.summary_json())["max_rhat"] == fit.max_rhat

    traj = json.loads(fit.trajectory(cohort))
    assert len(traj["total_mean"][0]) == 48
    metrics = json.loads(fit.metrics(cohort))
    for key in ("m1", "m2", "m3", "m4", "m5"):
        assert math.isfinite(metrics[key]), key
    elpd, p_loo, looic, se = fit.loo(cohort)
    assert math.isfinite(elpd) and p_loo >= 0.0
    assert abs(looic + 2.0 * elpd) < 1e-9
    cos = fit.cosine_to_truth(cohort)
    assert -1.0 <= cos <= 1.0

    replay = fit.replay(cohort, json.dumps({
        "protocol": "from-fit",
        "n_patients": 1,
        "meals_per_patient": 4,
        "covariate_dim": 2,
        "cadence_min": 60.0,
        "horizon_days": 1,
        "perturb_fraction": 0.5,
        "perturb_sd": 0.2,
        "seed": 11,
    }))
    assert replay.patient_ids == ["sim00"]
    assert json.loads(replay.truth_json())["perturbed"][0].count(True) == 2

    with tempfile.TemporaryDirectory() as d:
        out = Path(d) / "draws.csv"
        fit.write_draws_csv(str(out))
        header = out.read_text().splitlines()[0]
        assert header.startswith("chain,draw,logp,divergent,")

    u, p, exact = m.mann_whitney([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
    assert exact and u == 0.0 and abs(p - 1.0 / 20.0) < 1e-12
    assert abs(m.cosine([1.0, 0.0], [0.0, 1.0])) < 1e-12

    elpd, p_loo, _, _ = m.loo_from_loglik([[-1.0, -2.0]] * 200)
    assert abs(elpd - (-3.0)) < 1e-9 and abs(p_loo) < 1e-9

    bad = False
    try:
        m.fit(cohort, model='{"variant": "nope"}')
    except ValueError:
        bad = True
    assert bad, "invalid variant must raise ValueError"

    print("smoke test passed")


if __name__ == "__main__":
    main()
