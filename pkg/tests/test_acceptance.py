"""The thirteen acceptance gates at their full sizes and tolerances.

Each criterion runs its named experiment with default parameters and the
default master seed. One PASS/FAIL line per criterion is printed in the
pytest terminal summary (see conftest.py), or directly when this file is run
as a script.
"""
import sys
import time

import pytest

from reinforce_lab import experiments
from reinforce_lab.cli import DEFAULT_SEED

RESULTS = {}

ORDER = sorted(experiments.CATALOG.values(), key=lambda e: e.criterion)


def _line(exp, out, wall):
    failed = [k for k, ok in out.gates.items() if not ok]
    status = "PASS" if out.passed else "FAIL"
    tail = f"failed gates: {', '.join(failed)}" if failed else f"{len(out.gates)} gates ok"
    return f"{status} criterion {exp.criterion:2d} {exp.name:20s} {tail} ({wall:.0f}s)"


def run_criterion(exp):
    t0 = time.perf_counter()
    out = experiments.run(exp.name, seed=DEFAULT_SEED)
    RESULTS[exp.criterion] = _line(exp, out, time.perf_counter() - t0)
    return out


@pytest.mark.slow
@pytest.mark.parametrize("exp", ORDER, ids=[f"c{e.criterion:02d}-{e.name}" for e in ORDER])
def test_criterion(exp):
    out = run_criterion(exp)
    print(RESULTS[exp.criterion])
    assert out.gates, "an experiment must define at least one gate"
    assert out.passed, {k: v for k, v in out.gates.items() if not v}


if __name__ == "__main__":
    bad = 0
    for exp in ORDER:
        out = run_criterion(exp)
        print(RESULTS[exp.criterion], flush=True)
        bad += not out.passed
    sys.exit(1 if bad else 0)
