import numpy as np
import pytest

from synergyfe.tabular import Table


def planted_table(n=2000, d=8, seed=0, noise=0.05):
    """y = F1*F2 + noise over d independent standard-normal features."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    data = {f"F{i + 1}": X[:, i] for i in range(d)}
    data["y"] = X[:, 0] * X[:, 1] + noise * rng.standard_normal(n)
    return Table.from_arrays(data, "y", "regression")


def write_table_csv(path, columns: dict):
    import csv

    names = list(columns)
    n = len(columns[names[0]])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for r in range(n):
            row = []
            for name in names:
                v = columns[name][r]
                row.append(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v))
            w.writerow(row)


@pytest.fixture(scope="session")
def planted():
    return planted_table()


# acceptance criteria record a verdict here; printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
