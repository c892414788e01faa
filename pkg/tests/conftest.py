import numpy as np
import pytest

from fedshift.data import AttributeSchema, Dataset, LabelSpace, SyntheticSpec, generate_synthetic


def make_dataset(labels, attributes, features=None, L=None, m=None, ids=None):
    labels = np.asarray(labels, dtype=np.int64)
    attributes = np.asarray(attributes, dtype=np.int64)
    L = L or int(labels.max(initial=0)) + 1
    m = m or int(attributes.max(initial=0)) + 1
    if features is None:
        features = np.column_stack([labels, attributes]).astype(float)
    return Dataset(LabelSpace.of_size(max(L, 2)), AttributeSchema.of_size(max(m, 2)), features, labels, attributes, ids)


@pytest.fixture
def small_synthetic():
    spec = SyntheticSpec.build([0.7, 0.3], [0.25] * 4, n=2000, d=4, seed=3)
    return generate_synthetic(spec)


CRITERIA: dict[int, tuple[str, bool, str]] = {}


class Criterion:
    """Context manager recording one acceptance criterion's outcome and detail line."""

    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        detail = self.detail if ok else f"{self.detail} {exc_type.__name__}: {exc}".strip()
        CRITERIA[self.number] = (self.title, ok, detail)
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {self.number:>2}: {self.title} | {detail}"
        print(line)
        return False


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        title, ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title} | {detail}")
