import numpy as np
import pytest

from pdadpmd import core


@pytest.fixture
def rng():
  return core.RngStream(1234)


def make_dataset(n, p, seed=0, visibility=core.Visibility.PRIVATE, noise=0.1):
  g = np.random.default_rng(seed)
  x = g.normal(size=(n, p)) / np.sqrt(p)
  theta = g.normal(size=p)
  y = x @ theta + noise * g.normal(size=n)
  return core.RegressionDataset(x, y, visibility)


def central_difference(f, theta, h=1e-5):
  theta = np.asarray(theta, dtype=float)
  out = np.empty_like(theta)
  for i in range(theta.size):
    e = np.zeros_like(theta)
    e[i] = h
    out[i] = (f(theta + e) - f(theta - e)) / (2 * h)
  return out


_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
  """Records one PASS/FAIL line per acceptance criterion, then asserts it."""

  def record(number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}"
    if detail:
      line += f" ({detail})"
    _ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line

  return record


def pytest_terminal_summary(terminalreporter):
  if _ACCEPTANCE_LINES:
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
      terminalreporter.write_line(line)
