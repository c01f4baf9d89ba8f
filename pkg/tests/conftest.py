import random
from fractions import Fraction

import pytest

from boundnet.netir import dense_net

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


def rand_q(rng: random.Random, num: int = 9, den: int = 4) -> Fraction:
    return Fraction(rng.randint(-num, num), rng.randint(1, den))


def random_net(rng: random.Random, d: int, k: int, max_width: int = 4, hidden_act="relu", num=9, den=4):
    """Scalar net of depth k; hidden layers use ``hidden_act`` (a list picks per layer)."""
    spec, prev = [], d
    for li in range(k):
        last = li == k - 1
        w = 1 if last else rng.randint(1, max_width)
        act = "linear" if last else (rng.choice(hidden_act) if isinstance(hidden_act, list) else hidden_act)
        W = [[rand_q(rng, num, den) for _ in range(prev)] for _ in range(w)]
        b = [0] * w if last else [rand_q(rng, num, den) for _ in range(w)]
        spec.append((W, b, act))
        prev = w
    return dense_net(d, spec, f"rand-d{d}-k{k}")


@pytest.fixture
def rng():
    return random.Random(20240611)
