"""수렴 차수 / effectivity 테스트 (느림, pytest -m slow)"""
import numpy as np
import pytest

from app.core.driver import adaptive_loop
from app.core.models import RunConfig

pytestmark = pytest.mark.slow

RATE_TOL = 0.15


def observed_rate(records, tail: int = 3) -> float:
    """log(error) 대 log(ndof) 기울기 (마지막 tail 단계)"""
    tail_records = records[-tail:]
    dofs = np.log([r.ndof_total for r in tail_records])
    errors = np.log([r.error for r in tail_records])
    return float(np.polyfit(dofs, errors, 1)[0])


@pytest.mark.parametrize("k", [1, 2])
def test_primal_uniform_rate(k):
    config = RunConfig(scheme="primal", k=k, problem="square-smooth", marking="uniform", steps=8)
    records = adaptive_loop(config)
    assert observed_rate(records) == pytest.approx(-k / 2, abs=RATE_TOL)


@pytest.mark.parametrize("k, stabilization", [(0, "single-facet"), (1, "uniform"), (1, "single-facet")])
def test_mixed_uniform_rate(k, stabilization):
    config = RunConfig(
        scheme="mixed", k=k, stabilization=stabilization, problem="square-smooth", marking="uniform", steps=8
    )
    records = adaptive_loop(config)
    assert observed_rate(records) == pytest.approx(-(k + 1) / 2, abs=RATE_TOL)


@pytest.mark.parametrize("k", [2, 3])
def test_adaptive_lshape_restores_rate(k):
    config = RunConfig(scheme="primal", k=k, problem="lshape2d", marking="dorfler:0.5", steps=14)
    records = adaptive_loop(config)
    assert observed_rate(records, tail=5) <= -0.9 * k / 2


@pytest.mark.parametrize(
    "scheme, k, stabilization",
    [("primal", 1, "paper10k2"), ("primal", 2, "lemma"), ("mixed", 0, "uniform"), ("mixed", 1, "single-facet")],
)
def test_adaptive_lshape_effectivity(scheme, k, stabilization):
    config = RunConfig(
        scheme=scheme, k=k, stabilization=stabilization, problem="lshape2d", marking="dorfler:0.5", steps=10
    )
    records = adaptive_loop(config)
    for record in records[2:]:
        assert 0.95 <= record.effectivity <= 3.3
