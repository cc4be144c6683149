import pytest

from snnpar import autodiff as ad
from snnpar.gradcheck import TINY, CoordResult, GradCheckReport, _Objective, check_gradients


@pytest.fixture(scope="module")
def report():
    return check_gradients(n_samples=220)


def test_default_tiny_config_passes(report):
    assert len(report.results) >= 200
    assert report.passed, report.to_text()
    assert report.max_rel_error < 1e-3


def test_every_parameter_tensor_is_sampled(report):
    assert {r.param for r in report.results} == set(_Objective(TINY, 3, 0).params())


def test_report_lists_worst_coordinate_per_layer(report):
    text = report.to_text()
    worst = report.per_layer_worst()
    assert len(worst) > 5
    for layer, r in worst.items():
        assert layer in text
        assert r.rel_error == max(x.rel_error for x in report.results if x.param.rsplit(".", 1)[0] == layer)
    assert text.rstrip().endswith("PASS")


def test_corrupted_backward_fails(monkeypatch):
    real = ad.matmul

    def skewed(a, b):
        out = real(a, b)
        node = out._node
        if node is not None:  # only taped calls have a backward to skew
            inner = node.backward
            node.backward = lambda g: tuple(x * 1.5 for x in inner(g))
        return out

    monkeypatch.setattr(ad, "matmul", skewed)
    rep = check_gradients(n_samples=60)
    assert not rep.passed
    assert rep.to_text().rstrip().endswith("FAIL")


def test_rel_error_floor():
    assert CoordResult("a.w", (0,), 0.0, 0.0).rel_error == 0.0
    assert CoordResult("a.w", (0,), 1e-12, 0.0).rel_error < 1e-3
    assert CoordResult("a.w", (0,), 1.0, 1.1).rel_error == pytest.approx(0.1 / 2.1)
    assert not GradCheckReport().passed
