import mpmath
import pytest

from tpscore import kernels


def _lower_integral(a, b, x):
    """integral_0^x c**(a-1) (1-c)**(b-1) dc as an mpf, by tanh-sinh quadrature.

    The endpoint singularity of c**(a-1) is removed with c = u**(1/a), and the
    upper tail is integrated instead when x > 1/2, so the integrand stays smooth.
    """
    if x <= 0.5:
        return mpmath.quad(lambda u: (1 - u ** (1 / a)) ** (b - 1) / a, [0, x**a])
    tail = mpmath.quad(lambda v: (1 - v ** (1 / b)) ** (a - 1) / b, [0, (1 - x) ** b])
    return mpmath.beta(a, b) - tail


def quad_incomplete_beta(a, b, x, dps=30):
    """Regularized incomplete beta I_x(a, b) from the quadrature above."""
    with mpmath.workdps(dps):
        a, b, x = mpmath.mpf(a), mpmath.mpf(b), mpmath.mpf(x)
        return float(_lower_integral(a, b, x) / mpmath.beta(a, b))


def quad_beta_scores(alpha, beta, p, dps=30):
    """(S(p,1), S(p,0)) of the beta family from the defining integrals."""
    with mpmath.workdps(dps):
        a, b, p = mpmath.mpf(alpha), mpmath.mpf(beta), mpmath.mpf(p)
        s1 = -(mpmath.beta(a, b + 1) - _lower_integral(a, b + 1, p))
        s0 = -_lower_integral(a + 1, b, p)
        return float(s1), float(s0)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    return kernels.BACKENDS[request.param]


# acceptance bookkeeping: one summary line per criterion, whatever the verbosity
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and not report.failed):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "tests": 0, "seconds": 0.0})
    entry["tests"] += report.when == "call"
    entry["seconds"] += report.duration
    entry["passed"] &= report.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["passed"] else "FAIL"
        terminalreporter.write_line(
            f"criterion {number:2d} {status}  {e['title']}  ({e['tests']} test(s), {e['seconds']:.2f} s)"
        )
