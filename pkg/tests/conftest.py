import numpy as np


def central_diff(f, z, h=1e-4):
    """Central finite-difference gradient of a scalar function."""
    z = np.asarray(z, dtype=np.float64)
    g = np.zeros_like(z)
    for i in np.ndindex(z.shape):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


def exhaustive_minimum(x, G, cb, objective):
    """Minimum objective over all K**dim quantized latents."""
    import itertools

    from latentcodec.objectives import evaluate

    best = np.inf
    for combo in itertools.product(cb.centers, repeat=G.input_dim):
        best = min(best, float(evaluate(x, np.array(combo), G, objective)))
    return best


# --- acceptance summary --------------------------------------------------------------

import pytest  # noqa: E402

CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        CRITERIA.append((mark.args[0], mark.args[1], rep.passed, rep.duration, detail))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, title, passed, duration, detail in sorted(CRITERIA):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:2d} {status}  {title}  [{duration:.1f}s]"
        terminalreporter.write_line(line + (f"  {detail}" if detail else ""))
