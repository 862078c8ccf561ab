import numpy as np


def crossing_fwhm(samples, dt):
    """FWHM from the maximum sample and linearly interpolated half crossings.

    Deliberately simpler than the decoder's estimator, so the two can check
    each other on well-sampled pulses.
    """
    y = np.asarray(samples, float)
    p = int(np.argmax(y))
    half = y[p] / 2
    r = p + int(np.argmax(y[p:] < half))
    l = p - int(np.argmax(y[p::-1] < half))
    xr = r - 1 + (y[r - 1] - half) / (y[r - 1] - y[r])
    xl = l + 1 - (y[l + 1] - half) / (y[l + 1] - y[l])
    return (xr - xl) * dt


def gaussian(t, center, fwhm, peak=1.0):
    return peak * np.exp(-4 * np.log(2) * ((t - center) / fwhm) ** 2)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
