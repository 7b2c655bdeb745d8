"""Secondary acceptance: render the three preset panels end to end.

Generates the preset CSV pairs by invoking the simulator CLI (the external
interface), renders the stacked figure, and checks that the three signature
morphologies are present in the data: a trapping plateau, stabilized Rabi
oscillations, and slow envelope decay.
"""

import subprocess
import sys

import numpy as np
import pytest

from delayloop_plots import PanelSpec, render
from delayloop_plots.render import read_series


@pytest.fixture(scope="session")
def preset_csvs(tmp_path_factory):
    base = tmp_path_factory.mktemp("presets")
    for name in ("panel_a", "panel_b", "panel_c"):
        proc = subprocess.run(
            [sys.executable, "-m", "delayloop.cli", "run", "--preset", name,
             "--output", str(base / name)],
            capture_output=True, text=True, timeout=1800)
        assert proc.returncode == 0, proc.stderr
    return base


def pairs(base):
    return [(str(base / f"panel_{p}_feedback.csv"),
             str(base / f"panel_{p}_no_feedback.csv")) for p in "abc"]


def test_plot_renders_three_panels(preset_csvs, tmp_path):
    out = tmp_path / "figure.svg"
    specs = [PanelSpec(fb, nf, title=f"panel {p}", tau_marker=tau)
             for (fb, nf), p, tau in zip(pairs(preset_csvs), "abc",
                                         (1.0, 1.0, 0.1))]
    render(specs, str(out))
    text = out.read_text()
    assert "<svg" in text
    print(f"\nACCEPTANCE plot rendering: PASS ({out.stat().st_size} bytes)")


def test_panel_a_plateau_morphology(preset_csvs):
    fb, nf = pairs(preset_csvs)[0]
    _, dfb = read_series(fb)
    _, dnf = read_series(nf)
    late = dfb["t"] >= dfb["t"].max() - 1.0
    plateau = float(np.mean(dfb["P_e"][late]))
    drift = float(np.max(dfb["P_e"][late]) - np.min(dfb["P_e"][late]))
    assert 0.15 < plateau < 0.35          # stabilizes near 1/(1+tau)^2
    assert drift < 0.05                   # flat, not still decaying
    assert float(np.max(dnf["P_e"][late])) < 0.01   # bare atom has decayed


def test_panel_b_stabilized_oscillations(preset_csvs):
    fb, nf = pairs(preset_csvs)[1]
    _, dfb = read_series(fb)
    _, dnf = read_series(nf)
    late_fb = dfb["P_e"][dfb["t"] >= 4.0]
    late_nf = dnf["P_e"][dnf["t"] >= 4.0]
    amp_fb = float(late_fb.max() - late_fb.min())
    amp_nf = float(late_nf.max() - late_nf.min())
    assert amp_fb > 2 * amp_nf


def test_panel_c_slow_decay(preset_csvs):
    fb, nf = pairs(preset_csvs)[2]
    _, dfb = read_series(fb)
    _, dnf = read_series(nf)

    def amp(data, m):
        sel = (data["t"] > 0.1 * m + 1e-12) & (data["t"] <= 0.1 * (m + 1) + 1e-12)
        y = data["P_e"][sel]
        return float(y.max() - y.min())

    decay_fb = 1.0 - amp(dfb, 5) / amp(dfb, 1)
    decay_nf = 1.0 - amp(dnf, 5) / amp(dnf, 1)
    assert decay_fb < decay_nf
    assert decay_fb < 0.2                 # nearly undamped with feedback
