import csv
import math

import pytest

from mixtrain.plots import (BASELINE_LABEL, _parse_profile, _parse_report,
                            build_emissions_figure, build_profile_figure,
                            emissions_figure, plot_results, profile_figures)

POLLUTANTS = ["Fuel", "CO2", "CO", "HC", "NOx"]


def _write_report(path, labels, scopes=("A", "B", "network"), value=1.0):
    rows = [["Intersection", "Pollutant", *labels]]
    for k, pollutant in enumerate(POLLUTANTS):
        for s, scope in enumerate(scopes):
            rows.append([scope, pollutant]
                        + [str(value + k + 0.01 * s + 0.1 * j)
                           for j in range(len(labels))])
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _write_profile(path, scopes=("A", "network"), n=20, value=0.0):
    rows = [["t", *scopes]]
    for t in range(1, n + 1):
        rows.append([str(t)] + [str(value)] * len(scopes))
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _dashed_lines(ax):
    return [ln for ln in ax.get_lines() if ln.get_linestyle() == "--"]


def test_parse_report_averages_intersections(tmp_path):
    p = tmp_path / "report.csv"
    _write_report(p, [BASELINE_LABEL, "50%"], scopes=("A", "B", "network"))
    labels, averages = _parse_report(p)
    assert labels == [BASELINE_LABEL, "50%"]
    # network row is excluded from the intersection average
    assert averages["Fuel"][BASELINE_LABEL] == pytest.approx((1.0 + 1.01) / 2)
    assert averages["Fuel"]["50%"] == pytest.approx((1.1 + 1.11) / 2)
    assert set(averages) == set(POLLUTANTS)


def test_parse_report_rejects_foreign_csv(tmp_path):
    p = tmp_path / "report.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="results table"):
        _parse_report(p)


def test_parse_report_rejects_ragged_rows(tmp_path):
    p = tmp_path / "report.csv"
    p.write_text("Intersection,Pollutant,50%\nA,Fuel\n")
    with pytest.raises(ValueError, match="width"):
        _parse_report(p)


def test_emissions_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        emissions_figure(tmp_path / "absent.csv", tmp_path / "out.png")


def test_five_panels_ten_ticks_dashed_baseline(tmp_path):
    rates = [f"{r}%" for r in range(10, 101, 10)]
    p = tmp_path / "report.csv"
    _write_report(p, [BASELINE_LABEL, *rates])
    fig = build_emissions_figure(p)
    try:
        assert len(fig.axes) == 5
        for ax in fig.axes:
            assert len(ax.get_xticks()) == 10
            assert len(_dashed_lines(ax)) == 1
            solid = [ln for ln in ax.get_lines()
                     if ln.get_linestyle() == "-"]
            assert len(solid) == 1 and len(solid[0].get_xdata()) == 10
    finally:
        import matplotlib.pyplot as plt

        plt.close(fig)


def test_baseline_only_reference_line(tmp_path):
    p = tmp_path / "report.csv"
    _write_report(p, [BASELINE_LABEL])
    fig = build_emissions_figure(p)
    try:
        assert len(fig.axes) == 5
        for ax in fig.axes:
            assert len(_dashed_lines(ax)) == 1
            assert all(ln.get_linestyle() == "--" for ln in ax.get_lines())
    finally:
        import matplotlib.pyplot as plt

        plt.close(fig)


def test_profile_zeros_flat_line(tmp_path):
    p = tmp_path / "profile.csv"
    _write_profile(p, scopes=("A",), n=15, value=0.0)
    ts, series = _parse_profile(p)
    assert ts == [float(t) for t in range(1, 16)]
    fig = build_profile_figure(ts, series["A"], "A")
    try:
        line = fig.axes[0].get_lines()[0]
        assert all(y == 0.0 for y in line.get_ydata())
    finally:
        import matplotlib.pyplot as plt

        plt.close(fig)


def test_profile_blanks_become_nan(tmp_path):
    p = tmp_path / "profile.csv"
    p.write_text("t,A\n1,0.5\n2,\n3,0.25\n")
    _ts, series = _parse_profile(p)
    assert math.isnan(series["A"][1])


def test_profile_rejects_foreign_csv(tmp_path):
    p = tmp_path / "profile.csv"
    p.write_text("x,y\n1,2\n")
    with pytest.raises(ValueError, match="profile table"):
        profile_figures(p, tmp_path)


def test_plot_results_walks_sweep_layout(tmp_path):
    _write_report(tmp_path / "report.csv", [BASELINE_LABEL, "50%"])
    for sub in ("hvs_w_ts", "50"):
        (tmp_path / sub).mkdir()
        _write_profile(tmp_path / sub / "profile.csv", scopes=("A", "network"))
    out = tmp_path / "figs"
    written = plot_results(tmp_path, out)
    names = {p.name for p in written}
    assert names == {
        "emissions.png",
        "hvs_w_ts_profile_a.png", "hvs_w_ts_profile_network.png",
        "50_profile_a.png", "50_profile_network.png",
    }
    assert all(p.exists() and p.stat().st_size > 0 for p in written)


def test_plot_results_requires_report(tmp_path):
    with pytest.raises(FileNotFoundError, match="report.csv"):
        plot_results(tmp_path)
