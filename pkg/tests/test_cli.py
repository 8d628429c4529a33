import math

import pytest

from linkedtwist import maps
from linkedtwist.cli import main
from linkedtwist.dynamics import LinkedTwist


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def rows_of(text):
    lines = text.splitlines()
    return lines[0], [ln.split(",") for ln in lines[1:]]


def test_critical_both_emits_the_two_thresholds(capsys):
    code, out, err = run(capsys, "critical", "--system", "both")
    assert code == 0
    header, rows = rows_of(out)
    assert header == "system,alpha_star,residual,bracket_lo,bracket_hi"
    assert [r[0] for r in rows] == ["single", "double"]
    assert abs(float(rows[0][1]) - 6.23) < 0.01
    assert abs(float(rows[1][1]) - 4.13) < 0.01
    # the table stays machine-readable; prose goes to stderr
    assert "alpha*" in err


def test_critical_single_is_one_row(capsys):
    code, out, _ = run(capsys, "critical", "--system", "single")
    _, rows = rows_of(out)
    assert code == 0 and len(rows) == 1


def test_eigen_row_matches_the_closed_form(capsys):
    code, out, _ = run(capsys, "eigen", "--alpha", "3")
    assert code == 0
    header, rows = rows_of(out)
    assert header == "alpha,lambda_plus,lambda_minus,slope"
    lam_p, lam_m, slope = maps.eigen(3.0)
    assert [float(v) for v in rows[0]] == [3.0, lam_p, lam_m, slope]


def test_angle_sweep_row_count_and_determinant(capsys):
    code, out, _ = run(capsys, "angle-sweep", "--A", "3", "--steps", "100")
    assert code == 0
    header, rows = rows_of(out)
    assert header == "phi,lambda_plus,lambda_minus,det_error"
    assert len(rows) == 100
    assert float(rows[0][0]) == 0.0
    assert float(rows[-1][0]) == pytest.approx(math.pi / 2)
    assert all(float(r[3]) < 1e-12 for r in rows)
    # unit-modulus pair below the transition, real pair with product 1 above
    assert float(rows[0][1]) == 1.0
    assert float(rows[-1][1]) > 1.0


def test_unknown_flag_is_rejected_with_usage(capsys):
    code, _, err = run(capsys, "critical", "--system", "single", "--bogus")
    assert code == 2
    assert "usage" in err


def test_help_exits_cleanly(capsys):
    assert run(capsys, "--help")[0] == 0


def test_missing_winding_information_is_a_validation_error(capsys):
    code, _, err = run(capsys, "orbit", "--steps", "3")
    assert code == 2
    assert "--alpha" in err and "--k" in err


def test_winding_mismatch_is_a_validation_error(tmp_path, capsys):
    cfg = tmp_path / "geom.cfg"
    cfg.write_text("width_w = 0.02\n")
    code, _, err = run(capsys, "orbit", "--config", str(cfg),
                       "--alpha", "7", "--k", "3", "--steps", "3")
    assert code == 2
    assert "winding" in err


def test_alpha_alone_must_wind_an_integer_number_of_times(capsys):
    # default width 0.02 puts alpha = 7 at winding 0.14
    code, _, _ = run(capsys, "orbit", "--alpha", "7", "--steps", "3")
    assert code == 2


def test_k_alone_derives_the_shear_from_the_width(tmp_path, capsys):
    cfg = tmp_path / "geom.cfg"
    cfg.write_text("width_w = 0.02\n")
    code, out, _ = run(capsys, "orbit", "--config", str(cfg),
                       "--k", "1", "--steps", "2", "--s0", "0.25", "--y0", "0.25")
    assert code == 0
    header, rows = rows_of(out)
    assert header == "step,s,y,region"
    assert len(rows) == 3


def test_orbit_rows_stay_on_the_track(capsys):
    g = LinkedTwist.for_winding(7.0, 2).geom
    code, out, _ = run(capsys, "orbit", "--alpha", "7", "--k", "2",
                       "--steps", "40", "--seed", "5")
    assert code == 0
    _, rows = rows_of(out)
    assert len(rows) == 41
    for r in rows:
        s, y = float(r[1]), float(r[2])
        assert 0.0 <= s < g.track_length
        assert g.y0 - 1e-12 <= y <= g.y1 + 1e-12
        assert r[3] in ("square_s1", "square_s2", "lobe_a", "lobe_b")


def test_flow_samples_advance_the_angle_at_unit_speed(capsys):
    code, out, _ = run(capsys, "flow", "--alpha", "7", "--k", "2",
                       "--t-max", "2", "--dt", "0.25",
                       "--s0", "0.5", "--y0", "0.3", "--theta0", "0.1")
    assert code == 0
    header, rows = rows_of(out)
    assert header == "t,s,y,theta"
    assert len(rows) == 9
    for r in rows:
        t, theta = float(r[0]), float(r[3])
        assert theta == pytest.approx((0.1 + t) % 1.0, abs=1e-9)


def test_segment_certify_reports_every_trial(capsys):
    code, out, _ = run(capsys, "segment-certify", "--alpha", "7", "--k", "2",
                       "--trials", "6", "--seed", "3")
    assert code == 0
    header, rows = rows_of(out)
    assert header == "trial,iters_to_certificate,best_delta,outcome"
    assert [int(r[0]) for r in rows] == list(range(6))
    for r in rows:
        assert 1 <= int(r[1]) <= 50
        assert float(r[2]) > 1.0
        assert r[3] in ("vertical", "horizontal")


def test_segment_certify_nonconvergence_exits_three(capsys):
    # barely hyperbolic shear and a tiny budget: no crossing can appear
    code, out, _ = run(capsys, "segment-certify", "--alpha", "2.2", "--k", "1",
                       "--trials", "2", "--max-iters", "3")
    assert code == 3
    _, rows = rows_of(out)
    assert all(r[3] == "none" and r[1] == "-1" for r in rows)


def test_identical_config_and_seed_give_identical_bytes(tmp_path, capsys):
    a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
    base = ("segment-certify", "--alpha", "7", "--k", "2",
            "--trials", "8", "--seed", "9")
    assert run(capsys, *base, "--out", str(a))[0] == 0
    assert run(capsys, *base, "--out", str(b))[0] == 0
    assert run(capsys, *base, "--threads", "4", "--out", str(c))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    # the worker pool must be invisible in the output
    assert a.read_bytes() == c.read_bytes()


def test_seed_flag_overrides_the_config_file(tmp_path, capsys):
    cfg = tmp_path / "geom.cfg"
    cfg.write_text("seed = 9\n")
    base = ("segment-certify", "--alpha", "7", "--k", "2", "--trials", "4")
    _, from_cfg, _ = run(capsys, *base, "--config", str(cfg))
    _, from_flag, _ = run(capsys, *base, "--seed", "9")
    _, other, _ = run(capsys, *base, "--seed", "12")
    assert from_cfg == from_flag
    assert from_cfg != other


def test_lyapunov_csv_and_summary(capsys):
    code, out, err = run(capsys, "lyapunov", "--alpha", "7", "--k", "2",
                         "--orbits", "6", "--iters", "10000")
    assert code == 0
    header, rows = rows_of(out)
    assert header == "orbit,exponent"
    assert len(rows) == 6
    assert all(float(r[1]) > 0.0 for r in rows)
    assert "median exponent" in err


def test_lyapunov_rejects_short_runs(capsys):
    code, _, _ = run(capsys, "lyapunov", "--alpha", "7", "--k", "2",
                     "--orbits", "4", "--iters", "100")
    assert code == 2


def test_ergodicity_emits_one_row(capsys):
    code, out, _ = run(capsys, "ergodicity", "--alpha", "7", "--k", "2",
                       "--grid", "8", "--iters", "2000", "--orbits", "16")
    assert code == 0
    header, rows = rows_of(out)
    assert header == "alpha,grid_n,n_iters,n_orbits,discrepancy"
    assert len(rows) == 1
    assert 0.0 <= float(rows[0][4]) <= 1.0


def test_nwm_demo_trace_and_cube_validation(capsys):
    code, out, _ = run(capsys, "nwm-demo", "--alpha", "7", "--k", "2",
                       "--t-max", "3", "--dt", "0.37", "--samples", "2000")
    assert code == 0
    header, rows = rows_of(out)
    assert header == "t,intersection_measure"
    assert float(rows[0][0]) == 0.0
    assert all(float(r[1]) >= 0.0 for r in rows)
    # a fiber window reaching the layer gap is exactly what the setup forbids
    code, _, err = run(capsys, "nwm-demo", "--alpha", "7", "--k", "2",
                       "--epsilon", "0.06", "--t-max", "1", "--samples", "100")
    assert code == 2
    assert "layer gap" in err


def test_plot_writes_vector_graphics(tmp_path, capsys):
    fig = tmp_path / "trace.svg"
    code, _, _ = run(capsys, "nwm-demo", "--alpha", "7", "--k", "2",
                     "--t-max", "2", "--dt", "0.37", "--samples", "500",
                     "--plot", str(fig))
    assert code == 0
    assert fig.read_text(errors="ignore").lstrip().startswith("<?xml")
