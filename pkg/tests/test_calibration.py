import math

from segadapt.calibration import BLUR_MAX, CLEAN_MAX, DEGRADED_MIN, calibrate, entropy_table
from segadapt.config import DEFAULTS
from segadapt.monitor import DEFAULT_SHARPNESS_MIN
from segadapt.pipeline import DEFAULT_TEMPERATURE
from segadapt.scene import SceneSpec

MAG = DEFAULTS["magnitudes"]


def test_committed_constants_meet_the_calibration_targets():
    tab = entropy_table(DEFAULT_TEMPERATURE, [SceneSpec(seed=s) for s in (5, 6)], [300, 9900, 18700], MAG)
    assert max(tab["clean"]) < CLEAN_MAX
    assert max(tab["U11"]) < BLUR_MAX
    assert min(min(tab[k]) for k in ("U07", "U08", "U09", "U10")) > DEGRADED_MIN


def test_grid_search_picks_largest_feasible_and_reports_infeasible():
    res = calibrate(MAG, seeds=(0,), times_s=(1.0, 9.0), grid=[0.001, 0.006, 0.009, 0.05])
    assert res.feasible and res.temperature == 0.009
    assert [r[-1] for r in res.rows] == [False, True, True, False]
    lo, hi = res.sharpness_range
    assert lo < res.sharpness_min < hi
    assert math.isclose(res.sharpness_min, math.sqrt(lo * hi))
    assert "threshold" in res.margin_report()
    none = calibrate(MAG, seeds=(0,), times_s=(1.0,), grid=[0.1])
    assert not none.feasible


def test_committed_sharpness_threshold_matches_calibration():
    res = calibrate(MAG, grid=[DEFAULT_TEMPERATURE])
    assert math.isclose(res.sharpness_min, DEFAULT_SHARPNESS_MIN, rel_tol=0.01)
