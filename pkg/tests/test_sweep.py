import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from localmin.minima import MemoryCapError, analyze_point
from localmin.network import NetworkArch, init_params
from localmin.sweep import (
    SweepCell,
    SweepConfig,
    cell_seed,
    gen_synthetic,
    heatmap_svg,
    median_by_width,
    read_cells_csv,
    run_cell,
    run_sweep,
    trained_not_worse_fraction,
    write_cells_csv,
    write_sweep_outputs,
)
from localmin.trainer import TrainConfig

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def small_data():
    X, Y, _ = gen_synthetic(seed=0, depth=2, width=4, input_dim=3, m=40)
    return X, Y


def _quick(**kw):
    return SweepConfig(train=TrainConfig(learning_rate=0.01, batch_size=20, epochs=2), **kw)


def test_gen_synthetic_is_deterministic():
    X, Y, man = gen_synthetic(seed=3, depth=2, width=5, input_dim=4, m=30)
    X2, Y2, _ = gen_synthetic(seed=3, depth=2, width=5, input_dim=4, m=30)
    assert np.array_equal(X, X2) and np.array_equal(Y, Y2)
    assert X.shape == (30, 4) and Y.shape == (30, 1) and Y.var() > 0
    assert man["activation"] == "tanh" and man["profile"] == "desk" and man["seed"] == 3
    assert not np.array_equal(Y, gen_synthetic(seed=4, depth=2, width=5, input_dim=4, m=30)[1])


def test_config_validation_and_json():
    with pytest.raises(ValueError):
        SweepConfig(depths=())
    with pytest.raises(ValueError):
        SweepConfig(widths=(0,))
    with pytest.raises(ValueError):
        SweepConfig(analyze_at="never")
    cfg = SweepConfig(depths=[1], widths=[2, 3], analyze_at="init")
    assert cfg.phases() == ("init",)
    back = SweepConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert back == cfg


def test_single_cell_grid(small_data):
    X, Y = small_data
    cells = run_sweep(_quick(depths=(1,), widths=(2,)), X, Y)
    assert [(c.H, c.d, c.phase) for c in cells] == [(1, 2, "init"), (1, 2, "trained")]
    assert all(math.isfinite(c.sqrt_J) and not c.error for c in cells)


def test_init_cell_matches_direct_analysis(small_data):
    X, Y = small_data
    cfg = _quick(depths=(2,), widths=(3,), analyze_at="init")
    (cell,) = run_cell(cfg, 2, 3, X, Y)
    p = init_params(NetworkArch(3, 1, (3, 3), "relu"), seed=cell_seed(0, 2, 3))
    rep = analyze_point(p, X, Y)
    assert cell.sqrt_J == math.sqrt(rep.J_direct) and cell.L == rep.L


def test_sweep_grid_order_and_parallel_agreement(small_data):
    X, Y = small_data
    cfg = _quick(depths=(1, 2), widths=(2, 3))
    a = run_sweep(cfg, X, Y, jobs=1)
    b = run_sweep(cfg, X, Y, jobs=2)
    assert [(c.H, c.d, c.phase) for c in a][:4] == [(1, 2, "init"), (1, 2, "trained"), (1, 3, "init"), (1, 3, "trained")]
    assert a == b


def test_cap_is_checked_up_front(small_data):
    X, Y = small_data
    with pytest.raises(MemoryCapError):
        run_sweep(SweepConfig(depths=(1,), widths=(2,), memory_cap=100), X, Y)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_failed_cell_gets_error_marker(small_data):
    X, Y = small_data
    cfg = SweepConfig(depths=(1,), widths=(2,), train=TrainConfig(learning_rate=1e6, batch_size=40, epochs=20))
    cells = run_cell(cfg, 1, 2, X * 1e3, Y)
    init, trained = cells
    assert init.error == "" and math.isfinite(init.sqrt_J)
    assert trained.error.startswith("TrainingDiverged") and math.isnan(trained.sqrt_J)


def test_csv_round_trip(tmp_path):
    cells = [SweepCell(1, 2, "init", 0.1 + 0.2, 1 / 3, 2.5e-7), SweepCell(1, 2, "trained", math.nan, math.nan, math.nan, "boom")]
    write_cells_csv(tmp_path / "c.csv", cells)
    back = read_cells_csv(tmp_path / "c.csv")
    assert back[0] == cells[0]
    assert back[1].error == "boom" and math.isnan(back[1].sqrt_J)
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "H,d,phase,sqrt_J,L,grad_norm,error"


def test_heatmap_structure():
    cells = [SweepCell(H, d, "init", float(H * d), 0.0, 0.0) for H in (1, 2) for d in (2, 4, 8)]
    cells[-1] = SweepCell(2, 8, "init", math.nan, math.nan, math.nan, "err")
    root = ET.fromstring(heatmap_svg(cells, (1, 2), (2, 4, 8), "t"))
    rects = root.findall(f"{SVG}rect")
    assert len(rects) == 6
    assert {(r.get("data-depth"), r.get("data-width")) for r in rects} == {(str(H), str(d)) for H in (1, 2) for d in (2, 4, 8)}
    meta = json.loads(root.find(f"{SVG}metadata").text)
    assert meta == {"scale": "linear", "vmin": 0.0, "vmax": 8.0}
    fills = {(r.get("data-depth"), r.get("data-width")): r.get("fill") for r in rects}
    assert fills[("2", "8")] == "#bbbbbb"
    assert fills[("2", "4")] == "#08306b"


def test_outputs_written(tmp_path, small_data):
    X, Y = small_data
    cfg = _quick(depths=(1,), widths=(2, 3))
    cells = run_sweep(cfg, X, Y)
    paths = write_sweep_outputs(tmp_path, cfg, cells)
    assert set(paths) == {"cells", "init", "trained"}
    assert len(read_cells_csv(paths["cells"])) == 4
    ET.parse(paths["trained"])


def test_summaries():
    cells = [SweepCell(1, 2, "init", 3.0, 0, 0), SweepCell(2, 2, "init", 5.0, 0, 0),
             SweepCell(1, 4, "init", 1.0, 0, 0), SweepCell(1, 2, "trained", 2.0, 0, 0),
             SweepCell(2, 2, "trained", 5.0, 0, 0), SweepCell(1, 4, "trained", 1.5, 0, 0)]
    assert median_by_width(cells, "init") == {2: 4.0, 4: 1.0}
    assert trained_not_worse_fraction(cells) == pytest.approx(2 / 3)
    assert trained_not_worse_fraction(cells, floor=0.5) == 1.0
    assert math.isnan(trained_not_worse_fraction(cells[:3]))
