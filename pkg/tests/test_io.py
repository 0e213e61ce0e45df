import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from picflow import cli
from picflow import checkpoint as ckpt
from picflow.autodiff import AdamState
from picflow.config import ConfigError, load_case
from picflow.model import Normalizer, Picrnn
from picflow.parr import FormatError, read_array, write_array
from picflow.reports import (ErrorReport, ReportError, error_report, heatmap,
                             near_well_mask, relative_error_map)
from picflow.reservoir import ControlKind, Grid
from tests.conftest import DAY, P_INIT, P_WF, PSI


def desk_case_doc():
    return {
        "grid": {"nx": 16, "ny": 16, "dx": 2.5, "dy": 2.5, "dz": 1.0},
        "rock": {
            "porosity": 0.2,
            "permeability": {"value": 50, "unit": "mD"},
            "viscosity": {"value": 1.13, "unit": "cp"},
            "compressibility": {"value": 1e-5, "unit": "per_psi"},
            "initial_pressure": {"value": 3000, "unit": "psi"},
        },
        "wells": [
            {"name": "P1", "i": 3, "j": 3, "radius": 0.09},
            {"name": "P2", "i": 12, "j": 12, "radius": 0.09},
        ],
        "schedule": {
            "dt": {"value": 0.5, "unit": "day"},
            "segments": [
                {"steps": 20, "controls": [{"value": 1800, "unit": "psi"},
                                           {"value": 1800, "unit": "psi"}]},
            ],
        },
    }


@pytest.fixture
def desk_case(tmp_path):
    path = tmp_path / "case.json"
    path.write_text(json.dumps(desk_case_doc()))
    return str(path)


class TestParr:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        for shape in ((7,), (3, 4), (2, 3, 4), (1, 2, 3, 4)):
            arr = rng.standard_normal(shape)
            path = tmp_path / "a.parr"
            write_array(path, arr)
            back = read_array(path)
            assert back.shape == arr.shape
            assert np.array_equal(back.view(np.uint64), arr.view(np.uint64))

    def test_header_layout(self, tmp_path):
        path = tmp_path / "b.parr"
        write_array(path, np.array([1.0, 2.0]))
        raw = path.read_bytes()
        assert raw[:5] == b"PARR1"
        assert raw[5:8] == b"f64"
        assert raw[8] == 1  # rank
        assert int.from_bytes(raw[9:17], "little") == 2
        assert len(raw) == 17 + 16

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.parr"
        path.write_bytes(b"NOPE!" + b"\x00" * 20)
        with pytest.raises(FormatError):
            read_array(path)

    def test_truncated_and_trailing_rejected(self, tmp_path):
        path = tmp_path / "c.parr"
        write_array(path, np.arange(4.0))
        raw = path.read_bytes()
        (tmp_path / "trunc.parr").write_bytes(raw[:-3])
        with pytest.raises(FormatError):
            read_array(tmp_path / "trunc.parr")
        (tmp_path / "trail.parr").write_bytes(raw + b"\x00")
        with pytest.raises(FormatError):
            read_array(tmp_path / "trail.parr")

    def test_rank_limits(self, tmp_path):
        with pytest.raises(FormatError):
            write_array(tmp_path / "d.parr", np.zeros((1, 1, 1, 1, 1)))
        with pytest.raises(FormatError):
            write_array(tmp_path / "e.parr", np.array(3.0))

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False,
                              width=64), min_size=1, max_size=50))
    def test_property_round_trip(self, values):
        import tempfile
        arr = np.array(values)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "p.parr")
            write_array(path, arr)
            np.testing.assert_array_equal(read_array(path), arr)


class TestReports:
    def test_near_well_mask_partition(self):
        mask = near_well_mask(16, 16, [(3, 3), (12, 12)])
        assert mask[3, 3] and mask[12, 12]
        assert mask[6, 6] and not mask[7, 7]  # Chebyshev radius 3
        assert mask.sum() == 2 * 49  # two non-overlapping 7x7 blocks

    def test_relative_error_map(self):
        ref = np.full((2, 2), 100.0)
        test = np.array([[110.0, 90.0], [100.0, 150.0]])
        np.testing.assert_allclose(relative_error_map(ref, test),
                                   [[0.1, 0.1], [0.0, 0.5]])

    def test_nonpositive_reference_rejected(self):
        with pytest.raises(ReportError):
            relative_error_map(np.zeros((2, 2)), np.ones((2, 2)))

    def test_error_report_stats(self):
        ref = np.full((1, 16, 16), 100.0)
        test = ref.copy()
        test[0, 3, 3] = 120.0  # near-well cell
        test[0, 9, 9] = 101.0  # far-field cell
        rep = error_report(ref, test, [(3, 3)])
        snap = rep.snapshots[0]
        assert snap.near_well["max"] == pytest.approx(0.2)
        assert snap.far_field["max"] == pytest.approx(0.01)
        assert snap.overall["max"] == pytest.approx(0.2)

    def test_error_report_csv(self, tmp_path):
        ref = np.full((2, 8, 8), 50.0)
        rep = error_report(ref, ref * 1.01, [(2, 2)], indices=[1])
        path = tmp_path / "stats.csv"
        rep.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "snapshot,region,max,mean,p95"
        assert len(lines) == 4  # one snapshot x three regions

    def test_heatmap_pgm(self, tmp_path):
        field = np.arange(12.0).reshape(3, 4)
        out = tmp_path / "map.pgm"
        sidecar = heatmap(field, out)
        raw = out.read_bytes()
        assert raw.startswith(b"P5\n4 3\n255\n")
        pixels = np.frombuffer(raw[len(b"P5\n4 3\n255\n"):], dtype=np.uint8)
        assert pixels[0] == 0 and pixels[-1] == 255
        assert sidecar == json.loads((tmp_path / "map.pgm.json").read_text())
        assert not sidecar["degenerate_constant_field"]

    def test_heatmap_constant_field(self, tmp_path):
        out = tmp_path / "flat.pgm"
        sidecar = heatmap(np.full((2, 2), 7.0), out)
        assert sidecar["degenerate_constant_field"]
        raw = out.read_bytes()
        assert set(raw[raw.index(b"255\n") + 4:]) == {128}

    def test_heatmap_rejects_nonfinite(self, tmp_path):
        with pytest.raises(ReportError):
            heatmap(np.array([[np.nan, 1.0]]), tmp_path / "x.pgm")


class TestConfig:
    def test_load_desk_case(self, desk_case):
        model, schedule = load_case(desk_case)
        assert model.grid.nx == 16
        assert model.rock_fluid.initial_pressure == pytest.approx(3000 * PSI)
        assert model.wells[0].name == "P1"
        assert model.wells[0].kind is ControlKind.BHP
        assert schedule.dt == 0.5 * DAY
        assert schedule.num_steps == 20
        np.testing.assert_allclose(schedule.control_at(0),
                                   [1800 * PSI, 1800 * PSI])

    def test_permeability_file_reference(self, tmp_path):
        doc = desk_case_doc()
        perm = np.linspace(10, 90, 256)
        write_array(tmp_path / "perm.parr", perm)
        doc["rock"]["permeability"] = {"file": "perm.parr", "unit": "mD"}
        path = tmp_path / "case.json"
        path.write_text(json.dumps(doc))
        model, _ = load_case(path)
        np.testing.assert_allclose(model.rock_fluid.permeability,
                                   perm * 9.869233e-16, rtol=1e-12)

    def test_bare_numbers_are_si(self, tmp_path):
        doc = desk_case_doc()
        doc["rock"]["viscosity"] = 0.00113
        path = tmp_path / "case.json"
        path.write_text(json.dumps(doc))
        model, _ = load_case(path)
        assert model.rock_fluid.viscosity == pytest.approx(0.00113)

    def test_error_messages_name_key(self, tmp_path):
        doc = desk_case_doc()
        del doc["rock"]["porosity"]
        path = tmp_path / "case.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigError, match="rock.porosity"):
            load_case(path)

    def test_unknown_unit_rejected(self, tmp_path):
        doc = desk_case_doc()
        doc["rock"]["viscosity"] = {"value": 1.0, "unit": "poise"}
        path = tmp_path / "case.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigError, match="rock.viscosity.unit"):
            load_case(path)

    def test_control_count_mismatch_rejected(self, tmp_path):
        doc = desk_case_doc()
        doc["schedule"]["segments"][0]["controls"] = [
            {"value": 1800, "unit": "psi"}]
        path = tmp_path / "case.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigError, match="controls"):
            load_case(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_case(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_case(path)


class TestCheckpoint:
    def surrogate(self, seed=5):
        grid = Grid(16, 16, 2.5, 2.5)
        nm = Normalizer(P_INIT, P_INIT - P_WF)
        return Picrnn(grid, (grid.flatten(3, 3), grid.flatten(12, 12)), nm,
                      seed=seed)

    def test_save_load_round_trip(self, tmp_path):
        s = self.surrogate()
        ckpt.save(tmp_path / "ck", s, epoch=42)
        loaded, adam, manifest = ckpt.load(tmp_path / "ck")
        assert adam is None
        assert manifest["epoch"] == 42
        assert loaded.well_cells == s.well_cells
        assert loaded.normalizer == s.normalizer
        for name in s.params:
            np.testing.assert_array_equal(loaded.params[name].data,
                                          s.params[name].data)

    def test_adam_state_round_trip(self, tmp_path):
        s = self.surrogate()
        adam = AdamState(s.params)
        adam.step_count = 7
        adam.m["out.w"] += 0.125
        ckpt.save(tmp_path / "ck", s, adam=adam)
        _, loaded_adam, _ = ckpt.load(tmp_path / "ck")
        assert loaded_adam.step_count == 7
        np.testing.assert_array_equal(loaded_adam.m["out.w"],
                                      adam.m["out.w"])

    def test_loaded_model_reproduces_rollout(self, tmp_path):
        from picflow.reservoir import ControlSchedule
        from picflow.training import predict
        s = self.surrogate()
        sched = ControlSchedule(np.full((2, 4), P_WF), 0.5 * DAY)
        x0 = np.full(256, P_INIT)
        want, _ = predict(s, x0, sched, 4)
        ckpt.save(tmp_path / "ck", s)
        loaded, _, _ = ckpt.load(tmp_path / "ck")
        got, _ = predict(loaded, x0, sched, 4)
        np.testing.assert_array_equal(got.snapshots, want.snapshots)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ckpt.CheckpointError):
            ckpt.load(tmp_path)

    def test_manifest_roles(self, tmp_path):
        ckpt.save(tmp_path / "ck", self.surrogate())
        manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
        roles = {e["name"]: e["role"] for e in manifest["params"]}
        assert roles["enc1.v"] == "state-encoder"
        assert roles["lstm.fh.w"] == "convlstm"
        assert roles["out.w"] == "output-scaling"


class TestCli:
    def test_simulate_writes_fields_and_rates(self, desk_case, tmp_path):
        out = tmp_path / "traj.parr"
        rates = tmp_path / "rates.csv"
        code = cli.main(["simulate", "--config", desk_case,
                         "--out", str(out), "--rates", str(rates)])
        assert code == 0
        fields = read_array(out)
        assert fields.shape == (21, 16, 16)
        assert fields[0].min() == pytest.approx(3000 * PSI)
        lines = rates.read_text().splitlines()
        assert lines[0] == "step,day,well,rate_m3_per_s"
        assert len(lines) == 1 + 20 * 2

    def test_simulate_deterministic_bytes(self, desk_case, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{tag}.parr"
            assert cli.main(["simulate", "--config", desk_case,
                             "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_assemble_exports(self, desk_case, tmp_path):
        out_dir = tmp_path / "sys"
        assert cli.main(["assemble", "--config", desk_case,
                         "--out-dir", str(out_dir)]) == 0
        v = read_array(out_dir / "V.parr")
        t = read_array(out_dir / "T_triplets.parr")
        b = read_array(out_dir / "B_triplets.parr")
        assert v.shape == (256,)
        assert t.shape[1] == 3
        assert b.shape == (2, 3)

    def test_train_then_predict_then_eval(self, desk_case, tmp_path):
        train_cfg = tmp_path / "train.json"
        train_cfg.write_text(json.dumps(
            {"epochs": 3, "steps": 5, "learning_rate": 0.01,
             "grad_clip": 10.0, "checkpoint_every": 2, "seed": 1}))
        run = tmp_path / "run"
        assert cli.main(["train", "--config", desk_case,
                         "--train-config", str(train_cfg),
                         "--out", str(run)]) == 0
        assert (run / "loss.csv").exists()
        assert (run / "loss.png").exists()
        assert (run / "best" / "manifest.json").exists()
        assert (run / "final" / "manifest.json").exists()

        pred = tmp_path / "pred.parr"
        assert cli.main(["predict", "--checkpoint", str(run / "final"),
                         "--config", desk_case, "--steps", "3",
                         "--extrapolate", "2", "--out", str(pred)]) == 0
        fields = read_array(pred)
        assert fields.shape == (5, 16, 16)
        assert (tmp_path / "pred.hidden_h.parr").exists()

        ref = tmp_path / "ref.parr"
        assert cli.main(["simulate", "--config", desk_case,
                         "--out", str(ref)]) == 0
        ref_fields = read_array(ref)[1:6]
        ref_trim = tmp_path / "ref_trim.parr"
        write_array(ref_trim, ref_fields)
        out_dir = tmp_path / "report"
        assert cli.main(["eval", "--ref", str(ref_trim), "--test", str(pred),
                         "--config", desk_case, "--snapshots", "0,4",
                         "--out-dir", str(out_dir)]) == 0
        assert (out_dir / "error_stats.csv").exists()
        assert (out_dir / "error_map_00000.png").exists()
        assert (out_dir / "error_map_00004.parr").exists()

    def test_heatmap_command(self, desk_case, tmp_path):
        out = tmp_path / "traj.parr"
        assert cli.main(["simulate", "--config", desk_case,
                         "--out", str(out)]) == 0
        pgm = tmp_path / "snap.pgm"
        assert cli.main(["heatmap", "--input", str(out),
                         "--snapshot", "5", "--out", str(pgm)]) == 0
        assert pgm.read_bytes().startswith(b"P5\n16 16\n255\n")
        # trajectory input without --snapshot is an error
        assert cli.main(["heatmap", "--input", str(out),
                         "--out", str(pgm)]) == 1

    def test_error_path_json_line(self, tmp_path, capsys):
        code = cli.main(["simulate", "--config", str(tmp_path / "missing.json"),
                         "--out", str(tmp_path / "o.parr")])
        assert code == 1
        err = capsys.readouterr().err.strip()
        doc = json.loads(err)
        assert doc["kind"] == "CliError"
        assert "missing.json" in doc["error"]

    def test_outdir_env_override(self, desk_case, tmp_path, monkeypatch):
        monkeypatch.setenv("PICFLOW_OUTDIR", str(tmp_path / "outputs"))
        assert cli.main(["simulate", "--config", desk_case,
                         "--out", "traj.parr"]) == 0
        assert (tmp_path / "outputs" / "traj.parr").exists()

    def test_seed_env_override(self, desk_case, tmp_path, monkeypatch):
        train_cfg = tmp_path / "train.json"
        train_cfg.write_text(json.dumps({"epochs": 1, "steps": 2, "seed": 1}))
        monkeypatch.setenv("PICFLOW_SEED", "9")
        run = tmp_path / "run"
        assert cli.main(["train", "--config", desk_case,
                         "--train-config", str(train_cfg),
                         "--out", str(run)]) == 0
        manifest = json.loads((run / "final" / "manifest.json").read_text())
        assert manifest["seed"] == 9

    def test_default_snapshot_indices(self):
        assert cli.default_snapshot_indices(400) == [40, 120, 200, 320, 360]
        assert cli.default_snapshot_indices(10) == [1, 3, 5, 8, 9]
