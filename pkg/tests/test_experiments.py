import json

import numpy as np
import pytest

from loo_kernel.dataio import synth_blobs, write_matrix_csv
from loo_kernel.errors import ConfigError
from loo_kernel.experiments import (
    CSV_HEADER,
    SweepConfig,
    aggregate,
    default_width_grid,
    records_from_csv,
    records_to_csv,
    run_noise_sweep,
    run_rank_sweep,
    run_sample_size_sweep,
    run_sweep,
    run_transfer_eval,
    run_width_sweep,
    summarize,
    write_sweep_outputs,
)
from loo_kernel.kernels import KernelSpec

BLOBS = {"kind": "blobs", "n": 120, "d": 5, "classes": 3, "separation": 3.0}


def small(family, grid, **kw):
    kw.setdefault("repeats", 2)
    kw.setdefault("data", BLOBS)
    return SweepConfig(family=family, grid=grid, **kw)


class TestConfig:
    def test_from_dict_roundtrip(self):
        cfg = SweepConfig.from_dict(
            {"family": "depth", "grid": [1, 2], "lambda": 0.1, "kernel": {"family": "nngp"}, "data": BLOBS}
        )
        assert cfg.lam == 0.1 and cfg.kernel.family == "nngp"
        assert SweepConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize(
        "raw, field",
        [
            ({"grid": [1]}, "family"),
            ({"family": "depth"}, "grid"),
            ({"family": "depth", "grid": [2, 1]}, "grid"),
            ({"family": "depth", "grid": [1], "lambda": -1}, "lambda"),
            ({"family": "depth", "grid": [1], "repeats": "3"}, "repeats"),
            ({"family": "depth", "grid": [1], "bogus": 1}, "bogus"),
            ({"family": "noise", "grid": [0.5, 2]}, "grid"),
            ({"family": "rank", "grid": [4], "variant": "depth2-m1"}, "fixed_width"),
            ({"family": "depth", "grid": [1], "kernel": {"depth": 0}}, "kernel"),
            ({"family": "nope", "grid": [1]}, "family"),
        ],
    )
    def test_errors_name_the_field(self, raw, field):
        with pytest.raises(ConfigError, match=f"^{field}"):
            SweepConfig.from_dict(raw)


def test_default_width_grid_brackets_n():
    grid = default_width_grid(100)
    assert grid == [12, 25, 50, 75, 90, 100, 110, 200, 400, 800]


class TestSweeps:
    def test_sample_size_records(self):
        recs = run_sample_size_sweep(small("sample-size", [20, 40], kernel=KernelSpec("ntk", 2)))
        assert [(r.knob, r.repeat) for r in recs] == [(20, 0), (20, 1), (40, 0), (40, 1)]
        assert all(r.n_train == r.knob for r in recs)
        assert all(r.test_loss == pytest.approx(2 * r.test_loss_raw) for r in recs)

    def test_repeats_differ_by_subsample(self):
        recs = run_sample_size_sweep(small("sample-size", [30]))
        assert recs[0].loo_loss != recs[1].loo_loss

    def test_width_rank_is_min(self):
        recs = run_width_sweep(small("width", [10, 40, 200], n_train=40, repeats=1))
        assert [r.kernel_rank for r in recs] == [10, 40, 40]

    def test_rank_two_layer_variants_bounded(self):
        for variant in ("depth2-m1", "depth2-m2"):
            recs = run_rank_sweep(
                small("rank", [5, 20], n_train=40, repeats=1, variant=variant, fixed_width=8)
            )
            for r in recs:
                # relu can restore rank lost in a narrow first layer; the last width bounds it
                last = 8 if variant.endswith("m1") else int(r.knob)
                assert r.kernel_rank <= min(last, 40)

    def test_noise_sweep(self):
        recs = run_noise_sweep(small("noise", [0.0, 1.0], n_train=50, kernel=KernelSpec("ntk", 2)))
        assert len(recs) == 4

    def test_family_wrapper_guard(self):
        with pytest.raises(ConfigError):
            run_width_sweep(small("depth", [1]))

    def test_sample_size_too_large(self):
        with pytest.raises(ConfigError):
            run_sweep(small("sample-size", [10_000]))

    def test_parallel_matches_serial(self):
        cfg = small("depth", [1, 2, 3], n_train=40)
        a, b = run_sweep(cfg, jobs=1), run_sweep(cfg, jobs=3)
        assert records_to_csv(a) == records_to_csv(b)


class TestTransfer:
    def test_flags_seen_test_data(self):
        ds = synth_blobs(30, 4, 2, 3.0, seed=0)
        rec = run_transfer_eval(ds, ds, 0.1)
        assert rec.seen_test_data

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            run_transfer_eval(synth_blobs(20, 4, 2, 3.0), synth_blobs(20, 5, 2, 3.0), 0.1)

    def test_features_source(self, tmp_path):
        ds = synth_blobs(40, 4, 2, 3.0, seed=1)
        for name, part in (("train", ds.subset(np.arange(30))), ("test", ds.subset(np.arange(30, 40)))):
            write_matrix_csv(tmp_path / f"{name}.csv", part.inputs)
            (tmp_path / f"{name}.txt").write_text("\n".join(map(str, part.labels)))
        data = {
            "kind": "features",
            "classes": 2,
            "train": {"features": str(tmp_path / "train.csv"), "labels": str(tmp_path / "train.txt")},
            "test": {"features": str(tmp_path / "test.csv"), "labels": str(tmp_path / "test.txt")},
        }
        (rec,) = run_sweep(SweepConfig(family="transfer", grid=[0.1], lam=0.1, data=data))
        assert rec.n_train == 30 and not rec.seen_test_data


class TestOutputs:
    def test_csv_header_and_roundtrip(self):
        recs = run_sweep(small("depth", [1, 2], n_train=30))
        text = records_to_csv(recs)
        assert text.splitlines()[0] == ",".join(CSV_HEADER)
        back = records_from_csv(text)
        assert [r.loo_loss for r in back] == [r.loo_loss for r in recs]

    def test_write_outputs(self, tmp_path):
        cfg = small("depth", [1, 2], n_train=30)
        recs = run_sweep(cfg)
        paths = write_sweep_outputs(recs, tmp_path / "out", cfg)
        summary = json.loads(open(paths["summary"]).read())
        assert summary["family"] == "depth" and len(summary["knobs"]) == 2
        assert summary["knobs"][0]["count"] == 2

    def test_aggregate_and_summary(self):
        recs = run_sweep(small("depth", [1, 2], n_train=30, repeats=3))
        knobs, med = aggregate(recs, "loo_loss")
        assert knobs == [1.0, 2.0] and len(med) == 2
        s = summarize(recs)
        assert s["knobs"][1]["loo_loss_mean"] == pytest.approx(
            np.mean([r.loo_loss for r in recs if r.knob == 2])
        )
