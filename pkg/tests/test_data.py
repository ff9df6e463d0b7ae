import numpy as np
import pytest

from tempadv.errors import ConfigError, InputError
from tempadv.data import (
    SynthClassConfig,
    SynthConfig,
    class_windows,
    fit_encoder,
    gen_synthetic,
    load_csv_dataset,
    make_windows,
    normalize,
    windows_hash,
)
from tempadv.schema import schema_from_dict


def _mixed_schema():
    return schema_from_dict({
        "name": "mixed",
        "label_column": "label",
        "classes": ["normal", "atk"],
        "normal_class": "normal",
        "columns": [
            {"name": "x", "kind": "continuous"},
            {"name": "proto", "kind": "categorical"},
            {"name": "y", "kind": "continuous"},
        ],
        "nonfunctional": {"atk": ["y"]},
    })


class TestNormalize:
    def test_min_max_scaling(self):
        schema = _mixed_schema()
        cols = {
            "x": ["0", "100", "25"],
            "proto": ["tcp", "udp", "tcp"],
            "y": ["1", "1", "1"],
            "label": ["normal", "atk", "normal"],
        }
        ds = normalize(cols, schema)
        x_slot = ds.encoder.slot("x")[0]
        np.testing.assert_allclose(ds.features[:, x_slot], [0.0, 1.0, 0.25])

    def test_constant_column_maps_to_zero(self):
        schema = _mixed_schema()
        cols = {
            "x": ["5", "5"],
            "proto": ["tcp", "tcp"],
            "y": ["2", "3"],
            "label": ["normal", "normal"],
        }
        ds = normalize(cols, schema)
        x_slot = ds.encoder.slot("x")[0]
        np.testing.assert_array_equal(ds.features[:, x_slot], [0.0, 0.0])

    def test_one_hot_groups_sum_to_one(self):
        schema = _mixed_schema()
        cols = {
            "x": ["1", "2", "3"],
            "proto": ["tcp", "udp", "icmp"],
            "y": ["0", "1", "2"],
            "label": ["normal", "atk", "normal"],
        }
        ds = normalize(cols, schema)
        start, stop = ds.encoder.slot("proto")
        np.testing.assert_array_equal(ds.features[:, start:stop].sum(axis=1), np.ones(3))

    def test_unseen_categorical_goes_to_other_bucket(self):
        schema = _mixed_schema()
        train = {"x": ["0", "10"], "proto": ["tcp", "udp"], "y": ["0", "1"],
                 "label": ["normal", "normal"]}
        ds = normalize(train, schema)
        test = {"x": ["5"], "proto": ["sctp"], "y": ["0.5"], "label": ["atk"]}
        ds2 = normalize(test, schema, encoder=ds.encoder)
        start, stop = ds.encoder.slot("proto")
        assert ds2.features[0, stop - 1] == 1.0  # trailing slot is `other`
        assert ds.encoder.unseen_counts["proto"] == 1

    def test_test_values_clipped_into_unit_interval(self):
        schema = _mixed_schema()
        train = {"x": ["0", "10"], "proto": ["tcp", "tcp"], "y": ["0", "1"],
                 "label": ["normal", "normal"]}
        ds = normalize(train, schema)
        test = {"x": ["-5", "20"], "proto": ["tcp", "tcp"], "y": ["0", "1"],
                "label": ["atk", "atk"]}
        ds2 = normalize(test, schema, encoder=ds.encoder)
        assert ds2.features.min() >= 0.0 and ds2.features.max() <= 1.0

    def test_denormalize_round_trip(self):
        schema = _mixed_schema()
        rng = np.random.default_rng(2)
        xs = rng.uniform(-50, 150, size=40)
        cols = {
            "x": [str(v) for v in xs],
            "proto": ["tcp"] * 40,
            "y": [str(v) for v in rng.uniform(size=40)],
            "label": ["normal"] * 40,
        }
        ds = normalize(cols, schema)
        x_slot = ds.encoder.slot("x")[0]
        back = ds.encoder.denormalize_continuous("x", ds.features[:, x_slot])
        np.testing.assert_allclose(back, xs, atol=1e-9)

    def test_encoder_round_trips_through_dict(self):
        schema = _mixed_schema()
        cols = {"x": ["0", "9"], "proto": ["a", "b"], "y": ["1", "2"],
                "label": ["normal", "normal"]}
        ds = normalize(cols, schema)
        from tempadv.data import FeatureEncoder

        enc2 = FeatureEncoder.from_dict(ds.encoder.to_dict(), schema)
        assert enc2.width == ds.encoder.width
        assert enc2.cont_min == ds.encoder.cont_min


class TestCsv:
    def test_headered_csv(self, tmp_path):
        schema = _mixed_schema()
        p = tmp_path / "d.csv"
        p.write_text("x,proto,y,label\n1,tcp,2,normal\n3,udp,4,atk\n")
        ds = load_csv_dataset(p, schema)
        assert len(ds) == 2
        assert ds.labels.tolist() == [0, 1]

    def test_headerless_with_schema_width(self, tmp_path):
        schema = _mixed_schema()
        p = tmp_path / "d.csv"
        p.write_text("1,tcp,2,normal\n3,udp,4,atk\n")
        ds = load_csv_dataset(p, schema)
        assert len(ds) == 2

    def test_ragged_row_rejected(self, tmp_path):
        schema = _mixed_schema()
        p = tmp_path / "d.csv"
        p.write_text("x,proto,y,label\n1,tcp,2,normal\n3,udp\n")
        with pytest.raises(InputError, match="row 3"):
            load_csv_dataset(p, schema)


def _synth_cfg(**kw):
    defaults = dict(
        classes=[
            SynthClassConfig("normal", records=400, coupling=0.0),
            SynthClassConfig("attack", records=400, coupling=0.8, mean_shift=1.0),
        ],
        feature_count=16,
        nonfunctional_count=6,
    )
    defaults.update(kw)
    return SynthConfig(**defaults)


class TestMakeWindows:
    def test_sixteen_records_two_windows_no_reuse(self):
        ds = gen_synthetic(_synth_cfg(classes=[
            SynthClassConfig("normal", records=4),
            SynthClassConfig("attack", records=16, mean_shift=1.0),
        ]), seed=0)
        wins = make_windows(ds, time_n=8, adv_n=6, org_n=2, attack_type="attack", seed=1)
        assert len(wins) == 2
        rows = np.vstack([w.full_window() for w in wins])
        assert len(np.unique(rows, axis=0)) == 16

    def test_default_composition_split(self):
        ds = gen_synthetic(_synth_cfg(), seed=0)
        wins = make_windows(ds, time_n=8, adv_n=6, org_n=2, attack_type="attack", seed=3)
        assert all(w.adv_n == 6 and w.org_n == 2 and w.time_n == 8 for w in wins)

    def test_seed_determinism(self):
        ds = gen_synthetic(_synth_cfg(), seed=0)
        a = make_windows(ds, 8, 6, 2, "attack", seed=9)
        b = make_windows(ds, 8, 6, 2, "attack", seed=9)
        c = make_windows(ds, 8, 6, 2, "attack", seed=10)
        assert windows_hash(a) == windows_hash(b)
        assert windows_hash(a) != windows_hash(c)

    def test_insufficient_records(self):
        ds = gen_synthetic(_synth_cfg(classes=[
            SynthClassConfig("normal", records=20),
            SynthClassConfig("attack", records=5, mean_shift=1.0),
        ]), seed=0)
        with pytest.raises(InputError, match="5"):
            make_windows(ds, 8, 6, 2, "attack", seed=0)

    def test_bad_composition(self):
        ds = gen_synthetic(_synth_cfg(), seed=0)
        with pytest.raises(ConfigError):
            make_windows(ds, 8, 5, 2, "attack", seed=0)

    def test_windows_never_mix_classes(self):
        ds = gen_synthetic(_synth_cfg(), seed=4)
        wins = make_windows(ds, 8, 6, 2, "attack", seed=0)
        atk = ds.schema.class_index("attack")
        feature_set = {r.tobytes() for r in ds.features[ds.labels == atk]}
        for w in wins:
            for rec in w.full_window():
                assert rec.tobytes() in feature_set


class TestSynthetic:
    def test_zero_coupling_uncorrelated(self):
        cfg = _synth_cfg(classes=[SynthClassConfig("normal", records=10000, coupling=0.0)])
        ds = gen_synthetic(cfg, seed=5)
        x = ds.features[:, 0]
        x = x - x.mean()
        ac = float(np.dot(x[:-1], x[1:]) / np.dot(x, x))
        assert abs(ac) < 0.05

    def test_high_coupling_measurable(self):
        cfg = _synth_cfg(classes=[SynthClassConfig("normal", records=10000, coupling=0.8)])
        ds = gen_synthetic(cfg, seed=5)
        x = ds.features[:, 3]
        x = x - x.mean()
        ac = float(np.dot(x[:-1], x[1:]) / np.dot(x, x))
        assert abs(ac - 0.8) < 0.05

    def test_linear_probe_on_separated_clusters(self):
        cfg = _synth_cfg(functional_gap=0.15, nonfunctional_gap=0.25, noise=0.05)
        ds = gen_synthetic(cfg, seed=7)
        X = np.hstack([ds.features, np.ones((len(ds), 1))])
        y = np.where(ds.labels == 0, -1.0, 1.0)
        w, *_ = np.linalg.lstsq(X, y, rcond=None)
        acc = float(((X @ w > 0) == (y > 0)).mean())
        assert acc >= 0.99

    def test_seed_byte_identical(self):
        a = gen_synthetic(_synth_cfg(), seed=11)
        b = gen_synthetic(_synth_cfg(), seed=11)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()
        assert a.content_hash() == b.content_hash()

    def test_features_in_unit_interval(self):
        ds = gen_synthetic(_synth_cfg(), seed=1)
        assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0

    def test_expanded_mask_matches_nonfunctional_block(self):
        cfg = _synth_cfg()
        ds = gen_synthetic(cfg, seed=0)
        m = ds.encoder.expanded_mask("attack")
        assert m.sum() == cfg.nonfunctional_count
        assert m[-cfg.nonfunctional_count:].all()

    def test_class_windows_shape(self):
        ds = gen_synthetic(_synth_cfg(), seed=0)
        w = class_windows(ds, 8, "attack")
        assert w.shape == (50, 8, 16)
