import numpy as np
import pytest

import sentlab.pipeline.common as common
from sentlab.data import MISSING, Splits, make_benchmark
from sentlab.errors import ConfigError, EvaluationError
from sentlab.nn import MlpConfig, init_mlp
from sentlab.noise import NoiseSpec, corrupt
from sentlab.pipeline import (
    RunConfig,
    evaluate,
    feature_ablation,
    few_shot_sweep,
    noise_transfer,
    run,
    run_baseline,
    stratified_subsample,
)
from sentlab.pipeline.selftrain import selftrain_loop
from sentlab.signals import SIGNAL_NAMES

FAST_CORRUPTION = dict(total_epochs=10, pretrain_epochs=3, noise_max_epochs=30)
FAST_SELFTRAIN = dict(rounds=2, round_max_epochs=25)


def corruption_config(**kw):
    return RunConfig(**{"mode": "sent_corruption", **FAST_CORRUPTION, **kw})


def selftrain_config(mode="sent_selftrain", **kw):
    return RunConfig(**{"mode": mode, "setting": "selftrain", **FAST_SELFTRAIN, **kw})


def strip(report):
    """Report dict without the fields that legitimately differ between equivalent modes."""
    d = report.to_dict()
    for key in ("mode", "config", "extras"):
        d.pop(key)
    return d


class TestConfig:
    @pytest.mark.parametrize("kw, field", [
        ({"mode": "magic"}, "mode"),
        ({"pretrain_epochs": 25}, "pretrain_epochs"),
        ({"mode": "sent_selftrain", "setting": "corruption"}, "mode"),
        ({"drop_signals": list(SIGNAL_NAMES)}, "drop_signals"),
        ({"main_model": {"hidden": (32, 16)}}, "main_model.hidden"),
        ({"transfer": "psychic"}, "transfer"),
    ])
    def test_rejects(self, kw, field):
        with pytest.raises(ConfigError) as exc:
            RunConfig(**kw)
        assert exc.value.field == field

    def test_round_trip(self):
        cfg = RunConfig(noise=NoiseSpec(kind="model_based", weak_model="hard"), drop_signals=("FLS",))
        assert RunConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"epochs": 3})


class TestEvaluate:
    def test_perfect_and_complement(self, small_splits):
        model = init_mlp(MlpConfig(layer_sizes=[2, 4, 3], init="zeros"))
        ds = small_splits.eval
        zeros = ds.with_labels(np.zeros(len(ds), int), np.zeros(len(ds), int))
        assert evaluate(model, zeros) == 1.0 == evaluate(model, zeros, "micro_f1")
        ones = ds.with_labels(np.ones(len(ds), int), np.ones(len(ds), int))
        assert evaluate(model, ones) == 0.0

    def test_micro_f1_equals_accuracy(self, small_splits):
        for seed in range(10):
            model = init_mlp(MlpConfig(layer_sizes=[2, 8, 3], seed=seed))
            pred = np.argmax(common.predict_proba(model, small_splits.test.features), axis=1)
            oracle = np.mean(pred == small_splits.test.true_labels)
            assert evaluate(model, small_splits.test, "micro_f1") == pytest.approx(oracle, abs=1e-12)
            assert evaluate(model, small_splits.test) == oracle

    def test_empty_and_unlabeled(self, small_splits):
        model = init_mlp(MlpConfig(layer_sizes=[2, 4, 3]))
        with pytest.raises(EvaluationError):
            evaluate(model, small_splits.eval.subset([]))
        hidden = small_splits.eval.with_labels(small_splits.eval.labels, np.full(len(small_splits.eval), MISSING))
        with pytest.raises(EvaluationError):
            evaluate(model, hidden)


class TestNoiseTransfer:
    def test_perfect_model_transfers_no_noise(self, small_splits):
        sel = small_splits.select
        # a zero model predicts class 0, so a select split of class-0 samples is labelled perfectly
        model = init_mlp(MlpConfig(layer_sizes=[2, 4, 3], init="zeros"))
        zeros = sel.subset(np.flatnonzero(sel.true_labels == 0))
        res = noise_transfer(model, zeros, "argmax")
        assert res.noise_rate == 0.0 and np.all(res.dataset.clean_mask())

    @pytest.mark.parametrize("how", ["argmax", "sample", "transition"])
    def test_rate_is_one_minus_accuracy(self, small_splits, how):
        model = init_mlp(MlpConfig(layer_sizes=[2, 8, 3], seed=4))
        res = noise_transfer(model, small_splits.select, how, seed=1, train=small_splits.train)
        assert res.noise_rate == 1.0 - np.mean(res.dataset.labels == small_splits.select.true_labels)
        if how == "argmax":
            assert res.noise_rate == 1.0 - evaluate(model, small_splits.select)

    def test_transition_rows_are_distributions(self, small_splits):
        noisy = corrupt(small_splits.train, NoiseSpec(rate=0.4, seed=1))[0]
        model = init_mlp(MlpConfig(layer_sizes=[2, 8, 3], seed=4))
        res = noise_transfer(model, small_splits.select, "transition", seed=1, train=noisy)
        np.testing.assert_allclose(res.transition.sum(axis=1), 1.0, atol=1e-12)

    def test_transition_needs_train(self, small_splits):
        model = init_mlp(MlpConfig(layer_sizes=[2, 8, 3]))
        with pytest.raises(ValueError):
            noise_transfer(model, small_splits.select, "transition")


class TestCorruptionSetting:
    def test_clean_data_selects_almost_everything(self, small_splits):
        sent = run(corruption_config(noise=NoiseSpec(rate=0.0)), small_splits)
        sup = run(corruption_config(mode="supervised", noise=NoiseSpec(rate=0.0)), small_splits)
        km = sent.key_metrics
        assert km.selection_recall >= 0.95
        assert abs(sent.final_test_metric - sup.final_test_metric) <= 0.01

    def test_round_structure(self, small_splits):
        rep = run(corruption_config(noise=NoiseSpec(rate=0.4, seed=2)), small_splits)
        assert [r.round for r in rep.rounds] == list(range(3, 10))
        assert rep.corruption["achieved_rate"] > 0.3
        for r in rep.rounds:
            assert r.num_selected <= r.pool_size == 300
            assert set(r.signal_means_train) == set(SIGNAL_NAMES) == set(r.signal_means_select)
        assert rep.final_eval_metric == max(r.eval_metric for r in rep.rounds)
        assert rep.noise_transfer["how"] == "transition"

    def test_deterministic_bytes(self, small_splits):
        cfg = corruption_config(noise=NoiseSpec(rate=0.4, seed=3))
        assert run(cfg, small_splits).to_json() == run(cfg, small_splits).to_json()

    def test_selection_never_sees_eval(self, small_splits, monkeypatch):
        """Scrambling eval truths must leave every selection decision unchanged."""
        seen = []
        real_fit = common.fit_selector

        def spy(features, *a, **kw):
            seen.append(len(features))
            return real_fit(features, *a, **kw)

        monkeypatch.setattr(common, "fit_selector", spy)
        cfg = corruption_config(noise=NoiseSpec(rate=0.4, seed=3))
        base = run(cfg, small_splits)
        ev = small_splits.eval
        scrambled = ev.with_labels(ev.labels, np.roll(ev.true_labels, 7))
        other = run(cfg, Splits(small_splits.train, None, small_splits.select, scrambled, small_splits.test))
        assert set(seen) == {len(small_splits.select)}
        for a, b in zip(base.rounds, other.rounds):
            assert (a.num_selected, a.threshold, a.selection_precision) == (b.num_selected, b.threshold, b.selection_precision)

    def test_correction_flag_isolation(self, small_splits):
        cfg = corruption_config(noise=NoiseSpec(rate=0.4, seed=3))
        # knobs that only matter when correction is on must not perturb the off path
        other = cfg.replace(correction_epochs=7, correction_model=cfg.correction_model.__class__(hidden=(4,)))
        assert strip(run(cfg, small_splits)) == strip(run(other, small_splits))

    def test_correction_enabled_runs(self, small_splits):
        rep = run(corruption_config(noise=NoiseSpec(rate=0.4, seed=3), correction_enabled=True,
                                    correction_epochs=5), small_splits)
        assert 0.0 <= rep.final_test_metric <= 1.0
        assert rep.key_metrics.selection_precision is not None

    def test_thres_baseline_records_choice(self, small_splits):
        rep = run(corruption_config(mode="self_train_thres", noise=NoiseSpec(rate=0.4, seed=3)), small_splits)
        assert rep.extras["chosen_threshold"] in rep.config["thres_grid"]
        assert all(r.selection_precision is not None for r in rep.rounds)

    def test_missing_split(self, small_splits):
        with pytest.raises(ConfigError):
            run(corruption_config(), Splits(small_splits.train, None, None, small_splits.eval, None))


class TestSelfTrainSetting:
    def test_zero_rounds_is_supervised(self, small_selftrain_splits):
        sent = run(selftrain_config(rounds=0), small_selftrain_splits)
        sup = run(selftrain_config(mode="supervised"), small_selftrain_splits)
        assert strip(sent) == strip(sup)

    def test_noisy_student_without_dropout_is_self_train(self, small_selftrain_splits):
        st = run(selftrain_config(mode="self_train"), small_selftrain_splits)
        ns = run(selftrain_config(mode="noisy_student", student_dropout=0.0), small_selftrain_splits)
        assert strip(st) == strip(ns)

    def test_threshold_zero_is_self_train(self, small_selftrain_splits):
        s = small_selftrain_splits
        cfg = selftrain_config(mode="self_train")
        r_all, b_all = selftrain_loop(cfg, s.train, s.unlabeled, None, s.eval, s.test, "all")
        r_zero, b_zero = selftrain_loop(cfg, s.train, s.unlabeled, None, s.eval, s.test, "confidence", threshold=0.0)
        for a, b in zip(r_all, r_zero):
            assert (a.eval_metric, a.num_selected, a.pseudo_label_accuracy) == (b.eval_metric, b.num_selected,
                                                                                  b.pseudo_label_accuracy)
        for p, q in zip(b_all["model"].parameters(), b_zero["model"].parameters()):
            assert np.array_equal(p, q)

    def test_thresholding_selects_no_more(self, small_selftrain_splits):
        st = run(selftrain_config(mode="self_train"), small_selftrain_splits)
        th = run(selftrain_config(mode="self_train_thres"), small_selftrain_splits)
        assert all(r.num_selected == 300 for r in st.rounds[1:])
        assert all(r.num_selected <= 300 for r in th.rounds[1:])

    def test_copy_of_labeled_set(self, small_selftrain_splits):
        lab = small_selftrain_splits.train
        pool = lab.with_labels(np.full(len(lab), MISSING), lab.labels).with_role("unlabeled")
        rep = run(selftrain_config(mode="self_train", rounds=1), Splits(lab, pool, None, lab, None))
        assert rep.rounds[1].pseudo_label_accuracy == rep.rounds[0].eval_metric

    def test_sent_selftrain_reports(self, small_selftrain_splits):
        rep = run(selftrain_config(), small_selftrain_splits)
        assert len(rep.rounds) == 3
        km = rep.key_metrics
        assert km.selection_precision is not None and km.num_selected <= 300
        assert run(selftrain_config(), small_selftrain_splits).to_json() == rep.to_json()

    def test_noise_is_rejected_here(self, small_selftrain_splits):
        with pytest.raises(ConfigError):
            run(selftrain_config(noise=NoiseSpec(rate=0.1)), small_selftrain_splits)


class TestFewShot:
    def test_stratified_subsample(self, small_selftrain_splits):
        lab = small_selftrain_splits.train
        sub = stratified_subsample(lab, 30, seed=1)
        expected = np.bincount(lab.labels, minlength=3) * 30 / 60
        assert np.all(np.abs(np.bincount(sub.labels, minlength=3) - expected) < 1)
        assert stratified_subsample(lab, 60, seed=1) is lab
        for bad in (2, 61):
            with pytest.raises(ConfigError):
                stratified_subsample(lab, bad, seed=1)

    def test_full_size_matches_plain_runs_and_rows(self, small_selftrain_splits):
        cfg = selftrain_config(rounds=1)
        reports, rows = few_shot_sweep(cfg, small_selftrain_splits, [12, 30, 60])
        assert len(rows) == 9
        assert {(r["size"], r["mode"]) for r in rows} == {(s, m) for s in (12, 30, 60)
                                                         for m in ("supervised", "self_train", "sent_selftrain")}
        full = reports[-1]
        assert full.to_json() == run(cfg, small_selftrain_splits).to_json()

    def test_supervised_improves_with_size(self):
        # the expectation is estimated by the seed-averaged curve; one inversion is tolerated
        sizes = (6, 15, 60, 240)
        curves = []
        for seed in range(5):
            splits = make_benchmark(seed, n_train=240, n_dev=60, n_test=500)
            row = []
            for size in sizes:
                labeled = stratified_subsample(splits.train, size, seed)
                rep = run_baseline(RunConfig(mode="supervised", setting="selftrain", seed=seed),
                                   Splits(labeled, None, None, splits.eval, splits.test))
                row.append(rep.final_test_metric)
            curves.append(row)
        mean = np.mean(curves, axis=0)
        assert np.sum(np.diff(mean) < 0) <= 1
        assert mean[-1] > mean[0]


class TestAblation:
    def test_rows_and_identity(self, small_splits):
        cfg = corruption_config(noise=NoiseSpec(rate=0.4, seed=3))
        reports, rows = feature_ablation(cfg, small_splits, [(), ("IL",), ("HE", "IE")])
        assert [r["drop"] for r in rows] == [[], ["IL"], ["HE", "IE"]]
        assert reports[0].to_json() == run(cfg, small_splits).to_json()

    def test_masked_signal_is_constant(self, small_splits):
        records = []
        cfg = corruption_config(noise=NoiseSpec(rate=0.4, seed=3), drop_signals=("EMAL",))
        run(cfg, small_splits, signal_sink=lambda r, recs: records.extend(recs))
        emal = np.array([rec["signals"]["EMAL"] for rec in records])
        il = np.array([rec["signals"]["IL"] for rec in records])
        assert emal.var() == 0.0 and il.var() > 0.0

    def test_cannot_drop_everything(self, small_splits):
        with pytest.raises(ConfigError):
            feature_ablation(corruption_config(), small_splits, [SIGNAL_NAMES])
