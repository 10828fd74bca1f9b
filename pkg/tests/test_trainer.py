from dataclasses import replace

import numpy as np
import pytest

from sst.data import AugmentConfig, SplitSpec, holdout_split, make_blobs, make_two_moons, split_labeled_unlabeled
from sst.errors import InvalidInputError
from sst.model import accuracy, init_classifier, predict_proba
from sst.sat import select
from sst.trainer import (
    SEMI_SST,
    SUPER_SST,
    SUPERVISED_ONLY,
    CycleReport,
    Thresholding,
    TrainerConfig,
    distill,
    has_converged,
    run,
    run_semi_sst,
    run_super_sst,
    supervised_init,
)

FAST = TrainerConfig(max_cycles=2, epochs_per_cycle=4, init_epochs=30, hidden_dims=(8,), convergence_epsilon=-1.0)


def blobs_split(seed=0, n=150, k=3, spread=0.6, lpc=4):
    ds = make_blobs(n, k, spread=spread, seed=seed)
    rest, val = holdout_split(ds, 0.2, seed)
    lab, unl, truth = split_labeled_unlabeled(rest, SplitSpec(lpc, seed))
    return lab, unl, truth, val


def moons_split(seed=0, n=200):
    ds = make_two_moons(n, 0.15, seed)
    rest, val = holdout_split(ds, 0.2, seed)
    lab, unl, truth = split_labeled_unlabeled(rest, SplitSpec(4, seed))
    return lab, unl, truth, val


def report(acc):
    return CycleReport(0, acc, [0.5], [], 0, 1, 0.0, None, 0.5)


class TestHasConverged:
    def test_single(self):
        assert not has_converged([report(0.8)])

    def test_flat(self):
        assert has_converged([report(0.8), report(0.8)], 0.001)

    def test_gain(self):
        assert not has_converged([report(0.8), report(0.85)], 0.001)

    def test_drop_counts_as_converged(self):
        assert has_converged([0.9, 0.7], 0.001)

    def test_only_last_pair_matters(self):
        assert not has_converged([0.5, 0.5, 0.6], 0.001)


class TestConfig:
    def test_defaults(self):
        cfg = TrainerConfig()
        assert cfg.max_cycles == 6 and cfg.mu == 1.0 and cfg.convergence_epsilon == 0.001
        assert cfg.sat.cutoff == 0.5 and cfg.sat.scale == 0.8

    @pytest.mark.parametrize(
        "kw", [{"max_cycles": 0}, {"epochs_per_cycle": 0}, {"mu": -1.0}, {"mode": "NOPE"}, {"smoothing": 1.0}]
    )
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            TrainerConfig(**kw)

    def test_thresholding_tags(self):
        assert Thresholding().tag == "SAT"
        assert Thresholding.fixed(0.75).tag == "FIXED-0.75"
        with pytest.raises(InvalidInputError):
            Thresholding.fixed(1.5)


class TestSupervisedInit:
    def test_separable_blobs_perfect(self):
        ds = make_blobs(150, 3, spread=0.0, seed=0)
        rest, val = holdout_split(ds, 0.2, 0)
        lab, _, _ = split_labeled_unlabeled(rest, SplitSpec(10, 0))
        model = supervised_init(lab, val, replace(FAST, init_epochs=60))
        assert accuracy(model, val.features, val.labels) == 1.0

    def test_deterministic(self):
        lab, _, _, val = blobs_split()
        a, b = supervised_init(lab, val, FAST), supervised_init(lab, val, FAST)
        assert a.checksum() == b.checksum()

    def test_seed_matters(self):
        lab, _, _, val = blobs_split()
        assert supervised_init(lab, val, FAST).checksum() != supervised_init(lab, val, replace(FAST, seed=1)).checksum()

    def test_empty_labeled(self):
        lab, _, _, val = blobs_split()
        with pytest.raises(InvalidInputError):
            supervised_init(lab.subset([]), val, FAST)


class TestSuperSst:
    def test_report_shape(self):
        lab, unl, truth, val = blobs_split()
        r = run_super_sst(lab, unl, truth, val, FAST)
        assert [rep.cycle for rep in r.reports] == [0, 1, 2]
        for rep in r.reports:
            assert 0 <= rep.selected_fraction <= 1 and rep.n_selected <= rep.n_unlabeled == len(unl)
            assert rep.pl_accuracy is None or 0 <= rep.pl_accuracy <= 1
        assert r.converged_at is None

    def test_fixed_zero_selects_everything(self):
        lab, unl, truth, val = moons_split()
        r = run_super_sst(lab, unl, truth, val, replace(FAST, thresholding=Thresholding.fixed(0.0)))
        assert all(rep.selected_fraction == 1.0 for rep in r.reports)
        assert all(rep.thresholds == [0.0, 0.0] for rep in r.reports)

    def test_fixed_thresholds_logged_constant(self):
        lab, unl, truth, val = blobs_split()
        r = run_super_sst(lab, unl, truth, val, replace(FAST, thresholding=Thresholding.fixed(0.6)))
        assert all(rep.thresholds == [0.6] * 3 and rep.class_average_threshold == 0.6 for rep in r.reports)

    def test_warm_start_checksums(self):
        lab, unl, truth, val = blobs_split()
        r = run_super_sst(lab, unl, truth, val, FAST)
        for prev, cur in zip(r.reports, r.reports[1:]):
            assert cur.start_checksum == prev.end_checksum
        assert r.reports[-1].end_checksum == r.model.checksum()

    def test_reinit_breaks_continuity(self):
        lab, unl, truth, val = blobs_split()
        r = run_super_sst(lab, unl, truth, val, replace(FAST, reinit_each_cycle=True))
        fresh = init_classifier(r.model.layer_dims, 0).checksum()
        assert all(rep.start_checksum == fresh for rep in r.reports[1:])

    def test_offline_selection_recomputes(self):
        lab, unl, truth, val = blobs_split()
        r = run_super_sst(lab, unl, truth, val, FAST)
        assert len(r.selections) == len(r.reports) == len(r.probabilities)
        for rep, P, chosen in zip(r.reports, r.probabilities, r.selections):
            again = select(P, Thresholding().thresholds(P, FAST.sat))
            assert again.entries() == chosen.entries()
            assert rep.n_selected == len(chosen)
            assert rep.thresholds == Thresholding().thresholds(P, FAST.sat).to_list()
        final_P = predict_proba(r.model, unl.features)
        assert final_P.tobytes() == r.probabilities[-1].tobytes()

    def test_convergence_stops_early(self):
        lab, unl, truth, val = blobs_split()
        r = run_super_sst(lab, unl, truth, val, replace(FAST, max_cycles=6, convergence_epsilon=2.0))
        assert r.converged_at == 1 and len(r.reports) == 2
        assert r.converged_at <= 6

    def test_deterministic(self):
        lab, unl, truth, val = blobs_split()
        a, b = run_super_sst(lab, unl, truth, val, FAST), run_super_sst(lab, unl, truth, val, FAST)
        assert a.reports == b.reports and a.model.checksum() == b.model.checksum()

    def test_shared_init(self):
        lab, unl, truth, val = blobs_split()
        init = supervised_init(lab, val, FAST)
        r = run_super_sst(lab, unl, truth, val, FAST, init_model=init)
        assert r.reports[0].end_checksum == init.checksum()
        assert r.reports[0].val_accuracy == accuracy(init, val.features, val.labels)
        assert r.reports[1:] == run_super_sst(lab, unl, truth, val, FAST).reports[1:]

    def test_wrong_mode(self):
        lab, unl, truth, val = blobs_split()
        with pytest.raises(InvalidInputError):
            run_super_sst(lab, unl, truth, val, replace(FAST, mode=SEMI_SST))

    def test_supervised_only_single_report(self):
        lab, unl, truth, val = blobs_split()
        r = run(lab, unl, truth, val, replace(FAST, mode=SUPERVISED_ONLY))
        assert len(r.reports) == 1

    def test_empty_unlabeled_pool(self):
        lab, _, _, val = blobs_split()
        r = run_super_sst(lab, lab.subset([], keep_labels=False), np.zeros(0, dtype=int), val, FAST)
        assert all(rep.n_selected == 0 and rep.selected_fraction == 0.0 for rep in r.reports)


class TestSemiSst:
    CFG = replace(FAST, mode=SEMI_SST, ema=replace(FAST.ema, momentum=0.9))

    def test_runs_and_reports(self):
        lab, unl, truth, val = moons_split()
        r = run_semi_sst(lab, unl, truth, val, self.CFG)
        assert r.teacher is not None and len(r.reports) == 3
        assert r.reports[-1].end_checksum == r.teacher.checksum()
        for prev, cur in zip(r.reports, r.reports[1:]):
            assert cur.start_checksum == prev.end_checksum

    def test_teacher_starts_as_init_copy(self):
        lab, unl, truth, val = moons_split()
        init = supervised_init(lab, val, self.CFG)
        r = run_semi_sst(lab, unl, truth, val, replace(self.CFG, max_cycles=1), init_model=init)
        assert r.reports[0].end_checksum == init.checksum()
        assert r.teacher.checksum() != init.checksum()

    def test_mu_zero_first_selection_matches_super(self):
        lab, unl, truth, val = moons_split()
        semi = run_semi_sst(lab, unl, truth, val, replace(self.CFG, mu=0.0))
        sup = run_super_sst(lab, unl, truth, val, replace(self.CFG, mode=SUPER_SST, mu=0.0))
        assert semi.selections[0].entries() == sup.selections[0].entries()
        assert semi.reports[0].thresholds == sup.reports[0].thresholds

    def test_deterministic(self):
        lab, unl, truth, val = moons_split()
        a = run_semi_sst(lab, unl, truth, val, self.CFG)
        b = run_semi_sst(lab, unl, truth, val, self.CFG)
        assert a.reports == b.reports and a.teacher.checksum() == b.teacher.checksum()

    def test_offline_uses_teacher(self):
        lab, unl, truth, val = moons_split()
        r = run_semi_sst(lab, unl, truth, val, self.CFG)
        assert predict_proba(r.teacher, unl.features).tobytes() == r.probabilities[-1].tobytes()

    def test_wrong_mode(self):
        lab, unl, truth, val = moons_split()
        with pytest.raises(InvalidInputError):
            run_semi_sst(lab, unl, truth, val, FAST)


class TestDistill:
    def test_empty_selection_equals_supervised_init(self):
        lab, unl, truth, val = blobs_split()
        teacher = run_super_sst(lab, unl, truth, val, FAST)
        cfg = replace(FAST, thresholding=Thresholding.fixed(1.0))
        student = distill(teacher, (lab.dim, 4, 3), lab, unl, val, cfg, truth)
        assert student.reports[0].n_selected == 0
        assert student.model.checksum() == supervised_init(lab, val, cfg, dims=(lab.dim, 4, 3)).checksum()

    def test_uses_selection(self):
        lab, unl, truth, val = blobs_split()
        teacher = run_super_sst(lab, unl, truth, val, FAST)
        student = distill(teacher, None, lab, unl, val, FAST, truth)
        rep = student.reports[0]
        assert rep.n_selected == len(student.selections[0]) > 0
        assert student.model.layer_dims == teacher.model.layer_dims

    def test_self_distill_on_separable_blobs(self):
        lab, unl, truth, val = blobs_split(spread=0.3)
        teacher = run_super_sst(lab, unl, truth, val, FAST)
        student = distill(teacher, None, lab, unl, val, FAST, truth)
        assert abs(student.final_accuracy - teacher.final_accuracy) <= 0.02


def test_augment_config_flows_through():
    lab, unl, truth, val = blobs_split()
    a = run_super_sst(lab, unl, truth, val, FAST)
    b = run_super_sst(lab, unl, truth, val, replace(FAST, augment=AugmentConfig(0.0, 0.0, 0.0)))
    assert a.model.checksum() != b.model.checksum()
